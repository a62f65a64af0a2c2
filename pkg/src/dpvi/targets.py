"""Target distributions: log-density, score, score Jacobian, reference samples.

Every target exposes the same capability surface:

- ``log_density(x)``: log pi(x) (fully normalized for Gaussian/mixture,
  up to an additive constant for the GP posterior),
- ``score(x)``: grad log pi(x),
- ``score_jacobian(x)``: the Hessian of log pi (analytic where tractable,
  central finite differences for the GP posterior).

All three accept a single point of shape ``(d,)`` or a batch ``(n, d)``.
Reference samples for evaluation come from ``sample_reference`` (exact
ancestral sampling, Gaussian and mixture only) or ``grid_reference``
(grid-based categorical sampler for 2-D targets such as the GP posterior).
"""

import csv
import math
from pathlib import Path

import numpy as np
from scipy.linalg.lapack import dpotri, dpotrs
from scipy.special import logsumexp

__all__ = [
    "TargetModel",
    "GaussianTarget",
    "GaussianMixtureTarget",
    "GPRegressionTarget",
    "default_gmm_target",
    "sample_reference",
    "grid_reference",
    "load_lidar",
    "synthetic_lidar",
]


class TargetModel:
    """Base class for target distributions.

    Subclasses implement the batched internals ``_log_density``, ``_score``
    and ``_score_jacobian`` on ``(n, d)`` arrays; the public methods accept
    either a single ``(d,)`` point or an ``(n, d)`` batch and validate input.
    """

    dim: int

    def _prepare(self, x):
        X = np.asarray(x, dtype=float)
        if X.ndim == 1:
            single = True
            X = X[None, :]
        elif X.ndim == 2:
            single = False
        else:
            raise ValueError(f"expected a (d,) point or (n, d) batch, got shape {X.shape}")
        if X.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: target has d={self.dim}, input has d={X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite input point")
        return X, single

    def log_density(self, x):
        """Evaluate log pi at ``x``; scalar for a (d,) point, (n,) for a batch."""
        X, single = self._prepare(x)
        out = self._log_density(X)
        return float(out[0]) if single else out

    def score(self, x):
        """Evaluate grad log pi at ``x``; (d,) for a point, (n, d) for a batch."""
        X, single = self._prepare(x)
        out = self._score(X)
        return out[0] if single else out

    def score_jacobian(self, x):
        """Evaluate the Hessian of log pi at ``x``; (d, d) or (n, d, d)."""
        X, single = self._prepare(x)
        out = self._score_jacobian(X)
        return out[0] if single else out

    def _log_density(self, X):
        raise NotImplementedError

    def _score(self, X):
        raise NotImplementedError

    def _score_jacobian(self, X):
        raise NotImplementedError

    def sample(self, n, seed):
        raise NotImplementedError(f"{type(self).__name__} has no exact sampler")


def _check_spd(cov, what="covariance"):
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"{what} must be a square matrix, got shape {cov.shape}")
    if np.max(np.abs(cov - cov.T)) > 1e-12:
        raise ValueError(f"{what} is not symmetric within 1e-12")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{what} is not positive definite") from exc
    return cov, chol


class GaussianTarget(TargetModel):
    """Multivariate Gaussian N(mean, covariance).

    Precomputes the precision matrix and log-normalizer; ``score_jacobian``
    is the constant ``-precision``.
    """

    def __init__(self, mean, covariance):
        mean = np.asarray(mean, dtype=float)
        if mean.ndim != 1 or mean.size < 1:
            raise ValueError("mean must be a vector of length d >= 1")
        covariance, chol = _check_spd(covariance)
        if covariance.shape[0] != mean.size:
            raise ValueError("mean and covariance dimensions disagree")
        self.dim = mean.size
        self.mean = mean
        self.covariance = covariance
        self._chol = chol
        eye = np.eye(self.dim)
        self.precision = np.linalg.solve(covariance, eye)
        self.precision = 0.5 * (self.precision + self.precision.T)
        self._log_norm = 0.5 * self.dim * math.log(2.0 * math.pi) + float(
            np.sum(np.log(np.diag(chol)))
        )

    def _log_density(self, X):
        diff = X - self.mean
        quad = np.einsum("nd,de,ne->n", diff, self.precision, diff)
        return -0.5 * quad - self._log_norm

    def _score(self, X):
        return -(X - self.mean) @ self.precision

    def _score_jacobian(self, X):
        return np.broadcast_to(-self.precision, (X.shape[0], self.dim, self.dim)).copy()

    def sample(self, n, seed):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self._chol.T


class GaussianMixtureTarget(TargetModel):
    """Finite Gaussian mixture sum_j w_j N(mean_j, cov_j).

    Log-density uses log-sum-exp; score and score Jacobian are assembled
    analytically from component responsibilities, accurate enough to feed
    the Stein kernel gradient.
    """

    def __init__(self, weights, means, covariances):
        weights = np.asarray(weights, dtype=float)
        means = np.asarray(means, dtype=float)
        covariances = np.asarray(covariances, dtype=float)
        if weights.ndim != 1 or weights.size < 1:
            raise ValueError("need at least one mixture component")
        if np.any(weights <= 0):
            raise ValueError("component weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("component weights must sum to 1 within 1e-12")
        if means.ndim != 2 or means.shape[0] != weights.size:
            raise ValueError("means must have shape (n_components, d)")
        if covariances.shape != (weights.size, means.shape[1], means.shape[1]):
            raise ValueError("covariances must have shape (n_components, d, d)")

        self.dim = means.shape[1]
        self.weights = weights
        self.means = means
        self.covariances = covariances
        self.n_components = weights.size

        chols, precisions, log_norms = [], [], []
        for j in range(self.n_components):
            cov, chol = _check_spd(covariances[j], what=f"covariance of component {j}")
            prec = np.linalg.solve(cov, np.eye(self.dim))
            precisions.append(0.5 * (prec + prec.T))
            chols.append(chol)
            log_norms.append(
                0.5 * self.dim * math.log(2.0 * math.pi) + float(np.sum(np.log(np.diag(chol))))
            )
        self._chols = np.stack(chols)
        self._precisions = np.stack(precisions)
        self._log_norms = np.array(log_norms)
        self._log_weights = np.log(weights)

    def _component_logpdf(self, X):
        # (n, J): log w_j + log N_j(x)
        diff = X[:, None, :] - self.means[None, :, :]
        quad = np.einsum("njd,jde,nje->nj", diff, self._precisions, diff)
        return self._log_weights[None, :] - 0.5 * quad - self._log_norms[None, :]

    def responsibilities(self, x):
        """Posterior component probabilities r_j(x); shape (J,) or (n, J)."""
        X, single = self._prepare(x)
        logs = self._component_logpdf(X)
        logs = logs - logsumexp(logs, axis=1, keepdims=True)
        r = np.exp(logs)
        return r[0] if single else r

    def _log_density(self, X):
        return logsumexp(self._component_logpdf(X), axis=1)

    def _component_scores(self, X):
        # (n, J, d): score of each component at x
        diff = X[:, None, :] - self.means[None, :, :]
        return -np.einsum("jde,nje->njd", self._precisions, diff)

    def _score(self, X):
        logs = self._component_logpdf(X)
        logs = logs - logsumexp(logs, axis=1, keepdims=True)
        r = np.exp(logs)
        return np.einsum("nj,njd->nd", r, self._component_scores(X))

    def _score_jacobian(self, X):
        logs = self._component_logpdf(X)
        logs = logs - logsumexp(logs, axis=1, keepdims=True)
        r = np.exp(logs)
        s_comp = self._component_scores(X)
        s = np.einsum("nj,njd->nd", r, s_comp)
        # d s / dx = sum_j r_j (s_j s_j^T - P_j) - s s^T
        outer = np.einsum("nj,njd,nje->nde", r, s_comp, s_comp)
        mean_prec = np.einsum("nj,jde->nde", r, self._precisions)
        return outer - mean_prec - np.einsum("nd,ne->nde", s, s)

    def sample(self, n, seed):
        rng = np.random.default_rng(seed)
        comps = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[comps] + np.einsum("nde,ne->nd", self._chols[comps], z)


def default_gmm_target():
    """The default 2-D two-component mixture: weights 1/3 and 2/3, means
    (-2, 0) and (2, 0), identity covariances."""
    return GaussianMixtureTarget(
        weights=[1.0 / 3.0, 2.0 / 3.0],
        means=[[-2.0, 0.0], [2.0, 0.0]],
        covariances=[np.eye(2), np.eye(2)],
    )


# Jitter escalation for the GP kernel-matrix Cholesky: add 1e-10, then x10
# up to 1e-6, before giving up.
_GP_JITTERS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class GPRegressionTarget(TargetModel):
    """2-D posterior over GP hyperparameters phi = (phi_1, phi_2).

    Given data (x, y) and kernel K_ij = exp(phi_1) exp(-exp(phi_2) (x_i-x_j)^2)
    with observation covariance K_y = K + noise_variance * I, the log-posterior is

        log p(phi | D) = -y^T K_y^{-1} y / 2 - log det(K_y) / 2 + prior(phi)

    ``prior_mode`` selects the last term: ``"literal_constant"`` uses
    -log(1 + x^T x) with x the data vector (constant in phi, so it shifts the
    log-density without touching any gradient); ``"phi_prior"`` reads it as
    -log(1 + phi^T phi) instead.

    The score is the analytic matrix-calculus gradient; the score Jacobian is
    obtained by central finite differences of the score.
    """

    dim = 2

    def __init__(self, data_x, data_y, noise_variance=0.04, prior_mode="literal_constant"):
        data_x = np.asarray(data_x, dtype=float).ravel()
        data_y = np.asarray(data_y, dtype=float).ravel()
        if data_x.size != data_y.size:
            raise ValueError("data_x and data_y must have the same length")
        if data_x.size < 2:
            raise ValueError("need at least 2 observations")
        if not (np.all(np.isfinite(data_x)) and np.all(np.isfinite(data_y))):
            raise ValueError("data must be finite")
        if noise_variance <= 0:
            raise ValueError("noise_variance must be > 0")
        if prior_mode not in ("literal_constant", "phi_prior"):
            raise ValueError(f"unknown prior_mode {prior_mode!r}")
        self.data_x = data_x
        self.data_y = data_y
        self.noise_variance = float(noise_variance)
        self.prior_mode = prior_mode
        self.n_data = data_x.size
        self._sqdist = (data_x[:, None] - data_x[None, :]) ** 2
        self._const_prior = -math.log(1.0 + float(data_x @ data_x))
        # memory cap for batched (n, N, N) kernel stacks
        self._chunk = max(1, int(4e7 // (self.n_data * self.n_data)))

    def _kernel_stack(self, phis):
        # (c, N, N) kernel matrices for a chunk of phi values
        amp = np.exp(phis[:, 0])
        ls = np.exp(phis[:, 1])
        K = amp[:, None, None] * np.exp(-ls[:, None, None] * self._sqdist[None, :, :])
        return K

    def _chol_stack(self, Ky, phis):
        if not np.all(np.isfinite(Ky)):
            bad = phis[~np.all(np.isfinite(Ky), axis=(1, 2))][0]
            raise ValueError(f"kernel matrix overflow at phi={bad}: numerically degenerate")
        try:
            return np.linalg.cholesky(Ky), Ky
        except np.linalg.LinAlgError:
            pass
        # escalate jitter per matrix
        eye = np.eye(self.n_data)
        chols = np.empty_like(Ky)
        fixed = Ky.copy()
        for i in range(Ky.shape[0]):
            for jitter in (0.0,) + _GP_JITTERS:
                try:
                    chols[i] = np.linalg.cholesky(Ky[i] + jitter * eye)
                    fixed[i] = Ky[i] + jitter * eye
                    break
                except np.linalg.LinAlgError:
                    continue
            else:
                raise ValueError(
                    f"Cholesky of K_y failed at phi={phis[i]} even with jitter 1e-6: "
                    "numerically degenerate phi"
                )
        return chols, fixed

    def _decompose(self, phis, need_inverse):
        K = self._kernel_stack(phis)
        Ky = K + self.noise_variance * np.eye(self.n_data)[None, :, :]
        chol, _ = self._chol_stack(Ky, phis)
        logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
        c = phis.shape[0]
        alpha = np.empty((c, self.n_data))
        Kinv = np.empty_like(K) if need_inverse else None
        for i in range(c):
            alpha[i], info = dpotrs(chol[i], self.data_y, lower=1)
            if info != 0:
                raise ValueError(f"K_y solve failed at phi={phis[i]}")
            if need_inverse:
                inv, info = dpotri(chol[i], lower=1)
                if info != 0:
                    raise ValueError(f"K_y inversion failed at phi={phis[i]}")
                low = np.tril(inv)
                Kinv[i] = low + np.tril(low, -1).T
        return K, Kinv, alpha, logdet

    def _prior_logdensity(self, phis):
        if self.prior_mode == "phi_prior":
            return -np.log1p(np.einsum("nd,nd->n", phis, phis))
        return np.full(phis.shape[0], self._const_prior)

    def _prior_score(self, phis):
        if self.prior_mode == "phi_prior":
            return -2.0 * phis / (1.0 + np.einsum("nd,nd->n", phis, phis))[:, None]
        return np.zeros_like(phis)

    def _log_density(self, X):
        out = np.empty(X.shape[0])
        for lo in range(0, X.shape[0], self._chunk):
            phis = X[lo : lo + self._chunk]
            _, _, alpha, logdet = self._decompose(phis, need_inverse=False)
            quad = alpha @ self.data_y
            out[lo : lo + self._chunk] = -0.5 * quad - 0.5 * logdet + self._prior_logdensity(phis)
        return out

    def _score(self, X):
        out = np.empty_like(X)
        for lo in range(0, X.shape[0], self._chunk):
            phis = X[lo : lo + self._chunk]
            K, Kinv, alpha, _ = self._decompose(phis, need_inverse=True)
            dK2 = -np.exp(phis[:, 1])[:, None, None] * self._sqdist[None, :, :] * K
            g1 = 0.5 * np.einsum("cn,cnm,cm->c", alpha, K, alpha) - 0.5 * np.einsum(
                "cnm,cnm->c", Kinv, K
            )
            g2 = 0.5 * np.einsum("cn,cnm,cm->c", alpha, dK2, alpha) - 0.5 * np.einsum(
                "cnm,cnm->c", Kinv, dK2
            )
            out[lo : lo + self._chunk] = np.stack([g1, g2], axis=1) + self._prior_score(phis)
        return out

    def _score_jacobian(self, X, step=1e-5):
        n = X.shape[0]
        pts = np.empty((n, 2, 2, 2))  # (point, perturbed axis, +/-, phi)
        for a in range(2):
            for s, sgn in enumerate((1.0, -1.0)):
                shifted = X.copy()
                shifted[:, a] += sgn * step
                pts[:, a, s, :] = shifted
        scores = self._score(pts.reshape(n * 4, 2)).reshape(n, 2, 2, 2)
        jac = (scores[:, :, 0, :] - scores[:, :, 1, :]) / (2.0 * step)
        # jac[n, b, a] = d score_a / d phi_b; transpose so rows index score
        return np.transpose(jac, (0, 2, 1))


def sample_reference(target, n, seed):
    """Draw ``n`` i.i.d. reference samples from the target, deterministically
    in ``seed``. Supported for Gaussian and mixture targets; the GP posterior
    has no exact sampler (use ``grid_reference``)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(target, GPRegressionTarget):
        raise ValueError(
            "GP posterior has no exact sampler; use grid_reference for reference points"
        )
    return target.sample(n, seed)


def grid_reference(target, bounds, resolution, n, seed):
    """Approximate sampler for a 2-D target via a dense evaluation grid.

    Evaluates log-density at the grid cell centers, converts to cell masses by
    softmax over (log-density + log cell area), draws ``n`` cells from the
    resulting categorical distribution and jitters each draw uniformly within
    its cell. Deterministic given ``seed``.
    """
    if target.dim != 2:
        raise ValueError("grid_reference supports 2-D targets only")
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape != (2, 2) or np.any(bounds[:, 1] <= bounds[:, 0]):
        raise ValueError("bounds must be two nonempty intervals [[lo, hi], [lo, hi]]")
    resolution = int(resolution)
    if resolution < 50:
        raise ValueError("resolution must be >= 50 per axis")
    if n < 1:
        raise ValueError("n must be >= 1")

    widths = (bounds[:, 1] - bounds[:, 0]) / resolution
    ax0 = bounds[0, 0] + widths[0] * (np.arange(resolution) + 0.5)
    ax1 = bounds[1, 0] + widths[1] * (np.arange(resolution) + 0.5)
    g0, g1 = np.meshgrid(ax0, ax1, indexing="ij")
    centers = np.stack([g0.ravel(), g1.ravel()], axis=1)

    logp = target.log_density(centers)
    if not np.any(np.isfinite(logp)):
        raise ValueError("all grid masses underflow: bounds miss the target's mass")
    log_mass = logp + math.log(widths[0] * widths[1])
    log_mass = log_mass - logsumexp(log_mass)
    masses = np.exp(log_mass)
    masses /= masses.sum()

    rng = np.random.default_rng(seed)
    cells = rng.choice(centers.shape[0], size=n, p=masses)
    jitter = rng.uniform(-0.5, 0.5, size=(n, 2)) * widths[None, :]
    return centers[cells] + jitter


def load_lidar(path):
    """Load a two-column CSV of (range, logratio) observations.

    A header row naming the columns is optional; any N >= 2 rows are accepted.
    Returns (x, y) arrays.
    """
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            rows.append(row)
    if not rows:
        raise ValueError(f"{path}: empty file")
    start = 0
    try:
        float(rows[0][0])
    except ValueError:
        header = [c.strip().lower() for c in rows[0][:2]]
        if header != ["range", "logratio"]:
            raise ValueError(f"{path}: expected header 'range,logratio', got {rows[0][:2]}")
        start = 1
    data = []
    for row in rows[start:]:
        if len(row) < 2:
            raise ValueError(f"{path}: expected two columns, got {row}")
        data.append((float(row[0]), float(row[1])))
    if len(data) < 2:
        raise ValueError(f"{path}: need at least 2 data rows")
    arr = np.asarray(data, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{path}: non-finite values in data")
    return arr[:, 0], arr[:, 1]


def synthetic_lidar(n=221, seed=0, noise_scale=0.08):
    """Synthetic stand-in for the LIDAR dataset: a smooth sigmoid drop plus
    Gaussian noise, with inputs rescaled to [0, 1]. Deterministic in ``seed``."""
    if n < 2:
        raise ValueError("need n >= 2")
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, n)
    y = 0.05 - 0.85 / (1.0 + np.exp(-(x - 0.55) / 0.08))
    y = y + noise_scale * rng.standard_normal(n)
    return x, y
