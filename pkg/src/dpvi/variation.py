"""Finite-particle first variations and velocity fields per algorithm family.

For a weighted particle set sum_i a_i delta_{x_i} each family supplies an
approximation of the first variation U (a scalar field) and the transport
velocity v = -grad U, evaluated at arbitrary query points:

- GFSD: kernel-smoothed KL first variation,
      U(q) = -log pi(q) + log sum_i a_i K(q, x_i)
- Blob: GFSD plus an extra repulsive interaction term,
      U(q) = U_gfsd(q) + sum_i a_i K(q, x_i) / sum_l a_l K(x_i, x_l)
- KSDD: Stein-kernel quadratic-form first variation,
      U(q) = sum_i a_i k_pi(x_i, q)
- SVGD: velocity only (kernelized Stein operator); it has no first
  variation here and is never paired with weight updates.

Self-interaction terms are included in all sums: K(x, x) = 1 keeps the
smoothed-density denominators strictly positive at particle locations.
"""

from enum import Enum

import numpy as np
from scipy.special import logsumexp

from .kernels import rbf_matrix, stein_kernel_matrix

__all__ = ["Family", "velocity", "first_variation", "dissipation_estimate"]


class Family(str, Enum):
    SVGD = "svgd"
    GFSD = "gfsd"
    BLOB = "blob"
    KSDD = "ksdd"


def _validate(weights, positions, queries, h):
    w = np.asarray(weights, dtype=float)
    X = np.atleast_2d(np.asarray(positions, dtype=float))
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    if not h > 0:
        raise ValueError("bandwidth must be > 0")
    if w.shape != (X.shape[0],):
        raise ValueError("weights must be one per particle")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-8:
        raise ValueError("weights must lie on the probability simplex")
    if X.shape[1] != Q.shape[1]:
        raise ValueError("positions and queries disagree in dimension")
    return w, X, Q


def _log_kernel_weights(w, X, Q, h):
    # logits of a_i K(q, x_i); (q, m)
    diff = Q[:, None, :] - X[None, :, :]
    sq = np.einsum("qmd,qmd->qm", diff, diff)
    with np.errstate(divide="ignore"):
        log_a = np.log(w)
    return log_a[None, :] - sq / (2.0 * h * h), diff


def _check_kernel_support(w, X, Q, h):
    # plain-arithmetic kernel density; all-underflow is a hard error
    dens = rbf_matrix(Q, X, h) @ w
    dead = np.flatnonzero(dens == 0.0)
    if dead.size:
        i = int(dead[0])
        raise ValueError(
            f"kernel density underflows at query {i} (point {Q[i]}): "
            "all kernel contributions vanished"
        )


def _smoothing_ratio(w, X, Q, h):
    # sum_i a_i grad_q K(q, x_i) / sum_i a_i K(q, x_i), stably via softmax
    _check_kernel_support(w, X, Q, h)
    logits, diff = _log_kernel_weights(w, X, Q, h)
    logits = logits - logsumexp(logits, axis=1, keepdims=True)
    soft = np.exp(logits)
    return -np.einsum("qm,qmd->qd", soft, diff) / (h * h)


def _blob_extra_velocity(w, X, Q, h):
    # sum_i a_i grad_q K(q, x_i) / (sum_l a_l K(x_i, x_l))
    denom = rbf_matrix(X, X, h) @ w  # (m,), >= a_i via the self term
    Kq = rbf_matrix(Q, X, h)
    scaled = Kq * (w / denom)[None, :]
    diff = Q[:, None, :] - X[None, :, :]
    return -np.einsum("qm,qmd->qd", scaled, diff) / (h * h)


def velocity(family, target, positions, weights, queries, h):
    """Velocity field v(q) of the given family at each query point.

    Args:
        family: algorithm family.
        target: target model (score provider).
        positions: (m, d) particle positions.
        weights: (m,) simplex weights.
        queries: (q, d) evaluation points.
        h: kernel bandwidth.

    Returns:
        (q, d) array of velocities.
    """
    family = Family(family)
    w, X, Q = _validate(weights, positions, queries, h)

    if family is Family.GFSD:
        return target.score(Q) - _smoothing_ratio(w, X, Q, h)
    if family is Family.BLOB:
        return target.score(Q) - _smoothing_ratio(w, X, Q, h) - _blob_extra_velocity(w, X, Q, h)
    if family is Family.KSDD:
        _, grads = stein_kernel_matrix(target, X, Q, h, with_grad=True)
        return -np.einsum("m,mqd->qd", w, grads)
    if family is Family.SVGD:
        Sx = np.atleast_2d(target.score(X))
        Kmat = rbf_matrix(X, Q, h)  # (m, q)
        drift = np.einsum("mq,md->qd", Kmat, w[:, None] * Sx)
        wK = Kmat * w[:, None]
        repulse = (wK.sum(axis=0)[:, None] * Q - np.einsum("mq,md->qd", wK, X)) / (h * h)
        return drift + repulse
    raise ValueError(f"unknown family {family}")


def first_variation(family, target, weights, anchor_positions, queries, h):
    """First variation U(q) at each query point.

    The anchors are the particle locations carrying the (pre-update) weights;
    in the engine's weight step they are the freshly moved positions.
    SVGD has no first variation and is rejected.
    """
    family = Family(family)
    if family is Family.SVGD:
        raise ValueError("SVGD provides a velocity only; it has no first variation")
    w, X, Q = _validate(weights, anchor_positions, queries, h)

    if family is Family.KSDD:
        values, _ = stein_kernel_matrix(target, X, Q, h)
        return w @ values

    logits, _ = _log_kernel_weights(w, X, Q, h)
    log_smooth = logsumexp(logits, axis=1)
    if not np.all(np.isfinite(log_smooth)):
        i = int(np.flatnonzero(~np.isfinite(log_smooth))[0])
        raise ValueError(f"smoothed density is zero at query {i} (point {Q[i]})")
    u = -target.log_density(Q) + log_smooth
    if family is Family.BLOB:
        denom = rbf_matrix(X, X, h) @ w
        u = u + rbf_matrix(Q, X, h) @ (w / denom)
    return u


def dissipation_estimate(family, target, positions, weights, h):
    """Particle estimates of the two dissipation terms of the combined flow.

    Returns (transport_term, reaction_term) where transport is the weighted
    mean of ||grad U||^2 = ||v||^2 and reaction is the weighted variance of U;
    both are nonnegative, and their sum estimates -dF/dt along the flow.
    """
    family = Family(family)
    if family is Family.SVGD:
        raise ValueError("dissipation estimate is undefined for SVGD")
    w, X, _ = _validate(weights, positions, positions, h)
    v = velocity(family, target, X, w, X, h)
    u = first_variation(family, target, w, X, X, h)
    transport = float(w @ np.einsum("qd,qd->q", v, v))
    mean_u = float(w @ u)
    reaction = max(float(w @ (u * u) - mean_u * mean_u), 0.0)
    return transport, reaction
