"""Time-stepping engine: explicit-Euler position transport plus weight dynamics.

One iteration advances all particle positions with the family's velocity
field evaluated on the pre-step snapshot, then adjusts weights using the
first variation evaluated at the NEW positions with the OLD weights
(Gauss-Seidel ordering):

    x_i <- x_i + eta * v(x_i)
    a_i <- a_i - lam * eta * (U(x_i) - sum_j a_j U(x_j)) * a_i

The centered update conserves total mass by construction; a small floor plus
renormalization guards against Euler overshoot below zero. The duplicate/kill
variant replaces the continuous weight adjustment with birth-death events on
an equal-weight ensemble, and the Langevin mode replaces the transport step
with an unadjusted Langevin step (plus duplicate/kill for the birth-death
Langevin baseline).
"""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelConfig, median_bandwidth
from .variation import Family, first_variation, velocity

__all__ = [
    "Ensemble",
    "AlgorithmSpec",
    "RunRecord",
    "WeightOvershootWarning",
    "position_step",
    "ca_weight_step",
    "dk_event_decisions",
    "dk_step",
    "langevin_step",
    "run",
]

# bandwidth used when the median heuristic is undefined (single particle)
SINGLE_PARTICLE_BANDWIDTH = 1.0


class WeightOvershootWarning(UserWarning):
    """lam * eta * |centered first variation| reached 1: the Euler weight
    update is in the overshoot regime and the floor safeguard may engage."""


@dataclass(frozen=True)
class Ensemble:
    """Weighted particle set: positions (M, d) and simplex weights (M,)."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        weights = np.asarray(self.weights, dtype=float).ravel()
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "weights", weights)
        if weights.shape[0] != positions.shape[0]:
            raise ValueError("one weight per particle required")
        if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(weights))):
            raise ValueError("ensemble entries must be finite")
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > 1e-10:
            raise ValueError("weights must sum to 1 within 1e-10")

    @classmethod
    def equal_weights(cls, positions):
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        m = positions.shape[0]
        return cls(positions, np.full(m, 1.0 / m))

    @property
    def size(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]


@dataclass(frozen=True)
class AlgorithmSpec:
    """Everything that defines one run: family, weight strategy, and knobs.

    weight_strategy is one of "fixed", "ca" (continuous adjustment) or "dk"
    (duplicate/kill). ``langevin=True`` swaps the transport step for an
    unadjusted Langevin step; combined with "dk" this is the birth-death
    Langevin baseline, whose event rate uses the GFSD first variation.
    """

    family: Family
    weight_strategy: str = "fixed"
    eta: float = 0.05
    lam: float = 1.0
    iterations: int = 1000
    seed: int = 0
    weight_floor: float = 1e-8
    dk_noise_scale: float = 1.0
    langevin: bool = False
    kernel: KernelConfig = field(default_factory=KernelConfig)

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.weight_strategy not in ("fixed", "ca", "dk"):
            raise ValueError(f"unknown weight_strategy {self.weight_strategy!r}")
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.weight_floor < 0:
            raise ValueError("weight_floor must be >= 0")
        if self.dk_noise_scale < 0:
            raise ValueError("dk_noise_scale must be >= 0")
        if self.langevin:
            if self.family is not Family.GFSD:
                raise ValueError("langevin runs use family 'gfsd' (its first variation drives dk)")
            if self.weight_strategy == "ca":
                raise ValueError("continuous weight adjustment is not defined for langevin runs")
        elif self.family is Family.SVGD and self.weight_strategy != "fixed":
            raise ValueError("SVGD has no first variation; weight_strategy must be 'fixed'")


@dataclass
class RunRecord:
    """Trace of one run: metric history, final ensemble, timing, seed."""

    spec: AlgorithmSpec
    history: list  # [(iteration, {metric: value})]
    final: Ensemble
    wall_time: float
    seed: int


def position_step(ensemble, family, target, eta, h):
    """Advance all positions by eta times the velocity of the pre-step snapshot."""
    v = velocity(family, target, ensemble.positions, ensemble.weights, ensemble.positions, h)
    bad = np.flatnonzero(~np.all(np.isfinite(v), axis=1))
    if bad.size:
        raise FloatingPointError(f"non-finite velocity for particle {int(bad[0])}")
    return Ensemble(ensemble.positions + eta * v, ensemble.weights)


def ca_weight_step(ensemble, family, target, eta, lam, h, weight_floor=1e-8):
    """Continuous weight adjustment on the post-position-update snapshot.

    ``ensemble`` carries the new positions with the pre-update weights. The
    centered update a_i (1 - lam*eta*(U_i - sum_j a_j U_j)) conserves total
    mass; weights below ``weight_floor`` are clipped and the vector is
    renormalized.
    """
    w = ensemble.weights
    u = first_variation(family, target, w, ensemble.positions, ensemble.positions, h)
    ubar = u - w @ u
    factor = lam * eta * float(np.max(np.abs(ubar))) if ubar.size else 0.0
    if factor >= 1.0:
        warnings.warn(
            f"weight update overshoot: lam*eta*max|centered U| = {factor:.3g} >= 1",
            WeightOvershootWarning,
            stacklevel=2,
        )
    new_w = w * (1.0 - lam * eta * ubar)
    new_w = np.maximum(new_w, weight_floor)
    new_w = new_w / new_w.sum()
    return Ensemble(ensemble.positions, new_w)


def dk_event_decisions(rates, rng):
    """Sample one birth-death decision per particle from the exponential-clock
    rates R_i: +1 duplicates particle i (probability 1 - exp(-R_i) when
    R_i > 0), -1 kills it (probability 1 - exp(R_i) when R_i < 0), 0 no event.
    Consumes exactly one uniform draw per particle."""
    rates = np.asarray(rates, dtype=float)
    u = rng.uniform(size=rates.shape[0])
    events = np.zeros(rates.shape[0], dtype=int)
    events[(rates > 0) & (u < -np.expm1(-np.maximum(rates, 0)))] = 1
    events[(rates < 0) & (u < -np.expm1(np.minimum(rates, 0)))] = -1
    return events


def _other_index(rng, m, i):
    j = int(rng.integers(m - 1))
    return j if j < i else j + 1


def dk_step(ensemble, family, target, eta, lam, h, rng, dk_noise_scale=1.0):
    """Duplicate/kill step on an equal-weight ensemble.

    Rates R_i = -lam*eta*(U(x_i) - mean U) come from the post-position
    snapshot. A duplicate replaces a uniformly random other particle (and
    vice versa for a kill); every duplicated particle receives additive
    Gaussian noise with per-coordinate variance dk_noise_scale * eta.
    Particle count and weight uniformity are preserved.
    """
    m = ensemble.size
    if not np.allclose(ensemble.weights, 1.0 / m, atol=1e-9):
        raise ValueError("duplicate/kill operates on equal-weight ensembles")
    w = ensemble.weights
    u = first_variation(family, target, w, ensemble.positions, ensemble.positions, h)
    rates = -lam * eta * (u - w @ u)
    events = dk_event_decisions(rates, rng)
    positions = ensemble.positions.copy()
    noise_sd = np.sqrt(dk_noise_scale * eta)
    for i in np.flatnonzero(events):
        if m == 1:
            break  # cannot kill the sole particle
        j = _other_index(rng, m, i)
        noise = noise_sd * rng.standard_normal(ensemble.dim)
        if events[i] > 0:
            positions[j] = positions[i] + noise
        else:
            positions[i] = positions[j] + noise
    return Ensemble(positions, w)


def langevin_step(ensemble, target, eta, rng):
    """Unadjusted Langevin update: x <- x + eta * score(x) + sqrt(2 eta) * xi."""
    noise = rng.standard_normal(ensemble.positions.shape)
    new_pos = ensemble.positions + eta * target.score(ensemble.positions) + np.sqrt(2.0 * eta) * noise
    return Ensemble(new_pos, ensemble.weights)


def _current_bandwidth(spec, positions, iteration, last_h):
    cfg = spec.kernel
    if cfg.bandwidth is not None:
        return cfg.bandwidth
    if last_h is not None and iteration % cfg.recompute_every != 0:
        return last_h
    if positions.shape[0] < 2:
        return SINGLE_PARTICLE_BANDWIDTH
    return median_bandwidth(positions)


def run(spec, target, initial, metric_hooks=None, record_every=0):
    """Run the full loop of ``spec.iterations`` composed steps.

    Args:
        spec: AlgorithmSpec.
        target: target model.
        initial: starting Ensemble.
        metric_hooks: optional mapping name -> callable(ensemble) -> float.
        record_every: evaluate hooks every that many iterations (0 = only at
            the start and the end).

    Returns:
        RunRecord with the metric history and final ensemble. Any step error
        aborts with the iteration index attached.
    """
    hooks = metric_hooks or {}
    rng = np.random.default_rng(spec.seed)
    ensemble = initial
    history = []
    start = time.perf_counter()

    def snapshot(iteration, state):
        if hooks:
            history.append((iteration, {name: float(fn(state)) for name, fn in hooks.items()}))

    snapshot(0, ensemble)
    # fixed-weight langevin never evaluates a kernel; skip bandwidth work
    needs_h = not spec.langevin or spec.weight_strategy != "fixed"
    h = None
    for k in range(spec.iterations):
        try:
            if needs_h:
                h = _current_bandwidth(spec, ensemble.positions, k, h)
            if spec.langevin:
                ensemble = langevin_step(ensemble, target, spec.eta, rng)
            else:
                ensemble = position_step(ensemble, spec.family, target, spec.eta, h)
            if spec.weight_strategy == "ca":
                ensemble = ca_weight_step(
                    ensemble, spec.family, target, spec.eta, spec.lam, h, spec.weight_floor
                )
            elif spec.weight_strategy == "dk":
                ensemble = dk_step(
                    ensemble, spec.family, target, spec.eta, spec.lam, h, rng, spec.dk_noise_scale
                )
        except Exception as exc:
            raise RuntimeError(f"iteration {k}: {exc}") from exc
        if k + 1 == spec.iterations or (record_every and (k + 1) % record_every == 0):
            snapshot(k + 1, ensemble)

    return RunRecord(
        spec=spec,
        history=history,
        final=ensemble,
        wall_time=time.perf_counter() - start,
        seed=spec.seed,
    )
