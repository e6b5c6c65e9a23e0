"""Measurement primitives: seeded random streams, per-parameter estimates,
GHZ parity sampling for linear combinations, and photon-mode bookkeeping.

Two fidelities coexist deliberately. The distribution-level samplers
(:func:`sample_param_estimates`, :func:`lincomb_estimate`) draw straight from
the asymptotic Gaussian laws of the underlying estimation schemes; they are
what the protocol simulators use. The physics-level path
(:class:`GHZSpec`, :func:`ghz_parity_shots`) samples actual +-1 parity
outcomes of the entangled state so the asymptotic laws themselves can be
validated, shot by shot, against the likelihood they are supposed to come
from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .functions import as_params

# Modeling assumptions behind the distribution-level samplers; exported into
# result metadata so downstream records are self-describing.
MODELING_ASSUMPTIONS = (
    "gaussian-step1-estimates",
    "distribution-level-lincomb-noise",
    "phase-unwrapped",
)

_UINT64_MAX = 2**64 - 1


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream: (seed, index) fully determines the draws.

    Streams with the same seed and different indices are statistically
    independent, and a stream reproduces the same sequence every time
    ``generator`` is called, regardless of what other streams did in between.
    That makes trial-level parallelism safe: worker k derives its stream from
    its index, not from execution order.
    """

    seed: int
    index: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) <= _UINT64_MAX:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if int(self.index) < 0:
            raise ValueError("stream index must be nonnegative")

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.index),))
        )

    def substream(self, k: int) -> "RngStream":
        """Stream (seed, index * 2^20 + k), for nested fan-out."""
        if not 0 <= k < 2**20:
            raise ValueError("substream key out of range")
        return RngStream(self.seed, (self.index << 20) + k)


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError("rng must be an RngStream or numpy Generator")


def sample_param_estimates(theta, variances, rng, size: int | None = None) -> np.ndarray:
    """Draw first-step estimates, theta_i + Normal(0, variances_i).

    Returns shape (d,) or, with ``size``, (size, d). A zero variance pins the
    component exactly; negative variances are an error.
    """
    theta = as_params(theta)
    var = np.asarray(variances, dtype=float)
    if var.shape != theta.shape:
        raise ValueError("variances must match theta in length")
    if np.any(var < 0) or not np.all(np.isfinite(var)):
        raise ValueError("variances must be finite and nonnegative")
    gen = _generator(rng)
    shape = theta.shape if size is None else (size, theta.shape[0])
    return theta + np.sqrt(var) * gen.standard_normal(shape)


# -- GHZ linear-combination measurement ---------------------------------------


@dataclass(frozen=True)
class GHZSpec:
    """Entangled-state schedule realizing a weighted parameter sum.

    For time resources, sensor i participates for tau_i = t |w_i| / max|w|
    (the largest-weight sensor runs the full time t) and negative weights
    enter through a basis flip, so the accumulated relative phase is

        phi = (t / max|w|) * (w . theta).

    For photon resources the weights become mode counts n_i = N w_i / sum w_j
    rounded by largest remainder, and the phase scale is sum n_i per unit
    theta in the weighted direction.
    """

    weights: tuple
    kind: str
    durations: tuple = ()
    mode_counts: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0 or not np.all(np.isfinite(w)):
            raise ValueError("weights must be a finite nonempty vector")
        if np.all(w == 0.0):
            raise ValueError("weights must not all vanish")
        if self.kind == "qubit-time":
            tau = np.asarray(self.durations, dtype=float)
            if tau.shape != w.shape or np.any(tau < 0):
                raise ValueError("durations must be nonnegative, one per sensor")
            if not np.isclose(tau.max(), self.time):
                raise ValueError("the max-weight sensor must run the full time")
        elif self.kind == "photon-number":
            n = np.asarray(self.mode_counts, dtype=int)
            if n.shape != w.shape or np.any(n < 0):
                raise ValueError("mode counts must be nonnegative, one per mode")
        else:
            raise ValueError("kind must be 'qubit-time' or 'photon-number'")

    @property
    def time(self) -> float:
        if self.kind != "qubit-time":
            raise ValueError("time is defined for qubit-time specs only")
        return float(np.max(self.durations))

    @classmethod
    def for_time(cls, weights, time: float) -> "GHZSpec":
        w = np.asarray(weights, dtype=float)
        if not np.isfinite(time) or time <= 0:
            raise ValueError("time must be positive and finite")
        if np.all(w == 0.0):
            raise ValueError("weights must not all vanish")
        tau = time * np.abs(w) / np.abs(w).max()
        return cls(
            weights=tuple(float(x) for x in w),
            kind="qubit-time",
            durations=tuple(float(x) for x in tau),
        )

    @classmethod
    def for_photons(cls, weights, photons: int) -> "GHZSpec":
        w = np.asarray(weights, dtype=float)
        counts = photon_mode_counts(w, photons)
        return cls(
            weights=tuple(float(x) for x in w),
            kind="photon-number",
            mode_counts=tuple(int(x) for x in counts),
        )


def relative_phase(spec: GHZSpec, theta) -> float:
    """Accumulated relative phase of the two GHZ branches at theta."""
    theta = as_params(theta, len(spec.weights))
    w = np.asarray(spec.weights)
    if spec.kind == "qubit-time":
        return float(np.sum(np.sign(w) * np.asarray(spec.durations) * theta))
    return float(np.sum(np.sign(w) * np.asarray(spec.mode_counts) * theta))


def parity_probability(spec: GHZSpec, theta) -> float:
    """P(parity = +1) = (1 + cos phi)/2."""
    return 0.5 * (1.0 + np.cos(relative_phase(spec, theta)))


def ghz_parity_shots(spec: GHZSpec, theta, shots: int, rng) -> np.ndarray:
    """Sample +-1 parity outcomes of the entangled schedule at theta."""
    if shots < 1:
        raise ValueError("shots must be positive")
    p = parity_probability(spec, theta)
    gen = _generator(rng)
    return np.where(gen.random(shots) < p, 1, -1)


def phase_scale(spec: GHZSpec) -> float:
    """d phi / d q for q = weights . theta: t/max|w| (time) or N/sum|w|-like
    count scale (photons)."""
    w = np.abs(np.asarray(spec.weights))
    if spec.kind == "qubit-time":
        return float(spec.time / w.max())
    # phase = sum sign(w_i) n_i theta_i; for n_i proportional to |w_i| this
    # is (sum n_i / sum |w_i|) * q up to rounding
    counts = np.asarray(spec.mode_counts, dtype=float)
    nz = w > 0
    if not np.any(nz):
        raise ValueError("weights must not all vanish")
    return float(np.sum(counts[nz]) / np.sum(w[nz]))


def parity_fisher_information(spec: GHZSpec, theta, step: float = 1e-6) -> float:
    """Per-shot classical Fisher information about q = weights . theta,
    estimated by central-differencing the log-likelihood in q.

    Equals (d phi/d q)^2 identically away from phi in pi*Z, where the
    likelihood degenerates to {0, 1} and the finite difference blows up.
    """
    theta = as_params(theta, len(spec.weights))
    q = float(np.asarray(spec.weights) @ theta)
    c = phase_scale(spec)
    h = step * max(1.0, abs(q))

    def logp(outcome: int, qq: float) -> float:
        p = 0.5 * (1.0 + outcome * np.cos(c * qq))
        if p <= 0.0:
            raise ValueError("likelihood degenerate at this phase; move q")
        return float(np.log(p))

    info = 0.0
    for outcome in (1, -1):
        p = 0.5 * (1.0 + outcome * np.cos(c * q))
        d = (logp(outcome, q + h) - logp(outcome, q - h)) / (2.0 * h)
        info += p * d * d
    return float(info)


# -- distribution-level linear-combination estimate ---------------------------


def lincomb_variance(weights, *, time: float | None = None, photons: float | None = None) -> float:
    """Variance floor of the optimal linear-combination measurement:
    max_i w_i^2/t^2 with time, |w|_1^2/N^2 with photons."""
    w = np.asarray(weights, dtype=float)
    if (time is None) == (photons is None):
        raise ValueError("give exactly one of time or photons")
    if time is not None:
        if time <= 0:
            raise ValueError("time must be positive")
        return float(np.max(w * w) / time**2)
    if photons <= 0:
        raise ValueError("photon number must be positive")
    return float(np.sum(np.abs(w)) ** 2 / photons**2)


def lincomb_estimate(weights, theta, rng, *, time: float | None = None,
                     photons: float | None = None) -> float:
    """One draw of the linear-combination estimator, Normal(w.theta, floor)."""
    theta = as_params(theta)
    w = np.asarray(weights, dtype=float)
    if w.shape != theta.shape:
        raise ValueError("weights must match theta in length")
    var = lincomb_variance(w, time=time, photons=photons)
    gen = _generator(rng)
    return float(w @ theta + np.sqrt(var) * gen.standard_normal())


# -- integer apportionment -----------------------------------------------------


def largest_remainder(weights, total: int) -> np.ndarray:
    """Apportion ``total`` integer units proportionally to nonnegative weights.

    Floors the exact quotas, then hands leftover units to the largest
    fractional remainders, ties to the lowest index. Zero weights get zero.
    Deterministic, and the counts always sum to ``total``.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a nonempty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    if total < 0 or int(total) != total:
        raise ValueError("total must be a nonnegative integer")
    total = int(total)
    s = w.sum()
    if s == 0.0:
        if total:
            raise ValueError("cannot apportion positive total to zero weights")
        return np.zeros(w.size, dtype=int)
    quota = w / s * total
    counts = np.floor(quota).astype(int)
    leftover = total - int(counts.sum())
    if leftover:
        frac = quota - counts
        # stable sort keeps ties in index order, then we take the largest
        order = np.argsort(-frac, kind="stable")
        counts[order[:leftover]] += 1
    return counts


def photon_mode_counts(weights, photons: int) -> np.ndarray:
    """Integer photon counts per mode, proportional to |weights|."""
    if photons < 1:
        raise ValueError("photon number must be positive")
    return largest_remainder(np.abs(np.asarray(weights, dtype=float)), photons)


def hybrid_phase(couplings, theta, time: float, counts) -> float:
    """Phase of a mixed register: qubit sensors contribute theta_i * t,
    photon modes contribute theta_i * n_i.

    ``couplings`` holds 'qubit' or 'photon' per parameter; ``counts`` gives
    the photon numbers (ignored at qubit positions). Units only align because
    phase is dimensionless in both branches; the mix is bookkeeping, not a
    new protocol.
    """
    theta = as_params(theta)
    kinds = list(couplings)
    if len(kinds) != theta.shape[0]:
        raise ValueError("one coupling kind per parameter")
    n = np.asarray(counts, dtype=float)
    if n.shape != theta.shape:
        raise ValueError("one count per parameter")
    if time < 0 or not np.isfinite(time):
        raise ValueError("time must be finite and nonnegative")
    phase = 0.0
    for i, kind in enumerate(kinds):
        if kind == "qubit":
            phase += theta[i] * time
        elif kind == "photon":
            if n[i] < 0 or int(n[i]) != n[i]:
                raise ValueError(f"photon count at {i} must be a nonnegative integer")
            phase += theta[i] * n[i]
        else:
            raise ValueError("coupling kinds are 'qubit' or 'photon'")
    return float(phase)
