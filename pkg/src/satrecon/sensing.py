"""Saturated linear sensing: data model, synthetic problems and quality metrics.

A measurement is ``q_i = <u_i, x> + eps_i``; the detector only reports
``p_i = clamp(q_i, s_minus, s_plus)``.  Readings at the rails carry a single
bit (which rail), encoded by the saturation indicator ``psi`` and the side
label ``y``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InvalidSpecError",
    "Signal",
    "SensingMatrix",
    "SaturatedObservations",
    "NoiseModel",
    "SyntheticProblemSpec",
    "SyntheticProblem",
    "generate_true_signal",
    "generate_sensing_matrix",
    "generate_noise",
    "choose_saturation_levels",
    "saturate_measurements",
    "generate_problem",
    "snr_db",
]

# Independent child streams of one seed.
_STREAM_SIGNAL, _STREAM_MATRIX, _STREAM_NOISE = 0, 1, 2


class InvalidSpecError(ValueError):
    """Raised for inconsistent problem specifications."""


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(stream,)))


@dataclass(frozen=True)
class Signal:
    values: np.ndarray
    degenerate_norm: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 1:
            raise ValueError("signal must be a non-empty vector")
        if not np.all(np.isfinite(v)):
            raise ValueError("signal entries must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


class SensingMatrix:
    """Dense ``m x d`` matrix whose i-th row is the sensing vector ``u_i``.

    ``apply(x)`` returns the measurements ``U' x`` and ``adjoint(a)`` returns
    ``U a`` (a combination of sensing vectors).
    """

    def __init__(self, rows):
        rows = np.array(rows, dtype=float)
        if rows.ndim != 2 or min(rows.shape) < 1:
            raise ValueError("sensing matrix must be a non-empty 2-D array")
        rows.setflags(write=False)
        self.rows = rows

    @property
    def shape(self):
        return self.rows.shape

    @property
    def m(self):
        return self.rows.shape[0]

    @property
    def d(self):
        return self.rows.shape[1]

    def apply(self, x):
        return self.rows @ np.asarray(x, dtype=float)

    def adjoint(self, a):
        return self.rows.T @ np.asarray(a, dtype=float)

    def subset(self, mask) -> "SensingMatrix":
        return SensingMatrix(self.rows[np.asarray(mask, dtype=bool)])


@dataclass(frozen=True)
class SaturatedObservations:
    """Observed vector with its saturation bookkeeping.

    ``y`` and ``s`` are only meaningful where ``psi`` is set; elsewhere they
    hold 0.  ``s_minus``/``s_plus`` are the global rails (per-measurement
    rails in CT live in ``s``).
    """

    p: np.ndarray
    psi: np.ndarray
    y: np.ndarray
    s: np.ndarray
    s_minus: float = -np.inf
    s_plus: float = np.inf

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        psi = np.asarray(self.psi, dtype=bool)
        y = np.asarray(self.y, dtype=np.int8)
        s = np.asarray(self.s, dtype=float)
        if not (p.shape == psi.shape == y.shape == s.shape) or p.ndim != 1:
            raise ValueError("p, psi, y and s must be vectors of equal length")
        if np.any(np.abs(y[psi]) != 1) or np.any(y[~psi] != 0):
            raise ValueError("y must be +-1 exactly where psi is set")
        for name, arr in (("p", p), ("psi", psi), ("y", y), ("s", s)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def m(self):
        return self.p.size

    @property
    def n_saturated(self):
        return int(self.psi.sum())

    def with_indicator(self, psi, p=None) -> "SaturatedObservations":
        """Copy with a new indicator; sides/thresholds are kept for re-flagged rows."""
        psi = np.asarray(psi, dtype=bool)
        y = np.where(psi, self._side_template(), 0)
        s = np.where(psi, self._threshold_template(), 0.0)
        if not np.all(np.isfinite(s[psi])):
            raise ValueError("newly flagged rows have no finite rail to take their threshold from")
        return SaturatedObservations(self.p if p is None else p, psi, y, s, self.s_minus, self.s_plus)

    def _side_template(self):
        # rows never flagged default to the lower rail
        return np.where(self.y != 0, self.y, -1)

    def _threshold_template(self):
        return np.where(self.psi, self.s, self.s_minus)


@dataclass(frozen=True)
class NoiseModel:
    kind: str = "gaussian"
    target_ratio: float = np.inf
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gaussian" and not self.target_ratio > 0:
            raise ValueError("target_ratio must be positive")


@dataclass(frozen=True)
class SyntheticProblemSpec:
    d: int
    K: int
    m: int
    n: int
    s_n: float = np.inf
    seed: int = 0

    def __post_init__(self):
        if self.d < 1 or self.m < 1:
            raise InvalidSpecError("d and m must be positive")
        if not 0 <= self.K <= self.d:
            raise InvalidSpecError(f"sparsity K={self.K} outside [0, d={self.d}]")
        if not 0 <= self.n <= self.m:
            raise InvalidSpecError(f"saturated count n={self.n} outside [0, m={self.m}]")
        if self.n % 2:
            raise InvalidSpecError("saturated count n must be even")
        if not self.s_n > 0:
            raise InvalidSpecError("noise ratio s_n must be positive (inf for noiseless)")
        if not 0 <= self.seed < 2**64:
            raise InvalidSpecError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class SyntheticProblem:
    spec: SyntheticProblemSpec
    x_true: Signal
    U: SensingMatrix
    q_clean: np.ndarray
    q_noisy: np.ndarray
    obs: SaturatedObservations
    noise: NoiseModel = field(default_factory=NoiseModel)


def generate_true_signal(spec: SyntheticProblemSpec) -> Signal:
    """K-sparse unit-norm signal with Gaussian non-zeros on a uniform support."""
    if spec.K > spec.d:
        raise InvalidSpecError("K > d")
    rng = _rng(spec.seed, _STREAM_SIGNAL)
    x = np.zeros(spec.d)
    if spec.K == 0:
        return Signal(x, degenerate_norm=True)
    support = rng.choice(spec.d, size=spec.K, replace=False)
    vals = rng.standard_normal(spec.K)
    x[support] = vals / np.linalg.norm(vals)
    return Signal(x)


def generate_sensing_matrix(spec: SyntheticProblemSpec) -> SensingMatrix:
    rng = _rng(spec.seed, _STREAM_MATRIX)
    return SensingMatrix(rng.standard_normal((spec.m, spec.d)))


def generate_noise(q_clean, s_n: float, seed: int) -> tuple[np.ndarray, NoiseModel]:
    """Gaussian noise rescaled so that ``sum(q**2) / sum(eps**2) == s_n`` exactly."""
    q_clean = np.asarray(q_clean, dtype=float)
    if np.isinf(s_n):
        return np.zeros_like(q_clean), NoiseModel("none")
    eps = _rng(seed, _STREAM_NOISE).standard_normal(q_clean.size)
    energy = np.sum(q_clean**2)
    eps *= np.sqrt(energy / (s_n * np.sum(eps**2)))
    sigma = float(np.sqrt(energy / (s_n * q_clean.size)))
    return eps, NoiseModel("gaussian", float(s_n), sigma)


def _split_below(v: float) -> float:
    return float(np.nextafter(v, -np.inf)) if v == 0 else v - abs(v) * np.finfo(float).eps


def _split_above(v: float) -> float:
    return float(np.nextafter(v, np.inf)) if v == 0 else v + abs(v) * np.finfo(float).eps


def choose_saturation_levels(q_noisy, n: int) -> tuple[float, float]:
    """Rails that leave ``n/2`` readings at or below ``s_minus`` and ``n/2`` at or above ``s_plus``.

    Each rail sits at the midpoint of the two order statistics it separates.
    When those order statistics tie, the rail is nudged one relative epsilon
    off the tied value and the split cannot be exact.
    """
    q = np.asarray(q_noisy, dtype=float)
    m = q.size
    if n % 2 or not 0 <= n <= m:
        raise InvalidSpecError(f"n={n} must be even and within [0, {m}]")
    if n == 0:
        return -np.inf, np.inf
    if n == m:
        warnings.warn("every measurement saturated: no analog readings remain", RuntimeWarning, stacklevel=2)
    srt = q[np.argsort(q, kind="stable")]
    h = n // 2
    lo_a, lo_b = srt[h - 1], srt[h]
    hi_a, hi_b = srt[m - h - 1], srt[m - h]
    s_minus = 0.5 * (lo_a + lo_b)
    s_plus = 0.5 * (hi_a + hi_b)
    if lo_a == lo_b:
        s_minus = _split_below(lo_a)
    if hi_a == hi_b:
        s_plus = _split_above(hi_a)
    if s_minus > s_plus:
        s_minus = s_plus = 0.5 * (s_minus + s_plus)
    return float(s_minus), float(s_plus)


def saturate_measurements(q_noisy, s_minus: float, s_plus: float) -> SaturatedObservations:
    """Clamp to the rails; readings equal to a rail count as saturated."""
    q = np.asarray(q_noisy, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("measurements must be finite")
    if s_minus > s_plus:
        raise ValueError("s_minus must not exceed s_plus")
    upper = q >= s_plus
    lower = (q <= s_minus) & ~upper
    psi = upper | lower
    y = np.zeros(q.size, dtype=np.int8)
    y[upper] = 1
    y[lower] = -1
    s = np.zeros(q.size)
    s[upper] = s_plus
    s[lower] = s_minus
    p = np.clip(q, s_minus, s_plus)
    return SaturatedObservations(p, psi, y, s, float(s_minus), float(s_plus))


def generate_problem(spec: SyntheticProblemSpec) -> SyntheticProblem:
    x = generate_true_signal(spec)
    U = generate_sensing_matrix(spec)
    q = U.apply(x.values)
    eps, noise = generate_noise(q, spec.s_n, spec.seed)
    qn = q + eps
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        s_minus, s_plus = choose_saturation_levels(qn, spec.n)
    obs = saturate_measurements(qn, s_minus, s_plus)
    return SyntheticProblem(spec, x, U, q, qn, obs, noise)


def snr_db(x_true, x_hat) -> float:
    """``10 log10(|x|^2 / |x - x_hat|^2)``; ``inf`` for an exact recovery."""
    xt = np.asarray(x_true, dtype=float)
    xh = np.asarray(x_hat, dtype=float)
    if xt.shape != xh.shape:
        raise ValueError("signals differ in length")
    num = float(np.dot(xt, xt))
    if num == 0:
        raise ValueError("reference signal has zero norm")
    err = float(np.sum((xt - xh) ** 2))
    if err == 0:
        return np.inf
    return 10.0 * np.log10(num / err)
