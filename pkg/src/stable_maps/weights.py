"""Weight sequences, criticality, and the laws driving the peeling chain.

A weight sequence assigns a non-negative weight ``q_k`` to faces of degree
``2k``. From a critical sequence we derive the partition fixed point ``Z``,
the offspring laws of the labelled mobiles, the step law ``nu`` of the
half-perimeter walk and its Doob transform by ``h_up``.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
from scipy import integrate, optimize, signal, stats
from scipy.special import binom, gammaln, zeta

from stable_maps.errors import (
    ConvergenceFailure,
    InvalidParameter,
    NegativeMass,
    NonCritical,
    NoSolution,
    PerimeterZero,
    SamplerStall,
    TailTooHeavy,
)

logger = logging.getLogger(__name__)

# Terms summed explicitly before switching to Hurwitz zeta tails.
EXPLICIT_TERMS = 1 << 16
H_TABLE_MAX = 1000
DEFAULT_NU_CUTOFF = 100_000
DIRECT_CONVOLUTION = 4096
DEFAULT_LAW_CUTOFF = 4096
CRITICAL_TOLERANCE = 1e-9
SQRT_PI = math.sqrt(math.pi)


def log_central_binomial(k: np.ndarray) -> np.ndarray:
    """log C(2k-1, k-1) for k >= 1."""
    k = np.asarray(k, dtype=float)
    return gammaln(2 * k) - gammaln(k) - gammaln(k + 1)


def _central_table(n: int) -> np.ndarray:
    k = np.arange(1, n, dtype=float)
    table = np.empty(n + 1)
    table[0] = 0.0
    steps = np.cumprod((2 * k + 1) / (2 * k + 2))
    table[1:] = 0.25 * np.concatenate([[1.0], steps])
    return table


# C(2k-1, k-1) 4**-k up to EXPLICIT_TERMS + 1
_CENTRAL = _central_table(EXPLICIT_TERMS + 1)


def central_ratio(k: np.ndarray) -> np.ndarray:
    """``C(2k-1, k-1) 4**-k`` for integers ``k >= 1``."""
    k = np.asarray(k, dtype=np.int64)
    out = np.empty(k.shape)
    small = k <= EXPLICIT_TERMS + 1
    out[small] = _CENTRAL[k[small]]
    if np.any(~small):
        big = k[~small]
        out[~small] = np.exp(log_central_binomial(big) - big * math.log(4.0))
    return out


@dataclass(frozen=True)
class PowerTail:
    """Closed-form weights ``q_k = scale * base**(-k) * k**(-exponent)``.

    Attributes:
        scale: Positive prefactor.
        base: Geometric base; ``base / 4`` is the radius of convergence of
            the partition series.
        exponent: Polynomial decay exponent.
        start: First half-degree carrying the tail.
    """

    scale: float
    base: float
    exponent: float
    start: int = 2

    def log_weight(self, k: np.ndarray) -> np.ndarray:
        """Log weight of each face degree in ``k``."""
        k = np.asarray(k, dtype=float)
        out = np.full(k.shape, -np.inf)
        mask = k >= self.start
        out[mask] = (
            math.log(self.scale)
            - k[mask] * math.log(self.base)
            - self.exponent * np.log(k[mask])
        )
        return out


@dataclass(frozen=True)
class WeightSequence:
    """Face weights ``q_k`` for half-degrees ``k >= 1``.

    Either a finite table, a power tail, or both (the weights add up).

    Attributes:
        table: Explicit weights keyed by half-degree.
        tail: Optional closed-form tail.
        declared_type_a: Type announced by the constructor, if known.
        name: Short label used in logs and manifests.
    """

    table: Mapping[int, float] = field(default_factory=dict)
    tail: Optional[PowerTail] = None
    declared_type_a: Optional[float] = None
    name: str = "custom"

    def __post_init__(self):
        clean: Dict[int, float] = {}
        for k, v in dict(self.table).items():
            k, v = int(k), float(v)
            if k < 1:
                raise InvalidParameter(f"half-degree must be >= 1, got {k}")
            if not math.isfinite(v) or v < 0:
                raise InvalidParameter(f"q_{k} must be finite and >= 0")
            if self.tail is not None and k > EXPLICIT_TERMS:
                raise InvalidParameter(
                    f"table entries beyond {EXPLICIT_TERMS} need no tail"
                )
            if v > 0:
                clean[k] = v
        object.__setattr__(self, "table", clean)
        if self.tail is not None:
            if self.tail.scale <= 0 or self.tail.base <= 0:
                raise InvalidParameter("tail scale and base must be > 0")
            if self.tail.start < 1:
                raise InvalidParameter("tail start must be >= 1")
        if not clean and self.tail is None:
            raise InvalidParameter("at least one q_k must be positive")

    @property
    def max_degree(self) -> Optional[int]:
        """Largest half-degree with positive weight, None for tails."""
        return None if self.tail is not None else max(self.table)

    @property
    def radius(self) -> float:
        """Radius of convergence of ``sum C(2k-1,k-1) q_k z^k``."""
        return math.inf if self.tail is None else self.tail.base / 4.0

    def log_weights(self, k: np.ndarray) -> np.ndarray:
        """Log weights, with the tail model past the table."""
        k = np.asarray(k)
        if self.tail is not None:
            out = self.tail.log_weight(k)
        else:
            out = np.full(k.shape, -np.inf)
        for kk, v in self.table.items():
            hit = k == kk
            if np.any(hit):
                out[hit] = np.logaddexp(out[hit], math.log(v))
        return out

    def weight(self, k):
        """q_k for an integer or an array of integers."""
        values = np.exp(self.log_weights(np.atleast_1d(k)))
        return float(values[0]) if np.isscalar(k) else values

    def terms(self, z: float, k: np.ndarray, e: int = 0) -> np.ndarray:
        """``k**e * C(2k-1, k-1) * q_k * z**k``.

        The tail part is written with ``ratio = 4z / base`` so that the
        geometric factors cancel before exponentiation.
        """
        k = np.asarray(k, dtype=np.int64)
        central = central_ratio(k)
        out = np.zeros(k.shape)
        if self.tail is not None:
            mask = k >= self.tail.start
            km = k[mask].astype(float)
            log_ratio = math.log(4.0 * z / self.tail.base)
            out[mask] = (
                self.tail.scale
                * central[mask]
                * np.exp(km * log_ratio - self.tail.exponent * np.log(km))
            )
        for kk, v in self.table.items():
            hit = k == kk
            if np.any(hit):
                out[hit] += np.exp(
                    math.log(v) + kk * math.log(4.0 * z) + np.log(central[hit])
                )
        return out * np.power(k, e, dtype=float)

    def nu_positive(self, c: float, m: np.ndarray) -> np.ndarray:
        """``q_{m+1} c**m`` for ``m >= 0``."""
        m = np.asarray(m, dtype=np.int64)
        k = m + 1
        out = np.zeros(m.shape)
        if self.tail is not None:
            mask = k >= self.tail.start
            km = k[mask].astype(float)
            log_ratio = math.log(c / self.tail.base)
            out[mask] = (
                self.tail.scale
                / c
                * np.exp(km * log_ratio - self.tail.exponent * np.log(km))
            )
        for kk, v in self.table.items():
            hit = k == kk
            if np.any(hit):
                out[hit] += math.exp(math.log(v) + (kk - 1) * math.log(c))
        return out

    def series(self, z: float, e: int = 0, start: int = 1) -> float:
        """``sum_{k >= start} k**e * C(2k-1, k-1) * q_k * z**k``.

        Tails beyond ``EXPLICIT_TERMS`` use the expansion
        ``C(2k-1,k-1) 4**-k = (1 - 1/(8k)) / (2 sqrt(pi k)) + O(k**-5/2)``.
        Returns inf outside the disc of convergence.
        """
        if z <= 0:
            raise InvalidParameter(f"series argument must be > 0, got {z}")
        if self.tail is None:
            ks = np.array(sorted(k for k in self.table if k >= start))
            if ks.size == 0:
                return 0.0
            return float(np.sum(self.terms(z, ks, e)))
        if z > self.radius * (1 + 1e-12):
            return math.inf
        last = max(start - 1, EXPLICIT_TERMS)
        total = 0.0
        if start <= last:
            ks = np.arange(start, last + 1)
            total += float(np.sum(self.terms(z, ks, e)))
        s = self.tail.exponent + 0.5 - e
        if s <= 1:
            return math.inf
        ratio = min(4.0 * z / self.tail.base, 1.0)
        first = last + 1
        remainder = (zeta(s, first) - zeta(s + 1, first) / 8.0) * (
            self.tail.scale / (2 * SQRT_PI)
        )
        return total + float(remainder * ratio**first)

    def partition_residual(self, z: float) -> float:
        """``1 + sum C(2k-1,k-1) q_k z^k - z``."""
        return 1.0 - z + self.series(z)

    def partition_slope(self, z: float) -> float:
        """Derivative of ``partition_residual``."""
        return -1.0 + self.series(z, e=1) / z


def solve_partition_function(q: WeightSequence, tol: float = 1e-12) -> float:
    """Smallest root ``Z > 1`` of ``z = 1 + sum C(2i-1, i-1) q_i z^i``.

    The residual is convex, so the root is found left of the minimiser
    of the residual by bracketing with ``scipy.optimize.brentq``.

    Raises:
        NoSolution: No root above one inside the disc of convergence; the
            exception carries the minimal value of the residual.
    """
    f = q.partition_residual
    g = q.partition_slope

    f_one = f(1.0)
    if not math.isfinite(f_one):
        raise NoSolution("partition series diverges at z = 1", math.inf)
    if g(1.0) >= 0:
        raise NoSolution("residual increasing from z = 1", f_one)

    z_hi = q.radius
    if math.isfinite(z_hi):
        if g(z_hi) <= 1e-10:
            z_star = z_hi
        else:
            z_star = optimize.brentq(g, 1.0, z_hi, xtol=1e-15, rtol=1e-15)
    else:
        hi = 2.0
        while g(hi) < 0 and f(hi) > 0:
            hi *= 2.0
            if hi > 1e12:
                raise NoSolution("no bracket for the fixed point", f(hi))
        if f(hi) <= 0 and g(hi) < 0:
            z = optimize.brentq(f, 1.0, hi, xtol=1e-15, rtol=1e-15)
            logger.debug(f"Partition fixed point {z!r} ({q.name})")
            return z
        z_star = optimize.brentq(g, 1.0, hi, xtol=1e-15, rtol=1e-15)

    f_star = f(z_star)
    if f_star > tol:
        raise NoSolution("fixed point equation has no root above one", f_star)
    if f_star >= -tol:
        z = z_star
    else:
        z = optimize.brentq(f, 1.0, z_star, xtol=1e-15, rtol=1e-15)
    logger.debug(f"Partition fixed point {z!r} ({q.name})")
    return z


@dataclass(frozen=True)
class Criticality:
    """Outcome of ``check_criticality``.

    ``kind`` is ``"critical"`` or ``"subcritical"``; supercritical weights
    have no fixed point and surface as ``NoSolution``.
    """

    kind: str
    type_a: Optional[float]
    mean: float
    Z: float

    @property
    def is_critical(self) -> bool:
        """Whether the sequence is critical."""
        return self.kind == "critical"


def fit_tail_exponent(q: WeightSequence, Z: float) -> float:
    """Fit ``a`` from the slope of ``mu([k, inf))`` for ``1e2 <= k <= 1e6``.
    """
    ks = np.unique(np.logspace(2, 6, 25).astype(int))
    survival = np.array([q.series(Z, 0, start=int(k)) / Z for k in ks])
    fit = stats.linregress(np.log(ks), np.log(survival))
    return 0.5 - fit.slope


def check_criticality(q: WeightSequence) -> Criticality:
    """Classify ``q`` as critical of type ``a`` or subcritical.

    ``mu(0) = 1/Z`` and ``mu(k) = Z**(k-1) C(2k-1,k-1) q_k``; the sequence
    is critical when ``mu`` has mean one. Finite variance gives
    ``a = 5/2``; otherwise ``mu([k, inf)) ~ c k**(-(a - 1/2))``.

    Raises:
        NoSolution: Propagated from ``solve_partition_function``.
    """
    Z = solve_partition_function(q)
    mean = q.series(Z, e=1) / Z
    if abs(mean - 1.0) > CRITICAL_TOLERANCE:
        logger.debug(f"{q.name}: subcritical, mean={mean!r}")
        return Criticality("subcritical", None, mean, Z)
    if q.tail is not None and abs(q.radius - Z) <= 1e-9 * Z:
        type_a = fit_tail_exponent(q, Z)
    else:
        type_a = 2.5
    logger.debug(f"{q.name}: critical, a={type_a:.4f}, Z={Z!r}")
    return Criticality("critical", type_a, mean, Z)


def require_critical(q: WeightSequence) -> Criticality:
    """Like ``check_criticality`` but raise ``NonCritical`` when not."""
    result = check_criticality(q)
    if not result.is_critical:
        raise NonCritical(result.mean)
    return result


def build_stable_family(
    a: float, scale: Optional[float] = None, start: int = 2
) -> WeightSequence:
    """Critical weights ``q_k = s (4Z)**-k k**-a`` for ``k >= start``.

    Then ``mu(k)`` decays like ``k**-(a + 1/2)`` and ``nu(m)`` like
    ``m**-a``. The pair ``(s, Z)`` solves the fixed point and mean-one
    equations jointly; ``scale`` only seeds the solver.

    Raises:
        InvalidParameter: ``a`` outside (3/2, 5/2).
        ConvergenceFailure: The 2-D root finder failed.
    """
    if not 1.5 < a < 2.5:
        raise InvalidParameter(
            f"a={a} outside (3/2, 5/2); use a finite-support family"
        )
    unit = WeightSequence(tail=PowerTail(1.0, 4.0, a, start))
    f0 = unit.series(1.0, 0)
    f1 = unit.series(1.0, 1)
    z0 = f1 / (f1 - f0)
    s0 = z0 / f1 if scale is None else float(scale)

    def residuals(x):
        s, z = x
        if s <= 0 or z <= 1:
            return [1.0, 1.0]
        seq = WeightSequence(tail=PowerTail(s, 4.0 * z, a, start))
        return [seq.partition_residual(z), seq.partition_slope(z)]

    sol = optimize.root(residuals, [s0, z0], method="hybr", tol=1e-14)
    worst = float(np.max(np.abs(sol.fun)))
    if not sol.success or worst > 1e-10:
        raise ConvergenceFailure(
            f"stable family a={a}: {sol.message} (residual {worst:.3e})"
        )
    s, z = (float(v) for v in sol.x)
    logger.info(f"Stable family a={a}: scale={s:.6g}, Z={z:.12g}")
    return WeightSequence(
        tail=PowerTail(s, 4.0 * z, a, start),
        declared_type_a=a,
        name=f"stable(a={a})",
    )


def critical_angulation(k: int) -> WeightSequence:
    """Critical weights for 2k-angulations (only ``q_k`` positive)."""
    if k < 2:
        raise InvalidParameter("2k-angulations need k >= 2")
    z = k / (k - 1)
    qk = 1.0 / (k * math.comb(2 * k - 1, k - 1) * z ** (k - 1))
    name = "quadrangulation" if k == 2 else f"{2 * k}-angulation"
    return WeightSequence({k: qk}, declared_type_a=2.5, name=name)


def family_from_spec(spec: Mapping[str, Any]) -> WeightSequence:
    """Build a weight sequence from a config mapping.

    Accepted shapes::

        {family: quadrangulation}
        {family: angulation, k: 3}
        {family: stable, a: 2.2, scale: 0.3}
        {family: table, weights: {2: 0.0833}}
    """
    kind = str(spec.get("family", "table")).lower()
    if kind == "quadrangulation":
        return critical_angulation(2)
    if kind == "angulation":
        return critical_angulation(int(spec["k"]))
    if kind == "stable":
        return build_stable_family(float(spec["a"]), spec.get("scale"))
    if kind == "table":
        weights = spec.get("weights") or {}
        return WeightSequence(
            {int(k): float(v) for k, v in weights.items()}, name="table"
        )
    raise InvalidParameter(f"unknown weight family {kind!r}")


def _h_table() -> np.ndarray:
    p = np.arange(1, H_TABLE_MAX, dtype=float)
    table = np.empty(H_TABLE_MAX + 1)
    table[0] = 0.0
    table[1:] = np.concatenate([[1.0], np.cumprod((2 * p + 1) / (2 * p))])
    return table


_H_TABLE = _h_table()

# (power of 1/x, coefficient) in the expansion of 4**-x C(2x, x) sqrt(pi x)
_H_SERIES = ((0, 1.0), (1, -1 / 8), (2, 1 / 128), (3, 5 / 1024),
             (4, -21 / 32768))


def h_up_asymptotic(x) -> np.ndarray:
    """Large-``p`` expansion of ``h_up``, valid for real ``x``."""
    x = np.asarray(x, dtype=float)
    inv = 1.0 / x
    poly = sum(coef * inv**i for i, coef in _H_SERIES)
    return 2.0 / SQRT_PI * np.sqrt(x) * poly


def h_down(p):
    """``h_down(p) = 4**-p C(2p, p)`` for integers ``p >= 0``.

    Companion of ``h_up``, which equals ``2p h_down(p)``. Both are
    harmonic for the half-perimeter walk killed below zero.
    """
    arr = np.asarray(p)
    if np.any(arr < 0):
        raise InvalidParameter("h_down needs p >= 0")
    flat = arr.astype(np.int64).ravel()
    out = np.ones(flat.shape)
    pos = flat > 0
    out[pos] = np.asarray(h_up(flat[pos]), dtype=float) / (2.0 * flat[pos])
    out = out.reshape(arr.shape)
    return float(out) if arr.ndim == 0 else out


def h_up(p):
    """``h_up(p) = 2p 4**-p C(2p, p)`` for integers ``p >= 0``.

    Exact recursion ``h(p+1) = h(p)(2p+1)/(2p)`` up to ``p = 1000``,
    asymptotic series beyond (relative error below 1e-14).
    """
    arr = np.asarray(p)
    if np.any(arr < 0):
        raise InvalidParameter("h_up needs p >= 0")
    flat = arr.astype(np.int64).ravel()
    out = np.empty(flat.shape)
    small = flat <= H_TABLE_MAX
    out[small] = _H_TABLE[flat[small]]
    if np.any(~small):
        out[~small] = h_up_asymptotic(flat[~small])
    out = out.reshape(arr.shape)
    return float(out) if arr.ndim == 0 else out


def _pareto_beyond(rng: np.random.Generator, start: int, alpha: float, size):
    """Integers ``>= start`` with survival ``~ k**-alpha``."""
    u = 1.0 - rng.random(size)
    x = (start - 0.5) * u ** (-1.0 / alpha) + 0.5
    return np.maximum(start, np.minimum(x, 2.0**62)).astype(np.int64)


@dataclass(frozen=True, eq=False)
class DiscreteLaw:
    """A law on ``{0, 1, ...}`` tabulated up to a cutoff.

    Mass beyond the table is sampled from a discrete Pareto tail.

    Attributes:
        pmf: ``P(X = k)`` for ``0 <= k <= len(pmf) - 1``.
        tail_mass: ``P(X > cutoff)``.
        tail_exponent: ``alpha`` with ``P(X >= k) ~ c k**-alpha``.
        tail_first_moment: ``E[X; X > cutoff]``.
    """

    pmf: np.ndarray
    tail_mass: float = 0.0
    tail_exponent: Optional[float] = None
    tail_first_moment: float = 0.0
    name: str = ""

    @property
    def cutoff(self) -> int:
        """Largest tabulated value."""
        return len(self.pmf) - 1

    @cached_property
    def _cdf(self) -> np.ndarray:
        return np.cumsum(self.pmf)

    def mean(self) -> float:
        """Mean, tail included."""
        k = np.arange(len(self.pmf))
        return float(np.dot(k, self.pmf)) + self.tail_first_moment

    def prob(self, k: int) -> float:
        """Probability of ``k``, zero past the cutoff."""
        return float(self.pmf[k]) if 0 <= k <= self.cutoff else 0.0

    def survival(self, k: int) -> float:
        """``P(X >= k)`` for ``k <= cutoff + 1``."""
        return float(np.sum(self.pmf[k:])) + self.tail_mass

    def sample(self, rng: np.random.Generator, size=None):
        """Draw by inversion of the tabulated distribution."""
        shape = () if size is None else size
        u = rng.random(shape)
        body = self._cdf[-1]
        if self.tail_exponent is None or self.tail_mass <= 0:
            idx = np.searchsorted(self._cdf, u * body, side="right")
            out = np.minimum(idx, self.cutoff)
        else:
            idx = np.searchsorted(self._cdf, u, side="right")
            out = np.minimum(idx, self.cutoff).astype(np.int64)
            deep = u >= body
            if np.any(deep):
                draws = _pareto_beyond(
                    rng, self.cutoff + 1, self.tail_exponent, np.shape(u)
                )
                out = np.where(deep, draws, out)
        return int(out) if size is None else np.asarray(out, dtype=np.int64)

    @cached_property
    def size_biased(self) -> "DiscreteLaw":
        """The law ``k P(X = k) / E[X]``."""
        mean = self.mean()
        k = np.arange(len(self.pmf))
        exponent = None
        if self.tail_exponent is not None and self.tail_exponent > 1:
            exponent = self.tail_exponent - 1
        return DiscreteLaw(
            k * self.pmf / mean,
            tail_mass=self.tail_first_moment / mean if exponent else 0.0,
            tail_exponent=exponent,
            tail_first_moment=math.nan,
            name=f"size-biased {self.name}",
        )

    def sample_size_biased(self, rng: np.random.Generator, size=None):
        """Draw from the size-biased law."""
        return self.size_biased.sample(rng, size)


@dataclass(frozen=True)
class GeometricLaw:
    """``P(X = k) = (1/Z) (1 - 1/Z)**k`` on ``{0, 1, ...}``."""

    Z: float

    @property
    def success(self) -> float:
        """Success probability."""
        return 1.0 / self.Z

    def prob(self, k: int) -> float:
        """Probability of ``k`` failures."""
        return self.success * (1 - self.success) ** k

    def mean(self) -> float:
        """Mean number of failures."""
        return self.Z - 1.0

    def table(self, cutoff: int) -> np.ndarray:
        """Probabilities of 0..``cutoff``."""
        return self.success * (1 - self.success) ** np.arange(cutoff + 1)

    def sample(self, rng: np.random.Generator, size=None):
        """Number of failures before a success."""
        draw = rng.geometric(self.success, size) - 1
        return int(draw) if size is None else draw.astype(np.int64)

    def sample_size_biased(self, rng: np.random.Generator, size=None):
        """Draw from the size-biased law."""
        draw = 1 + rng.negative_binomial(2, self.success, size)
        return int(draw) if size is None else draw.astype(np.int64)


def offspring_laws(
    q: WeightSequence, Z: float, type_a: float, cutoff: int
) -> Tuple[DiscreteLaw, DiscreteLaw]:
    """Face-degree law ``mu`` and black offspring law ``mu_black``.

    ``mu(k) = t_k / Z`` and ``mu_black(k - 1) = t_k / (Z - 1)`` where
    ``t_k = C(2k-1,k-1) q_k Z**k``.
    """
    if q.max_degree is not None:
        cutoff = max(cutoff, q.max_degree + 1)
    k = np.arange(1, cutoff + 2)
    t = q.terms(Z, k)
    exponent = type_a - 0.5 if q.tail is not None else None

    def tail(start, e):
        return q.series(Z, e, start=start) if q.tail is not None else 0.0

    mu = DiscreteLaw(
        np.concatenate([[1.0 / Z], t[:cutoff] / Z]),
        tail_mass=tail(cutoff + 1, 0) / Z,
        tail_exponent=exponent,
        tail_first_moment=tail(cutoff + 1, 1) / Z,
        name="mu",
    )
    start = cutoff + 2
    mu_black = DiscreteLaw(
        t[: cutoff + 1] / (Z - 1),
        tail_mass=tail(start, 0) / (Z - 1),
        tail_exponent=exponent,
        tail_first_moment=(tail(start, 1) - tail(start, 0)) / (Z - 1),
        name="mu_black",
    )
    return mu, mu_black


def tilde_mu(
    Z: float,
    mu_black: DiscreteLaw,
    type_a: float,
    cutoff: Optional[int] = None,
) -> DiscreteLaw:
    """Law of the number of white grandchildren of a white vertex.

    The generating function is ``G(B(s))`` with ``G`` geometric of
    parameter ``1/Z``, so the coefficients satisfy
    ``t_k (1 - r b_0) = [k = 0]/Z + r sum_{i >= 1} b_i t_{k-i}``.
    """
    cutoff = cutoff or DEFAULT_LAW_CUTOFF
    b = np.zeros(cutoff + 1)
    n = min(cutoff, mu_black.cutoff) + 1
    b[:n] = mu_black.pmf[:n]
    r = 1.0 - 1.0 / Z
    denom = 1.0 - r * b[0]
    t = np.zeros(cutoff + 1)
    t[0] = (1.0 / Z) / denom
    for k in range(1, cutoff + 1):
        t[k] = r * np.dot(b[1 : k + 1], t[k - 1 :: -1]) / denom
    mass = float(t.sum())
    target_mean = (Z - 1.0) * mu_black.mean()
    k = np.arange(cutoff + 1)
    tail_mass = max(0.0, 1.0 - mass)
    if tail_mass < 1e-14:
        tail_mass = 0.0
    return DiscreteLaw(
        t,
        tail_mass=tail_mass,
        tail_exponent=type_a - 0.5 if tail_mass > 0 else None,
        tail_first_moment=max(0.0, target_mean - float(np.dot(k, t))),
        name="mu_tilde",
    )


def _shifted_h_tail(
    amplitude: float, a: float, first: int, shifts: np.ndarray
) -> np.ndarray:
    """``sum_{n >= first} amplitude n**-a h_up(n + d)`` for each shift d.

    Uses the asymptotic series of ``h_up`` and the binomial expansion of
    ``(n + d)**beta`` around ``n``; requires ``|d| << first``.
    """
    d = np.atleast_1d(np.asarray(shifts, dtype=float))
    near = np.abs(d) <= first / 16
    total = np.zeros(d.shape)
    total[near] = 2.0 * _power_sums(a, first, d[near], 0.5)
    for i in np.nonzero(~near)[0]:
        total[i] = _euler_maclaurin_tail(a, first, d[i])
    return amplitude * total


def _power_sums(
    a: float, first: int, d: np.ndarray, half: float, terms: int = 16
) -> np.ndarray:
    """``sum_{n >= first} n**-a (n + d)**half poly(n + d) / sqrt(pi)``.

    ``poly`` is the series in ``_H_SERIES``; each power of ``n + d`` is
    expanded binomially around ``n`` and summed with Hurwitz zeta.
    Requires ``|d| <= first / 16``.
    """
    total = np.zeros(d.shape)
    for i, coef in _H_SERIES:
        beta = half - i
        for j in range(terms):
            s = a - beta + j
            total += coef * binom(beta, j) * d**j * zeta(s, first)
    return total / SQRT_PI


def _euler_maclaurin_tail(a: float, first: int, d: float) -> float:
    """``sum_{n >= first} n**-a h_up(n + d)`` by Euler-Maclaurin."""

    def g(x):
        return x**-a * float(h_up_asymptotic(x + d))

    def dg(x):
        return g(x) * (-a / x + 0.5 / (x + d))

    integral, _ = integrate.quad(g, first, math.inf, epsabs=0.0,
                                 epsrel=1e-12, limit=200)
    return integral + g(first) / 2 - dg(first) / 12


@dataclass(frozen=True, eq=False)
class NuTable:
    """The step law ``nu`` of the half-perimeter walk.

    Attributes:
        positive: ``nu(m)`` for ``0 <= m <= len(positive) - 1``.
        positive_tail: ``sum`` of ``nu(m)`` beyond the table.
        amplitude: ``A`` with ``nu(m) = A (m + 1)**-a`` in the tail.
        negative: ``negative[k] = nu(-k)`` for ``1 <= k <= cutoff``.
        deep_mass: Mass of ``nu`` below ``-cutoff``.
        exponent: Tail exponent ``a`` of ``nu`` on both sides.
        heavy: Whether the positive part has a power tail.
    """

    positive: np.ndarray
    positive_tail: float
    amplitude: float
    negative: np.ndarray
    deep_mass: float
    exponent: float
    heavy: bool

    @property
    def cutoff(self) -> int:
        """Largest tabulated negative step."""
        return len(self.negative) - 1

    @property
    def positive_cutoff(self) -> int:
        """Largest tabulated positive step."""
        return len(self.positive) - 1

    def __call__(self, m: int) -> float:
        if m >= 0:
            if m <= self.positive_cutoff:
                return float(self.positive[m])
            if not self.heavy:
                return 0.0
            return self.amplitude * (m + 1) ** -self.exponent
        k = -m
        return float(self.negative[k]) if k <= self.cutoff else 0.0

    def positive_h_tail(self, shifts: np.ndarray) -> np.ndarray:
        """``sum_{m > M} nu(m) h_up(m + shift + ...)``; zero if no tail.

        ``shifts`` are ``d`` in ``h_up(m + 1 + d)``.
        """
        shifts = np.asarray(shifts, dtype=float)
        if not self.heavy:
            return np.zeros(shifts.shape)
        first = self.positive_cutoff + 2
        return _shifted_h_tail(self.amplitude, self.exponent, first, shifts)

    def total_mass(self) -> float:
        """Total mass, tails included."""
        return (
            float(self.positive.sum())
            + self.positive_tail
            + float(self.negative.sum())
            + self.deep_mass
        )

    def negative_slope(self, lo: int = 100) -> float:
        """Log-log slope of ``nu(-k)`` over ``lo <= k <= cutoff``."""
        k = np.arange(lo, self.cutoff + 1)
        values = self.negative[lo:]
        keep = values > 0
        if keep.sum() < 3:
            return math.nan
        fit = stats.linregress(np.log(k[keep]), np.log(values[keep]))
        return float(fit.slope)


def _positive_h_down_sums(
    q: WeightSequence, c: float, table: NuTable, cutoff: int, chunk: int = 64
) -> np.ndarray:
    """``sum_{m >= 0} nu(m) h_down(p + m)`` for ``p = 1 .. cutoff``.

    Heavy tails are summed exactly over ``m <= span`` by FFT correlation,
    with ``span >= 16 cutoff`` so the remainder has a zeta expansion that
    is smooth in ``p``.
    """
    p = np.arange(1, cutoff + 1)
    nz = np.nonzero(table.positive)[0]
    if not table.heavy and nz.size <= chunk:
        out = np.zeros(cutoff)
        for lo in range(0, cutoff, chunk):
            rows = p[lo : lo + chunk]
            out[lo : lo + chunk] = (
                h_down(rows[:, None] + nz[None, :]) @ table.positive[nz]
            )
        return out
    if not table.heavy:
        span = table.positive_cutoff
        weights = table.positive
    else:
        span = max(table.positive_cutoff, 16 * (cutoff + 1))
        weights = q.nu_positive(c, np.arange(span + 1))
    kernel = h_down(np.arange(1, span + cutoff + 1))
    out = signal.fftconvolve(kernel, weights[::-1], mode="valid")
    if table.heavy:
        out += table.amplitude * _power_sums(
            table.exponent, span + 2, (p - 1).astype(float), -0.5
        )
    return out


def build_nu(
    q: WeightSequence,
    Z: float,
    type_a: float,
    cutoff: int = DEFAULT_NU_CUTOFF,
    tail_tolerance: float = 1e-3,
) -> NuTable:
    """Tabulate ``nu``: exact positive part, negative part by harmonicity.

    ``nu(m) = q_{m+1} (4Z)**m`` for ``m >= 0``. Harmonicity of ``h_down``
    at ``p = 1 .. cutoff`` reads ``sum_{k=1}^{p} nu(-k) h_down(p-k) = t_p``
    with ``t_p = h_down(p) - sum_{m >= 0} nu(m) h_down(p+m)``. Since
    ``sum h_down(n) u**n = (1-u)**-1/2``, the negative part is the
    convolution of ``t`` with the coefficients of ``(1-u)**1/2``. No
    solved value feeds back into later ones, so the tail keeps its
    ``k**-a`` decay up to large cutoffs.

    Raises:
        NegativeMass: A solved value is below ``-1e-12``.
        TailTooHeavy: Mass below ``-cutoff`` exceeds ``tail_tolerance``.
    """
    if cutoff < 1:
        raise InvalidParameter(f"nu cutoff must be >= 1, got {cutoff}")
    c = 4.0 * Z
    if q.tail is not None:
        M = EXPLICIT_TERMS
        heavy = c / q.tail.base >= 1 - 1e-9
    else:
        M = q.max_degree - 1
        heavy = False
    amplitude = q.tail.scale / c if heavy else 0.0
    positive = q.nu_positive(c, np.arange(M + 1))
    positive_tail = (
        amplitude * float(zeta(q.tail.exponent, M + 2)) if heavy else 0.0
    )
    a = q.tail.exponent if heavy else type_a
    table = NuTable(positive, positive_tail, amplitude, np.zeros(1), 0.0, a,
                    heavy)

    nz = np.nonzero(positive)[0]
    row_one = float(positive[nz] @ h_up(nz + 1))
    row_one += float(table.positive_h_tail([0.0])[0])
    if abs(row_one - 1.0) > 1e-8:
        logger.warning(f"nu harmonicity row p=1 equals {row_one!r}, not 1")

    p = np.arange(1, cutoff + 1)
    t = h_down(p) - _positive_h_down_sums(q, c, table, cutoff)
    j = np.arange(1, cutoff)
    root = np.concatenate([[1.0], -h_down(j) / (2.0 * j - 1.0)])
    if cutoff <= DIRECT_CONVOLUTION:
        solved = np.convolve(root, t)[:cutoff]
    else:
        solved = signal.fftconvolve(root, t)[:cutoff]
    worst = int(np.argmin(solved))
    if solved[worst] < -1e-12:
        raise NegativeMass(worst + 1, float(solved[worst]))
    negative = np.concatenate([[0.0], np.maximum(solved, 0.0)])

    tabulated = positive.sum() + positive_tail + negative.sum()
    deep = 1.0 - tabulated
    if deep < -1e-9:
        logger.warning(f"nu tabulated mass exceeds one by {-deep:.3e}")
    deep = max(deep, 0.0)
    if deep > tail_tolerance:
        raise TailTooHeavy(
            f"nu mass below -{cutoff} is {deep:.3e} > {tail_tolerance}"
        )
    logger.debug(
        f"nu table: cutoff={cutoff}, nu(-1)={negative[1]:.6g}, deep={deep:.3e}"
    )
    return NuTable(
        positive, positive_tail, amplitude, negative, deep, a, heavy
    )


@dataclass(frozen=True, eq=False)
class KernelRow:
    """One row of the peeling transition kernel at half-perimeter ``p``.

    Attributes:
        c_sizes: Half-degrees ``k`` of the tabulated ``C_k`` events.
        c_probs: ``P(C_k) = nu(k-1) h_up(p+k-1) / h_up(p)``.
        g_sizes: Finite-side half-perimeters ``j = 0 .. p-2``.
        g_probs: ``P(G_left(j)) = P(G_right(j))``.
        c_tail: Mass of ``C_k`` events beyond the table.
        deep: Mass of ``G`` events swallowing beyond the negative cutoff.
    """

    p: int
    c_sizes: np.ndarray
    c_probs: np.ndarray
    g_sizes: np.ndarray
    g_probs: np.ndarray
    c_tail: float
    deep: float

    def total(self) -> float:
        """Total mass of the row."""
        c_mass = self.c_probs.sum() + self.c_tail
        return float(c_mass + 2 * self.g_probs.sum() + self.deep)

    def prob_c(self, k: int) -> float:
        """Probability of the event that grows the hole by ``k``."""
        hit = np.nonzero(self.c_sizes == k)[0]
        return float(self.c_probs[hit[0]]) if hit.size else 0.0

    def prob_g(self, j: int) -> float:
        """Probability of one side, ``G_left(j)`` or ``G_right(j)``."""
        return float(self.g_probs[j]) if 0 <= j < len(self.g_probs) else 0.0


def transition_kernel(p: int, nu: NuTable) -> KernelRow:
    """Event law of one peeling step at half-perimeter ``p``.

    Raises:
        PerimeterZero: ``p < 1``.
    """
    if p < 1:
        raise PerimeterZero(f"transition row needs p >= 1, got {p}")
    hp = h_up(p)
    m = np.nonzero(nu.positive)[0]
    c_probs = nu.positive[m] * h_up(p + m) / hp
    c_tail = float(nu.positive_h_tail([p - 1])[0]) / hp

    j = np.arange(0, p - 1)
    k = j + 1
    neg = np.zeros(j.shape)
    inside = k <= nu.cutoff
    neg[inside] = nu.negative[k[inside]]
    g_probs = 0.5 * neg * h_up(p - j - 1) / hp
    deep = 0.0
    if p - 1 > nu.cutoff:
        mass = c_probs.sum() + c_tail + 2 * g_probs.sum()
        deep = max(0.0, 1.0 - float(mass))
    return KernelRow(p, m + 1, c_probs, j, g_probs, c_tail, deep)


def swallow_probability_bound(nu: NuTable, p_max: int) -> float:
    """``min_{2 <= p <= p_max} nu(-1) h_up(p-1) / h_up(p)``.

    Lower bound on the chance that a single peeling step swallows the
    vertex adjacent to the peeled edge.
    """
    if p_max < 2:
        raise InvalidParameter("p_max must be >= 2")
    p = np.arange(2, p_max + 1)
    return float(np.min(nu.negative[1] * h_up(p - 1) / h_up(p)))


class KernelSampler:
    """Exact sampler of peeling events for any half-perimeter.

    Proposals come from the ``p``-independent envelope
    ``nu(m) (1 + [m >= 0] h_up(m) / h_up(p))``, valid because ``h_up`` is
    concave with ``h_up(0) = 0``; acceptance is at least
    ``1 / (1 + B0 / h_up(p))`` with ``B0 = sum_m nu(m) h_up(m)``.
    """

    def __init__(self, nu: NuTable, attempt_cap: int = 10_000):
        self.nu = nu
        self.attempt_cap = attempt_cap
        K = nu.cutoff
        M = nu.positive_cutoff
        self._values = np.concatenate(
            [-np.arange(1, K + 1), np.arange(0, M + 1)]
        )
        weights = np.concatenate(
            [nu.negative[1:], nu.positive, [nu.deep_mass, nu.positive_tail]]
        )
        self._nu_cdf = np.cumsum(weights)
        m = np.arange(M + 1)
        nh = nu.positive * h_up(m)
        nh_tail = float(nu.positive_h_tail([-1.0])[0])
        self._nh_cdf = np.cumsum(np.concatenate([nh, [nh_tail]]))
        self.B0 = float(self._nh_cdf[-1])

    def _draw_nu(self, rng: np.random.Generator) -> int:
        n = len(self._values)
        u = rng.random() * self._nu_cdf[-1]
        idx = int(np.searchsorted(self._nu_cdf, u, side="right"))
        if idx < n:
            return int(self._values[idx])
        a = self.nu.exponent
        if idx == n:
            return -int(_pareto_beyond(rng, self.nu.cutoff + 1, a - 1, None))
        return int(_pareto_beyond(rng, self.nu.positive_cutoff + 2, a - 1,
                                  None)) - 1

    def _draw_nh(self, rng: np.random.Generator) -> int:
        idx = int(np.searchsorted(self._nh_cdf, rng.random() * self.B0,
                                  side="right"))
        if idx <= self.nu.positive_cutoff:
            return idx
        a = self.nu.exponent
        return int(_pareto_beyond(rng, self.nu.positive_cutoff + 1, a - 1.5,
                                  None))

    def draw_step(self, p: int, rng: np.random.Generator) -> int:
        """Draw the walk increment ``m`` conditioned by ``h_up`` at ``p``."""
        if p < 1:
            raise PerimeterZero(f"kernel sampler needs p >= 1, got {p}")
        hp = h_up(p)
        mix = 1.0 / (1.0 + self.B0 / hp)
        for _ in range(self.attempt_cap):
            if rng.random() < mix:
                m = self._draw_nu(rng)
            else:
                m = self._draw_nh(rng)
            if m < 0:
                if m <= -p:
                    continue
                accept = h_up(p + m) / hp
            else:
                accept = h_up(p + m) / (hp + h_up(m))
            if rng.random() < accept:
                return m
        raise SamplerStall("kernel rejection sampler", self.attempt_cap)

    def sample(self, p: int, rng: np.random.Generator) -> Tuple[str, int]:
        """Draw an event.

        Returns:
            ``("C", k)``, ``("G_left", j)`` or ``("G_right", j)``.
        """
        m = self.draw_step(p, rng)
        if m >= 0:
            return "C", m + 1
        side = "G_left" if rng.random() < 0.5 else "G_right"
        return side, -m - 1


@dataclass(frozen=True, eq=False)
class CriticalData:
    """Everything derived from a critical weight sequence.

    Immutable once built and safe to share between replicates.
    """

    q: WeightSequence
    Z: float
    c: float
    mu: DiscreteLaw
    mu_white: GeometricLaw
    mu_black: DiscreteLaw
    mu_tilde: DiscreteLaw
    nu: NuTable
    type_a: float
    p_q_estimate: Optional[float] = None

    @staticmethod
    def h_up(p):
        """Harmonic function of the peeling walk."""
        return h_up(p)

    def kernel(self, p: int) -> KernelRow:
        """Transition row from half-perimeter ``p``."""
        return transition_kernel(p, self.nu)

    @cached_property
    def sampler(self) -> KernelSampler:
        """Sampler of the peeling transitions."""
        return KernelSampler(self.nu)

    def to_dict(self, rows: int = 5, nu_terms: int = 10) -> Dict[str, Any]:
        """JSON-ready summary used by the ``kernel`` command."""
        kernel = {}
        for p in range(1, rows + 1):
            row = self.kernel(p)
            kernel[str(p)] = {
                "C": {
                    int(k): float(v)
                    for k, v in zip(
                        row.c_sizes[:nu_terms], row.c_probs[:nu_terms]
                    )
                },
                "G_each_side": {
                    int(j): float(v)
                    for j, v in zip(row.g_sizes, row.g_probs)
                },
                "total": row.total(),
            }
        return {
            "family": self.q.name,
            "Z": self.Z,
            "c": self.c,
            "type_a": self.type_a,
            "mean_mu": self.mu.mean(),
            "mean_white_times_black": (
                self.mu_white.mean() * self.mu_black.mean()
            ),
            "nu_positive": [self.nu(m) for m in range(nu_terms)],
            "nu_negative": [self.nu(-k) for k in range(1, nu_terms + 1)],
            "nu_deep_mass": self.nu.deep_mass,
            "p_q_estimate": self.p_q_estimate,
            "kernel": kernel,
        }


def build_critical_data(
    q: WeightSequence,
    nu_cutoff: int = DEFAULT_NU_CUTOFF,
    law_cutoff: int = DEFAULT_LAW_CUTOFF,
    tail_tolerance: float = 1e-3,
) -> CriticalData:
    """Check criticality of ``q`` and derive all laws.

    Raises:
        NonCritical: ``q`` is subcritical.
        NoSolution: ``q`` is supercritical.
    """
    crit = require_critical(q)
    Z, a = crit.Z, crit.type_a
    mu, mu_black = offspring_laws(q, Z, a, law_cutoff)
    mu_white = GeometricLaw(Z)
    product = mu_white.mean() * mu_black.mean()
    if abs(product - 1.0) > 1e-8:
        logger.warning(f"mean(mu_white) * mean(mu_black) = {product!r}")
    nu = build_nu(q, Z, a, nu_cutoff, tail_tolerance)
    lo = max(1, nu.cutoff // 2)
    k = np.arange(lo, nu.cutoff + 1)
    p_q = float(np.median(nu.negative[lo:] * k**a)) if nu.cutoff >= 2 else None
    data = CriticalData(
        q=q,
        Z=Z,
        c=4.0 * Z,
        mu=mu,
        mu_white=mu_white,
        mu_black=mu_black,
        mu_tilde=tilde_mu(Z, mu_black, a, law_cutoff),
        nu=nu,
        type_a=a,
        p_q_estimate=p_q,
    )
    logger.info(
        f"Critical data for {q.name}: Z={Z:.10g}, a={a:.4f}, "
        f"nu(-1)={nu(-1):.6g}"
    )
    return data
