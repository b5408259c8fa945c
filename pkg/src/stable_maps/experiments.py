"""Monte Carlo drivers and exponent estimators."""

import logging
import math
import multiprocessing
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import polars as pl
from scipy import stats
from tqdm import tqdm

from stable_maps.bdg import (
    build_pointed_map,
    doubling_check,
    sample_infinite_map,
    tentacle_distance,
)
from stable_maps.config import ExperimentConfig
from stable_maps.disks import sample_free_disk
from stable_maps.errors import (
    CertificateExceeded,
    InsufficientData,
    InvalidParameter,
    MapError,
    SamplerStall,
    TrustRadiusExceeded,
)
from stable_maps.maps import (
    aperture,
    ball_and_hull,
    bfs_distance,
    dual_ball_and_hull,
    dual_distance,
)
from stable_maps.mobiles import (
    sample_forest,
    sigma_r,
    spawn_generators,
    spawn_sequences,
)
from stable_maps.peeling import initial_trust_radius, run_exploration
from stable_maps.walks import (
    walk_with_pioneers_dual,
    walk_with_pioneers_primal,
)
from stable_maps.weights import (
    CriticalData,
    build_critical_data,
    family_from_spec,
)

logger = logging.getLogger(__name__)

MIN_REPLICATES = 30
MIN_GRID_POINTS = 3
DISCARDED = (SamplerStall, CertificateExceeded, TrustRadiusExceeded)
_TRANSFORMS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "log": np.log,
    "sqrt": np.sqrt,
    "linear": lambda x: x,
}


def critical_data_for(config: ExperimentConfig) -> CriticalData:
    """Critical data for the family named in ``config``."""
    return build_critical_data(
        family_from_spec(config.family), nu_cutoff=config.nu_cutoff
    )


@dataclass(frozen=True)
class SlopeEstimate:
    """Least-squares slope of ``y(median)`` against ``x`` in the given
    coordinates, with a replicate-bootstrap standard error."""

    slope: float
    intercept: float
    stderr: float
    r_squared: float
    discard_rate: float
    points: int
    coordinates: Tuple[str, str] = ("log", "log")

    def within(self, expected: float, tolerance: float) -> bool:
        """Whether the slope is within ``tolerance`` of ``expected``."""
        return abs(self.slope - expected) <= tolerance

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready fields."""
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "stderr": self.stderr,
            "r_squared": self.r_squared,
            "discard_rate": self.discard_rate,
            "points": self.points,
            "coordinates": list(self.coordinates),
        }


def _fit(x: np.ndarray, medians: np.ndarray, coordinates) -> Tuple[float, ...]:
    fx, fy = (_TRANSFORMS[c] for c in coordinates)
    res = stats.linregress(fx(x), fy(medians))
    return res.slope, res.intercept, res.rvalue**2


def estimate_exponent(
    x: Sequence[float],
    samples: Sequence[Sequence[float]],
    discard_rate: float = 0.0,
    resamples: int = 200,
    seed: Optional[int] = None,
    min_replicates: int = MIN_REPLICATES,
    coordinates: Tuple[str, str] = ("log", "log"),
    max_discard_rate: float = 0.2,
) -> SlopeEstimate:
    """Fit ``log median Y`` against ``log x`` over a grid.

    Args:
        x: Grid points.
        samples: Replicate values of ``Y`` at every grid point.
        discard_rate: Share of replicates lost to stalls.
        resamples: Bootstrap resamples for the standard error.
        seed: Seed of the bootstrap stream.
        min_replicates: Replicates required at every grid point.
        coordinates: Transforms applied to ``x`` and to the medians,
            each one of ``log``, ``sqrt`` or ``linear``.
        max_discard_rate: Largest acceptable discard rate.

    Returns:
        The slope estimate.

    Raises:
        InsufficientData: Too few points, replicates or non-positive
            medians in log coordinates, or too many discards.
    """
    x = np.asarray(x, dtype=float)
    if len(x) < MIN_GRID_POINTS or len(samples) != len(x):
        raise InsufficientData(
            f"need >= {MIN_GRID_POINTS} grid points with samples"
        )
    if any(c not in _TRANSFORMS for c in coordinates):
        raise InvalidParameter(f"unknown coordinates {coordinates}")
    arrays = [np.asarray(s, dtype=float) for s in samples]
    short = [len(a) for a in arrays if len(a) < min_replicates]
    if short:
        raise InsufficientData(
            f"{len(short)} grid points have fewer than {min_replicates} "
            "replicates"
        )
    if discard_rate >= max_discard_rate:
        raise InsufficientData(f"discard rate {discard_rate:.1%} too high")
    medians = np.array([np.median(a) for a in arrays])
    if coordinates[1] == "log" and np.any(medians <= 0):
        raise InsufficientData("log coordinates need positive medians")
    slope, intercept, r2 = _fit(x, medians, coordinates)

    rng = np.random.default_rng(seed)
    slopes = np.empty(resamples)
    for i in range(resamples):
        boot = np.array(
            [np.median(rng.choice(a, size=len(a))) for a in arrays]
        )
        if coordinates[1] == "log":
            boot = np.maximum(boot, np.finfo(float).tiny)
        slopes[i] = _fit(x, boot, coordinates)[0]
    return SlopeEstimate(
        slope=float(slope),
        intercept=float(intercept),
        stderr=float(np.std(slopes, ddof=1)) if resamples > 1 else 0.0,
        r_squared=float(r2) if np.isfinite(r2) else 1.0,
        discard_rate=float(discard_rate),
        points=len(x),
        coordinates=tuple(coordinates),
    )


@dataclass
class ReplicateResults:
    """Replicate outputs in replicate order; ``None`` marks a discard."""

    values: List[Any]

    @property
    def kept(self) -> List[Any]:
        """Values of the replicates that ran to completion."""
        return [v for v in self.values if v is not None]

    @property
    def discards(self) -> int:
        """Number of discarded replicates."""
        return sum(v is None for v in self.values)

    @property
    def discard_rate(self) -> float:
        """Fraction of discarded replicates."""
        return self.discards / len(self.values) if self.values else 0.0


def _guarded(fn: Callable, task: Tuple[int, np.random.SeedSequence]):
    replicate, seed = task
    try:
        return replicate, fn(replicate, seed)
    except DISCARDED as e:
        logger.warning(f"Replicate {replicate} discarded: {e}")
        return replicate, None


def run_replicates(
    fn: Callable[[int, np.random.SeedSequence], Any],
    n: int,
    seed: Optional[int],
    progress: bool = False,
    workers: int = 1,
    label: str = "replicates",
) -> ReplicateResults:
    """Run ``fn(replicate, seed_sequence)`` for ``n`` replicates.

    Every replicate owns a child of ``SeedSequence(seed)``, so results do
    not depend on scheduling. Stalls and certificate failures are logged
    and recorded as discards.
    """
    children = np.random.SeedSequence(seed).spawn(n)
    tasks = list(enumerate(children))
    job = partial(_guarded, fn)
    values: List[Any] = [None] * n
    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            stream = pool.imap_unordered(job, tasks)
            for replicate, value in tqdm(
                stream, total=n, desc=label, disable=not progress
            ):
                values[replicate] = value
    else:
        for replicate, value in tqdm(
            map(job, tasks), total=n, desc=label, disable=not progress
        ):
            values[replicate] = value
    results = ReplicateResults(values)
    if results.discards:
        logger.info(
            f"{label}: {results.discards}/{n} replicates discarded"
        )
    return results


def _peel_replicate(
    config: ExperimentConfig,
    data: CriticalData,
    replicate: int,
    seed: np.random.SeedSequence,
) -> pl.DataFrame:
    trace = run_exploration(
        data,
        config.algorithm,
        config.mode,
        max(config.steps),
        seed,
        trust_factor=config.trust_factor,
        trust_margin=config.trust_margin,
        retries=config.certificate_retries,
        attempt_cap=config.disk_attempt_cap,
    )
    return trace.to_frame(replicate)


def peel_experiment(
    config: ExperimentConfig, data: CriticalData, workers: int = 1
) -> Tuple[pl.DataFrame, float]:
    """Peeling traces of every replicate, one row per step."""
    results = run_replicates(
        partial(_peel_replicate, config, data),
        config.replicates,
        config.seed,
        config.progress,
        workers,
        label=f"peel {config.algorithm}/{config.mode}",
    )
    if not results.kept:
        raise InsufficientData("every replicate was discarded")
    frame = pl.concat(results.kept).sort(["replicate", "n"])
    return frame, results.discard_rate


def _walk_replicate(
    config: ExperimentConfig,
    data: CriticalData,
    replicate: int,
    seed: np.random.SeedSequence,
) -> pl.DataFrame:
    steps = max(config.steps)
    radius = initial_trust_radius(steps, data.type_a)
    walk = (
        walk_with_pioneers_primal
        if config.graph == "primal"
        else walk_with_pioneers_dual
    )
    host_seed, walk_seed = spawn_sequences(seed, 2)
    for _ in range(config.certificate_retries + 1):
        host = sample_infinite_map(
            data, radius, host_seed, trust_factor=config.trust_factor,
            trust_margin=config.trust_margin,
        )
        try:
            return walk(host, steps, walk_seed).to_frame(replicate)
        except CertificateExceeded as e:
            logger.warning(
                f"Replicate {replicate}: walk left trust radius {radius}: {e}"
            )
            radius *= 2
    raise CertificateExceeded(f"walk replicate {replicate} uncertified")


def walk_experiment(
    config: ExperimentConfig, data: CriticalData, workers: int = 1
) -> Tuple[pl.DataFrame, float]:
    """Walk traces of every replicate, one row per walk step."""
    results = run_replicates(
        partial(_walk_replicate, config, data),
        config.replicates,
        config.seed,
        config.progress,
        workers,
        label=f"walk {config.graph}",
    )
    if not results.kept:
        raise InsufficientData("every replicate was discarded")
    frame = pl.concat(results.kept).sort(["replicate", "n"])
    return frame, results.discard_rate


def slopes_from_frame(
    frame: pl.DataFrame,
    x: str,
    y: str,
    grid: Sequence[int],
    discard_rate: float = 0.0,
    **kwargs: Any,
) -> SlopeEstimate:
    """``estimate_exponent`` on column ``y`` at the rows where ``x`` lies
    on ``grid``."""
    samples = [
        frame.filter(pl.col(x) == g)[y].drop_nulls().cast(pl.Float64)
        .to_numpy()
        for g in grid
    ]
    return estimate_exponent(grid, samples, discard_rate, **kwargs)


def running_max(frame: pl.DataFrame, column: str) -> pl.DataFrame:
    """Add ``max_<column>``, the running maximum within each replicate."""
    return frame.sort(["replicate", "n"]).with_columns(
        pl.col(column).cum_max().over("replicate").alias(f"max_{column}")
    )


def _hull_radii(
    pmap, explored: frozenset, dist: np.ndarray
) -> Tuple[int, int]:
    """Largest ``r`` with ``hull(r)`` inside ``explored`` and smallest
    ``r`` whose hull contains it."""
    target = explored - {pmap.external}
    r_in, r = 0, 0
    while True:
        hull = ball_and_hull(pmap, r, dist=dist).hull_faces
        if hull <= target:
            r_in = r
        if target <= hull:
            return r_in, r
        r += 1


@dataclass
class SandwichReport:
    """Inner and outer hull radii around explorations on shared hosts."""

    frame: pl.DataFrame
    bands: Dict[str, Tuple[float, float]]
    overlap: float
    ordered: bool
    discard_rate: float
    drift: Dict[str, float] = field(default_factory=dict)
    passed: bool = field(default=False)


def _sandwich_replicate(
    config: ExperimentConfig,
    data: CriticalData,
    algorithms: Sequence[str],
    replicate: int,
    seed: np.random.SeedSequence,
) -> pl.DataFrame:
    rows = []
    exponent = 1.0 / (2 * (data.type_a - 1))
    n_max = max(config.steps)
    radius = 2 * initial_trust_radius(n_max, data.type_a)
    for algorithm in algorithms:
        trace = run_exploration(
            data, algorithm, "coupled", n_max, seed,
            snapshots=config.steps, trust_radius=radius,
            trust_factor=config.trust_factor,
            trust_margin=config.trust_margin,
            retries=config.certificate_retries,
        )
        pmap = trace.host.pmap
        dist = bfs_distance(pmap, pmap.root_vertex)
        for n in config.steps:
            r_in, r_out = _hull_radii(pmap, trace.snapshots[n], dist)
            rows.append(
                {
                    "algorithm": algorithm,
                    "replicate": replicate,
                    "n": n,
                    "r_in": r_in,
                    "r_out": r_out,
                    "d_minus": trace.d_minus[n],
                    "d_plus": trace.d_plus[n],
                    "scaled_in": r_in / n**exponent,
                    "scaled_out": r_out / n**exponent,
                }
            )
    return pl.DataFrame(rows)


def band_drift(frame: pl.DataFrame, algorithm: str) -> float:
    """Log-log slope of the band centre of ``algorithm`` against ``n``.

    Returns ``nan`` with fewer than two positive centres.
    """
    centres = (
        frame.filter(pl.col("algorithm") == algorithm)
        .group_by("n")
        .agg(
            (
                (pl.col("scaled_in").median() + pl.col("scaled_out").median())
                / 2
            ).alias("centre")
        )
        .filter(pl.col("centre") > 0)
        .sort("n")
    )
    if centres.height < 2:
        return math.nan
    fit = stats.linregress(
        np.log(centres["n"].to_numpy().astype(float)),
        np.log(centres["centre"].to_numpy()),
    )
    return float(fit.slope)


def sandwich_experiment(
    config: ExperimentConfig,
    data: CriticalData,
    algorithms: Sequence[str] = ("uniform", "layered-dual", "walk-primal"),
    workers: int = 1,
) -> SandwichReport:
    """Largest hull inside and smallest hull around each exploration.

    Bands are the central 90% of ``r / n^(1/(2(a-1)))`` per algorithm;
    the overlap is the length of their common part over their union.
    The drift of an algorithm is the log-log slope of its band centre,
    the mean of the median scaled radii, against ``n``.
    """
    results = run_replicates(
        partial(_sandwich_replicate, config, data, tuple(algorithms)),
        config.replicates,
        config.seed,
        config.progress,
        workers,
        label="sandwich",
    )
    if not results.kept:
        raise InsufficientData("every replicate was discarded")
    frame = pl.concat(results.kept)
    bands = {}
    for algorithm in algorithms:
        sub = frame.filter(pl.col("algorithm") == algorithm)
        values = np.concatenate(
            [sub["scaled_in"].to_numpy(), sub["scaled_out"].to_numpy()]
        )
        bands[algorithm] = (
            float(np.quantile(values, 0.05)),
            float(np.quantile(values, 0.95)),
        )
    lo = max(b[0] for b in bands.values())
    hi = min(b[1] for b in bands.values())
    span = max(b[1] for b in bands.values()) - min(
        b[0] for b in bands.values()
    )
    overlap = max(0.0, hi - lo) / span if span > 0 else 1.0
    ordered = bool((frame["r_in"] <= frame["r_out"]).all())
    drift = {a: band_drift(frame, a) for a in algorithms}
    report = SandwichReport(
        frame, bands, overlap, ordered, results.discard_rate, drift
    )
    steady = all(
        abs(s) <= config.tolerance.get("drift", 0.05) for s in drift.values()
    )
    report.passed = (
        ordered
        and steady
        and overlap >= config.tolerance.get("band_overlap", 0.8)
    )
    logger.info(
        f"Sandwich: overlap={overlap:.2f}, ordered={ordered}, "
        f"drift={drift}, "
        f"discards={results.discard_rate:.1%}"
    )
    return report


def regime_coordinates(type_a: float) -> Tuple[Tuple[str, str], float]:
    """Coordinates where primal radius is linear in dual radius, and the
    predicted slope (``nan`` when only the sign is known)."""
    if type_a > 2 + 1e-9:
        return ("log", "log"), 1.0 / (2 * type_a - 4)
    if abs(type_a - 2) <= 1e-9:
        return ("sqrt", "log"), math.pi / math.sqrt(2)
    return ("linear", "log"), math.nan


def _comparison_replicate(
    config: ExperimentConfig,
    data: CriticalData,
    replicate: int,
    seed: np.random.SeedSequence,
) -> pl.DataFrame:
    radius = max(8, 4 * max(config.radii))
    for _ in range(config.certificate_retries + 1):
        host = sample_infinite_map(
            data, radius, seed, trust_factor=config.trust_factor,
            trust_margin=config.trust_margin,
        )
        pmap = host.pmap
        dist = bfs_distance(pmap, pmap.root_vertex)
        depth = dual_distance(pmap)
        rows = []
        try:
            for r in config.radii:
                hull = dual_ball_and_hull(pmap, r, depth)
                r_in, r_out = _hull_radii(pmap, hull.hull_faces, dist)
                rows.append(
                    {"replicate": replicate, "r": r, "primal_in": r_in,
                     "primal_out": r_out,
                     "dual_ball_faces": len(hull.ball_faces),
                     "dual_hull_faces": len(hull.hull_faces)}
                )
        except TrustRadiusExceeded as e:
            logger.warning(f"Replicate {replicate}: radius {radius}: {e}")
            radius *= 2
            continue
        return pl.DataFrame(rows)
    raise TrustRadiusExceeded(f"comparison replicate {replicate} uncertified")


@dataclass
class ComparisonReport:
    """Dual-hull radii against primal distances."""

    frame: pl.DataFrame
    inner: SlopeEstimate
    outer: SlopeEstimate
    predicted: float
    coordinates: Tuple[str, str]


def primal_dual_comparison(
    config: ExperimentConfig, data: CriticalData, workers: int = 1
) -> ComparisonReport:
    """Primal hull radii sandwiching the dual hull of each radius on the
    grid."""
    results = run_replicates(
        partial(_comparison_replicate, config, data),
        config.replicates,
        config.seed,
        config.progress,
        workers,
        label="primal/dual",
    )
    if not results.kept:
        raise InsufficientData("every replicate was discarded")
    frame = pl.concat(results.kept)
    coordinates, predicted = regime_coordinates(data.type_a)
    kwargs = dict(
        discard_rate=results.discard_rate,
        resamples=config.bootstrap_resamples,
        coordinates=coordinates,
        max_discard_rate=config.max_discard_rate,
        min_replicates=min(MIN_REPLICATES, config.replicates),
    )
    inner = slopes_from_frame(frame, "r", "primal_in", config.radii, **kwargs)
    outer = slopes_from_frame(frame, "r", "primal_out", config.radii, **kwargs)
    return ComparisonReport(frame, inner, outer, predicted, coordinates)


@dataclass
class AgreementReport:
    """Two-sample KS tests of ``(p, volume)`` between the two modes."""

    frame: pl.DataFrame
    discard_rate: float
    passed: bool


def cross_mode_agreement(
    config: ExperimentConfig,
    data: CriticalData,
    checkpoints: Optional[Sequence[int]] = None,
    workers: int = 1,
    alpha: float = 0.01,
) -> AgreementReport:
    """Compare the chain with explorations of sampled hosts.

    Both modes run ``config.replicates`` replicates from independent
    streams; at every checkpoint the half-perimeter and the volume are
    compared with ``scipy.stats.ks_2samp``.
    """
    checkpoints = tuple(checkpoints or config.steps)
    if max(checkpoints) > max(config.steps):
        raise InvalidParameter("checkpoints beyond the simulated steps")
    chain_seed, coupled_seed = (
        int(s) for s in np.random.SeedSequence(config.seed).generate_state(2)
    )
    chain, chain_discards = peel_experiment(
        config.with_overrides(
            mode="chain", algorithm="uniform", seed=chain_seed
        ),
        data,
        workers,
    )
    coupled, coupled_discards = peel_experiment(
        config.with_overrides(mode="coupled", seed=coupled_seed),
        data,
        workers,
    )
    rows = []
    for n in checkpoints:
        for column in ("p", "volume"):
            a = chain.filter(pl.col("n") == n)[column].to_numpy()
            b = coupled.filter(pl.col("n") == n)[column].to_numpy()
            res = stats.ks_2samp(a, b)
            rows.append(
                {"n": n, "column": column, "statistic": float(res.statistic),
                 "pvalue": float(res.pvalue)}
            )
    frame = pl.DataFrame(rows)
    passed = bool((frame["pvalue"] > alpha).all())
    logger.info(
        f"Cross-mode agreement: min p-value {frame['pvalue'].min():.3g}, "
        f"passed={passed}"
    )
    return AgreementReport(
        frame, max(chain_discards, coupled_discards), passed
    )


def _ball_replicate(
    config: ExperimentConfig,
    data: CriticalData,
    replicate: int,
    seed: np.random.SeedSequence,
) -> pl.DataFrame:
    host = sample_infinite_map(
        data, max(config.radii), seed, trust_factor=config.trust_factor,
        trust_margin=config.trust_margin, node_cap=config.node_cap,
    )
    pmap = host.pmap
    dist = bfs_distance(pmap, pmap.root_vertex)
    rows = []
    for r in config.radii:
        hull = ball_and_hull(pmap, r, dist=dist)
        reach, bound = tentacle_distance(host, r)
        exit_index, largest = sigma_r(host.spine, r)
        rows.append(
            {
                "replicate": replicate,
                "r": r,
                "ball_vertices": hull.ball_vertices,
                "hull_vertices": hull.hull_vertices,
                "tentacle": reach,
                "tentacle_bound": bound,
                "sigma": exit_index,
                "max_label": largest,
            }
        )
    return pl.DataFrame(rows)


def ball_growth_experiment(
    config: ExperimentConfig, data: CriticalData, workers: int = 1
) -> Tuple[pl.DataFrame, float]:
    """Ball and hull volumes, tentacle reach and spine exit indices at
    every radius of ``config.radii``."""
    results = run_replicates(
        partial(_ball_replicate, config, data),
        config.replicates,
        config.seed,
        config.progress,
        workers,
        label="balls",
    )
    if not results.kept:
        raise InsufficientData("every replicate was discarded")
    frame = pl.concat(results.kept).sort(["replicate", "r"])
    return frame, results.discard_rate


def _aperture_replicate(
    config: ExperimentConfig,
    data: CriticalData,
    replicate: int,
    seed: np.random.SeedSequence,
) -> pl.DataFrame:
    rows = []
    streams = spawn_sequences(seed, len(config.perimeters))
    for p, stream in zip(config.perimeters, streams):
        disk = sample_free_disk(
            p, data, stream, config.disk_attempt_cap, config.node_cap
        )
        rows.append(
            {
                "replicate": replicate,
                "p": p,
                "aperture": aperture(disk.pmap),
                "vertices": disk.vertex_count,
            }
        )
    return pl.DataFrame(rows)


def aperture_experiment(
    config: ExperimentConfig, data: CriticalData, workers: int = 1
) -> Tuple[pl.DataFrame, float]:
    """Aperture of free disks at every half-perimeter of
    ``config.perimeters``."""
    results = run_replicates(
        partial(_aperture_replicate, config, data),
        config.replicates,
        config.seed,
        config.progress,
        workers,
        label="apertures",
    )
    if not results.kept:
        raise InsufficientData("every replicate was discarded")
    frame = pl.concat(results.kept).sort(["replicate", "p"])
    return frame, results.discard_rate


def bijection_holds(data: CriticalData, p: int, seed: Optional[int]) -> bool:
    """Euler, face degrees and the label-distance identity on one
    random pointed disk."""
    tree_rng, root_rng = spawn_generators(seed, 2)
    forest = sample_forest(data, p, tree_rng, node_cap=10**5)
    pmap = build_pointed_map(forest, root_rng)
    try:
        pmap.check()
    except MapError as e:
        logger.error(f"Bijection check failed: {e}")
        return False
    if pmap.n_vertices != forest.mobile.n_white + 1:
        return False
    dist = bfs_distance(pmap, pmap.star)
    return bool(np.all(dist == pmap.labels - pmap.labels[pmap.star]))


@dataclass
class ValidationReport:
    """Named checks of the validation suite."""

    checks: Dict[str, bool]
    details: Dict[str, Any]

    @property
    def passed(self) -> bool:
        """Whether every check passed."""
        return all(self.checks.values())


VALIDATION_EXPERIMENTS = (
    "agreement",
    "sandwich",
    "comparison",
    "balls",
    "apertures",
    "pioneers",
)


def pioneer_distances(frame: pl.DataFrame) -> pl.DataFrame:
    """Add ``max_pioneer_dist``, the running maximum distance over the
    pioneer steps of each walk."""
    frame = frame.with_columns(
        pl.when(pl.col("is_pioneer"))
        .then(pl.col("dist"))
        .otherwise(0)
        .alias("pioneer_dist")
    )
    return running_max(frame, "pioneer_dist")


class _Checks:
    """Collects named checks and their details during validation."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.checks: Dict[str, bool] = {}
        self.details: Dict[str, Any] = {"skipped": []}

    @property
    def enough_replicates(self) -> bool:
        """Whether slopes may be asserted."""
        return self.config.replicates >= MIN_REPLICATES

    def record(self, name: str, ok: bool, detail: Any = None) -> None:
        """Store the outcome of check ``name``."""
        self.checks[name] = bool(ok)
        if detail is not None:
            self.details[name] = detail

    def skip(self, name: str, reason: str) -> None:
        """List ``name`` among the skipped checks."""
        logger.info(f"Check {name} skipped: {reason}")
        self.details["skipped"].append(name)

    def slope(
        self,
        name: str,
        estimate: Callable[[], SlopeEstimate],
        expected: float,
    ) -> None:
        """Compare a fitted slope with ``expected``; a ``nan``
        expectation only asks for a positive slope."""
        if not self.enough_replicates:
            self.skip(name, f"fewer than {MIN_REPLICATES} replicates")
            return
        try:
            fit = estimate()
        except InsufficientData as e:
            self.record(name, False, {"error": str(e)})
            return
        if math.isnan(expected):
            ok = fit.slope > 0
        else:
            tolerance = max(self.config.tolerance["slope"], 3 * fit.stderr)
            ok = fit.within(expected, tolerance)
        self.record(name, ok, {**fit.to_dict(), "expected": expected})

    def frame_slope(
        self,
        name: str,
        frame: pl.DataFrame,
        x: str,
        column: str,
        grid: Sequence[int],
        discards: float,
        expected: float,
    ) -> None:
        """``slope`` for ``column`` against ``x`` over ``grid``."""
        self.slope(
            name,
            lambda: slopes_from_frame(
                frame, x, column, grid, discards,
                resamples=self.config.bootstrap_resamples,
                seed=self.config.seed,
                max_discard_rate=self.config.max_discard_rate,
            ),
            expected,
        )


def _validate_experiments(
    checks: _Checks,
    data: CriticalData,
    experiments: Sequence[str],
    workers: int,
) -> None:
    config = checks.config
    a = data.type_a
    if "agreement" in experiments:
        report = cross_mode_agreement(config, data, workers=workers)
        checks.record(
            "cross_mode_agreement", report.passed,
            {"min_pvalue": float(report.frame["pvalue"].min())},
        )
    if "sandwich" in experiments:
        report = sandwich_experiment(
            config.with_overrides(mode="coupled"), data, workers=workers
        )
        checks.record(
            "sandwich_ordered", report.ordered,
            {"bands": report.bands, "overlap": report.overlap,
             "drift": report.drift},
        )
        if checks.enough_replicates:
            checks.record(
                "sandwich_overlap",
                report.overlap >= config.tolerance.get("band_overlap", 0.8),
            )
            drift = config.tolerance.get("drift", 0.05)
            checks.record(
                "sandwich_drift",
                all(abs(s) <= drift for s in report.drift.values()),
            )
        else:
            checks.skip("sandwich_overlap", "too few replicates")
            checks.skip("sandwich_drift", "too few replicates")
    if "comparison" in experiments:
        if checks.enough_replicates:
            report = primal_dual_comparison(config, data, workers)
            checks.slope(
                "comparison_inner", lambda: report.inner, report.predicted
            )
            checks.slope(
                "comparison_outer", lambda: report.outer, report.predicted
            )
        else:
            checks.skip("comparison_inner", "too few replicates")
            checks.skip("comparison_outer", "too few replicates")
    if "balls" in experiments:
        frame, discards = ball_growth_experiment(config, data, workers)
        for name, column in (
            ("ball_slope", "ball_vertices"), ("sigma_slope", "sigma")
        ):
            checks.frame_slope(
                name, frame, "r", column, config.radii, discards, 2 * a - 1
            )
    if "apertures" in experiments:
        frame, discards = aperture_experiment(config, data, workers)
        checks.frame_slope(
            "aperture_slope", frame, "p", "aperture", config.perimeters,
            discards, 0.5,
        )
    if "pioneers" in experiments:
        dual_slope = (a - 2) / (a - 1) if a > 2 + 1e-9 else math.nan
        for graph, expected in (
            ("primal", 1.0 / (2 * (a - 1))), ("dual", dual_slope)
        ):
            frame, discards = walk_experiment(
                config.with_overrides(graph=graph), data, workers
            )
            checks.frame_slope(
                f"pioneer_{graph}_slope", pioneer_distances(frame), "n",
                "max_pioneer_dist", config.steps, discards, expected,
            )


def validate_all(
    config: ExperimentConfig,
    data: Optional[CriticalData] = None,
    doubling_seeds: int = 5,
    forests: int = 50,
    doubling_radii: Sequence[int] = (4, 8),
    experiments: Sequence[str] = VALIDATION_EXPERIMENTS,
    workers: int = 1,
) -> ValidationReport:
    """Run the acceptance checks that fit a desk budget.

    Kernel rows, the tail of ``nu``, the bijection on random forests,
    the truncation doubling test for ``doubling_seeds`` seeds per
    radius, determinism of a chain replicate, then every experiment
    named in ``experiments`` at ``config.replicates`` replicates.
    Slopes are only asserted from at least ``MIN_REPLICATES``
    replicates; skipped checks are listed under ``details["skipped"]``.
    """
    unknown = set(experiments) - set(VALIDATION_EXPERIMENTS)
    if unknown:
        raise InvalidParameter(f"unknown experiments {sorted(unknown)}")
    data = data or critical_data_for(config)
    checks = _Checks(config)

    sums = [data.kernel(p).total() for p in range(1, 201)]
    worst = float(np.max(np.abs(np.array(sums) - 1.0)))
    checks.record("kernel_stochastic", worst <= 1e-9)
    checks.details["kernel_max_defect"] = worst

    if data.nu.cutoff >= 1000:
        slope = data.nu.negative_slope(100)
        checks.record(
            "nu_tail_slope",
            abs(slope + data.type_a) <= config.tolerance.get("nu_slope", 0.05),
            {"slope": slope, "expected": -data.type_a},
        )
    else:
        checks.skip("nu_tail_slope", f"nu cutoff {data.nu.cutoff} < 1000")

    runs = [r for r in doubling_radii for _ in range(doubling_seeds)]
    seeds = np.random.SeedSequence(config.seed).spawn(forests + len(runs))
    outcomes = []
    for i in range(forests):
        try:
            outcomes.append(bijection_holds(data, 1 + i % 4, seeds[i]))
        except SamplerStall as e:
            logger.warning(f"Bijection forest {i} skipped: {e}")
    checks.record("bijection", bool(outcomes) and all(outcomes))
    checks.details["bijection_forests"] = len(outcomes)

    reports = []
    for i, radius in enumerate(runs):
        try:
            reports.append(doubling_check(
                data, radius, seeds[forests + i], config.trust_factor,
                config.trust_margin,
            ).passed)
        except SamplerStall as e:
            logger.warning(f"Doubling check stalled: {e}")
    checks.record("doubling", bool(reports) and all(reports))
    checks.details["doubling_runs"] = len(reports)

    small = config.with_overrides(mode="chain", algorithm="uniform")
    first = _peel_replicate(small, data, 0, seeds[0])
    again = _peel_replicate(small, data, 0, seeds[0])
    checks.record("determinism", first.equals(again))

    if checks.enough_replicates:
        frame, discards = peel_experiment(small, data, workers)
        checks.frame_slope(
            "perimeter_slope", frame, "n", "p", small.steps, discards,
            1.0 / (data.type_a - 1),
        )
    else:
        checks.skip("perimeter_slope", "too few replicates")

    try:
        _validate_experiments(checks, data, experiments, workers)
    except InsufficientData as e:
        logger.error(f"Validation experiment failed: {e}")
        checks.record("experiments", False, {"error": str(e)})

    for name, ok in checks.checks.items():
        log = logger.info if ok else logger.error
        log(f"Check {name}: {'pass' if ok else 'FAIL'}")
    return ValidationReport(checks.checks, checks.details)
