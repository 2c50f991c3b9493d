"""Desk-scale experiment harnesses: invariance, equivalence and scaling."""

from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .attention_kernel import TileSpec
from .flash_ipa import flash_ipa_forward
from .geometry import FrameSet, RigidTransform, apply, random_rototranslation
from .ipa_reference import IpaWeights, init_weights, reference_forward
from .model_io import BenchConfig, CheckResult, RunReport, ScalingRecord
from .pair_features import (FactorWeights, FactorizedPair, build_factors, init_factor_weights,
                            knn_distogram)
from .tensor_core import Rng, dtype_of, tracking

log = logging.getLogger(__name__)

ARMS = ("reference", "flash")
INVARIANCE_TOL = {("f64", "reference"): 1e-9, ("f64", "flash"): 1e-9,
                  ("f32", "reference"): 1e-6, ("f32", "flash"): 1e-3}
EQUIVALENCE_TOL = {"f64": 1e-8, "f32": 1e-3}
DEFAULT_LENGTHS = (128, 256, 512, 1024, 2048, 4096, 8192)
REFERENCE_MAX_LENGTH = 4096
DEFAULT_MEMORY_BUDGET = 3 * 2**30


# ---------------------------------------------------------------------------
# polynomial fits


class PolyFit(NamedTuple):
    a: float
    b: float
    r2: float


def _r2(y, pred) -> float:
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot


def fit_polynomial(points: Sequence[tuple[float, float]]) -> PolyFit:
    """Least-squares y = a L^2 + b L (no constant term)."""
    L = np.array([p[0] for p in points], dtype=np.float64)
    y = np.array([p[1] for p in points], dtype=np.float64)
    if len(np.unique(L)) < 2:
        raise ValueError("need at least two distinct lengths to fit a L^2 + b L")
    A = np.stack([L * L, L], axis=1)
    # column scaling keeps the normal equations well conditioned at L ~ 1e4
    scale = np.abs(A).max(axis=0)
    coef, _, rank, _ = np.linalg.lstsq(A / scale, y, rcond=None)
    if rank < 2:
        raise ValueError("degenerate design matrix")
    a, b = coef / scale
    return PolyFit(float(a), float(b), _r2(y, A @ np.array([a, b])))


def fit_linear(points: Sequence[tuple[float, float]]) -> tuple[float, float, float]:
    """Ordinary y = slope L + intercept; returns (slope, intercept, R^2)."""
    L = np.array([p[0] for p in points], dtype=np.float64)
    y = np.array([p[1] for p in points], dtype=np.float64)
    slope, intercept = np.polyfit(L, y, 1)
    return float(slope), float(intercept), _r2(y, slope * L + intercept)


# ---------------------------------------------------------------------------
# synthetic problems


@dataclass
class Problem:
    """One synthetic single-sample input: weights, single rep and backbone.

    ``backbone`` holds (N, CA, C)-like Gaussian points, shape (L, 3, 3).
    """

    config: BenchConfig
    weights: IpaWeights
    factor_weights: FactorWeights
    s: np.ndarray
    backbone: np.ndarray

    @property
    def length(self) -> int:
        return self.s.shape[0]


def sample_problem(config: BenchConfig, length: int, rng: Rng, point_scale: float = 1.0,
                   weights: IpaWeights | None = None, factor_weights: FactorWeights | None = None) -> Problem:
    ipa = config.ipa
    if weights is None:
        weights = init_weights(ipa, rng)
    if factor_weights is None:
        factor_weights = init_factor_weights(rng, config.distogram.k * config.distogram.width, ipa.rank, ipa.d_z)
    s = rng.normal(length * ipa.d_in).reshape(length, ipa.d_in)
    ca = point_scale * rng.normal(3 * length).reshape(length, 3)
    n = ca + rng.normal(3 * length).reshape(length, 3)
    c = ca + rng.normal(3 * length).reshape(length, 3)
    return Problem(config, weights, factor_weights, s, np.stack([n, ca, c], axis=1))


def pair_features(translations: np.ndarray, config: BenchConfig) -> np.ndarray:
    """Flattened k-NN distogram rows, zero-padded when L - 1 < k."""
    spec = config.distogram
    L = translations.shape[0]
    out = np.zeros((L, spec.k, spec.width))
    k = min(spec.k, L - 1)
    if k >= 1:
        out[:, :k] = knn_distogram(translations, replace(spec, k=k))
    return out.reshape(L, -1)


def build_inputs(problem: Problem, motion: RigidTransform | None = None) -> tuple[FrameSet, FactorizedPair]:
    """Frames and pair factors, after moving every atom by ``motion``."""
    pts = problem.backbone if motion is None else apply(motion, problem.backbone)
    frames = FrameSet.from_backbone(pts[:, 0], pts[:, 1], pts[:, 2])
    feats = pair_features(pts[:, 1], problem.config)
    ipa = problem.config.ipa
    factors = build_factors(feats, ipa.rank, ipa.d_z, problem.factor_weights)
    return frames, factors


def run_arm(arm: str, problem: Problem, frames: FrameSet, factors: FactorizedPair, threads: int = 1) -> np.ndarray:
    cfg = problem.config
    if arm == "reference":
        return reference_forward(problem.s, frames, problem.weights, cfg.ipa, factors=factors)
    if arm == "flash":
        return flash_ipa_forward(problem.s, factors, frames, problem.weights, cfg.ipa, cfg.tiles, threads)
    raise ValueError(f"unknown arm {arm!r}")


def _with_precision(config: BenchConfig, precision: str | None) -> BenchConfig:
    if precision is None or precision == config.ipa.precision:
        return config
    return replace(config, ipa=replace(config.ipa, precision=precision))


# ---------------------------------------------------------------------------
# commands


def invariance_deviation(problem: Problem, motion: RigidTransform, arm: str) -> float:
    frames, factors = build_inputs(problem)
    moved_frames, moved_factors = build_inputs(problem, motion)
    base = run_arm(arm, problem, frames, factors)
    moved = run_arm(arm, problem, moved_frames, moved_factors)
    return float(np.max(np.abs(moved - base)))


def cmd_invariance(config: BenchConfig, trials: int = 100, precision: str | None = None, seed: int = 0,
                   length: int = 64, arms: Sequence[str] = ARMS, translation_scale: float = 1.0,
                   point_scale: float = 1.0) -> RunReport:
    """Max output deviation under random global roto-translations."""
    config = _with_precision(config, precision)
    prec = config.ipa.precision
    rng = Rng(seed)
    worst = {arm: 0.0 for arm in arms}
    for _ in range(trials):
        problem = sample_problem(config, length, rng, point_scale)
        g = random_rototranslation(rng, translation_scale)
        for arm in arms:
            worst[arm] = max(worst[arm], invariance_deviation(problem, g, arm))
    report = RunReport("invariance", config.to_dict())
    for arm in arms:
        tol = INVARIANCE_TOL[(prec, arm)]
        report.checks.append(CheckResult(f"invariance/{arm}", worst[arm], tol, worst[arm] < tol, seed, prec))
    report.notes.append(f"L={length}, trials={trials}, max-abs deviation")
    return report


def relative_deviation(a: np.ndarray, b: np.ndarray) -> float:
    scale = float(np.max(np.abs(b)))
    return float(np.max(np.abs(a - b))) / max(scale, np.finfo(np.float64).tiny)


def cmd_equivalence(config: BenchConfig, trials: int = 3, seed: int = 0,
                    lengths: Sequence[int] = (16, 64, 128), precision: str | None = None) -> RunReport:
    """flash_ipa_forward vs reference_forward on identical factorized inputs."""
    config = _with_precision(config, precision)
    prec = config.ipa.precision
    tol = EQUIVALENCE_TOL[prec]
    rng = Rng(seed)
    report = RunReport("equivalence", config.to_dict())
    for L in lengths:
        worst = 0.0
        for _ in range(trials):
            problem = sample_problem(config, L, rng)
            frames, factors = build_inputs(problem)
            ref = run_arm("reference", problem, frames, factors)
            fl = run_arm("flash", problem, frames, factors)
            worst = max(worst, relative_deviation(fl, ref))
        report.checks.append(CheckResult(f"equivalence/L={L}", worst, tol, worst <= tol, seed, prec))
    return report


@dataclass(frozen=True)
class SweepSpec:
    lengths: tuple[int, ...] = DEFAULT_LENGTHS
    arms: tuple[str, ...] = ARMS
    seeds: tuple[int, ...] = (0,)
    precision: str = "f32"
    tiles: TileSpec = field(default_factory=TileSpec)
    threads: int = 1
    repeats: int = 3
    reference_max_length: int = REFERENCE_MAX_LENGTH
    memory_budget: int = DEFAULT_MEMORY_BUDGET
    batch: int = 1

    def __post_init__(self):
        if not self.arms or set(self.arms) - set(ARMS):
            raise ValueError(f"arms must be a non-empty subset of {ARMS}")
        if any(b <= a for a, b in zip(self.lengths, self.lengths[1:])) or not self.lengths:
            raise ValueError("lengths must be non-empty and strictly increasing")
        if self.batch != 1:
            raise ValueError("only single-sample batches are supported")
        dtype_of(self.precision)


def reference_bytes_estimate(config: BenchConfig, length: int, itemsize: int) -> int:
    """Dominant quadratic buffers of the reference arm: z, bias, logits, softmax."""
    H = config.ipa.n_heads
    return length * length * itemsize * (config.ipa.d_z + 3 * H + 2)


def measure(arm: str, problem: Problem, frames, factors, repeats: int = 3, threads: int = 1) -> tuple[int, float]:
    """One warmup, then ``repeats`` tracked and timed runs: (peak bytes, median s)."""
    run_arm(arm, problem, frames, factors, threads)
    peaks, times = [], []
    for _ in range(repeats):
        with tracking() as ledger:
            t0 = time.perf_counter()
            out = run_arm(arm, problem, frames, factors, threads)
            times.append(time.perf_counter() - t0)
            peaks.append(ledger.peak)
        del out
    return max(peaks), statistics.median(times)


def cmd_scaling(spec: SweepSpec, config: BenchConfig, seed: int | None = None) -> RunReport:
    """Peak tracked bytes and wall-clock per (arm, L), plus a L^2 + b L fits."""
    config = replace(_with_precision(config, spec.precision), tiles=spec.tiles)
    itemsize = dtype_of(spec.precision).itemsize
    seeds = spec.seeds if seed is None else (seed,)
    report = RunReport("scaling", config.to_dict())
    for s in seeds:
        base = Rng(s)
        weights = init_weights(config.ipa, base)
        fw = init_factor_weights(base, config.distogram.k * config.distogram.width, config.ipa.rank, config.ipa.d_z)
        for L in spec.lengths:
            problem = sample_problem(config, L, Rng(s + L), weights=weights, factor_weights=fw)
            frames, factors = build_inputs(problem)
            for arm in spec.arms:
                if arm == "reference":
                    need = reference_bytes_estimate(config, L, itemsize)
                    if L > spec.reference_max_length or need > spec.memory_budget:
                        msg = f"reference arm skipped at L={L} (cap {spec.reference_max_length}, ~{need / 2**20:.0f} MiB)"
                        log.warning(msg)
                        report.notes.append(msg)
                        continue
                peak, secs = measure(arm, problem, frames, factors, spec.repeats, spec.threads)
                log.info("%s L=%d peak=%d B time=%.4f s", arm, L, peak, secs)
                report.records.append(ScalingRecord(arm, L, s, spec.precision, peak, secs))
    report.fits = fit_records(report.records)
    report.checks.extend(scaling_checks(report.fits, report.records))
    return report


def fit_records(records: Sequence[ScalingRecord]) -> dict[str, dict]:
    """Per-arm fits of peak bytes (as MB) and seconds against L."""
    fits = {}
    for arm in sorted({r.arm for r in records}):
        rows = [r for r in records if r.arm == arm]
        if len({r.L for r in rows}) < 2:
            continue
        mem = fit_polynomial([(r.L, r.peak_bytes / 1e6) for r in rows])
        sec = fit_polynomial([(r.L, r.seconds) for r in rows])
        _, _, lin_r2 = fit_linear([(r.L, r.peak_bytes / 1e6) for r in rows])
        Lmax = max(r.L for r in rows)
        residuals = [r.peak_bytes / 1e6 - (mem.a * r.L ** 2 + mem.b * r.L) for r in rows]
        fits[arm] = {
            "memory_mb": {"a": mem.a, "b": mem.b, "r2": mem.r2, "linear_r2": lin_r2, "residuals": residuals},
            "seconds": {"a": sec.a, "b": sec.b, "r2": sec.r2},
            "L_max": Lmax,
        }
    return fits


def quadratic_share(fit: dict, L: float) -> float:
    """|a| L^2 relative to the fitted value a L^2 + b L at L."""
    quad = abs(fit["a"]) * L * L
    total = abs(fit["a"] * L * L + fit["b"] * L)
    return quad / total if total else 0.0


def scaling_checks(fits: dict, records: Sequence[ScalingRecord]) -> list[CheckResult]:
    checks = []
    seed = records[0].seed if records else 0
    prec = records[0].precision if records else "f32"
    if "flash" in fits:
        mem = fits["flash"]["memory_mb"]
        Lmax = fits["flash"]["L_max"]
        ratio = abs(mem["a"]) * Lmax ** 2 / abs(mem["b"] * Lmax)
        checks.append(CheckResult("scaling/flash_linear_regime", ratio, 0.01, ratio < 0.01, seed, prec))
        checks.append(CheckResult("scaling/flash_linear_r2", mem["linear_r2"], 0.99, mem["linear_r2"] >= 0.99, seed, prec))
    if "reference" in fits:
        mem = fits["reference"]["memory_mb"]
        Ls = [r.L for r in records if r.arm == "reference" and r.L >= 1024]
        if Ls:
            dominates = mem["a"] > 0 and all(mem["a"] * L > mem["b"] for L in Ls)
            share = quadratic_share(mem, min(Ls))
            checks.append(CheckResult("scaling/reference_quadratic", share, 0.5, dominates, seed, prec))
    return checks
