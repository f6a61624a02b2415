"""Experiment runner.

Each experiment evaluates independent points (β values or random samples)
in a process pool when more than one worker is configured, collects the
results in input order and writes one CSV file. Solver messages logged in
the workers are captured per point and replayed once in the parent's log.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from causalphi.core.config import Settings
from causalphi.core.errors import ConfigError, NonConvergenceError
from causalphi.core.logging import LogCapture
from causalphi.models.families import SplitFamily
from causalphi.models.schemas import EmConfig, ExperimentConfig, MeasureReport
from causalphi.models.space import JointDistribution, ProductSpace, SystemJoint
from causalphi.services.cis import phi_CIS, sample_NCIS
from causalphi.services.distributions import _kl_arrays, make_rng, marginalize, parse_distribution
from causalphi.services.em import em_run, phi_CII, phi_CII_sweep, random_start, reverse_latent
from causalphi.services.ips import phi_G
from causalphi.services.ising import (
    ExteriorIsingSystem,
    IsingSystem,
    exterior_joint,
    stationary,
    stationary_joint,
)
from causalphi.services.measures import phi_I, phi_SI, phi_T

log = logging.getLogger(__name__)

SEGMENT_THRESHOLD = 0.2
DERIVED = "derived"


@dataclass
class PointResult:
    key: float
    values: dict[str, float | None]
    flags: list[str] = field(default_factory=list)
    messages: list[tuple[int, str]] = field(default_factory=list)
    extra: list[dict[str, Any]] = field(default_factory=list)


# ── CSV ───────────────────────────────────────────────


def format_number(value: float | None) -> str:
    if value is None:
        return ""
    return format(float(value), ".17g")


def write_csv(path: str | Path | None, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """Write rows with LF line endings; floats use 17 significant digits. Returns the text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_number(v) if isinstance(v, (float, np.floating)) or v is None else v for v in row])
    text = buf.getvalue()
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    return text


def _output_path(config: ExperimentConfig, default_name: str, settings: Settings | None) -> Path:
    if config.output:
        return Path(config.output)
    return (settings or Settings()).output_dir / default_name


# ── pool ──────────────────────────────────────────────


def _map(func: Callable, config: ExperimentConfig, keys: Sequence[Any], workers: int) -> list[PointResult]:
    """Evaluate ``func(config, key)`` for every key; results come back in key order."""
    total = len(keys)
    results: list[PointResult] = []
    if workers > 1 and total > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, res in enumerate(pool.map(func, [config] * total, keys), 1):
                _report(res, i, total)
                results.append(res)
    else:
        for i, key in enumerate(keys, 1):
            res = func(config, key)
            _report(res, i, total)
            results.append(res)
    return results


def _report(res: PointResult, i: int, total: int) -> None:
    for level, msg in res.messages:
        log.log(level, "[%g] %s", res.key, msg)
    suffix = f" flags={';'.join(res.flags)}" if res.flags else ""
    log.info("[%d/%d] %g done%s", i, total, res.key, suffix)


def _run_captured(func: Callable[..., PointResult], config: ExperimentConfig, key: Any) -> PointResult:
    # records are held back from the parent handlers and replayed once by _report
    capture = LogCapture()
    root = logging.getLogger("causalphi")
    propagate = root.propagate
    root.addHandler(capture)
    root.propagate = False
    try:
        res = func(config, key)
    finally:
        root.removeHandler(capture)
        root.propagate = propagate
    res.messages = capture.records()
    return res


def _captured(func: Callable[..., PointResult]) -> Callable[..., PointResult]:
    """Picklable wrapper that records what ``func`` logs."""
    return partial(_run_captured, func)


def _workers(config: ExperimentConfig, settings: Settings | None) -> int:
    return config.workers or (settings or Settings()).workers


# ── systems ───────────────────────────────────────────


def build_system(config: ExperimentConfig, beta: float) -> tuple[SystemJoint, JointDistribution | None, list[str]]:
    """Stationary system joint at ``beta``; with exterior weights also the extended joint."""
    base = IsingSystem(config.weight_matrix(), beta)
    flags = []
    if config.exterior_weights is not None:
        ext_system = ExteriorIsingSystem(base, config.exterior_weights, config.w_prob)
        extended, state = exterior_joint(
            ext_system, config.stationary_tolerance, config.stationary_max_iterations, config.seed
        )
        joint = SystemJoint(marginalize(extended, extended.space.without_latent().labels))
    else:
        state = stationary(base, config.stationary_tolerance, config.stationary_max_iterations, config.seed)
        joint = stationary_joint(base, state)
        extended = None
    if not state.converged:
        flags.append("stationary")
    return joint, extended, flags


# ── sweep ─────────────────────────────────────────────


def sweep_columns(config: ExperimentConfig) -> list[str]:
    return (
        ["beta", "phi_I", "phi_SI", "phi_G"]
        + [f"phi_CII_w{m}" for m in config.w_sizes]
        + ["phi_CIS", "phi_T", "flags"]
    )


def evaluate_measures(
    joint: SystemJoint,
    config: ExperimentConfig,
    extended: JointDistribution | None = None,
) -> tuple[dict[str, MeasureReport], list[str]]:
    """Every measure named in ``config.measures``, keyed by CSV column name."""
    wanted = set(config.measures)
    reports: dict[str, MeasureReport] = {}
    flags: list[str] = []
    if "I" in wanted:
        reports["phi_I"] = phi_I(joint)
    if "SI" in wanted or ("T" in wanted and extended is None):
        reports["phi_SI"] = phi_SI(joint)
    if "G" in wanted:
        reports["phi_G"] = phi_G(joint, config.ips_tolerance, config.ips_max_cycles)
    cii_best = None
    if "CII" in wanted:
        for m, report in phi_CII_sweep(
            joint, config.w_sizes, config.em_config(), reverse_latent_states=config.permute_latent
        ).items():
            reports[f"phi_CII_w{m}"] = report
            if cii_best is None or report.value < cii_best.value:
                cii_best = report
    if "CIS" in wanted:
        extra = [cii_best.projection] if cii_best is not None else []
        reports["phi_CIS"] = phi_CIS(joint, config.cis_config(), extra_starts=extra)
    if "T" in wanted:
        if extended is not None:
            reports["phi_T"] = phi_T(extended)
        else:
            si = reports["phi_SI"]
            reports["phi_T"] = MeasureReport(name="T", value=si.value, diagnostics={DERIVED: True})
            flags.append(f"phi_T:{DERIVED}")
    if "SI" not in wanted and "phi_SI" in reports and extended is None:
        del reports["phi_SI"]
    for column, report in reports.items():
        if not report.converged:
            flags.append(column)
    return reports, flags


def sweep_point(config: ExperimentConfig, beta: float) -> PointResult:
    joint, extended, flags = build_system(config, beta)
    reports, measure_flags = evaluate_measures(joint, config, extended)
    return PointResult(
        key=beta,
        values={column: report.value for column, report in reports.items()},
        flags=flags + measure_flags,
    )


def _non_converged(flags: Iterable[str]) -> list[str]:
    return [f for f in flags if not f.endswith(f":{DERIVED}")]


def run_sweep(config: ExperimentConfig, settings: Settings | None = None, out: str | Path | None = None) -> Path:
    """One CSV row per β in ascending grid order."""
    path = Path(out) if out else _output_path(config, "sweep.csv", settings)
    betas = config.betas()
    log.info("=== sweep: n=%d, %d beta values, measures %s ===", config.n, len(betas), ",".join(config.measures))
    results = _map(_captured(sweep_point), config, betas, _workers(config, settings))
    columns = sweep_columns(config)
    rows = [
        [res.key] + [res.values.get(c) for c in columns[1:-1]] + [";".join(res.flags)]
        for res in results
    ]
    write_csv(path, columns, rows)
    log.info("wrote %s", path)
    failed = sorted({f for res in results for f in _non_converged(res.flags)})
    if config.strict and failed:
        raise NonConvergenceError(",".join(failed), f"see flags column in {path}")
    return path


# ── table 1 ───────────────────────────────────────────


def _sample_seed(seed: int, sample: int) -> int:
    return int(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, sample]).generate_state(1)[0])


def table1_point(config: ExperimentConfig, sample: int) -> PointResult:
    """Divergence from one random N_CIS joint to the N_CII family for every |W|."""
    joint = sample_NCIS(make_rng(config.seed, sample))
    em = config.em_config(
        restarts=config.table1_restarts,
        include_independent_start=False,
        include_mixture_start=False,
    ).model_copy(update={"seed": _sample_seed(config.seed, sample)})
    values, flags = {}, []
    for m in config.w_sizes:
        report = phi_CII(joint, SplitFamily.ncii(m), em)
        values[str(m)] = report.value
        if not report.converged:
            flags.append(f"w{m}")
    return PointResult(key=sample, values=values, flags=flags)


def table1_statistics(results: Sequence[PointResult], w_sizes: Sequence[int]) -> list[list[Any]]:
    rows = []
    for m in w_sizes:
        vals = np.array([res.values[str(m)] for res in results])
        rows.append([m, len(vals), float(vals.min()), float(vals.max()), float(vals.mean())])
    return rows


def run_table1(config: ExperimentConfig, settings: Settings | None = None, out: str | Path | None = None) -> Path:
    """min/max/mean divergence between N_CIS samples and N_CII, one row per |W|."""
    path = Path(out) if out else _output_path(config, "table1.csv", settings)
    samples = list(range(config.table1_samples))
    log.info(
        "=== table1: %d samples, %d restarts, |W| in %s ===",
        len(samples), config.table1_restarts, config.w_sizes,
    )
    results = _map(_captured(table1_point), config, samples, _workers(config, settings))
    rows = table1_statistics(results, config.w_sizes)
    write_csv(path, ["w_size", "samples", "min", "max", "mean"], rows)
    log.info("wrote %s", path)
    return path


# ── local-minima trace ────────────────────────────────


def _trace_run(
    joint: SystemJoint, family: SplitFamily, start: JointDistribution, em: EmConfig, restart: int
) -> tuple[dict[str, Any], JointDistribution, bool]:
    value, minimizer, trace = em_run(joint, family, start, em)
    run = {
        "restart": restart,
        "divergence": value,
        "w_marginal": trace.w_marginal,
        "projection": minimizer.probs.sum(axis=-1),
    }
    return run, minimizer, trace.converged


def _trace_start(config: ExperimentConfig, space: ProductSpace, family: SplitFamily, *stream: int) -> JointDistribution:
    start = random_start(space, family, make_rng(config.seed, *stream))
    return reverse_latent(start) if config.permute_latent else start


def trace_point(config: ExperimentConfig, index: int) -> PointResult:
    """Fresh random starts at the ``index``-th β, one em run per restart."""
    (m,) = config.w_sizes
    beta = config.betas()[index]
    joint, _, flags = build_system(config, beta)
    family = SplitFamily.cii(joint.n, m)
    em = config.em_config(restarts=1)
    space = joint.space.with_latent(m)
    runs = []
    for r in range(config.restarts):
        run, _, converged = _trace_run(joint, family, _trace_start(config, space, family, r, index), em, r)
        if not converged:
            flags.append(f"restart:{r}")
        runs.append(run)
    return PointResult(key=beta, values={}, flags=flags, extra=runs)


def trace_chain(config: ExperimentConfig, restart: int) -> PointResult:
    """One em start carried along the β grid; each β starts from the previous minimizer."""
    (m,) = config.w_sizes
    runs, flags = [], []
    start = None
    for beta in config.betas():
        joint, _, point_flags = build_system(config, beta)
        flags += [f"{beta:g}:{flag}" for flag in point_flags]
        family = SplitFamily.cii(joint.n, m)
        if start is None:
            start = _trace_start(config, joint.space.with_latent(m), family, restart)
        run, start, converged = _trace_run(joint, family, start, config.em_config(restarts=1), restart)
        if not converged:
            flags.append(f"{beta:g}:em")
        runs.append(run)
    return PointResult(key=restart, values={}, flags=flags, extra=runs)


def trace_results(config: ExperimentConfig, workers: int) -> list[PointResult]:
    """Per-β results holding one run per restart, in β order."""
    betas = config.betas()
    if config.trace_starts == "fresh":
        return _map(_captured(trace_point), config, list(range(len(betas))), workers)
    chains = _map(_captured(trace_chain), config, list(range(config.restarts)), workers)
    return [
        PointResult(key=beta, values={}, extra=[chain.extra[t] for chain in chains])
        for t, beta in enumerate(betas)
    ]


def segment_marks(results: Sequence[PointResult]) -> list[bool]:
    """True at β_{t+1} when the best projections at β_t and β_{t+1} are more than 0.2 apart."""
    marks = [False]
    best = []
    for res in results:
        run = min(res.extra, key=lambda r: r["divergence"])
        best.append(run["projection"])
    for prev, cur in zip(best, best[1:]):
        marks.append(_kl_arrays(prev, cur) > SEGMENT_THRESHOLD)
    return marks


def run_localmin_trace(config: ExperimentConfig, settings: Settings | None = None, out: str | Path | None = None) -> Path:
    """Per (β, restart) divergence and W-marginal plus a segmentation column."""
    if len(config.w_sizes) != 1:
        raise ConfigError("trace needs exactly one value in w_sizes")
    path = Path(out) if out else _output_path(config, "trace.csv", settings)
    betas = config.betas()
    log.info(
        "=== trace: |W|=%d, %d beta values, %d %s restarts ===",
        config.w_sizes[0], len(betas), config.restarts, config.trace_starts,
    )
    results = trace_results(config, _workers(config, settings))
    marks = segment_marks(results)
    rows = []
    for res, mark in zip(results, marks):
        for run in res.extra:
            rows.append(
                [
                    res.key,
                    run["restart"],
                    run["divergence"],
                    ";".join(format_number(p) for p in run["w_marginal"]),
                    int(mark),
                ]
            )
    write_csv(path, ["beta", "restart", "divergence", "w_marginal", "segment"], rows)
    log.info("wrote %s", path)
    return path


# ── single distribution ───────────────────────────────


def measure_distribution(
    text: str,
    config: ExperimentConfig,
    renormalize: bool = False,
    floor: bool = False,
) -> list[tuple[str, float, bool]]:
    """Measures of one distribution in the text format.

    A distribution with a latent axis is an extended joint: Φ_T is taken on
    it and every other measure on its visible marginal.
    """
    dist = parse_distribution(text, renormalize=renormalize, floor=floor)
    extended = None
    if dist.space.latent:
        extended = dist
        dist = marginalize(dist, dist.space.without_latent().labels)
    joint = SystemJoint(dist)
    reports, _ = evaluate_measures(joint, config, extended)
    return [(column, report.value, report.converged) for column, report in reports.items()]
