"""End-to-end run: simulate, persist, correlate, fit, score entropy, extract, report."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .correlate import G2Curve, G2Fit, fit_g2, g2_histogram, normalize, write_curve_csv
from .emitter import fluorescence_rates, randomness_rate_curve
from .entropy import EmpiricalContext, EntropyReport, empirical_entropy, parametric_reports
from .extract import ExtractionPlan, extract_stream, plan_extraction, write_bits
from .g2 import G2Model, NoCrossingError, classical_crossing
from .simulate import simulate_source
from .tags import (
    TagStream,
    TupleWindow,
    antibunched_tuples,
    bits_from_tags,
    read_tags,
    windowed_rates,
    write_rates_csv,
    write_tags,
)

SCHEMA_VERSION = 1


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunReport:
    config: PipelineConfig
    n_clicks: int
    duration_s: float
    rates: tuple
    fit: G2Fit | None
    g2_used: G2Model
    t_cross_ns: float | None
    norm: object
    parametric: list
    empirical: list
    plan: ExtractionPlan | None
    extracted_bits: int
    n_tuples: int
    timing: dict = field(default_factory=dict)
    # artifacts behind the CSV exports; not part of the JSON document
    curve: G2Curve | None = None
    windows: list = field(default_factory=list)
    sweep: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        fit = None
        if self.fit is not None:
            m = self.fit.model
            try:
                t_fit = classical_crossing(m)
            except NoCrossingError:
                t_fit = None
            fit = {
                "a": m.a,
                "lambda1_ns": m.lambda1,
                "b": m.b,
                "lambda2_ns": m.lambda2,
                "g2_0": m.g2_0,
                "t_cross_ns": t_fit,
                "residual": self.fit.residual,
                "stderr": self.fit.stderr,
            }
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "stream": {
                "n_clicks": self.n_clicks,
                "duration_s": self.duration_s,
                "rate_a_cps": self.rates[0],
                "rate_b_cps": self.rates[1],
                "n_tuples": self.n_tuples,
            },
            "fit": fit,
            "g2_used": {**self.g2_used.to_dict(), "g2_0": self.g2_used.g2_0},
            "t_cross_ns": self.t_cross_ns,
            "norm_uncertainty": None if self.norm is None else {
                "delta_norm": self.norm.delta_norm,
                "delta_1": self.norm.delta_1,
                "delta_g2_0": self.norm.delta_g2_0,
            },
            "entropy": {
                "parametric": [_entropy_dict(r) for r in self.parametric],
                "empirical": [_entropy_dict(r) for r in self.empirical],
            },
            "extraction": None if self.plan is None else {
                **self.plan.to_dict(),
                "model": self.config.extract_model,
                "extracted_bits": self.extracted_bits,
            },
            "timing": self.timing,
        }


def _entropy_dict(r: EntropyReport) -> dict:
    return {
        "model": r.model,
        "source": r.source,
        "p_a": r.p_a,
        "p_b": r.p_b,
        "p_ab": r.p_ab,
        "f_p": r.f_p,
        "branch": r.branch,
        "p_guess": r.p_guess,
        "h_raw": r.h_raw,
        "delta": r.delta,
        "k_sigma": r.k_sigma,
        "epsilon": r.epsilon,
        "h_conservative": r.h_conservative,
        "p_e": r.p_e,
        "p_c": r.p_c,
        "n_raw": r.n_raw,
        "extractable_bits": r.extractable_bits,
        "rate_bps": r.rate_bps,
        "extra": r.extra,
    }


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    s = format(x, ".17g")
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


def to_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None:
        return "null"
    if isinstance(obj, bool) or isinstance(obj, np.bool_):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{to_json(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [pad + to_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def report_json(report: RunReport, with_timing: bool = True) -> str:
    d = report.to_dict()
    if not with_timing:
        d.pop("timing")
    return to_json(d) + "\n"


class _Stages:
    def __init__(self):
        self.timing = {}

    def run(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            out = fn(*args, **kw)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        self.timing[name] = time.perf_counter() - t0
        return out


def acquire(config: PipelineConfig) -> TagStream:
    """Simulated stream, or the configured tag file."""
    if config.tags_path:
        return read_tags(config.tags_path, int(round(config.duration_s * 1e12)))
    return simulate_source(
        config.power_mw, config.apparatus, config.duration_s, config.seed, config.power_model
    )


def power_sweep(config: PipelineConfig) -> dict:
    powers = np.linspace(0.0, config.sweep_max_mw, config.sweep_points)
    sat = np.array([fluorescence_rates(p, config.power_model) for p in powers])
    rr = randomness_rate_curve(powers, config.apparatus, config.power_model)
    return {"powers": powers, "saturation": sat, "r_rand": rr.rates}


def run_pipeline(config: PipelineConfig, out_dir: str | os.PathLike | None = None) -> RunReport:
    st = _Stages()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    stream = st.run("simulate", acquire, config)
    if out is not None and not config.tags_path:
        st.run("persist", write_tags, stream, out / "tags.bin")
    n = len(stream)
    duration = stream.span_s
    if n < 2 or duration <= 0:
        raise StageError("simulate", ValueError(f"stream has only {n} clicks"))
    rates = stream.singles_rates()
    windows = st.run("rates", windowed_rates, stream, config.window_s)

    hist = st.run("correlate", g2_histogram, stream, config.bin_ps, config.max_lag_ns)
    curve = st.run("normalize", normalize, hist)
    fit = st.run("fit", fit_g2, curve)
    g2 = fit.model if config.g2_source == "fit" else config.g2
    try:
        t_cross = classical_crossing(g2)
    except NoCrossingError:
        t_cross = None

    par = st.run(
        "entropy",
        parametric_reports,
        config.apparatus,
        g2,
        config.sigmas,
        config.epsilon,
        n,
        duration,
        config.include_crossing_shift,
        config.k_sigma,
    )
    by_model = {r.model: r for r in par.reports}

    bits = bits_from_tags(stream)
    tuples = antibunched_tuples(stream, TupleWindow(t_cross)) if t_cross else None
    n_tuples = 0 if tuples is None else len(tuples)

    def empirical():
        out_reps = []
        r2, r3 = by_model[2], by_model[3]
        ctx = EmpiricalContext(
            epsilon=config.epsilon,
            p_e=r2.p_e,
            delta_p_e=r2.extra.get("delta_p_e", 0.0),
            p_c=r3.p_c if r3.p_c is not None else 1.0,
            n_raw=n,
            duration_s=duration,
            k_sigma=config.k_sigma,
        )
        for m in config.models:
            if m == 3:
                if tuples is None or len(tuples) < 2:
                    continue
                out_reps.append(empirical_entropy(tuples, 3, ctx))
            else:
                out_reps.append(empirical_entropy(bits, m, ctx))
        return out_reps

    emp = st.run("empirical", empirical)

    def extract():
        h = by_model[config.extract_model].h_conservative
        plan = plan_extraction(n, h, config.epsilon, config.n_block, config.extract_seed)
        if plan.k_block == 0 or n < plan.n_block:
            y = None
        else:
            y = extract_stream(bits, plan)
        if out is not None:
            with open(out / "extracted.bin", "wb") as fh:
                if y is not None:
                    write_bits(y, fh)
        return plan, 0 if y is None else len(y)

    plan, n_out = st.run("extract", extract)
    sweep = st.run("sweep", power_sweep, config)

    report = RunReport(
        config=config,
        n_clicks=n,
        duration_s=duration,
        rates=rates,
        fit=fit,
        g2_used=g2,
        t_cross_ns=t_cross,
        norm=par.norm,
        parametric=[r for r in par.reports if r.model in config.models],
        empirical=emp,
        plan=plan,
        extracted_bits=n_out,
        n_tuples=n_tuples,
        timing=st.timing,
        curve=curve,
        windows=windows,
        sweep=sweep,
    )
    if out is not None:
        st.run("report", write_report, report, out)
    return report


def write_report(report: RunReport, out_dir: str | os.PathLike) -> list[Path]:
    out = Path(out_dir)
    (out / "report.json").write_text(report_json(report))
    return [out / "report.json", *emit_curves(report, out)]


SATURATION_HEADER = ("power_mw", "emitted_cps", "total_cps", "detected_cps")
RAND_RATE_HEADER = ("power_mw", "r_rand_cps")


def emit_curves(report: RunReport, out_dir: str | os.PathLike) -> list[Path]:
    """Write the g2 curve, saturation and randomness-rate sweeps, and windowed rates."""
    if report is None or report.curve is None or not report.sweep:
        raise ValueError("report has no curve data to export")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    p = out / "g2_curve.csv"
    with open(p, "w", newline="") as fh:
        write_curve_csv(report.curve, fh)
    paths.append(p)
    sw = report.sweep
    p = out / "saturation.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SATURATION_HEADER)
        for pw, row in zip(sw["powers"].tolist(), sw["saturation"].tolist()):
            w.writerow([repr(pw), *(repr(v) for v in row)])
    paths.append(p)
    p = out / "rand_rate_vs_power.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAND_RATE_HEADER)
        for pw, r in zip(sw["powers"].tolist(), sw["r_rand"].tolist()):
            w.writerow([repr(pw), repr(r)])
    paths.append(p)
    p = out / "windowed_rates.csv"
    with open(p, "w", newline="") as fh:
        write_rates_csv(report.windows, fh)
    paths.append(p)
    return paths


def read_numeric_csv(path: str | os.PathLike) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in r] for r in reader]
    return header, np.array(rows).reshape(-1, len(header))

