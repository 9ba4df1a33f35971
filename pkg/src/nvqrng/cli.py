"""Command line front end.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, PipelineConfig, load_config, parse_models, parse_number
from .correlate import fit_g2, g2_histogram, normalize, read_curve_csv, write_curve_csv
from .entropy import EmpiricalContext, empirical_entropy, parametric_reports
from .extract import extract_stream, plan_extraction, write_bits
from .g2 import NoCrossingError, classical_crossing
from .pipeline import StageError, run_pipeline, to_json
from .simulate import simulate_source
from .tags import TupleWindow, antibunched_tuples, bits_from_tags, read_tags, windowed_rates, write_rates_csv, write_tags

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int, help="override sim.seed")
    p.add_argument("--duration", type=float, help="override sim.duration_s (seconds)")
    p.add_argument("--model", help="1, 2, 3 or all")
    p.add_argument("--epsilon", help="failure probability, e.g. 2^-100")
    p.add_argument("--out", default=".", help="output directory (default: current)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvqrng", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a detected tag stream and write tags.bin")
    _common(p)

    p = sub.add_parser("rates", help="windowed click rates of a tag file")
    _common(p)
    p.add_argument("--tags", required=True)
    p.add_argument("--window", type=float, help="window length in seconds")

    p = sub.add_parser("g2", help="normalized cross-correlation curve of a tag file")
    _common(p)
    p.add_argument("--tags", required=True)

    p = sub.add_parser("fit", help="fit the anti-bunching model to g2_curve.csv")
    _common(p)
    p.add_argument("--curve", required=True)

    p = sub.add_parser("entropy", help="min-entropy reports, parametric and (with --tags) empirical")
    _common(p)
    p.add_argument("--tags")

    p = sub.add_parser("extract", help="hash the raw bits of a tag file")
    _common(p)
    p.add_argument("--tags", required=True)

    p = sub.add_parser("report", help="run every stage and write report.json plus CSV curves")
    _common(p)
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.duration is not None:
        if not args.duration > 0:
            raise ConfigError("--duration must be positive")
        changes["duration_s"] = args.duration
    if args.model is not None:
        changes["models"] = parse_models(args.model)
    if args.epsilon is not None:
        eps = parse_number(args.epsilon)
        if not 0 < eps < 1:
            raise ConfigError("--epsilon must lie in (0, 1)")
        changes["epsilon"] = eps
    return replace(cfg, **changes)


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    p = out / name
    p.write_text(text)
    return p


def cmd_simulate(cfg, args, out: Path) -> None:
    stream = simulate_source(cfg.power_mw, cfg.apparatus, cfg.duration_s, cfg.seed, cfg.power_model)
    out.mkdir(parents=True, exist_ok=True)
    write_tags(stream, out / "tags.bin")
    ra, rb = stream.singles_rates()
    print(f"{len(stream)} clicks over {cfg.duration_s:g} s (A {ra:.1f} cps, B {rb:.1f} cps) -> {out / 'tags.bin'}")


def _stream(cfg, args):
    return read_tags(args.tags, int(round(cfg.duration_s * 1e12)) if args.duration else None)


def cmd_rates(cfg, args, out: Path) -> None:
    windows = windowed_rates(_stream(cfg, args), args.window or cfg.window_s)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "windowed_rates.csv", "w", newline="") as fh:
        write_rates_csv(windows, fh)
    print(f"{len(windows)} windows -> {out / 'windowed_rates.csv'}")


def cmd_g2(cfg, args, out: Path) -> None:
    curve = normalize(g2_histogram(_stream(cfg, args), cfg.bin_ps, cfg.max_lag_ns))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "g2_curve.csv", "w", newline="") as fh:
        write_curve_csv(curve, fh)
    print(f"{len(curve)} bins -> {out / 'g2_curve.csv'}")


def cmd_fit(cfg, args, out: Path) -> None:
    with open(args.curve, newline="") as fh:
        curve = read_curve_csv(fh)
    fit = fit_g2(curve)
    m = fit.model
    try:
        t = classical_crossing(m)
    except NoCrossingError:
        t = None
    doc = {
        "a": m.a, "lambda1_ns": m.lambda1, "b": m.b, "lambda2_ns": m.lambda2,
        "g2_0": m.g2_0, "t_cross_ns": t, "residual": fit.residual, "stderr": fit.stderr,
    }
    p = _write(out, "fit.json", to_json(doc) + "\n")
    print(f"g2(0) = {m.g2_0:.4f} +- {fit.g2_0_stderr:.4f} -> {p}")


def cmd_entropy(cfg, args, out: Path) -> None:
    n_raw, duration, stream = 0, 0.0, None
    if args.tags:
        stream = _stream(cfg, args)
        n_raw, duration = len(stream), stream.span_s
    res = parametric_reports(
        cfg.apparatus, cfg.g2, cfg.sigmas, cfg.epsilon, n_raw, duration,
        cfg.include_crossing_shift, cfg.k_sigma,
    )
    reps = [r.to_dict() for r in res.reports if r.model in cfg.models]
    emp = []
    if stream is not None:
        by = {r.model: r for r in res.reports}
        ctx = EmpiricalContext(
            cfg.epsilon, by[2].p_e, by[2].extra.get("delta_p_e", 0.0),
            by[3].p_c if by[3].p_c is not None else 1.0, 0.0, n_raw, duration, cfg.k_sigma,
        )
        for m in cfg.models:
            if m == 3:
                t = by[3].extra.get("t_cross_ns")
                if not t:
                    continue
                bold = antibunched_tuples(stream, TupleWindow(t))
                if len(bold) < 2:
                    continue
                emp.append(empirical_entropy(bold, 3, ctx).to_dict())
            else:
                emp.append(empirical_entropy(bits_from_tags(stream), m, ctx).to_dict())
    p = _write(out, "entropy.json", to_json({"parametric": reps, "empirical": emp}) + "\n")
    for r in reps:
        print(f"model {r['model']}: H_raw {r['h_raw']:.6g}, conservative {r['h_conservative']:.6g}")
    print(f"-> {p}")


def cmd_extract(cfg, args, out: Path) -> None:
    stream = _stream(cfg, args)
    bits = bits_from_tags(stream)
    model = cfg.models[0] if args.model else cfg.extract_model
    res = parametric_reports(cfg.apparatus, cfg.g2, cfg.sigmas, cfg.epsilon, k_sigma=cfg.k_sigma)
    h = {r.model: r for r in res.reports}[model].h_conservative
    plan = plan_extraction(len(bits), h, cfg.epsilon, cfg.n_block, cfg.extract_seed)
    out.mkdir(parents=True, exist_ok=True)
    n_out = 0
    with open(out / "extracted.bin", "wb") as fh:
        if plan.k_block and len(bits) >= plan.n_block:
            y = extract_stream(bits, plan)
            write_bits(y, fh)
            n_out = len(y)
    print(f"{len(bits)} raw bits, model {model}, H {h:.6g} -> {n_out} bits in {out / 'extracted.bin'}")


def cmd_report(cfg, args, out: Path) -> None:
    rep = run_pipeline(cfg, out)
    for r in rep.parametric:
        print(f"model {r.model}: H_raw {r.h_raw:.6g}, conservative {r.h_conservative:.6g}")
    print(f"-> {out / 'report.json'}")


COMMANDS = {
    "simulate": cmd_simulate,
    "rates": cmd_rates,
    "g2": cmd_g2,
    "fit": cmd_fit,
    "entropy": cmd_entropy,
    "extract": cmd_extract,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](cfg, args, Path(args.out))
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_STAGE
    except (ValueError, OSError, RuntimeError, ArithmeticError) as exc:
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
