"""Command-line entry point: ``mpqkd <subcommand> ...``.

Exit status 0 on success, 1 on invalid input or configuration, 2 when an
estimation step has no answer (infeasible decoy program, too few clicks).
CSV outputs start with a ``# schema_version`` comment line; JSON outputs
carry a ``schema_version`` key.  Floats are written with 9 significant
digits.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import sys
from dataclasses import replace

from . import SCHEMA_VERSION, __version__
from .channel import ChannelParams
from .config import ConfigError, RunConfig, load_config, parse_grid, parse_interval, thread_cap
from .decoy import EstimationError, SourceModel, estimate_bounds, finite_key_length
from .fockcheck import TruncationError, poisson_distance, verify_single_mode_decomposition, verify_two_mode_decomposition
from .keyrate import SCHEMES, SWEEP_COLUMNS, optimize_intensity, rate_at, sweep
from .lp import LPError
from .montecarlo import TallyTable, run_protocol
from .pairing import pair_adjacent
from .phasedrift import (DriftModel, EstimationUnavailable, default_bins, error_vs_interval, estimate_drift,
                         simulate_reference_clicks)

EXIT_OK, EXIT_INVALID, EXIT_ESTIMATION = 0, 1, 2


def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.9g}"


def _json_value(v):
    if isinstance(v, dict):
        return {str(k): _json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_value(x) for x in v]
    if isinstance(v, bool) or v is None or isinstance(v, str):
        return v
    if isinstance(v, int):
        return v
    v = float(v)
    if not math.isfinite(v):
        return fmt(v)
    return float(f"{v:.9g}")


def dump_json(obj: dict) -> str:
    return json.dumps({"schema_version": SCHEMA_VERSION, **_json_value(obj)}, indent=2) + "\n"


def csv_text(header, rows) -> str:
    out = io.StringIO()
    out.write(f"# schema_version: {SCHEMA_VERSION}\n")
    out.write(",".join(header) + "\n")
    for row in rows:
        out.write(",".join(fmt(row[h]) for h in header) + "\n")
    return out.getvalue()


def _emit(text: str, path: str | None) -> None:
    if path and path != "-":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg.protocol = replace(cfg.protocol, seed=seed)
    return cfg


# --- subcommands ---


def cmd_sweep(args) -> int:
    cfg = _config(args)
    s = cfg.sweep
    schemes = tuple(args.schemes.split(",")) if args.schemes else s.schemes
    distances = parse_grid(args.distances) if args.distances else s.distances
    l_values = tuple(parse_interval(p) for p in args.l.split(",")) if args.l else s.l_values
    for name in schemes:
        if name not in SCHEMES:
            raise ConfigError(f"unknown scheme {name!r}")
    rows = sweep(schemes, distances, l_values, cfg.channel, optimize=s.optimize, mu=s.mu,
                 include_plob=s.include_plob, threads=thread_cap(args.threads))
    _emit(csv_text(SWEEP_COLUMNS, rows), args.out or cfg.output.rates or None)
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = _config(args)
    ch = cfg.channel.at_distance(args.distance) if args.distance is not None else cfg.channel
    l = parse_interval(args.l) if args.l else cfg.protocol.l
    found = optimize_intensity(args.scheme, l, ch)
    out = {"scheme": args.scheme, "l": l, "distance_km": ch.total_distance_km, "mu": found[0], "rate": found[1]}
    if args.scheme == "sns":
        out["p_z0"] = found[2]
    if not math.isnan(found[0]):
        kw = {"p_z0": found[2]} if args.scheme == "sns" else {}
        br = rate_at(args.scheme, found[0], l, ch, **kw)
        out.update({k: getattr(br, k) for k in ("p", "r_p", "r_s", "q11", "e11x", "ez")})
    _emit(dump_json(out), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    ch = cfg.channel.at_distance(args.distance) if args.distance is not None else cfg.channel
    protocol = cfg.protocol
    if args.rounds is not None:
        protocol = replace(protocol, N=args.rounds)
    run = run_protocol(protocol, ch, rule=args.rule, threads=thread_cap(args.threads))
    buf = io.StringIO()
    buf.write(f"# schema_version: {SCHEMA_VERSION}\n")
    run.table.write_csv(buf)
    _emit(buf.getvalue(), args.out or cfg.output.tally or None)
    log_path = args.log or cfg.output.log
    if log_path:
        with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# schema_version: {SCHEMA_VERSION}\n")
            run.log.write_csv(fh)
    if args.summary:
        stats = run.signal_stats()
        stats.update({"rounds": protocol.N, "click_fraction": run.click_fraction})
        sys.stderr.write(dump_json(stats))
    return EXIT_OK


def _read_clicks(text: str) -> list[int]:
    bits = []
    for ch in text:
        if ch in "01":
            bits.append(int(ch))
        elif ch.isspace() or ch == ",":
            continue
        else:
            raise ValueError(f"click record may only contain 0 and 1, found {ch!r}")
    return bits


def cmd_pair(args) -> int:
    text = open(args.input, encoding="utf-8").read() if args.input and args.input != "-" else sys.stdin.read()
    pairs = pair_adjacent(_read_clicks(text), parse_interval(args.l))
    sys.stdout.write("".join(f"{i + 1},{j + 1}\n" for i, j in pairs))
    return EXIT_OK


def cmd_decoy(args) -> int:
    cfg = _config(args)
    p = cfg.protocol
    nu = args.nu if args.nu is not None else p.nu
    mu = args.mu if args.mu is not None else p.mu
    source = SourceModel(nu, mu, p.s_0, p.s_nu, p.s_mu)
    with open(args.tally, encoding="utf-8") as fh:
        table = TallyTable.read_csv(fh, nu, mu)
    mode = args.mode or cfg.decoy.mode
    eps = args.eps if args.eps is not None else cfg.decoy.eps
    bounds = estimate_bounds(table, source, mode, eps)
    key = finite_key_length(bounds.M_mumu, bounds.E_mumu, bounds, cfg.channel.error_correction_f)
    out = bounds.as_dict()
    out["key_length"] = key
    _emit(dump_json(out), args.out or cfg.output.report or None)
    return EXIT_OK


def cmd_verify_fock(args) -> int:
    mus = [float(v) for v in args.mu.split(",")]
    Ds = [int(v) for v in args.D.split(",")]
    reports = []
    for mu in mus:
        for D in Ds:
            single = verify_single_mode_decomposition(mu, D, args.n_trunc)
            entry = {"mu": mu, "D": D, "single_mode": single.as_dict(), "poisson_tv": poisson_distance(mu, D)}
            if not args.single_only:
                entry["two_mode"] = verify_two_mode_decomposition(mu, D, args.two_mode_n_trunc).as_dict()
            reports.append(entry)
    worst = max(
        max(r["single_mode"]["max_deviation"], r.get("two_mode", {}).get("max_deviation", 0.0)) for r in reports)
    _emit(dump_json({"cases": reports, "max_deviation": worst}), args.out)
    return EXIT_OK


def cmd_phase_drift(args) -> int:
    cfg = _config(args)
    d = cfg.drift
    model = DriftModel(d.slope, d.omega0, d.slow_noise_std, d.rep_rate, d.duration)
    seed = cfg.protocol.seed
    record = simulate_reference_clicks(model, d.intensity, d.dark_count_prob, seed=seed)
    if d.estimate:
        fit = estimate_drift(record)
        predictor = DriftModel(fit.slope, fit.omega0 + 2 * math.pi * d.misestimate_hz, 0.0, d.rep_rate, d.duration)
    else:
        predictor = DriftModel(d.slope, d.omega0 + 2 * math.pi * d.misestimate_hz, 0.0, d.rep_rate, d.duration)
    rows = error_vs_interval(record, predictor, default_bins(d.l_max, d.bins), 2 * math.pi / d.slice_divisions)
    table = [{"l_bin_lo": r.l_bin_lo, "l_bin_hi": r.l_bin_hi, "pairs": r.pairs, "errors": r.errors,
              "rate": r.rate} for r in rows]
    _emit(csv_text(("l_bin_lo", "l_bin_hi", "pairs", "errors", "rate"), table), args.out or cfg.output.drift or None)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpqkd", description="Mode-pairing QKD laboratory.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=False):
        p.add_argument("--config", help="INI-style run configuration")
        if seed:
            p.add_argument("--seed", type=int, help="override the configured seed")

    p = sub.add_parser("sweep", help="analytic key rates over distance")
    common(p)
    p.add_argument("--out", help="output CSV (default stdout)")
    p.add_argument("--schemes", help="comma list, e.g. mp,mdi")
    p.add_argument("--distances", help="comma list or start:stop:step in km")
    p.add_argument("--l", help="comma list of pairing intervals (inf allowed)")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("optimize", help="optimal intensity for one scheme and distance")
    common(p)
    p.add_argument("--scheme", default="mp", choices=SCHEMES)
    p.add_argument("--distance", type=float)
    p.add_argument("--l", help="pairing interval (mp only)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("simulate", help="Monte Carlo run; writes the decoy tally")
    common(p, seed=True)
    p.add_argument("--distance", type=float)
    p.add_argument("--rounds", type=int)
    p.add_argument("--rule", choices=("box", "table"), default="box")
    p.add_argument("--out", help="tally CSV (default stdout)")
    p.add_argument("--log", help="per-round CSV dump")
    p.add_argument("--summary", action="store_true", help="print signal statistics to stderr")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pair", help="pair a 0/1 click record (1-based output)")
    p.add_argument("--l", default="inf")
    p.add_argument("--input", help="file with the click record (default stdin)")
    p.set_defaults(func=cmd_pair)

    p = sub.add_parser("decoy", help="decoy-state bounds from a tally CSV")
    common(p)
    p.add_argument("--tally", required=True)
    p.add_argument("--mode", choices=("asymptotic", "finite"))
    p.add_argument("--eps", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_decoy)

    p = sub.add_parser("verify-fock", help="check the phase-randomisation identities")
    p.add_argument("--mu", default="0.1,0.5,1")
    p.add_argument("--D", default="4,8,16")
    p.add_argument("--n-trunc", type=int, default=60)
    p.add_argument("--two-mode-n-trunc", type=int, default=40)
    p.add_argument("--single-only", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_fock)

    p = sub.add_parser("phase-drift", help="error rate against pairing length under laser drift")
    common(p, seed=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_phase_drift)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (EstimationError, EstimationUnavailable, LPError) as err:
        sys.stderr.write(f"estimation failed: {err}\n")
        return EXIT_ESTIMATION
    except (ConfigError, TruncationError, ValueError, OSError) as err:
        sys.stderr.write(f"error: {err}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
