"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 runtime failure, 3 a
``--check`` threshold was violated.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
import time
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import ExperimentConfig, load_config, parse_config, serialize_config
from .errors import ConfigurationError, NumericalFailure
from .perf import tune_allocator
from .pipeline import RC_VARIANTS, CellResult, run_detector, run_montecarlo, simulate_subframe
from .toylab import METHODS_A, METHODS_B, ToyConfig, toy_experiment_a, toy_experiment_b

__all__ = ["main", "emit_csv", "PRESETS", "CSV_COLUMNS"]

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

CSV_COLUMNS = ("detector", "ebno_db", "n_subframes", "bits", "bit_errors", "ber", "symbols",
               "symbol_errors", "ser", "excluded_subframes", "seconds")

_DESK = """
[scenario]
n_sc = 64
n_cp = 16
mod_order = 64
ebno_db = 21
n_subframes = 50
[reservoir]
alpha = 0.995
[structnet]
lr_clf = 0.003
lr_pe = 0.003
[attention]
optimizer = gd
lr = 0.01
"""

PRESETS = {
    "sweep": """
[scenario]
ebno_db = 0, 6, 12, 18, 24
n_subframes = 10
[detector]
variants = RcAttStructNetDf, Lmmse{PilotOnly}, SphereDecoder{Interpolated}
""",
    "ablate": _DESK + """
[detector]
variants = RcStruct, RcStructDf, RcStructNetDf, RcAttStructNetDf
""",
    "pa-sweep": _DESK.replace("n_subframes = 50", "n_subframes = 30").replace("mod_order = 64", "mod_order = 16") + """
[pa]
enabled = true
[detector]
variants = SphereDecoder{Interpolated}, RcAttStructNetDf
""",
    "scattered": """
[scenario]
n_sc = 64
n_cp = 16
n_total = 14
pilot_pattern = scattered
pilot_mode = orthogonal
ebno_db = 21
n_subframes = 10
[detector]
variants = RcStructNetDf, SphereDecoder{Interpolated}
""",
    "bench": """
[scenario]
n_sc = 64
n_cp = 16
ebno_db = 21
n_subframes = 3
[detector]
variants = RcStruct, RcStructDf, RcStructNetDf, RcAttStructNetDf, Lmmse{PilotOnly}, SphereDecoder{Interpolated}
""",
}
PA_IBO_DB = (9.0, 7.0, 5.0, 3.0)


def _fmt_num(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def _open_new(path: Path, force: bool):
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path.open("w", encoding="utf-8", newline="\n")


def emit_csv(cells: Iterable[CellResult], path, metadata: Sequence[str] = (), timing: bool = False,
             force: bool = False) -> Path:
    """Write one row per (detector, Eb/No) cell.

    ``seconds`` is wall-clock and therefore nondeterministic; it is written
    as ``nan`` unless ``timing`` is set, so repeated runs give identical bytes.
    """
    path = Path(path)
    with _open_new(path, force) as fh:
        for line in metadata:
            fh.write(f"# {line}\n" if line else "#\n")
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for c in cells:
            row = [c.detector, _fmt_num(c.ebno_db), c.n_subframes, c.bits, c.bit_errors,
                   c.bit_errors / c.bits if c.bits else float("nan"), c.symbols, c.symbol_errors,
                   c.symbol_errors / c.symbols if c.symbols else float("nan"), c.excluded_subframes,
                   c.seconds if timing else float("nan")]
            fh.write(",".join(r if isinstance(r, str) else _fmt_num(r) for r in row) + "\n")
    return path


def _write_rows(path: Path, header: Sequence[str], rows, metadata, force):
    with _open_new(path, force) as fh:
        for line in metadata:
            fh.write(f"# {line}\n")
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(v if isinstance(v, str) else _fmt_num(v) for v in r) + "\n")


# ----- argument handling ----------------------------------------------------

def _resolve_seed(arg: Optional[int]) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("NEURORX_SEED")
    if env is None or env.strip() == "":
        return 0
    try:
        v = int(env)
    except ValueError:
        raise ConfigurationError(f"NEURORX_SEED={env!r} is not an integer") from None
    if v < 0:
        raise ConfigurationError("NEURORX_SEED must be non-negative")
    return v


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _float_list(text: str):
    return tuple(float(v) for v in text.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config file (defaults to the preset)")
    common.add_argument("--seed", type=_u64, help="master seed (falls back to $NEURORX_SEED, then 0)")
    common.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    common.add_argument("--parallelism", type=int, default=1, help="worker processes")
    common.add_argument("--format", choices=("csv",), default="csv")
    common.add_argument("--check", action="store_true", help="exit 3 if the expected ordering fails")
    common.add_argument("--force", action="store_true", help="overwrite existing output files")
    common.add_argument("--timing", action="store_true", help="record wall-clock seconds in the CSV")
    common.add_argument("--subframes", type=int, help="override n_subframes")
    common.add_argument("--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="neurorx", description="Reservoir + StructNet MIMO-OFDM receivers.")
    sub = p.add_subparsers(dest="command", required=True)
    ta = sub.add_parser("toy-a", parents=[common], help="toy SER vs Eb/No (GT / LMMSE / StructNet)")
    ta.add_argument("--ebno", type=_float_list, default=(3.0, 5.0, 7.0, 9.0))
    ta.add_argument("--channels", type=int, default=100)
    tb = sub.add_parser("toy-b", parents=[common], help="toy SER vs PAM label corruption")
    tb.add_argument("--fractions", type=_float_list, default=(0.0, 0.3, 0.5, 0.7))
    tb.add_argument("--seeds", type=int, default=20)
    tb.add_argument("--ebno-db", type=float, default=5.0)
    sub.add_parser("sweep", parents=[common], help="Eb/No x detector grid")
    sub.add_parser("ablate", parents=[common], help="four RC receiver variants")
    pa = sub.add_parser("pa-sweep", parents=[common], help="BER against PA input back-off")
    pa.add_argument("--ibo", type=_float_list, default=PA_IBO_DB)
    sub.add_parser("scattered", parents=[common], help="scattered orthogonal pilot pattern")
    sub.add_parser("bench", parents=[common], help="per-stage wall-clock table")
    return p


def _experiment(args) -> ExperimentConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        cfg = parse_config(PRESETS.get(args.command, ""))
    if args.subframes is not None:
        if args.subframes < 1:
            raise ConfigurationError("--subframes must be >= 1")
        cfg = dataclasses.replace(cfg, n_subframes=args.subframes)
    return cfg


def _metadata(command: str, seed: int, cfg: Optional[ExperimentConfig] = None, extra=()):
    lines = [f"neurorx {command}", f"seed = {seed}", *extra]
    if cfg is not None:
        lines += ["config:"] + [ln for ln in serialize_config(cfg).splitlines() if ln]
    return lines


def _progress(args, total):
    if args.quiet:
        return None
    state = {"n": 0}

    def cb(*_):
        state["n"] += 1
        print(f"\r{state['n']}/{total}", end="", file=sys.stderr, flush=True)
        if state["n"] == total:
            print(file=sys.stderr)
    return cb


def _mc(args, cfg: ExperimentConfig, seed: int, pa=None):
    total = len(cfg.ebno_db) * cfg.n_subframes
    return run_montecarlo(cfg.detector_configs(), cfg.spec, cfg.channel, cfg.ebno_db, cfg.n_subframes,
                          seed, pa=pa if pa is not None else cfg.pa, parallelism=args.parallelism,
                          progress=_progress(args, total))


def _report(msg, args):
    if not args.quiet:
        print(msg)


# ----- subcommands ----------------------------------------------------------

def _cmd_toy_a(args, seed):
    tab = toy_experiment_a(args.ebno, range(seed, seed + args.channels), ToyConfig())
    rows = list(tab.rows())
    _write_rows(args.out / "toy_a.csv", ("method", "ebno_db", "n_channels", "median_ser", "mean_ser"),
                rows, _metadata("toy-a", seed, extra=[f"toy = {ToyConfig()}"]), args.force)
    ok = True
    for e in args.ebno:
        s, l = tab.median("StructNet", e), tab.median("ADNN-LMMSE", e)
        good = s <= l
        ok &= good
        _report(f"{e:5.1f} dB  StructNet {s:.5f}  ADNN-LMMSE {l:.5f}  ADNN-GT "
                f"{tab.median('ADNN-GT', e):.5f}  {'ok' if good else 'VIOLATION'}", args)
    if 5.0 in args.ebno:
        good = tab.median("StructNet", 5.0) <= 1.5 * tab.median("ADNN-GT", 5.0)
        ok &= good
        _report(f"StructNet <= 1.5 x ADNN-GT at 5 dB: {'ok' if good else 'VIOLATION'}", args)
    return ok


def _cmd_toy_b(args, seed):
    tab = toy_experiment_b(args.fractions, range(seed, seed + args.seeds), args.ebno_db, ToyConfig())
    rows = list(tab.rows())
    audit = {f: max(v) for f, v in tab.binary_corruption.items()}
    meta = _metadata("toy-b", seed, extra=[f"ebno_db = {args.ebno_db}", f"toy = {ToyConfig()}"]
                     + [f"max binary-label corruption at {f} = {v!r}" for f, v in sorted(audit.items())])
    _write_rows(args.out / "toy_b.csv", ("method", "corruption", "n_seeds", "median_ser", "mean_ser"),
                rows, meta, args.force)
    ok = all(v <= 0.5 for v in audit.values())
    _report(f"binary-label corruption <= 50%: {'ok' if ok else 'VIOLATION'}", args)
    if 0.7 in tab.binary_corruption:
        s, m = tab.median("StructNet", 0.7), tab.median("FourClassMlp", 0.7)
        good = s < m
        ok &= good
        _report(f"70% corruption: StructNet {s:.5f} FourClassMlp {m:.5f} {'ok' if good else 'VIOLATION'}", args)
    return ok


def _cmd_mc(args, seed, name):
    cfg = _experiment(args)
    table = _mc(args, cfg, seed)
    emit_csv(table.cells, args.out / f"{name}.csv", _metadata(name, seed, cfg), args.timing, args.force)
    for c in table.cells:
        _report(f"{c.detector:30s} {c.ebno_db:6.1f} dB  BER {c.ber:.5f}  median {c.median_ber():.5f}", args)
    for f in table.failures:
        print(f"excluded: {f}", file=sys.stderr)
    if table.failed:
        raise NumericalFailure("more than 1% of subframes were excluded", stage="montecarlo")
    ok = True
    if name == "ablate":
        order = [v for v in ("RcAttStructNetDf", "RcStructNetDf", "RcStructDf", "RcStruct") if v in cfg.detectors]
        for e in cfg.ebno_db:
            med = [table.cell(v, e).median_ber() for v in order]
            good = all(a <= b for a, b in zip(med, med[1:]))
            ok &= good
            _report(f"ordering at {e} dB: {'ok' if good else 'VIOLATION'}", args)
    return ok


def _cmd_pa(args, seed):
    cfg = _experiment(args)
    medians = {}
    for ibo in args.ibo:
        pa = dataclasses.replace(cfg.pa, enabled=True, ibo_db=ibo)
        c = dataclasses.replace(cfg, pa=pa)
        table = _mc(args, c, seed, pa)
        name = f"pa_ibo{_fmt_num(ibo).replace('.', 'p')}.csv"
        emit_csv(table.cells, args.out / name, _metadata("pa-sweep", seed, c), args.timing, args.force)
        if table.failed:
            raise NumericalFailure("more than 1% of subframes were excluded", stage="montecarlo")
        for cell in table.cells:
            medians.setdefault(cell.detector, []).append(cell.median_ber())
            _report(f"IBO {ibo:4.1f} dB {cell.detector:30s} median BER {cell.median_ber():.5f}", args)
    ok = True
    sd, rc = "SphereDecoder{Interpolated}", "RcAttStructNetDf"
    if sd in medians and rc in medians and len(args.ibo) > 1:
        order = np.argsort(args.ibo)[::-1]  # high back-off first
        s = [medians[sd][i] for i in order]
        r = [medians[rc][i] for i in order]
        mono = all(a < b for a, b in zip(s, s[1:]))
        ratio_sd = s[-1] / s[0] if s[0] > 0 else float("inf")
        ratio_rc = r[-1] / r[0] if r[0] > 0 else float("inf")
        ok = mono and ratio_rc < ratio_sd
        _report(f"SD monotone: {mono}  ratio SD {ratio_sd:.3f}  ratio RC {ratio_rc:.3f}", args)
    return ok


def _cmd_bench(args, seed):
    cfg = _experiment(args)
    acc = {}
    for e in cfg.ebno_db:
        for i in range(cfg.n_subframes):
            sim = simulate_subframe(cfg.spec, cfg.channel, e, seed, i, cfg.pa if cfg.pa.enabled else None)
            for dc in cfg.detector_configs():
                t0 = time.perf_counter()
                rep = run_detector(dc, sim, seed, i, n_taps=cfg.channel.n_taps)
                total = time.perf_counter() - t0
                for stage, secs in list(rep.timings.items()) + [("total", total)]:
                    acc.setdefault((dc.variant, stage), []).append(secs)
    rows = [(d, s, len(v), float(np.mean(v))) for (d, s), v in acc.items()]
    _write_rows(args.out / "bench.csv", ("detector", "stage", "n_subframes", "mean_seconds"), rows,
                _metadata("bench", seed, cfg), args.force)
    for r in rows:
        _report(f"{r[0]:30s} {r[1]:14s} {r[3] * 1e3:10.1f} ms", args)
    return True


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    tune_allocator()
    try:
        seed = _resolve_seed(args.seed)
        if args.parallelism < 1:
            raise ConfigurationError("--parallelism must be >= 1")
        if args.command in ("toy-a", "toy-b"):
            if args.config is not None:
                raise ConfigurationError("toy experiments do not take --config")
            ok = _cmd_toy_a(args, seed) if args.command == "toy-a" else _cmd_toy_b(args, seed)
        elif args.command == "pa-sweep":
            ok = _cmd_pa(args, seed)
        elif args.command == "bench":
            ok = _cmd_bench(args, seed)
        else:
            ok = _cmd_mc(args, seed, args.command)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, OSError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.check and not ok:
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
