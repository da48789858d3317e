"""``loft`` command line: covariance export, fitting, analysis, evaluation,
absorption, probe training and synthetic data.

Exit codes: 0 success, 1 IO or format error, 2 usage error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass
from typing import Optional

from . import __version__
from .analysis import DEFAULT_TOP_K, reconstruction_errors, select_dim, spectrum
from .dataio import (REGIMES, FeatureMatrix, SyntheticScenario, read_fcov, read_features, read_head,
                     read_projector, synth, write_fcov, write_fmat, write_head, write_projector)
from .errors import LoftError, NumericalFailure
from .evaluator import LinearHead, MetricsTable, absorb, evaluate, probe_train
from .matcore import covariance, pool_covariances
from .objective import ObjectiveInputs, eval_objective
from .optimizer import FitAborted, OptimizerConfig, fit

log = logging.getLogger("loft")

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
REPORT_SCHEMA = 1

HEAD_FORMAT = """\
head file format: an FMAT block (magic 'FMAT1\\n', u32 rows=C, u32 cols=d,
u8 flags=0, C*d little-endian f32 weights, row-major) followed by C
little-endian f32 biases.  logits = W z + b."""


class UsageError(Exception):
    pass


class _StoreOnce(argparse.Action):
    """``store`` that rejects a flag given twice."""

    def __call__(self, parser, namespace, values, option_string=None):
        seen = namespace.__dict__.setdefault("_seen_flags", set())
        if self.dest in seen:
            parser.error(f"duplicate flag {option_string}")
        seen.add(self.dest)
        setattr(namespace, self.dest, values)


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("formatter_class", argparse.RawDescriptionHelpFormatter)
        super().__init__(*args, **kwargs)
        self.register("action", None, _StoreOnce)
        self.register("action", "store", _StoreOnce)


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _int_list(text: str):
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunReport:
    config: dict
    inputs: dict
    trace: dict
    objective: dict
    d: int
    s: int
    param_count: int
    seconds: float
    metrics: Optional[dict] = None
    schema: int = REPORT_SCHEMA

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _write_text(path, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def _labelled(path, label_column) -> FeatureMatrix:
    fm = read_features(path, label_column)
    if fm.labels is None:
        raise UsageError(f"{path}: labels are required here")
    return fm


# -- commands ---------------------------------------------------------------


def cmd_cov(args) -> int:
    if (args.features is None) == (not args.merge):
        raise UsageError("give exactly one of --features or --merge")
    if args.features is not None:
        fm = read_features(args.features, args.label_column)
        cov = covariance(fm.values, centering=args.center)
    else:
        cov = pool_covariances([read_fcov(p, args.center) for p in args.merge], args.weighting)
    write_fcov(args.out, cov)
    print(f"n={cov.count} d={cov.dim} trace={cov.trace:.10e}")
    return EXIT_OK


def cmd_fit(args) -> int:
    start = time.perf_counter()
    cov_rm = read_fcov(args.cov_rm, args.center)
    cov_fg = read_fcov(args.cov_fg, args.center)
    cov_fgp = read_fcov(args.cov_fgp, args.center) if args.cov_fgp else None
    if args.dim is not None and args.variance_fraction is not None:
        print("warning: both --dim and --variance-fraction given; using --dim", file=sys.stderr)
    if args.dim is not None:
        s = args.dim
        if not 1 <= s <= cov_rm.dim:
            raise UsageError(f"--dim must be in [1, {cov_rm.dim}], got {s}")
    else:
        fraction = 0.95 if args.variance_fraction is None else args.variance_fraction
        if not 0 < fraction <= 1:
            raise UsageError("--variance-fraction must be in (0, 1]")
        s = select_dim(cov_rm, fraction)
    inputs = ObjectiveInputs(cov_fg, cov_rm, cov_fgp,
                             use_fg=args.ablate != "fg", use_rm=args.ablate != "rm")
    config = OptimizerConfig(learning_rate=args.lr, weight_decay=args.wd, steps=args.steps,
                             schedule=args.schedule, seed=args.seed, init=args.init)
    log.info("fitting d=%d s=%d steps=%d", inputs.dim, s, config.steps)
    try:
        u, trace = fit(inputs, config, s=s)
    except FitAborted as exc:
        if args.log:
            _write_text(args.log, "\n".join(exc.trace.lines()) + "\n")
        raise
    write_projector(args.out, u)
    if args.log:
        _write_text(args.log, "\n".join(trace.lines()) + "\n")
    # report the objective of the stored (f32-quantised) projector
    final = eval_objective(read_projector(args.out), inputs)
    paths = {"cov_rm": args.cov_rm, "cov_fg": args.cov_fg, "cov_fgp": args.cov_fgp}
    report = RunReport(
        config={**config.as_dict(), "dim": s, "ablate": args.ablate, "center": args.center,
                "variance_fraction": args.variance_fraction},
        inputs={k: {"path": str(p), "sha256": sha256_file(p)} for k, p in paths.items() if p},
        trace=trace.summary(),
        objective=final.as_dict(),
        d=inputs.dim, s=s, param_count=inputs.dim * s,
        seconds=time.perf_counter() - start,
    )
    _write_text(args.report or f"{args.out}.json", report.to_json())
    print(f"d={inputs.dim} s={s} J={final.J:.10e} best_step={trace.best_step} "
          f"seconds={report.seconds:.3f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    if args.cov is not None:
        if args.features or args.projector:
            raise UsageError("--cov excludes --features/--projector")
        rep = spectrum(read_fcov(args.cov, args.center), args.top_k)
        print(json.dumps(rep.as_dict(), indent=2) if args.json else rep.to_text())
        return EXIT_OK
    if not (args.features and args.projector):
        raise UsageError("give --cov, or both --features and --projector")
    fm = read_features(args.features, args.label_column)
    rep = reconstruction_errors(read_projector(args.projector), fm.values)
    if args.csv:
        _write_text(args.csv, rep.to_csv())
    print(json.dumps(rep.as_dict(), indent=2))
    return EXIT_OK


def cmd_eval(args) -> int:
    if (args.calib_member is None) != (args.calib_nonmember is None):
        raise UsageError("--calib-member and --calib-nonmember go together")
    if args.reference and args.calib_member is None:
        raise UsageError("--reference needs the calibration sets: the average gap includes MIA")
    head = LinearHead(*read_head(args.head))
    u = read_projector(args.projector) if args.projector else None
    splits = [_labelled(p, args.label_column)
              for p in (args.rm_train, args.fg_train, args.rm_test, args.fg_test)]
    member = nonmember = None
    if args.calib_member:
        member = read_features(args.calib_member, args.label_column)
        nonmember = read_features(args.calib_nonmember, args.label_column)
    reference = None
    if args.reference:
        with open(args.reference) as fh:
            reference = MetricsTable.from_dict(json.load(fh))
    table = evaluate(head, u, *splits, member=member, nonmember=nonmember, reference=reference)
    if args.out:
        _write_text(args.out, table.to_json() + "\n")
    print(table.to_text(reference))
    return EXIT_OK


def cmd_absorb(args) -> int:
    head = LinearHead(*read_head(args.head))
    merged = absorb(head, read_projector(args.projector))
    write_head(args.out, merged.weight, merged.bias)
    print(f"classes={merged.classes} d={merged.dim}")
    return EXIT_OK


def cmd_probe(args) -> int:
    fm = FeatureMatrix.concat([_labelled(p, args.label_column) for p in args.features])
    head = probe_train(fm.values, fm.labels, classes=args.classes, epochs=args.epochs, lr=args.lr)
    write_head(args.out, head.weight, head.bias)
    print(f"classes={head.classes} d={head.dim} n={fm.n}")
    return EXIT_OK


def cmd_synth(args) -> int:
    sc = SyntheticScenario(regime=args.regime, d=args.d, classes=args.classes,
                           per_class=args.per_class, forget=args.forget, seed=args.seed,
                           top_dim=args.top_dim, noise=args.noise, alignment=args.alignment,
                           mean_scale=args.mean_scale, split=args.split)
    rm, fg = synth(sc)
    write_fmat(args.out_rm, rm)
    write_fmat(args.out_fg, fg)
    print(f"rm={rm.n}x{rm.d} fg={fg.n}x{fg.d}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="loft", description="Subspace unlearning toolkit.", epilog=HEAD_FORMAT)
    p.add_argument("--version", action="version", version=f"loft {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("cov", help="export a covariance summary (FCOV)")
    c.add_argument("--features", help="FMAT or CSV feature file")
    c.add_argument("--merge", nargs="+", action="store", metavar="FCOV",
                   help="pool existing covariance files instead")
    c.add_argument("--weighting", choices=("count", "equal"), default="count")
    c.add_argument("--out", required=True)
    c.add_argument("--center", type=_on_off, default=True, metavar="on|off")
    c.add_argument("--label-column", help="CSV column holding labels (name or index)")
    c.set_defaults(func=cmd_cov)

    f = sub.add_parser("fit", help="optimise a projector")
    f.add_argument("--cov-rm", required=True)
    f.add_argument("--cov-fg", required=True)
    f.add_argument("--cov-fgp", help="pooled covariance of earlier rounds (continual mode)")
    f.add_argument("--dim", type=int)
    f.add_argument("--variance-fraction", type=float,
                   help="choose s by explained variance of the remaining split (default 0.95)")
    f.add_argument("--out", required=True, help="FPRJ projector path")
    f.add_argument("--report", help="JSON run report path (default OUT.json)")
    f.add_argument("--log", help="write the per-step trace here")
    f.add_argument("--steps", type=int, default=50)
    f.add_argument("--lr", type=float, default=1.0)
    f.add_argument("--wd", type=float, default=0.05)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--init", choices=("pca", "random"), default="pca")
    f.add_argument("--schedule", choices=("constant", "cosine"), default="constant")
    f.add_argument("--ablate", choices=("rm", "fg"), help="drop one term of the objective")
    f.add_argument("--center", type=_on_off, default=True, metavar="on|off",
                   help="centring mode the covariance files were made with")
    f.set_defaults(func=cmd_fit)

    a = sub.add_parser("analyze", help="spectrum or reconstruction report")
    a.add_argument("--cov")
    a.add_argument("--top-k", type=int, default=DEFAULT_TOP_K)
    a.add_argument("--json", action="store_true")
    a.add_argument("--features")
    a.add_argument("--projector")
    a.add_argument("--csv", help="per-sample reconstruction errors")
    a.add_argument("--center", type=_on_off, default=True, metavar="on|off")
    a.add_argument("--label-column")
    a.set_defaults(func=cmd_analyze)

    e = sub.add_parser("eval", help="accuracy / MIA table", epilog=HEAD_FORMAT)
    e.add_argument("--head", required=True)
    e.add_argument("--projector", help="omit to evaluate the unprojected head")
    for name in ("rm-train", "fg-train", "rm-test", "fg-test"):
        e.add_argument(f"--{name}", required=True)
    e.add_argument("--calib-member")
    e.add_argument("--calib-nonmember")
    e.add_argument("--reference", help="MetricsTable JSON to compute gaps against")
    e.add_argument("--out", help="write the MetricsTable as JSON")
    e.add_argument("--label-column")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("absorb", help="fold the projector into the head", epilog=HEAD_FORMAT)
    b.add_argument("--head", required=True)
    b.add_argument("--projector", required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_absorb)

    r = sub.add_parser("probe", help="train a linear head on labelled features", epilog=HEAD_FORMAT)
    r.add_argument("--features", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--classes", type=int)
    r.add_argument("--epochs", type=int, default=500)
    r.add_argument("--lr", type=float, default=0.1)
    r.add_argument("--label-column")
    r.set_defaults(func=cmd_probe)

    y = sub.add_parser("synth", help="generate a synthetic scenario")
    y.add_argument("--regime", choices=REGIMES, default="exact")
    y.add_argument("--d", type=int, default=32)
    y.add_argument("--classes", type=int, default=6)
    y.add_argument("--per-class", type=int, default=200)
    y.add_argument("--forget", type=_int_list, default=(0, 1), metavar="C1,C2,...")
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--split", choices=("train", "test"), default="train")
    y.add_argument("--top-dim", type=int, default=8)
    y.add_argument("--noise", type=float, default=0.1)
    y.add_argument("--alignment", type=float, default=0.8)
    y.add_argument("--mean-scale", type=float)
    y.add_argument("--out-rm", required=True)
    y.add_argument("--out-fg", required=True)
    y.set_defaults(func=cmd_synth)
    return p


def _thread_limit() -> int:
    raw = os.environ.get("LOFT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"LOFT_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"LOFT_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=_thread_limit()):
            return args.func(args)
    except UsageError as exc:
        print(f"loft {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"loft {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (LoftError, OSError) as exc:
        print(f"loft {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_IO

if __name__ == "__main__":
    sys.exit(main())
