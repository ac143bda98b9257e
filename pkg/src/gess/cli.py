"""``gess`` command line: extract, eval, gen-stability, verify.

Exit codes: 0 success, 1 verification or metric failure, 2 input error.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from gess import __version__, gtf

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2

log = logging.getLogger("gess")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="INI-style run configuration")
    p.add_argument("--out", help="output directory (overrides paths.out)")
    p.add_argument("--jobs", type=int, help="parallel workers (overrides run.jobs)")
    p.add_argument("--format", choices=("json", "csv"), default="json", help="report format echoed to stdout")
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="gess", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gess {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    p = sub.add_parser("extract", parents=[common], help="cue maps or images -> keypoint/descriptor files")
    p.add_argument("input_dir")

    p = sub.add_parser("eval", parents=[common], help="homography matching evaluation")
    p.add_argument("dataset_root")
    p.add_argument("features_dir")

    p = sub.add_parser("gen-stability", parents=[common], help="depth GTF -> reliability GTF")
    p.add_argument("depth_file")

    p = sub.add_parser("verify", parents=[common], help="run the oracle and gradient self-checks")
    p.add_argument("--seed", type=int, help="overrides run.seed")
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    return parser


def _load_config(args):
    from gess.config import load

    cfg = load(args.config)
    if args.out:
        cfg.paths.out = args.out
    if args.jobs:
        cfg.run.jobs = args.jobs
    return cfg.validate()


def cmd_extract(args, cfg):
    from gess.pipeline import extract_dir

    written = extract_dir(args.input_dir, cfg, cfg.paths.out, jobs=cfg.run.jobs)
    for path, count in written:
        print(f"{path}: {count} keypoints")
    return EXIT_OK


def cmd_eval(args, cfg):
    from gess import evalkit

    pairs, warnings = evalkit.load_sequences(args.dataset_root, args.features_dir)
    metadata = {"dataset": str(Path(args.dataset_root)), "configHash": cfg.digest(), "toolVersion": __version__}
    report = evalkit.evaluate(pairs, mutual=cfg.eval.matcher == "mutual", thresholds=cfg.eval.thresholds,
                              jobs=cfg.run.jobs, metadata=metadata, warnings=warnings)
    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_bytes(evalkit.emit_report(report, "json"))
    (out / "report.csv").write_bytes(evalkit.emit_report(report, "csv"))
    (out / "plot.csv").write_bytes(evalkit.emit_plot_data(report))
    sys.stdout.write(evalkit.emit_report(report, args.format).decode())
    if not report.pairs:
        print("no pairs evaluated", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_gen_stability(args, cfg):
    from gess.depth_stability import depth_to_reliability

    src = Path(args.depth_file)
    depth = gtf.read(src)
    if depth.ndim != 2:
        raise ValueError(f"{src}: depth map must be 2-D, got shape {depth.shape}")
    rel = depth_to_reliability(depth, cfg.stability.constants())
    stem = src.name.split(".")[0]
    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    dest = out / f"{stem}.rel.gtf"
    gtf.write(rel.astype(np.float32), dest)
    print(f"{dest}: min={rel.min():.6f} mean={rel.mean():.6f} max={rel.max():.6f}")
    return EXIT_OK


def cmd_verify(args, cfg):
    from gess import kernels
    from gess.verify import run_all

    seed = cfg.run.seed if args.seed is None else args.seed
    print(f"backend: {kernels.BACKEND}")
    results = run_all(seed=seed, inject_fault=args.inject_fault)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_FAIL
    print(f"all {len(results)} checks passed")
    return EXIT_OK


COMMANDS = {"extract": cmd_extract, "eval": cmd_eval, "gen-stability": cmd_gen_stability, "verify": cmd_verify}


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](args, cfg)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
