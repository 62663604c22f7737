"""Command line: ``python -m lvquant <command> ...``.

Errors print ``error: <category>: <message>`` on one line to stderr and exit
with the code attached to the error class (2 for bad usage).
"""
from __future__ import annotations

import argparse
import logging
import sys
from contextlib import nullcontext
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, LVQuantError, MissingFileError

USAGE_EXIT = 2
GRADCHECK_FAIL_EXIT = 7


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: usage: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _phantom_overrides(path):
    """Read ``key = value`` lines naming PhantomParams fields or generation options."""
    from .data.phantom import PhantomParams

    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"{path}: params file not found")
    known = {f.name: f for f in fields(PhantomParams)}
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown phantom key {key!r}")
        try:
            if key == "center":
                x, y = (float(v) for v in raw.split(","))
                out[key] = (x, y)
            elif key in ("ed_frame_index", "es_frame_index", "texture_seed", "frames_per_cycle"):
                out[key] = int(raw)
            else:
                out[key] = float(raw)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: cannot parse {raw!r} for {key}") from None
    return out


def cmd_phantom_gen(args):
    from .data import generate_dataset, generate_phantom_sequence, write_dataset
    from .data.phantom import PhantomParams

    over = _phantom_overrides(args.params) if args.params else {}
    frames = over.pop("frames_per_cycle", args.frames)
    noise = over.pop("noise_sigma", args.noise)
    if over:
        # fixed geometry: every subject shares it and differs only in texture and noise
        rng = np.random.default_rng(args.seed)
        seqs = []
        for i in range(args.count):
            p = replace(PhantomParams(frames_per_cycle=frames, noise_sigma=noise), **over)
            if "texture_seed" not in over:
                p = replace(p, texture_seed=int(rng.integers(2**31)))
            seqs.append(generate_phantom_sequence(p, seed=int(rng.integers(2**31)), subject_id=f"s{i:03d}"))
    else:
        seqs = generate_dataset(args.count, seed=args.seed, frames_per_cycle=frames, noise_sigma=noise)
    out = write_dataset(seqs, args.out)
    print(f"wrote {len(seqs)} subjects x {frames} frames to {out}")
    return 0


def _train_config(args):
    from .training import TrainConfig, load_config

    cfg = load_config(args.config) if args.config else TrainConfig()
    return replace(cfg, seed=args.seed, precision=args.precision)


def cmd_train(args):
    from .checkpoint import save_checkpoint
    from .data import read_dataset
    from .training import dump_config, evaluate, run_experiment, train_two_step

    cfg = _train_config(args)
    data = read_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    if args.cv:
        from .metrics import render_report

        result = run_experiment(data, cfg, out_dir=out)
        text, csv = render_report([result.report])
        (out / "report.txt").write_text(text + "\n")
        (out / "report.csv").write_text(csv)
        print(text)
        return 0
    params, (log1, log2) = train_two_step(data, cfg)
    save_checkpoint(params, out / "model.lvqm")
    (out / "step1.csv").write_text(log1.csv())
    (out / "step2.csv").write_text(log2.csv())
    rep = evaluate(params, data, cfg.objective.label, cfg.roi_size)
    print(f"saved {out / 'model.lvqm'}; training-set RWT MAE {rep.average('rwt'):.2f} mm, "
          f"phase error {rep.phase_error_rate:.1f}%")
    return 0


def cmd_eval(args):
    from .checkpoint import load_checkpoint
    from .data import read_dataset
    from .metrics import render_report
    from .model import REDUCED_ARCH, ArchConfig
    from .training import evaluate

    arch = REDUCED_ARCH if args.arch == "reduced" else ArchConfig()
    params = load_checkpoint(args.checkpoint, expected_arch=arch)
    if args.precision == 64:
        params = params.astype(np.float64)
    data = read_dataset(args.data)
    text, csv = render_report([evaluate(params, data, args.label)])
    print(text)
    if args.csv:
        Path(args.csv).write_text(csv)
    return 0


def cmd_ablate(args):
    from .data import read_dataset
    from .metrics import render_report
    from .training import ablation_configs, run_ablation

    cfg = _train_config(args)
    data = read_dataset(args.data)
    out = Path(args.out)
    results = run_ablation(data, cfg, out_dir=out)
    text, csv = render_report([results[k].report for k in ablation_configs(cfg)])
    (out / "ablation.txt").write_text(text + "\n")
    (out / "ablation.csv").write_text(csv)
    print(text)
    return 0


def cmd_gradcheck(args):
    from .gradsuite import run_gradcheck

    report = run_gradcheck(seed=args.seed, tolerance=args.tolerance, max_entries=args.max_entries)
    print(report.to_text())
    return 0 if report.passed else GRADCHECK_FAIL_EXIT


def build_parser():
    p = _Parser(prog="lvquant", description="Multitask LV quantification on synthetic phantoms.")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", type=int, choices=(32, 64), default=32)
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("phantom-gen", help="write a synthetic phantom dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=60)
    g.add_argument("--params", help="key = value file of PhantomParams overrides")
    g.add_argument("--frames", type=int, default=20)
    g.add_argument("--noise", type=float, default=0.05)
    g.set_defaults(func=cmd_phantom_gen)

    t = sub.add_parser("train", help="two-step training (optionally cross-validated)")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--cv", action="store_true", help="k-fold cross-validation instead of one model")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--arch", choices=("default", "reduced"), default="default")
    e.add_argument("--label", default="model")
    e.add_argument("--csv")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="N/N, intra/N and intra/inter over shared folds")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--config")
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("gradcheck", help="finite-difference check on the reduced model")
    c.add_argument("--tolerance", type=float, default=1e-4)
    c.add_argument("--max-entries", type=int, default=None)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads is not None:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=args.threads)
    else:
        limiter = nullcontext()
    try:
        with limiter:
            return args.func(args)
    except LVQuantError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 3


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
