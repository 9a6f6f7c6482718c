"""Command-line surface: synth, cp-eval, train, eval, ablate, gradcheck, anova.

Every command accepts ``--config <json>`` whose sections ("model",
"train", "windowing", "sim") override the corresponding dataclass
defaults; explicit flags override the file. Exit code is 0 only when the
run completes and the internal consistency checks pass.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .ablate import GridCell, default_grid, grid_table, run_grid
from .autodiff import primitive_grad_checks
from .cp import DEFAULT_GAMMA, failure_risk_vector, risk_trace
from .dataset import build_frame_arrays
from .errors import PipelineError
from .metrics import confusion_csv, format_table
from .model import (
    ModelConfig,
    TrustClassifier,
    full_model_grad_check,
    load_checkpoint,
    save_checkpoint,
)
from .session import find_session_dirs, load_session
from .stats import one_way_anova
from .synth import SimConfig, generate_dataset_dirs
from .train import TrainConfig, evaluate, train
from .windows import WindowingConfig

logger = logging.getLogger(__name__)

PRIMITIVE_TOL = 1e-6
MODEL_TOL = 1e-4


def _load_config(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _section(cfg: dict, name: str, cls):
    return cls(**cfg.get(name, {}))


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    sim = _section(cfg, "sim", SimConfig)
    diffs = ("LD", "MD", "HD")[: args.tasks_per_subject]
    paths = generate_dataset_dirs(
        args.subjects, args.seed, Path(args.out), difficulties=diffs, cfg=sim
    )
    for p in paths:
        print(p)
    return 0


def cmd_cp_eval(args) -> int:
    session = load_session(args.session)
    if args.trace:
        print("step  skew      risk")
        for step, skew, risk in risk_trace(session.placements, gamma=args.gamma):
            print(f"{step:4d}  {skew:8.5f}  {risk:8.5f}")
    vec = failure_risk_vector(
        session.placements,
        upto_ms=args.at_ms,
        gamma=args.gamma,
    )
    print(" ".join(f"{v:.6f}" for v in vec.f))
    return 0


def _load_arrays(data_dir, cfg: dict, stride: int):
    dirs = find_session_dirs(data_dir)
    if not dirs:
        raise PipelineError(f"no session directories under {data_dir}")
    sessions = [load_session(d) for d in dirs]
    wcfg = _section(cfg, "windowing", WindowingConfig)
    return build_frame_arrays(sessions, cfg=wcfg, stride=stride)


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    model_cfg = _section(cfg, "model", ModelConfig)
    train_cfg = _section(cfg, "train", TrainConfig)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    arrays = _load_arrays(args.data, cfg, train_cfg.frame_stride)

    result = train(arrays, model_cfg, train_cfg)
    out = Path(args.out)
    save_checkpoint(out, result.model)
    _write_json(
        out.with_suffix(out.suffix + ".json"),
        {
            "model": result.model.cfg.to_dict(),
            "train": train_cfg.to_dict(),
            "history": {
                "train_loss": result.train_loss,
                "test_accuracy": result.test_accuracy,
            },
        },
    )
    from .dataset import apply_signal_mask

    masked = apply_signal_mask(arrays, train_cfg.signal_mask)
    report = evaluate(result.model, masked.subset(result.test_idx))
    print(
        format_table(
            [(e, f"{l:.4f}", f"{a:.4f}") for e, (l, a) in
             enumerate(zip(result.train_loss, result.test_accuracy))],
            ["epoch", "train loss", "test acc"],
        )
    )
    print(json.dumps(report.to_dict(), indent=2))
    print(f"checkpoint written to {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    sidecar = Path(args.checkpoint + ".json")
    if sidecar.exists() and "model" not in cfg:
        cfg["model"] = json.loads(sidecar.read_text())["model"]
    model_cfg = _section(cfg, "model", ModelConfig)
    train_cfg = _section(cfg, "train", TrainConfig)
    arrays = _load_arrays(args.data, cfg, train_cfg.frame_stride)

    model = TrustClassifier(model_cfg, dtype=np.float32)
    model.load_state(load_checkpoint(args.checkpoint))
    from .dataset import apply_signal_mask

    report = evaluate(model, apply_signal_mask(arrays, train_cfg.signal_mask))
    print(json.dumps(report.to_dict(), indent=2))
    if args.out_dir:
        out = Path(args.out_dir)
        _write_json(out / "metrics.json", report.to_dict())
        (out / "confusion.csv").write_text(confusion_csv(report))
        print(f"wrote {out}/metrics.json and {out}/confusion.csv")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    model_cfg = _section(cfg, "model", ModelConfig)
    train_cfg = _section(cfg, "train", TrainConfig)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    arrays = _load_arrays(args.data, cfg, train_cfg.frame_stride)

    if "grid" in cfg:
        grid = [GridCell(tuple(c["signal_mask"]), c["cp_guidance"],
                         c.get("n_classes", 3), c.get("name", "")) for c in cfg["grid"]]
    else:
        grid = default_grid()
    results = run_grid(arrays, grid, model_cfg, train_cfg, pooled=args.pooled)
    print(grid_table(results))
    if args.out_dir:
        out = Path(args.out_dir)
        _write_json(out / "ablation.json", {"cells": [r.summary() for r in results]})
        print(f"wrote {out}/ablation.json")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _load_config(args.config)
    model_cfg = _section(cfg, "model", ModelConfig)
    gc = cfg.get("gradcheck", {})
    samples = int(gc.get("samples_per_array", args.samples))
    batch = int(gc.get("batch_size", args.batch))

    prim = primitive_grad_checks(seed=args.seed)
    rows = [(name, f"{err:.3e}", "ok" if err <= PRIMITIVE_TOL else "FAIL")
            for name, err in sorted(prim.items())]
    print(format_table(rows, ["primitive", "max rel err", "status"]))

    model_err = full_model_grad_check(
        model_cfg, batch_size=batch, seed=args.seed, samples_per_array=samples
    )
    ok = model_err <= MODEL_TOL
    print(f"full model: max rel err {model_err:.3e} "
          f"({'ok' if ok else 'FAIL'}, tolerance {MODEL_TOL:g})")
    if any(err > PRIMITIVE_TOL for err in prim.values()) or not ok:
        return 2
    return 0


def cmd_anova(args) -> int:
    if args.groups_json:
        groups = json.loads(Path(args.groups_json).read_text())
    else:
        groups = [[float(v) for v in g.split(",")] for g in args.groups]
    f_stat, p = one_way_anova(groups)
    print(json.dumps({"F": f_stat, "p": p}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pptp",
        description="Trust-level classification pipeline on block-stacking sessions.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic session directories")
    p.add_argument("--subjects", type=int, default=5)
    p.add_argument("--tasks-per-subject", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("cp-eval", help="print the failure-risk vector of a session")
    p.add_argument("--session", required=True)
    p.add_argument("--at-ms", type=int, default=None)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--trace", action="store_true")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_cp_eval)

    p = sub.add_parser("train", help="train a classifier on session directories")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on session directories")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run the signal/guidance experiment grid")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--pooled", action="store_true")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference checks of the gradients")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("anova", help="one-way ANOVA over groups of values")
    p.add_argument("--groups-json", help="JSON file holding a list of lists")
    p.add_argument("groups", nargs="*", help="comma-separated value lists")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_anova)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
