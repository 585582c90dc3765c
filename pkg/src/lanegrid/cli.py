"""Command-line entry point: synth | build-graph | train | predict | eval | plot."""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .config import Config, load_config
from .decoders import DECODER_KINDS, NNGoalDecoder, make_prediction
from .errors import LaneGridError, MissingGT
from .evaluation import (
    aggregate_metrics,
    evaluate_dataset,
    read_prediction,
    report_records,
    scenario_metrics,
    write_prediction,
    write_report,
)
from .network import DualScaleNet, build_scene
from .params import load_checkpoint
from .plots import save_scene_svg
from .scenario import normalize_to_target, read_scenario, write_scenario
from .synth import TEMPLATES, SynthSpec, synth_scenario
from .training import train


def _split_files(path: str) -> list[str]:
    files = sorted(glob.glob(os.path.join(path, "*.json")))
    if not files:
        raise LaneGridError(f"no scenario files (*.json) under '{path}'")
    return files


def _load_split(path: str):
    return [normalize_to_target(read_scenario(f)) for f in _split_files(path)]


def _config_from_args(args) -> Config:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
    return cfg


def _config_for_checkpoint(args, meta: dict) -> Config:
    if getattr(args, "config", None) is not None:
        return load_config(args.config)
    if "config" in meta:
        from .config import config_from_dict

        return config_from_dict(meta["config"])
    return Config()


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _synth_one(payload) -> str:
    out_dir, i, seed, spec_kwargs = payload
    spec = SynthSpec(**spec_kwargs)
    s = synth_scenario(spec, seed=seed)
    path = os.path.join(out_dir, f"scenario_{i:04d}.json")
    write_scenario(s, path)
    return path


def cmd_synth(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    spec_kwargs = dict(
        template=args.template,
        n_agents=args.agents,
        n_obstacles=args.obstacles,
    )
    jobs = [(args.out, i, args.seed + i, spec_kwargs) for i in range(args.n)]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            paths = list(pool.map(_synth_one, jobs))
    else:
        paths = [_synth_one(j) for j in jobs]
    print(f"wrote {len(paths)} scenarios to {args.out}")
    return 0


def cmd_build_graph(args) -> int:
    cfg = _config_from_args(args)
    s = normalize_to_target(read_scenario(args.scenario))
    bundle = build_scene(s, cfg)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "da_graph.json"), "w", encoding="utf-8") as fh:
        json.dump(bundle.da.to_debug_dict(), fh, indent=1, sort_keys=True)
    with open(os.path.join(args.out, "ls_graph.json"), "w", encoding="utf-8") as fh:
        json.dump(bundle.ls.to_debug_dict(), fh, indent=1, sort_keys=True)
    inter = {
        name: getattr(bundle.edges, name).pairs().tolist()
        for name in ("da_to_ls", "ls_to_da", "agent_to_ls", "ls_to_agent", "da_to_agent")
    }
    with open(os.path.join(args.out, "interlayer.json"), "w", encoding="utf-8") as fh:
        json.dump(inter, fh, indent=1, sort_keys=True)
    print(
        f"da nodes={bundle.da.n_nodes} ls nodes={bundle.ls.n_nodes} "
        f"da_to_ls edges={bundle.edges.da_to_ls.n_edges}"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    train_files = _split_files(args.train_dir)
    holdout_files = _split_files(args.split) if args.split else []
    os.makedirs(args.out, exist_ok=True)
    manifest = {
        "tool_version": __version__,
        "seed": cfg.train.seed,
        "config": cfg.to_dict(),
        "train_files": train_files,
        "holdout_files": holdout_files,
        "checkpoint_last": os.path.join(args.out, "ckpt_last.bin"),
        "checkpoint_best": os.path.join(args.out, "ckpt_best.bin"),
    }
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)

    train_scen = [normalize_to_target(read_scenario(f)) for f in train_files]
    holdout_scen = [normalize_to_target(read_scenario(f)) for f in holdout_files]
    result = train(train_scen, holdout_scen, cfg, args.out, resume_from=args.resume)
    print(f"best holdout Brier-minFDE(K=6): {result.best_brier:.4f}")
    print(f"checkpoints: {result.checkpoint_last} , {result.checkpoint_best}")
    return 0


def cmd_predict(args) -> int:
    store, meta = load_checkpoint(args.checkpoint)
    cfg = _config_for_checkpoint(args, meta)
    net = DualScaleNet(store, cfg)
    decoder = NNGoalDecoder(store, cfg.net)
    s = normalize_to_target(read_scenario(args.scenario))
    bundle = build_scene(s, cfg)
    scene = net.forward(bundle)
    pred = make_prediction(net, decoder, bundle, scene, args.decoder, cfg)
    write_prediction(pred, args.out)
    print(f"wrote prediction ({args.decoder}) to {args.out}")
    return 0


_EVAL_STATE: dict = {}


def _eval_worker_init(checkpoint: str, config_json: str, decoder_kind: str) -> None:
    from .config import config_from_dict

    store, _ = load_checkpoint(checkpoint)
    cfg = config_from_dict(json.loads(config_json))
    _EVAL_STATE["cfg"] = cfg
    _EVAL_STATE["net"] = DualScaleNet(store, cfg)
    _EVAL_STATE["decoder"] = NNGoalDecoder(store, cfg.net)
    _EVAL_STATE["kind"] = decoder_kind


def _eval_worker(path: str) -> dict:
    cfg = _EVAL_STATE["cfg"]
    net = _EVAL_STATE["net"]
    s = normalize_to_target(read_scenario(path))
    target = s.target()
    if target.gt_future is None:
        raise MissingGT(f"{path}: target has no gt_future")
    bundle = build_scene(s, cfg)
    scene = net.forward(bundle)
    pred = make_prediction(net, _EVAL_STATE["decoder"], bundle, scene, _EVAL_STATE["kind"], cfg)
    return scenario_metrics(pred, target.gt_future)


def cmd_eval(args) -> int:
    store, meta = load_checkpoint(args.checkpoint)
    cfg = _config_for_checkpoint(args, meta)
    files = _split_files(args.split)
    if args.workers > 1:
        cfg_json = json.dumps(cfg.to_dict())
        with ProcessPoolExecutor(
            max_workers=args.workers,
            initializer=_eval_worker_init,
            initargs=(args.checkpoint, cfg_json, args.decoder),
        ) as pool:
            per = list(pool.map(_eval_worker, files))
        metrics = aggregate_metrics(per)
    else:
        scenarios = [normalize_to_target(read_scenario(f)) for f in files]
        net = DualScaleNet(store, cfg)
        decoder = NNGoalDecoder(store, cfg.net)
        metrics = evaluate_dataset(net, decoder, scenarios, cfg, args.decoder)
    records = report_records(metrics, split=args.split, decoder_kind=args.decoder,
                             n_scenarios=len(files))
    if args.out:
        write_report(records, args.out)
        print(f"wrote report to {args.out}")
    for rec in records:
        print(json.dumps(rec, sort_keys=True))
    return 0


def cmd_plot(args) -> int:
    s = normalize_to_target(read_scenario(args.scenario))
    pred = read_prediction(args.prediction) if args.prediction else None
    save_scene_svg(args.out, s, pred)
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanegrid",
        description="Dual-layer graph motion forecasting pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scenario files")
    p.add_argument("--template", choices=TEMPLATES, default="four-way")
    p.add_argument("--n", type=int, default=1, help="number of scenarios")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--agents", type=int, default=3)
    p.add_argument("--obstacles", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("build-graph", help="dump graph debug files for one scenario")
    p.add_argument("scenario")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_build_graph)

    p = sub.add_parser("train", help="train on a directory of scenarios")
    p.add_argument("train_dir")
    p.add_argument("--split", help="holdout scenario directory")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="predict one scenario from a checkpoint")
    p.add_argument("scenario")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--decoder", choices=DECODER_KINDS, default="nn")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--decoder", choices=DECODER_KINDS, default="nn")
    p.add_argument("--config")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("plot", help="render a scenario (and prediction) to SVG")
    p.add_argument("scenario")
    p.add_argument("--prediction")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except LaneGridError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
