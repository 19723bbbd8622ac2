"""Command-line entry point: ``scenegraph3d <subcommand> [options]``.

Exit codes: 0 success, 2 validation error (bad config, dataset, graph,
checkpoint or arguments), 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence

import jsonschema

from . import metrics
from .config import ConfigError, dump_config, load_config
from .data import DatasetError, dataset_lines, iter_frames, read_dataset
from .datagen import SynthConfig, observe, split_records, synth_dataset
from .fusion import SceneGraphFuser
from .generator import SceneGraphVAE
from .geometry import Obb
from .graph import SceneGraph, SchemaError, dumps
from .nn.checkpoint import CheckpointError, atomic_write_text
from .pipeline import PipelineError, run_pipeline, write_outputs
from .predictor import SceneGraphPredictor
from .shapes import assemble, export_scene

log = logging.getLogger("scenegraph3d")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3
VALIDATION_ERRORS = (ConfigError, DatasetError, SchemaError, CheckpointError,
                     jsonschema.ValidationError, json.JSONDecodeError, FileNotFoundError,
                     KeyError, ValueError)

SGP_KEYS = ("model_dim", "image_proj_dim", "point_dim", "heads", "layers", "lr", "lr_min_ratio",
            "epochs", "batch_size", "seed")
VAE_KEYS = ("model_dim", "embed_dim", "latent_dim", "shape_dim", "yaw_bins", "gcn_layers",
            "lambda_recon", "lambda_kl", "lr", "lr_min_ratio", "epochs", "batch_size", "seed")


# -- helpers ---------------------------------------------------------------------------


def make_predictor(cfg: Dict) -> SceneGraphPredictor:
    kw = {k: cfg[f"sgp.{k}"] for k in SGP_KEYS}
    return SceneGraphPredictor(margin=cfg["graph.margin"], objects=list(cfg["synth.objects"]),
                               predicates=list(cfg["synth.predicates"]), **kw)


def make_generator(cfg: Dict) -> SceneGraphVAE:
    kw = {k: cfg[f"vae.{k}"] for k in VAE_KEYS}
    return SceneGraphVAE(objects=list(cfg["synth.objects"]),
                         predicates=list(cfg["synth.predicates"]), **kw)


def _read_text(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _emit(args, text: str, default_name: Optional[str] = None) -> None:
    """Write ``text`` to --out (atomically) or to stdout."""
    out = args.out or default_name
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _frames_lines(frames: List[dict]) -> str:
    return "".join(dumps({"t": f["t"], "entities": [e.to_dict() for e in f["entities"]]}) + "\n"
                   for f in frames)


def _layout_obbs(layout: dict) -> Dict[int, Obb]:
    return {int(nd["id"]): Obb.from_dict(nd["obb"]) for nd in layout["nodes"]}


# -- subcommands -----------------------------------------------------------------------


def cmd_config(args, cfg) -> int:
    sys.stdout.write(dump_config(cfg))
    return EXIT_OK


def cmd_synth(args, cfg) -> int:
    sc = SynthConfig.from_config(cfg)
    records = synth_dataset(sc)
    if args.split:
        train, val = split_records(records, sc)
        base = args.out or "dataset.jsonl"
        stem, ext = os.path.splitext(base)
        atomic_write_text(f"{stem}.train{ext}", dataset_lines(train))
        atomic_write_text(f"{stem}.val{ext}", dataset_lines(val))
    _emit(args, dataset_lines(records), "dataset.jsonl")
    if args.frames:
        if not 0 <= args.scene < len(records):
            raise ValueError(f"--scene {args.scene} out of range for {len(records)} scenes")
        frames = observe(records[args.scene], sc, cfg["synth.timesteps"], cfg["synth.visibility"],
                         cfg["synth.obs_jitter"], cfg["seed"])
        atomic_write_text(args.frames, _frames_lines(frames))
    log.info("wrote %d scenes", len(records))
    return EXIT_OK


def cmd_train_sgp(args, cfg) -> int:
    records = read_dataset(args.data)
    val = read_dataset(args.val) if args.val else None
    est = make_predictor(cfg)
    est.fit(records, validation=val, log_path=args.log, checkpoint_path=args.out or "sgp.ckpt",
            resume_from=args.resume)
    last = est.history_[-1] if est.history_ else {}
    log.info("trained predictor: %s", {k: last.get(k) for k in ("epoch", "loss")})
    return EXIT_OK


def cmd_train_gen(args, cfg) -> int:
    records = read_dataset(args.data)
    if args.limit:
        records = records[:args.limit]
    est = make_generator(cfg)
    est.fit(records, log_path=args.log, checkpoint_path=args.out or "gen.ckpt",
            resume_from=args.resume)
    return EXIT_OK


def cmd_predict(args, cfg) -> int:
    est = SceneGraphPredictor.load(args.sgp)
    if args.frames:
        graphs = [est.predict_scene(f["entities"]) for f in iter_frames(args.frames)]
    else:
        graphs = [est.predict_scene(r.entities) for r in read_dataset(args.data)]
    _emit(args, "".join(g.to_json(include_features=True) + "\n" for g in graphs))
    return EXIT_OK


def cmd_fuse(args, cfg) -> int:
    with open(args.graphs, encoding="utf-8") as fh:
        graphs = [SceneGraph.from_json(line) for line in fh if line.strip()]
    if not graphs:
        raise ValueError(f"{args.graphs}: no graphs to fuse")
    fuser = SceneGraphFuser().fit(graphs)
    _emit(args, fuser.global_graph_.to_json() + "\n")
    return EXIT_OK


def cmd_generate(args, cfg) -> int:
    est = SceneGraphVAE.load(args.gen)
    graph = SceneGraph.from_json(_read_text(args.graph))
    _emit(args, dumps(est.generate(graph, mode=args.mode, seed=cfg["seed"])) + "\n")
    return EXIT_OK


def cmd_export(args, cfg) -> int:
    layout = json.loads(_read_text(args.layout))
    scene = assemble(layout, SynthConfig.from_config(cfg).catalog())
    export_scene(scene, args.out or "scene.obj", args.format)
    return EXIT_OK


def cmd_eval_sgp(args, cfg) -> int:
    est = SceneGraphPredictor.load(args.sgp)
    records = read_dataset(args.data)
    rep = metrics.RecallReport.empty(est.objects_, est.predicates_)
    for r in records:
        rep = rep + metrics.recall(est.predict_scene(r.entities), r.graph)
    print(rep.table())
    if args.out:
        atomic_write_text(args.out, dumps(rep.to_dict()))
    return EXIT_OK


def cmd_eval_constraints(args, cfg) -> int:
    params = SynthConfig.from_config(cfg).relations
    if args.layout:
        if not args.graph:
            raise ValueError("--layout needs --graph")
        graph = SceneGraph.from_json(_read_text(args.graph))
        rep = metrics.eval_constraints(_layout_obbs(json.loads(_read_text(args.layout))), graph, params)
    else:
        if not (args.gen and args.data):
            raise ValueError("give --layout/--graph or --gen/--data")
        est = SceneGraphVAE.load(args.gen)
        records = read_dataset(args.data)
        if args.limit:
            records = records[:args.limit]
        rep = None
        for r in records:
            layout = est.generate(r.graph, mode=args.mode, seed=cfg["seed"])
            one = metrics.eval_constraints(_layout_obbs(layout), r.graph, params)
            rep = one if rep is None else rep + one
    print(rep.table())
    if args.out:
        atomic_write_text(args.out, dumps(rep.to_dict()))
    return EXIT_OK


def cmd_pipeline(args, cfg) -> int:
    frames = list(iter_frames(args.frames))
    sgp = SceneGraphPredictor.load(args.sgp)
    gen = SceneGraphVAE.load(args.gen)
    out = args.out or "scene.obj"
    result = run_pipeline(frames, sgp, gen, SynthConfig.from_config(cfg).catalog(),
                          mode=args.mode, seed=cfg["seed"], out_path=out)
    stem = os.path.splitext(out)[0]
    write_outputs(result, f"{stem}.graph.json", f"{stem}.layout.json", f"{stem}.timings.json")
    for stage, sec in result.timings.items():
        log.info("%s: %.3f s", stage, sec)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override every seed in the config")
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="config override (repeatable)")
    common.add_argument("--out", help="output path (stdout when omitted, where applicable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="scenegraph3d", description=__doc__.splitlines()[0],
                                parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, parents=[common])
        sp.set_defaults(func=fn)
        return sp

    sp = add("config", cmd_config, "print the effective configuration")
    sp.add_argument("--dump", action="store_true", help="print every key with its value")

    sp = add("synth", cmd_synth, "write a synthetic dataset (JSONL)")
    sp.add_argument("--split", action="store_true", help="also write .train/.val files")
    sp.add_argument("--frames", help="also write per-timestep observations of one scene here")
    sp.add_argument("--scene", type=int, default=0, help="scene index for --frames")

    sp = add("train-sgp", cmd_train_sgp, "train the scene-graph predictor")
    sp.add_argument("--data", required=True)
    sp.add_argument("--val")
    sp.add_argument("--log", help="metrics JSONL (appended)")
    sp.add_argument("--resume", help="checkpoint to resume from")

    sp = add("train-gen", cmd_train_gen, "train the scene generator")
    sp.add_argument("--data", required=True)
    sp.add_argument("--limit", type=int, help="use only the first N scenes")
    sp.add_argument("--log", help="metrics JSONL (appended)")
    sp.add_argument("--resume", help="checkpoint to resume from")

    sp = add("predict", cmd_predict, "predict local scene graphs (JSONL, one per frame/scene)")
    sp.add_argument("--sgp", required=True)
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--frames")
    src.add_argument("--data")

    sp = add("fuse", cmd_fuse, "fuse local graphs into one global graph")
    sp.add_argument("--graphs", required=True)

    sp = add("generate", cmd_generate, "decode a layout from a scene graph")
    sp.add_argument("--gen", required=True)
    sp.add_argument("--graph", required=True)
    sp.add_argument("--mode", choices=("sample", "reconstruct"), default="sample")

    sp = add("export", cmd_export, "assemble meshes for a layout and write OBJ + sidecar")
    sp.add_argument("--layout", required=True)
    sp.add_argument("--format", choices=("obj", "json"), default="obj")

    sp = add("eval-sgp", cmd_eval_sgp, "recall of a trained predictor on a dataset")
    sp.add_argument("--sgp", required=True)
    sp.add_argument("--data", required=True)

    sp = add("eval-constraints", cmd_eval_constraints, "constraint accuracy of layouts")
    sp.add_argument("--layout")
    sp.add_argument("--graph")
    sp.add_argument("--gen")
    sp.add_argument("--data")
    sp.add_argument("--limit", type=int)
    sp.add_argument("--mode", choices=("sample", "reconstruct"), default="reconstruct")

    sp = add("pipeline", cmd_pipeline, "predict, fuse, generate and export in one run")
    sp.add_argument("--sgp", required=True)
    sp.add_argument("--gen", required=True)
    sp.add_argument("--frames", required=True)
    sp.add_argument("--mode", choices=("sample", "reconstruct"), default="sample")
    return p


def _effective_config(args) -> Dict:
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        for key in ("seed", "sgp.seed", "vae.seed"):
            cfg[key] = args.seed
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _effective_config(args)
        return args.func(args, cfg)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except VALIDATION_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
