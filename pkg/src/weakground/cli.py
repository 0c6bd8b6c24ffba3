"""Command line entry point: ``weakground <command> ...``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from .ablation import run_ablation
from .config import TrainConfig
from .dataset_io import (DatasetError, meta_path, read_dataset, read_meta, read_vocabulary,
                         vocab_path, write_dataset)
from .evaluate import evaluate_models, METHOD_NAMES
from .model import load_checkpoint
from .synth import DetectorSimConfig, GenConfig, GenerationError, generate_corpus
from .train import DivergenceError, train
from .viz import scene_view

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

logger = logging.getLogger("weakground")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc


def _train_config(path, **overrides) -> TrainConfig:
    try:
        cfg = TrainConfig.from_dict(_read_json(path))
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return cfg.replace(**overrides) if overrides else cfg
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid train config {path}: {exc}") from exc


def _load_corpus(path):
    """Corpus, vocabulary and generator config, falling back to generator defaults
    when the sidecars are absent."""
    if not Path(path).exists():
        raise DatasetError(f"{path}: no such file")
    corpus = read_dataset(path)
    if not corpus:
        raise DatasetError(f"{path}: empty dataset")
    gen = GenConfig()
    if meta_path(path).exists():
        gen = GenConfig.from_dict(read_meta(meta_path(path))["generator"])
    vocab = read_vocabulary(vocab_path(path)) if vocab_path(path).exists() else gen.vocabulary()
    return corpus, vocab, gen


def _check_compatible(model, corpus, vocab, name="checkpoint"):
    if model.vocab != vocab:
        raise DatasetError(f"{name} vocabulary does not match the dataset")
    if len(corpus[0].proposals) != model.cfg.num_proposals:
        raise DatasetError(f"{name} expects {model.cfg.num_proposals} proposals per scene, "
                           f"dataset has {len(corpus[0].proposals)}")


def cmd_gen_data(args) -> int:
    raw = _read_json(args.config) if args.config else {}
    try:
        det = DetectorSimConfig.from_dict(raw.pop("detector", {}))
        gen = GenConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid generator config: {exc}") from exc
    corpus = generate_corpus(args.scenes, gen, det, args.seed)
    write_dataset(args.out, corpus, gen.vocabulary(),
                  {"generator": gen.to_dict(), "detector": det.to_dict(), "seed": args.seed})
    print(f"wrote {len(corpus)} scenes, {sum(len(r.sentences) for r in corpus)} sentences to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _train_config(args.config, seed=args.seed, method=args.method)
    corpus, vocab, gen = _load_corpus(args.data)
    if cfg.num_proposals != len(corpus[0].proposals):
        raise DatasetError(f"config expects {cfg.num_proposals} proposals, dataset has "
                           f"{len(corpus[0].proposals)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    result = train(corpus, cfg, vocab, gen.object_classes, gen.text_classes, out)
    print(f"best epoch {result.best_epoch}, validation R@1,IoU@0.5 {result.best_val:.2f}; "
          f"checkpoint {out / 'best.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    corpus, vocab, _ = _load_corpus(args.data)
    model = load_checkpoint(args.ckpt)
    _check_compatible(model, corpus, vocab)
    models = {METHOD_NAMES[model.cfg.method]: model}
    for spec in args.baseline or []:
        name, _, path = spec.partition("=")
        if not path:
            raise UsageError(f"--baseline expects NAME=CKPT, got {spec!r}")
        other = load_checkpoint(path)
        _check_compatible(other, corpus, vocab, name)
        models[name] = other
    seed = model.cfg.seed if args.seed is None else args.seed
    torch.manual_seed(seed)
    report = evaluate_models(models, corpus, seed, model.cfg.config_hash())
    for problem in report.check_invariants():
        logger.warning("report invariant violated: %s", problem)
    report.write_csv(args.report)
    for method in report.methods():
        print(method, " ".join(f"{split}={report.get(method, split, 1, 0.5):.2f}"
                               for split in ("unique", "multiple", "overall")))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _train_config(args.config, seed=args.seed)
    corpus, vocab, gen = _load_corpus(args.data)
    eval_corpus = None
    if args.eval_data:
        eval_corpus, eval_vocab, _ = _load_corpus(args.eval_data)
        if eval_vocab != vocab:
            raise DatasetError("evaluation dataset vocabulary differs from the training dataset")
    report = run_ablation(corpus, cfg, vocab, gen.object_classes, gen.text_classes, eval_corpus)
    report.write_csv(args.out)
    for method in report.methods():
        print(f"{method:16s} R@1,0.5={report.get(method, 'overall', 1, 0.5):6.2f} "
              f"R@3,0.25={report.get(method, 'overall', 3, 0.25):6.2f}")
    return EXIT_OK


def cmd_export_viz(args) -> int:
    corpus, vocab, _ = _load_corpus(args.data)
    model = load_checkpoint(args.ckpt)
    _check_compatible(model, corpus, vocab)
    matches = [r for r in corpus if r.scene.scene_id == args.scene_id]
    if not matches:
        raise DatasetError(f"scene {args.scene_id!r} not found in {args.data}")
    view = scene_view(model, matches[0], args.nms_threshold)
    Path(args.out).write_text(json.dumps(view, indent=1), encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="weakground", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="generator JSON; an optional 'detector' key holds detector settings")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=sorted(METHOD_NAMES))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint and write a report CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--baseline", action="append", metavar="NAME=CKPT")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the loss-component ablation")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eval-data")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-viz", help="export one scene for an external viewer")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene-id", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--nms-threshold", type=float, default=0.25)
    p.set_defaults(func=cmd_export_viz)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, GenerationError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
