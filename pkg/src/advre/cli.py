"""``advre`` command line: gen-data, pretrain, train, eval, inspect.

Every command reads the layered run configuration, works inside one output
directory and refuses to overwrite its own outputs unless ``--force`` is
given.  Exit codes: 0 success, 1 usage or config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import evaluation as ev
from .config import RunConfig, load_config
from .corpus import RelationSchema, Vocabulary, generate_synthetic, load_corpus, save_corpus
from .encoders import ARCHS, EncoderParams, load_checkpoint, save_checkpoint
from .errors import AdvreError, ConfigError, DimensionError, ParseError, TrainingError, ValidationError
from .trainer import (
    TrainState, initial_split, pretrain_classifier, rng_stream, train_adversarial, write_metrics,
)

log = logging.getLogger("advre")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(AdvreError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# paths


class Layout:
    def __init__(self, out):
        self.root = Path(out)
        self.data = self.root / "data"
        self.train = self.data / "train.jsonl"
        self.test = self.data / "test.jsonl"
        self.relations = self.data / "relations.txt"
        self.vocab = self.data / "vocab.txt"
        self.pretrain_ckpt = self.root / "pretrain.ckpt"
        self.pretrain_losses = self.root / "pretrain_losses.csv"
        self.train_ckpt = self.root / "train.ckpt"
        self.split = self.root / "split.json"
        self.metrics = self.root / "metrics.csv"
        self.pr_curve = self.root / "pr_curve.csv"
        self.p_at_n = self.root / "p_at_n.csv"
        self.noise_auc = self.root / "noise_auc.csv"
        self.inspect = self.root / "inspect.txt"

    def config_echo(self, command):
        return self.root / f"config.{command}.txt"


def _guard(outputs, force):
    existing = [str(p) for p in outputs if p.exists()]
    if existing and not force:
        raise UsageError(f"refusing to overwrite {', '.join(existing)} (use --force)")


def _require(path, command):
    if not path.exists():
        raise UsageError(f"{path} not found; run `advre {command}` first")


def _load_data(lay: Layout, cfg: RunConfig):
    for p in (lay.train, lay.test, lay.relations, lay.vocab):
        _require(p, "gen-data")
    schema = RelationSchema.load(lay.relations)
    vocab = Vocabulary.load(lay.vocab)
    kw = dict(max_len=cfg.max_len, n_relations=len(schema), vocab_size=len(vocab))
    return load_corpus(lay.train, **kw), load_corpus(lay.test, **kw), schema, vocab


def _echo(lay: Layout, cfg: RunConfig, command):
    lay.root.mkdir(parents=True, exist_ok=True)
    lay.config_echo(command).write_text(cfg.to_text(), encoding="utf-8")


# --------------------------------------------------------------------------
# commands


def cmd_gen_data(cfg: RunConfig, lay: Layout, force=False):
    _guard([lay.train, lay.test, lay.relations, lay.vocab], force)
    train, test, schema, vocab = generate_synthetic(cfg.synthetic())
    lay.data.mkdir(parents=True, exist_ok=True)
    save_corpus(train, lay.train)
    save_corpus(test, lay.test)
    schema.save(lay.relations)
    vocab.save(lay.vocab)
    _echo(lay, cfg, "gen-data")
    print(f"wrote {len(train)} training and {len(test)} test instances to {lay.data}")


def cmd_pretrain(cfg: RunConfig, lay: Layout, force=False):
    _guard([lay.pretrain_ckpt, lay.pretrain_losses], force)
    train, _, schema, vocab = _load_data(lay, cfg)
    params = EncoderParams.init(cfg.encoder(), len(vocab), len(schema), rng_stream(cfg.seed, "init"))
    params, losses = pretrain_classifier(train, params, epochs=cfg.pretrain_epochs, lr=cfg.pretrain_lr,
                                         batch_size=cfg.pretrain_batch, seed=cfg.seed,
                                         clip_norm=cfg.clip_norm)
    save_checkpoint(lay.pretrain_ckpt, params, {"stage": "pretrain", "epochs": cfg.pretrain_epochs})
    ev.write_rows(enumerate(losses, start=1), lay.pretrain_losses, ["epoch", "loss"])
    _echo(lay, cfg, "pretrain")
    final = f"{losses[-1]:.4f}" if losses else "n/a"
    print(f"pretrained {cfg.encoder().arch} for {cfg.pretrain_epochs} epochs, final loss {final}")


def cmd_train(cfg: RunConfig, lay: Layout, force=False):
    _guard([lay.train_ckpt, lay.split, lay.metrics], force)
    _require(lay.pretrain_ckpt, "pretrain")
    train, _, _, _ = _load_data(lay, cfg)
    params, _ = load_checkpoint(lay.pretrain_ckpt)
    tcfg = cfg.training()
    split = initial_split(train, params, tcfg.q)
    log.info("initial split: %d confident, %d unconfident", len(split.confident), len(split.unconfident))
    state = TrainState.start(params, split, cfg.seed)

    def checkpoint(s):
        save_checkpoint(lay.train_ckpt, s.params, {"stage": "train", "epoch": s.epoch})

    train_adversarial(state, train, tcfg, cfg.adversarial(), on_promotion=checkpoint,
                      dump_dir=lay.root / "diverged")
    checkpoint(state)
    lay.split.write_text(json.dumps(state.split.to_json(), sort_keys=True) + "\n", encoding="utf-8")
    write_metrics(state.history, lay.metrics)
    _echo(lay, cfg, "train")
    print(f"trained {state.epoch} epochs; confident set {len(state.split.confident)}, "
          f"promoted {len(state.promoted_ids)}")


def cmd_eval(cfg: RunConfig, lay: Layout, force=False):
    _guard([lay.pr_curve, lay.p_at_n, lay.noise_auc], force)
    _require(lay.train_ckpt, "train")
    _require(lay.pretrain_ckpt, "pretrain")
    train, test, _, _ = _load_data(lay, cfg)
    models = {"pretrain": load_checkpoint(lay.pretrain_ckpt)[0],
              "adversarial": load_checkpoint(lay.train_ckpt)[0]}
    curves, p_rows, auc_rows = [], [], []
    for name, params in models.items():
        ranked = ev.score_triples(test, params, aggregate=cfg.aggregate)
        curves.append((name, ev.pr_curve(ranked)))
        for mode in cfg.modes:
            res = ev.few_sentence_eval(test, params, mode, cfg.seed, ns=cfg.ns, aggregate=cfg.aggregate)
            for n in cfg.ns:
                p_rows.append([name, mode, n, res[f"P@{n}"]])
            p_rows.append([name, mode, "mean", res["mean"]])
        if train.has_noise_flags():
            auc = ev.noise_detection_auc(train, params)
            auc_rows.append([name, auc.confusing, auc.discriminator])
    with open(lay.pr_curve, "w", encoding="utf-8") as fh:
        fh.write("model,rank,recall,precision\n")
        for name, curve in curves:
            for i, (rec, prec) in enumerate(curve.points, start=1):
                fh.write(f"{name},{i},{rec!r},{prec!r}\n")
    ev.write_rows(p_rows, lay.p_at_n, ["model", "mode", "n", "precision"])
    ev.write_rows(auc_rows, lay.noise_auc, ["model", "auc_confusing", "auc_discriminator"])
    _echo(lay, cfg, "eval")
    for row in p_rows:
        if row[1] == "ALL":
            print(f"{row[0]:<12} P@{row[2]:<5} {row[3]:.3f}")


def cmd_inspect(cfg: RunConfig, lay: Layout, force=False):
    _guard([lay.inspect], force)
    _require(lay.train_ckpt, "train")
    train, _, schema, vocab = _load_data(lay, cfg)
    params, _ = load_checkpoint(lay.train_ckpt)
    result = ev.inspect(train, params, cfg.inspect_relation, cfg.inspect_k)
    text = ev.format_inspection(result, vocab, schema.names[cfg.inspect_relation])
    lay.inspect.write_text(text, encoding="utf-8")
    _echo(lay, cfg, "inspect")
    sys.stdout.write(text)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
}


def build_parser():
    parser = _Parser(prog="advre", description="Adversarial denoising for distantly supervised relation extraction.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="run", help="output directory (default: run)")
        p.add_argument("--arch", type=str.upper, choices=ARCHS)
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, arch=args.arch)
        COMMANDS[args.command](cfg, Layout(args.out), force=args.force)
    except (UsageError, ConfigError) as exc:
        print(f"advre {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, ValidationError, ParseError, DimensionError, OSError) as exc:
        print(f"advre {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
