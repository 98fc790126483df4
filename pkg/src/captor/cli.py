"""Command-line entry point: train / caption / eval / score / word2vec /
inspect / gen-fixture.

Exit codes: 0 success, 1 usage error, 2 data or file-format error,
3 numeric failure (non-finite loss or gradient).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import report
from .attention import export_attention
from .encoder import ENCODER_SPECS, FeatureFileError, check_spec, load_feature_grid
from .fixture import write_fixture
from .inference import DecodeConfig, caption_batch
from .metrics import pairs_from_files, score_pairs, EvalPair
from .text import CaptionFormatError, build_vocab, load_captions, normalize
from .trainer import (CheckpointError, NumericError, TrainConfig, TrainedModel,
                      fit, load_checkpoint, load_config_file, save_checkpoint)
from .word2vec import Word2VecConfig, train_word2vec
from .model import ModelDims


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser():
    parser = _Parser(prog="captor",
                     description="Attentive GRU image-caption engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a captioning model")
    p.add_argument("--features", required=True, help="directory of SAF1 files")
    p.add_argument("--captions", required=True, help="image_id<TAB>caption file")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--encoder-spec", default="toy", choices=sorted(ENCODER_SPECS))
    p.add_argument("--init-embeddings", help="embedding checkpoint from `captor word2vec`")
    p.add_argument("--report-dir", help="write loss history TSV and loss curve figure")
    for name in ("epochs", "batch-size", "seed", "max-caption-len",
                 "embed-dim", "hidden-dim", "attention-dim", "min-count"):
        p.add_argument(f"--{name}", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--grad-clip-norm", type=float)

    p = sub.add_parser("caption", help="generate captions from a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True, help="SAF1 file or directory")
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--alpha", type=float, default=0.0, help="length-norm exponent")
    p.add_argument("--out", help="output TSV (default stdout)")
    p.add_argument("--attention-out", help="directory for attention JSON records")
    p.add_argument("--pgm", action="store_true", help="also write PGM heatmaps")
    p.add_argument("--report-dir", help="render attention heatmap figures")

    p = sub.add_parser("eval", help="decode a feature directory and score it")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--json", action="store_true")
    p.add_argument("--report-dir")

    p = sub.add_parser("score", help="score a hypothesis file against references")
    p.add_argument("--hyp", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--json", action="store_true")
    p.add_argument("--report-dir")

    p = sub.add_parser("word2vec", help="pretrain skip-gram word embeddings")
    p.add_argument("--corpus", required=True,
                   help="text file, one sentence per line (TSV captions accepted)")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("inspect", help="summarize a checkpoint")
    p.add_argument("checkpoint")

    p = sub.add_parser("gen-fixture", help="emit a synthetic training fixture")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--locations", type=int, default=9)
    p.add_argument("--channels", type=int, default=16)
    return parser


def _load_grids(path, spec_name=None):
    if os.path.isdir(path):
        names = sorted(f for f in os.listdir(path) if f.endswith(".saf1"))
        if not names:
            raise FeatureFileError(f"{path}: no .saf1 files")
        grids = [load_feature_grid(os.path.join(path, f)) for f in names]
    else:
        grids = [load_feature_grid(path)]
    if spec_name is not None:
        for g in grids:
            check_spec(g, spec_name)
    return grids


def _grid_hw(locations):
    side = int(math.isqrt(locations))
    return (side, side) if side * side == locations else (1, locations)


def _cmd_train(args):
    cfg = TrainConfig()
    if args.config:
        for key, value in load_config_file(args.config).items():
            setattr(cfg, key, value)
    for field in ("epochs", "batch_size", "lr", "seed", "grad_clip_norm",
                  "max_caption_len", "embed_dim", "hidden_dim",
                  "attention_dim", "min_count"):
        value = getattr(args, field)
        if value is not None:
            setattr(cfg, field, value)

    records = load_captions(args.captions)
    grids = {g.image_id: g for g in _load_grids(args.features, args.encoder_spec)}
    vocab = init_emb = None
    if args.init_embeddings:
        emb_ckpt = load_checkpoint(args.init_embeddings)
        vocab = emb_ckpt.vocab
        init_emb = emb_ckpt.params["embed"]
        cfg.embed_dim = init_emb.shape[1]
    trained = fit(grids, records, cfg, encoder_spec=args.encoder_spec,
                  vocab=vocab, init_embeddings=init_emb)
    save_checkpoint(trained, args.out)
    print(f"trained {cfg.epochs} epochs, vocab {len(trained.vocab)}, "
          f"final loss {trained.loss_history[-1]:.4f}")
    print(f"checkpoint written to {args.out}")
    if args.report_dir:
        os.makedirs(args.report_dir, exist_ok=True)
        with open(os.path.join(args.report_dir, "loss_history.tsv"), "w") as fh:
            for epoch, loss in enumerate(trained.loss_history, start=1):
                fh.write(f"{epoch}\t{loss:.10f}\n")
        report.loss_curve(trained.loss_history,
                          os.path.join(args.report_dir, "loss_curve.png"))
    return 0


def _decode_config(args):
    mode = "beam" if args.beam > 1 else "greedy"
    cfg = DecodeConfig(mode=mode, beam_width=args.beam, max_len=args.max_len,
                       length_norm_alpha=getattr(args, "alpha", 0.0))
    cfg.validate()
    return cfg


def _cmd_caption(args):
    trained = load_checkpoint(args.model)
    grids = _load_grids(args.features)
    results = caption_batch(trained, grids, _decode_config(args))
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    failed = False
    try:
        for item, grid in zip(results, grids):
            if item.error is not None:
                failed = True
                print(f"captor: {item.image_id}: {item.error}", file=sys.stderr)
                continue
            out.write(f"{item.image_id}\t{item.caption.text()}\n")
            hw = _grid_hw(grid.locations)
            if args.attention_out:
                export_attention(item.image_id, item.caption.tokens,
                                 item.caption.attention_trace, hw,
                                 args.attention_out, write_pgm=args.pgm)
            if args.report_dir:
                report.attention_figure(item.image_id, item.caption.tokens,
                                        item.caption.attention_trace, hw,
                                        args.report_dir)
    finally:
        if args.out:
            out.close()
    return 2 if failed else 0


def _format_report(rep):
    d = rep.as_dict()
    header = "  ".join(f"{k:>7}" for k in d)
    values = "  ".join(f"{v:7.4f}" for v in d.values())
    return header + "\n" + values


def _emit_report(rep, args):
    if args.json:
        print(json.dumps(rep.as_dict(), indent=2))
    else:
        print(_format_report(rep))
    if args.report_dir:
        os.makedirs(args.report_dir, exist_ok=True)
        with open(os.path.join(args.report_dir, "scores.json"), "w") as fh:
            json.dump(rep.as_dict(), fh, indent=2)
        report.score_bars(rep.as_dict(),
                          os.path.join(args.report_dir, "scores.png"))


def _cmd_eval(args):
    trained = load_checkpoint(args.model)
    grids = _load_grids(args.features)
    args.alpha = 0.0
    results = caption_batch(trained, grids, _decode_config(args))
    refs = {}
    for rec in load_captions(args.refs):
        refs.setdefault(rec.image_id, []).append(list(rec.tokens))
    missing = sorted({r.image_id for r in results} - set(refs))
    if missing:
        raise CaptionFormatError(f"no references for image ids: {', '.join(missing)}")
    pairs, lines = [], []
    for item in results:
        if item.error is not None:
            raise FeatureFileError(f"{item.image_id}: {item.error}")
        tokens = normalize(item.caption.text())
        pairs.append(EvalPair(item.image_id, tokens, refs[item.image_id]))
        lines.append(f"{item.image_id}\t{item.caption.text()}")
    rep = score_pairs(pairs)
    _emit_report(rep, args)
    if args.report_dir:
        with open(os.path.join(args.report_dir, "predictions.tsv"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0


def _cmd_score(args):
    rep = score_pairs(pairs_from_files(args.hyp, args.refs))
    _emit_report(rep, args)
    return 0


def _cmd_word2vec(args):
    sentences = []
    with open(args.corpus, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\r\n")
            if "\t" in line:
                line = line.split("\t", 1)[1]
            tokens = normalize(line)
            if tokens:
                sentences.append(tokens)
    if not sentences:
        raise CaptionFormatError(f"{args.corpus}: no usable sentences")
    vocab = build_vocab(sentences, min_count=1)
    id_corpus = [[vocab.id_of(t) for t in s] for s in sentences]
    w2v_cfg = Word2VecConfig(dim=args.dim, window=args.window,
                             epochs=args.epochs, lr=args.lr, seed=args.seed)
    table, history = train_word2vec(id_corpus, w2v_cfg, len(vocab))
    dims = ModelDims(vocab_size=len(vocab), feature_dim=0, embed_dim=args.dim,
                     hidden_dim=0, attention_dim=0)
    cfg = TrainConfig(seed=args.seed, embed_dim=args.dim)
    save_checkpoint(TrainedModel(params={"embed": table}, vocab=vocab, dims=dims,
                                 config=cfg, encoder_spec="toy",
                                 loss_history=history), args.out)
    final = history[-1] if history else float("nan")
    print(f"word2vec: vocab {len(vocab)}, {args.epochs} epochs, final loss {final:.4f}")
    print(f"embedding table written to {args.out}")
    return 0


def _cmd_inspect(args):
    trained = load_checkpoint(args.checkpoint)
    n_params = sum(arr.size for arr in trained.params.values())
    print(f"format version: 1")
    print(f"encoder spec:   {trained.encoder_spec}")
    print(f"vocab size:     {len(trained.vocab)}")
    print(f"parameters:     {n_params}")
    print("config:")
    for key, value in vars(trained.config).items():
        print(f"  {key} = {value}")
    return 0


def _cmd_gen_fixture(args):
    features_dir, captions_path = write_fixture(
        args.out, n_images=args.n, seed=args.seed,
        locations=args.locations, channels=args.channels)
    print(f"features: {features_dir}")
    print(f"captions: {captions_path}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "caption": _cmd_caption,
    "eval": _cmd_eval,
    "score": _cmd_score,
    "word2vec": _cmd_word2vec,
    "inspect": _cmd_inspect,
    "gen-fixture": _cmd_gen_fixture,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"captor: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (CaptionFormatError, FeatureFileError, CheckpointError,
            FileNotFoundError, ValueError) as exc:
        print(f"captor: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
