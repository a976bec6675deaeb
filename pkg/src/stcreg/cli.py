"""Command-line entry points for the whole pipeline.

Subcommands: gen-data, pretrain, probe, retrieve, viz-matrix,
viz-heatmap, gradcheck.  Every command reads one JSON config (defaults
apply when omitted) plus ``--set section.key=value`` overrides.  Exit
codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import AppConfig, load_config
from .data import gen_synthetic, load_dataset, read_clip
from .errors import StcrError
from .evaluate import extract_features, linear_probe, retrieval_eval
from .losses import channel_consistency_loss, combined_loss, temporal_consistency_loss
from .model import (
    BackboneConfig,
    backbone_forward,
    channel_head,
    init_params,
    load_checkpoint,
    pack_values,
    params_from_arrays,
    params_from_vector,
    save_checkpoint,
    spatial_max_pool,
)
from .train import run_pretraining
from .transforms import invert_transform_on_feature, sample_transform, transform_clip
from .augment import intra_video_mixup
from .viz import viz_consistency_matrix, viz_heatmap


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage problems; this artifact reserves 2
    # for runtime failures, so remap to 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config document")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config field (repeatable)",
    )


def _load(args) -> AppConfig:
    return load_config(args.config, args.overrides)


def _load_params(cfg: AppConfig, checkpoint):
    return params_from_arrays(cfg.model, load_checkpoint(checkpoint))


def _write_metrics(path, rows: list[tuple[str, float]]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "value"])
        for name, value in rows:
            writer.writerow([name, repr(float(value))])


def _cmd_gen_data(args) -> int:
    cfg = _load(args)
    manifest = gen_synthetic(cfg.data, args.out)
    print(f"wrote {cfg.data.num_clips} clips and {manifest}")
    return 0


def _cmd_pretrain(args) -> int:
    overrides = list(args.overrides)
    if args.epochs is not None:
        overrides.append(f"train.epochs={args.epochs}")
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    cfg = load_config(args.config, overrides)
    clips, _ = load_dataset(args.data)
    params = init_params(cfg.model, np.random.default_rng(cfg.train.seed))
    log_path = args.log or (Path(args.out).with_suffix(".csv"))
    state, history = run_pretraining(clips, params, cfg.train, log_path=log_path)
    save_checkpoint(args.out, state.params)
    last = history[-1].report.total if history else float("nan")
    print(f"trained {state.step} steps; final total loss {last}; wrote {args.out} and {log_path}")
    return 0


def _cmd_probe(args) -> int:
    cfg = _load(args)
    params = _load_params(cfg, args.checkpoint)
    train_clips, train_labels = load_dataset(args.train_data)
    test_clips, test_labels = load_dataset(args.test_data)
    train_x = extract_features(params, train_clips, cfg.eval.feature)
    test_x = extract_features(params, test_clips, cfg.eval.feature)
    accuracy = linear_probe(
        train_x, train_labels, test_x, test_labels, cfg.eval.probe_epochs, cfg.eval.probe_lr
    )
    if args.out:
        _write_metrics(args.out, [("probe_accuracy", accuracy)])
    print(f"probe_accuracy {accuracy}")
    return 0


def _cmd_retrieve(args) -> int:
    cfg = _load(args)
    params = _load_params(cfg, args.checkpoint)
    query_clips, query_labels = load_dataset(args.query_data)
    gallery_clips, gallery_labels = load_dataset(args.gallery_data)
    query_x = extract_features(params, query_clips, cfg.eval.feature)
    gallery_x = extract_features(params, gallery_clips, cfg.eval.feature)
    recall = retrieval_eval(
        query_x, query_labels, gallery_x, gallery_labels, cfg.eval.retrieval_k
    )
    if args.out:
        _write_metrics(args.out, [(f"recall_at_{cfg.eval.retrieval_k}", recall)])
    print(f"recall_at_{cfg.eval.retrieval_k} {recall}")
    return 0


def _cmd_viz_matrix(args) -> int:
    cfg = _load(args)
    params = _load_params(cfg, args.checkpoint)
    matrix = viz_consistency_matrix(params, read_clip(args.clip), args.out)
    print(f"wrote {matrix.shape[0]}x{matrix.shape[1]} consistency matrix to {args.out}")
    return 0


def _cmd_viz_heatmap(args) -> int:
    cfg = _load(args)
    params = _load_params(cfg, args.checkpoint)
    image = viz_heatmap(params, read_clip(args.clip), args.out)
    print(f"wrote {image.shape[1]}x{image.shape[0]} heatmap to {args.out}")
    return 0


def gradcheck_scenario(seed: int = 7):
    """A small fixed end-to-end loss for gradient checking.

    Builds a <=5k-parameter backbone on a 3,8,16,16 input, one random
    clip pair, one sampled transform and mixup draw (all pinned by the
    seed), and returns (config, packed params, loss-builder).
    """
    config = BackboneConfig(
        input_shape=(3, 8, 16, 16),
        channels_per_stage=(6, 8),
        kernel=(3, 3, 3),
        strides_per_stage=((2, 2, 2), (2, 2, 2)),
        padding=(1, 1, 1),
    )
    rng = np.random.default_rng(seed)
    params = init_params(config, rng)
    x_c = rng.normal(0.0, 1.0, size=config.input_shape)
    x_n = rng.normal(0.0, 1.0, size=config.input_shape)
    t = sample_transform(rng)
    x_n_aug, _ = intra_video_mixup(transform_clip(x_n, t), 1.0, rng)

    def build_loss(vec_node: ad.Node) -> ad.Node:
        p = params_from_vector(config, vec_node)
        d_clean = spatial_max_pool(backbone_forward(p, x_c))
        f_noise = backbone_forward(p, x_n_aug)
        d_noise = spatial_max_pool(invert_transform_on_feature(f_noise, t))
        l_t = temporal_consistency_loss(d_clean, d_noise)
        l_c = channel_consistency_loss(
            channel_head(p.head_1, d_clean), channel_head(p.head_2, d_noise)
        )
        total, _ = combined_loss(l_t, l_c)
        return total

    return config, pack_values(params), build_loss


def _cmd_gradcheck(args) -> int:
    _, packed, build_loss = gradcheck_scenario(args.seed)
    error = ad.finite_diff_check(build_loss, packed, eps=args.eps)
    print(f"max relative error {error} over {packed.size} parameters")
    return 0 if error < 1e-4 else 2


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stcreg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render the synthetic motion dataset")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("pretrain", help="run siamese consistency pretraining")
    _add_config_args(p)
    p.add_argument("--data", required=True, help="manifest path of the training clips")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", help="loss CSV path (default: checkpoint with .csv)")
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("probe", help="linear probe on frozen features")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--train-data", required=True, help="manifest of probe training clips")
    p.add_argument("--test-data", required=True, help="manifest of probe test clips")
    p.add_argument("--out", help="metric CSV path")
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("retrieve", help="nearest-neighbor recall on frozen features")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query-data", required=True)
    p.add_argument("--gallery-data", required=True)
    p.add_argument("--out", help="metric CSV path")
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("viz-matrix", help="write the 16-row consistency matrix CSV")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip", required=True, help="clip file to probe")
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=_cmd_viz_matrix)

    p = sub.add_parser("viz-heatmap", help="write a response heatmap as PGM")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--out", required=True, help="PGM output path")
    p.set_defaults(func=_cmd_viz_heatmap)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--eps", type=float, default=1e-5)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (StcrError, OSError) as exc:
        print(f"stcreg: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
