"""Command line entry point: ``ctseg <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import activity, clustering, dataset as ds_mod, decoding, embedding, evaluation, pipeline

log = logging.getLogger("ctseg")


def _int_list(text):
    return [int(x) for x in text.split(",") if x]


def _float_list(text):
    return [float(x) for x in text.split(",") if x]


def _add_run_options(p, unknown=False):
    p.add_argument("--features", required=True, type=Path, help="directory of feature files")
    p.add_argument("--gt", type=Path, help="ground-truth directory (enables evaluation)")
    p.add_argument("--config", type=Path, help="key=value run configuration file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--K", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--protocol", choices=evaluation.PROTOCOLS)
    p.add_argument("--model", type=Path, help="pre-trained embedding checkpoint")
    _add_embed_options(p)
    if unknown:
        p.add_argument("--K-prime", dest="K_prime", type=int)
        p.add_argument("--codebook-size", dest="codebook_size", type=int)
        p.add_argument("--representation", choices=activity.VIDEO_REPRESENTATIONS)


def _add_embed_options(p):
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--weight-init-scale", dest="weight_init_scale", type=float)


_CONFIG_FLAGS = ("K", "K_prime", "tau", "protocol", "codebook_size", "representation",
                 "embed_dim", "learning_rate", "epochs", "batch_size", "weight_init_scale")


def _config(args, mode=None) -> pipeline.RunConfig:
    overrides = {k: getattr(args, k, None) for k in _CONFIG_FLAGS}
    overrides["rng_seed"] = args.seed
    if mode is not None:
        overrides["mode"] = mode
    text = args.config.read_text() if getattr(args, "config", None) else ""
    return pipeline.parse_config(text, **overrides)


def _write_segmentations(out_dir: Path, video_ids, segs):
    seg_dir = out_dir / "segmentation"
    seg_dir.mkdir(parents=True, exist_ok=True)
    for vid, seg in zip(video_ids, segs):
        decoding.write_segmentation(seg_dir / f"{vid}.txt", seg)


def cmd_synth(args):
    spec = ds_mod.SynthSpec(
        num_videos=args.num_videos, num_subactions=args.num_subactions,
        feature_dim=args.feature_dim, segment_length_range=(args.min_length, args.max_length),
        subaction_center_spread=args.spread, noise_scale=args.noise,
        background_fraction=args.background_fraction, drop_probability=args.drop_probability,
        rng_seed=args.seed, num_activities=args.num_activities,
    )
    data = ds_mod.generate_synthetic(spec)
    ds_mod.save_dataset(data, args.out / "features", args.out / "groundtruth", binary=not args.text)
    print(f"wrote {len(data)} videos to {args.out}")


def cmd_train_embed(args):
    data = ds_mod.load_dataset(args.features)
    cfg = _config(args)
    training = embedding.TrainingLog()
    model = embedding.train_embedding(data, cfg.embedding_config(), training)
    embedding.save_model(model, args.out)
    loss_text = "".join(f"{i} {v!r}\n" for i, v in enumerate(training.losses))
    Path(f"{args.out}.loss").write_text(loss_text)
    sys.stdout.write(loss_text)


def _load_model(args):
    return embedding.load_model(args.model) if args.model else None


def _finish(args, cfg, data, result):
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(pipeline.format_config(cfg))
    _write_segmentations(out, data.video_ids, result.segmentations)
    for i, cm in enumerate(result.cluster_models):
        clustering.save_cluster_model(cm, out / f"clusters_{i}.tclm")
    embedding.save_model(result.embedding, out / "embedding.temb")
    if result.partition is not None:
        (out / "partition.txt").write_text(result.partition.to_text())
    if result.evaluation is not None:
        text = result.evaluation.to_text()
        (out / "metrics.txt").write_text(text)
        sys.stdout.write(text)
    for stage, seconds in result.timings.items():
        log.info("%s: %.2fs", stage, seconds)


def cmd_segment(args):
    data = ds_mod.load_dataset(args.features, args.gt)
    cfg = _config(args, mode="known")
    _finish(args, cfg, data, pipeline.run_known(data, cfg, _load_model(args)))


def cmd_discover(args):
    data = ds_mod.load_dataset(args.features, args.gt)
    cfg = _config(args, mode="unknown")
    result = pipeline.run_unknown(data, cfg, _load_model(args), set_embedding=args.set_embedding)
    _finish(args, cfg, data, result)


def cmd_evaluate(args):
    if args.f1_mode == "sampled" and args.seed is None:
        raise SystemExit("--seed is required for sampled F1")
    files = sorted(args.pred.glob("*.txt"))
    if not files:
        raise SystemExit(f"no segmentation files in {args.pred}")
    preds, gts = [], []
    for f in files:
        preds.append(decoding.read_segmentation(f))
        labels = ds_mod.read_gt_file(args.gt / f.name)
        if len(labels) != len(preds[-1]):
            raise SystemExit(f"{f.stem}: {len(preds[-1])} predicted vs {len(labels)} gt frames")
        gts.append(labels)
    ev = evaluation.evaluate(gts, preds, args.protocol, f1_mode=args.f1_mode, rng_seed=args.seed)
    text = ev.to_text()
    if args.out:
        args.out.write_text(text)
    sys.stdout.write(text)


def cmd_sweep(args):
    data = ds_mod.load_dataset(args.features, args.gt)
    cfg = _config(args, mode=args.mode)
    rows, _ = pipeline.sweep(
        data, cfg, args.K_primes, args.Ks, args.taus, name=args.name, model=_load_model(args)
    )
    text = evaluation.sweep_csv(rows)
    args.out.write_text(text)
    sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctseg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--num-videos", type=int, default=30)
    p.add_argument("--num-subactions", type=int, default=5)
    p.add_argument("--num-activities", type=int, default=1)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--min-length", type=int, default=15)
    p.add_argument("--max-length", type=int, default=40)
    p.add_argument("--spread", type=float, default=8.0)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--background-fraction", type=float, default=0.0)
    p.add_argument("--drop-probability", type=float, default=0.0)
    p.add_argument("--text", action="store_true", help="text feature files instead of binary")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-embed", help="train the temporal embedding")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int, required=True)
    _add_embed_options(p)
    p.set_defaults(func=cmd_train_embed)

    p = sub.add_parser("segment", help="known-activity segmentation")
    _add_run_options(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("discover", help="unknown-activity discovery")
    _add_run_options(p, unknown=True)
    p.add_argument("--set-embedding", action="store_true",
                   help="retrain an embedding for every video set")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("evaluate", help="score segmentation files against ground truth")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--protocol", choices=evaluation.PROTOCOLS, default="breakfast")
    p.add_argument("--f1-mode", choices=("exhaustive", "sampled"), default="exhaustive")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="grid over K', K and tau")
    _add_run_options(p, unknown=True)
    p.add_argument("--mode", choices=pipeline.MODES, default="unknown")
    p.add_argument("--K-primes", dest="K_primes", type=_int_list, default=[1])
    p.add_argument("--Ks", dest="Ks", type=_int_list, default=[5])
    p.add_argument("--taus", dest="taus", type=_float_list, default=[0.0])
    p.add_argument("--name", default="dataset")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
