"""``wgad`` command-line entry point.

Exit codes:

====  =========================================
0     success
1     unexpected internal error
2     invalid configuration or usage
3     dataset missing or malformed
4     training diverged (non-finite or huge loss)
5     checkpoint failed its CRC32 check
====  =========================================
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import os
import sys

import numpy as np

from . import __version__, checkpoint, evaluation, kernels
from . import autodiff as ad
from .config import ConfigError, load_config
from . import datasets
from .experiment import (DataError, RunManifest, encoder_config, fit_encoder, inversion_config,
                         load_data, load_network, network_specs, store_from_tensors, toy_spec, train_gan)
from .latent import EncoderBundle, encoder_spec, invert_generator
from .nn import Network
from .scoring import (ScoreReport, anogan_score, bigan_style_score, critic_score, encoder_mse_score,
                      fit_critic_interval, score_in_chunks, worker_count)
from .training import TrainingError, mode_coverage, rng_stream, sample_generator

log = logging.getLogger("wgad")

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_CRC = 0, 1, 2, 3, 4, 5
GAN_CHECKPOINT = "gan.wgad"
ENCODER_CHECKPOINT = "encoder.wgad"


class UsageError(RuntimeError):
    """Command-line arguments inconsistent with the configuration."""


def _setup(args):
    cfg = load_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["run.seed"] = args.seed
    if getattr(args, "precision", None) is not None:
        overrides["run.precision"] = args.precision
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    os.makedirs(args.out, exist_ok=True)
    manifest = RunManifest(command=args.command, config_text=cfg.text, config_source=cfg.source,
                           overrides=overrides)
    return cfg, manifest


def _dtype(cfg):
    return np.float32 if cfg["run.precision"] == "f32" else np.float64


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _require(path, what):
    if not path:
        raise UsageError(f"{what} checkpoint is required (--{what})")
    if not os.path.exists(path):
        raise UsageError(f"{what} checkpoint not found: {path}")
    return path


def _gan_networks(cfg, path, width):
    gen_spec, critic_spec = network_specs(cfg, width)
    dtype = _dtype(cfg)
    tensors = checkpoint.load(path)
    return (Network(gen_spec, store_from_tensors(tensors, "generator", gen_spec, dtype)),
            Network(critic_spec, store_from_tensors(tensors, "critic", critic_spec, dtype)))


def _encoder_bundle(cfg, path, generator):
    ec = encoder_config(cfg)
    spec = encoder_spec(generator.spec.out_width, generator.spec.in_width, ec.hidden, ec.activation)
    return EncoderBundle(load_network(path, "encoder", spec, _dtype(cfg)), generator)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_gen_toy(args) -> int:
    cfg, manifest = _setup(args)
    if cfg["dataset.kind"] != "toy":
        raise ConfigError("gen-toy needs dataset.kind = toy")
    spec = toy_spec(cfg)
    thr = datasets.density_threshold(spec)
    seed = int(rng_stream(cfg["run.seed"], "data").integers(0, 2**63 - 1))
    x = datasets.sample_gaussian_mixture(spec, cfg["dataset.n"], seed=seed)
    labels = datasets.toy_anomaly_label(spec, x, thr)
    data_path = os.path.join(args.out, "toy.csv")
    with open(data_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x0", "x1", "label"])
        for (a, b), lab in zip(x, labels):
            w.writerow([repr(float(a)), repr(float(b)), int(lab)])
    thr_path = os.path.join(args.out, "threshold.csv")
    with open(thr_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "mass", "draws", "k", "radius", "sigma", "phase"])
        w.writerow([repr(thr), 0.99, 1_000_000, spec.k, spec.radius, spec.sigma, spec.phase])
    manifest.outputs = {"dataset": data_path, "threshold": thr_path}
    manifest.metrics = {"n": len(x), "threshold": thr, "outside_level_set": int(labels.sum())}
    manifest.write(args.out)
    print(f"wrote {len(x)} points to {data_path} (density threshold {thr:.6g})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, manifest = _setup(args)
    data = load_data(cfg)
    result = train_gan(cfg, data)
    ckpt = os.path.join(args.out, GAN_CHECKPOINT)
    checkpoint.save(ckpt, checkpoint.pack_stores(generator=result.generator, critic=result.critic))
    log_path = os.path.join(args.out, "training_log.csv")
    result.log.to_csv(log_path)
    manifest.checkpoints = {"gan": ckpt}
    manifest.outputs = {"training_log": log_path}
    manifest.metrics["data_source"] = data.source
    c_rows, g_rows = result.log.critic_rows(), result.log.generator_rows()
    manifest.metrics.update({
        "critic_updates": len(c_rows), "generator_updates": len(g_rows),
        "final_critic_loss": c_rows[-1][2] if c_rows else None,
        "final_gen_loss": g_rows[-1][4] if g_rows else None,
        "backend": result.log.notes.get("backend"), "kernels": kernels.BACKEND,
        "divergence_limit": result.config.divergence_limit})
    if data.spec is not None:
        samples = sample_generator(result.gen_spec, result.generator, 10000,
                                   rng_stream(cfg["run.seed"], "evaluation"))
        covered, fractions = mode_coverage(samples, data.spec.centers, 3 * data.spec.sigma)
        manifest.metrics.update(modes_covered=covered, mode_fractions=fractions.tolist())
    manifest.write(args.out)
    print(f"trained {cfg['training.variant']}: {len(g_rows)} generator updates, checkpoint {ckpt}")
    return EXIT_OK


def cmd_train_encoder(args) -> int:
    cfg, manifest = _setup(args)
    path = _require(args.checkpoint, "checkpoint")
    before = _sha256(path)
    data = load_data(cfg)
    generator, _ = _gan_networks(cfg, path, data.train.samples.shape[1])
    bundle = fit_encoder(cfg, generator, data)
    if _sha256(path) != before:
        raise RuntimeError("generator checkpoint changed during encoder training")
    out = os.path.join(args.out, ENCODER_CHECKPOINT)
    checkpoint.save(out, checkpoint.pack_stores(encoder=bundle.encoder.params))
    log_path = os.path.join(args.out, "encoder_log.csv")
    with open(log_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for i, v in enumerate(bundle.epoch_losses):
            w.writerow([i, repr(v)])
    normal = data.test.samples[data.test.labels == 0]
    manifest.checkpoints = {"generator": path, "encoder": out}
    manifest.outputs = {"encoder_log": log_path}
    manifest.metrics = {"epoch_losses": bundle.epoch_losses,
                        "heldout_normal_mse": float(encoder_mse_score(bundle, normal).mean())
                        if len(normal) else None}
    manifest.write(args.out)
    print(f"encoder trained for {len(bundle.epoch_losses)} epochs, checkpoint {out}")
    return EXIT_OK


def cmd_score(args) -> int:
    cfg, manifest = _setup(args)
    scorer = cfg["scorer.id"]
    path = _require(args.checkpoint, "checkpoint")
    data = load_data(cfg)
    x = data.test.samples
    generator, critic = _gan_networks(cfg, path, x.shape[1])
    threads = worker_count()
    manifest.checkpoints = {"gan": path}
    if scorer == "critic":
        interval = fit_critic_interval(critic, data.train.samples)
        scores = score_in_chunks(lambda b: critic_score(critic, interval, b), x, threads)
        manifest.metrics["interval"] = [interval.lower, interval.upper]
    elif scorer == "anogan":
        icfg = inversion_config(cfg)
        lam = cfg["scorer.lambda_mix"]

        def fn(batch):
            z, _ = invert_generator(generator, batch, icfg)
            return anogan_score(batch, z, generator, critic, lam)
        scores = score_in_chunks(fn, x, threads)
    else:
        enc_path = _require(args.encoder, "encoder")
        bundle = _encoder_bundle(cfg, enc_path, generator)
        manifest.checkpoints["encoder"] = enc_path
        if scorer == "bigan":
            alpha = cfg["scorer.alpha_mix"]
            scores = score_in_chunks(lambda b: bigan_style_score(b, bundle, critic, alpha), x, threads)
        else:
            scores = score_in_chunks(lambda b: encoder_mse_score(bundle, b), x, threads)
    report = ScoreReport(scores, data.test.labels, scorer, cfg["run.name"])
    out = os.path.join(args.out, "scores.csv")
    report.to_csv(out)
    manifest.outputs = {"scores": out}
    manifest.metrics.update(n=len(report), prevalence=float(report.labels.mean()) if len(report) else None)
    manifest.write(args.out)
    print(f"scored {len(report)} samples with {scorer}: {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    manifest = RunManifest(command="eval")
    try:
        report = ScoreReport.from_csv(args.report)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read report {args.report}: {exc}") from exc
    if len(set(report.labels.tolist())) < 2:
        raise DataError(f"report {args.report} holds a single class; precision-recall is undefined")
    curve = evaluation.pr_curve(report.scores, report.labels)
    ap = evaluation.auprc(curve)
    stats = evaluation.boxplot_stats(report.scores, report.labels)
    metrics_path = os.path.join(args.out, "metrics.csv")
    with open(metrics_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["auprc", repr(ap)])
        w.writerow(["prevalence", repr(curve.prevalence)])
        w.writerow(["n", len(report)])
        w.writerow(["scorer", report.scorer])
        w.writerow(["model", report.model])
        w.writerow(["integration", evaluation.INTEGRATION_RULE])
    svg_path = os.path.join(args.out, "pr_curve.svg")
    evaluation.pr_curve_svg(curve, svg_path, title=f"{report.model} / {report.scorer}")
    box_path = os.path.join(args.out, "boxplot.csv")
    evaluation.boxplot_csv(stats, box_path)
    manifest.outputs = {"metrics": metrics_path, "pr_curve": svg_path, "boxplot": box_path,
                        "report": args.report}
    if args.curve_csv:
        curve.to_csv(args.curve_csv)
        manifest.outputs["pr_curve_csv"] = args.curve_csv
    manifest.metrics = {"auprc": ap, "prevalence": curve.prevalence}
    manifest.write(args.out)
    print(f"AUPRC {ap:.4f} (prevalence {curve.prevalence:.4f})")
    return EXIT_OK


def cmd_invert(args) -> int:
    cfg, manifest = _setup(args)
    path = _require(args.checkpoint, "checkpoint")
    data = load_data(cfg)
    x = data.test.samples
    if args.limit:
        x = x[:args.limit]
    generator, _ = _gan_networks(cfg, path, x.shape[1])
    z, loss = invert_generator(generator, x, inversion_config(cfg))
    out = os.path.join(args.out, "latents.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id"] + [f"z{i}" for i in range(z.shape[1])] + ["loss", "label"])
        for i, (row, l_) in enumerate(zip(z, loss)):
            w.writerow([i] + [repr(float(v)) for v in row] + [repr(float(l_)), int(data.test.labels[i])])
    manifest.checkpoints = {"gan": path}
    manifest.outputs = {"latents": out}
    manifest.metrics = {"n": len(z), "median_loss": float(np.median(loss))}
    manifest.write(args.out)
    print(f"inverted {len(z)} samples: {out}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "train-encoder": cmd_train_encoder,
    "score": cmd_score,
    "eval": cmd_eval,
    "gen-toy": cmd_gen_toy,
    "invert": cmd_invert,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wgad", description="WGAN training and GAN-based anomaly detection")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="flat section.key = value file")
            sp.add_argument("--seed", type=int, help="override run.seed")
            sp.add_argument("--precision", choices=("f32", "f64"), help="override run.precision")
        sp.add_argument("--out", required=True, help="output directory")

    common(sub.add_parser("train", help="train a GAN / WGAN"))
    sp = sub.add_parser("train-encoder", help="fit an encoder under a frozen generator")
    common(sp)
    sp.add_argument("--checkpoint", required=True, help="GAN checkpoint from 'train'")
    sp = sub.add_parser("score", help="score the test split")
    common(sp)
    sp.add_argument("--checkpoint", required=True, help="GAN checkpoint from 'train'")
    sp.add_argument("--encoder", help="encoder checkpoint (encoder_mse and bigan scorers)")
    sp = sub.add_parser("eval", help="precision-recall and boxplot outputs for a score report")
    common(sp, config=False)
    sp.add_argument("--report", required=True, help="scores.csv from 'score'")
    sp.add_argument("--curve-csv", help="also write the PR curve as CSV to this path")
    common(sub.add_parser("gen-toy", help="write the toy mixture dataset"))
    sp = sub.add_parser("invert", help="invert the generator on test samples")
    common(sp)
    sp.add_argument("--checkpoint", required=True, help="GAN checkpoint from 'train'")
    sp.add_argument("--limit", type=int, default=0, help="only the first N test samples")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"wgad: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"wgad: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, ad.NonFiniteError) as exc:
        print(f"wgad: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except checkpoint.ChecksumError as exc:
        print(f"wgad: checkpoint CRC mismatch: {exc}", file=sys.stderr)
        return EXIT_CRC
    except checkpoint.CheckpointError as exc:
        print(f"wgad: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
