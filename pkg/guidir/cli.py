# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

"""
Command line interface.

Every command accepts ``--config PATH`` (TOML or JSON). Top-level keys and
keys under a table named after the command become option defaults;
explicit flags win. The resolved options are written to
``effective-config.json`` in the command's output directory, which can be
passed back with ``--config`` to repeat the run.

Exit codes: 0 success, 2 invalid input, 3 any other failure.

"""

import argparse
from concurrent.futures import ThreadPoolExecutor
import json
import logging
import math
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import torch

from guidir import settings
from guidir.dataset.corpus import cached_corpus, generate_corpus, \
    load_training_samples
from guidir.dataset.manifest import ManifestEntry, build_manifest, \
    entries_by_stem, verify_manifest
from guidir.dataset.vocabulary import parse_prompt
from guidir.degradation import DegradationSpec, apply_pipeline
from guidir.denoiser import build_denoiser, load_denoiser, save_denoiser
from guidir.imaging import Image, load_png, save_png
from guidir.metrics import MetricReport, psnr, ssim
from guidir.models import ReportType
from guidir.reports import create_schema, store_report
from guidir.robust_encoder import degradation_robust_finetune, encode_lq, \
    load_autoencoder, pretrain_autoencoder, save_autoencoder
from guidir.sampler import CFG_STAGES, SamplerConfig, \
    restoration_guided_sample, write_trace
from guidir.training import TrainConfig, mix_negative_samples, \
    train_denoiser, write_history
from guidir.util import GuidirInputError, derive_seed, ensure_dir, \
    write_csv, write_json
import config

logger = logging.getLogger(__name__)

SWEEP_CSV_HEADER = ("tau_r", "psnr_lq_db", "ssim_lq", "psnr_gt_db", "ssim_gt")
EXIT_OK = 0
EXIT_INPUT = 2
EXIT_FAILURE = 3


class RunConfigError(GuidirInputError):
    pass


def load_run_config(path):
    """
    Read a TOML or JSON run configuration into a dict.

    """
    try:
        if path.endswith(".toml"):
            with open(path, 'rb') as f:
                return tomllib.load(f)
        if path.endswith(".json"):
            with open(path, 'r') as f:
                return json.load(f)
    except OSError as e:
        raise RunConfigError("Cannot read config '{}': {}".format(path, e))
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise RunConfigError("Invalid config '{}': {}".format(path, e))
    raise RunConfigError("Config '{}' must be a .toml or .json file".format(
        path))


def _float_list(text):
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            "Expected a comma separated list of numbers, got '{}'".format(
                text))


def _add_common(parser):
    parser.add_argument("--config", help="TOML or JSON file with option "
                        "defaults.")
    parser.add_argument("--seed", type=int, default=0,
                        help="Global seed (default 0).")
    parser.add_argument("--jobs", type=int, default=1,
                        help="Worker threads. --jobs 1 is the "
                        "bit-reproducible reference.")
    parser.add_argument("--out", help="Output directory.")
    parser.add_argument("-v", "--verbosity",
                        choices=["debug", "info", "warning", "error",
                                 "critical"],
                        help="Set the logging level: {debug, info(default), "
                        "warning, error, critical}")


def _add_sampler_options(parser):
    parser.add_argument("--checkpoint", help="Denoiser checkpoint.")
    parser.add_argument("--input", help="Directory of LQ PNG images.")
    parser.add_argument("--manifest", help="Manifest supplying caption "
                        "tokens per image stem.")
    parser.add_argument("--prompt", help="Positive prompt tokens; "
                        "overrides the manifest captions.")
    parser.add_argument("--negative-prompt",
                        default=" ".join(settings.NEGATIVE_PROMPT_TOKENS),
                        help="Negative prompt tokens.")
    parser.add_argument("--encoder", help="Robust encoder checkpoint; its "
                        "cleaned preview becomes the guidance target.")
    parser.add_argument("--steps", type=int, default=settings.SAMPLER_STEPS)
    parser.add_argument("--tau-r", type=float, default=settings.SAMPLER_TAU_R)
    parser.add_argument("--lambda-cfg", type=float,
                        default=settings.SAMPLER_LAMBDA_CFG)
    parser.add_argument("--s-churn", type=float,
                        default=settings.SAMPLER_S_CHURN)
    parser.add_argument("--s-noise", type=float,
                        default=settings.SAMPLER_S_NOISE)
    parser.add_argument("--s-min", type=float, default=settings.SAMPLER_S_MIN)
    parser.add_argument("--s-max", type=float, default=settings.SAMPLER_S_MAX)
    parser.add_argument("--no-guidance", action="store_true",
                        help="Plain EDM sampling (no restoration guidance, "
                        "no CFG).")
    parser.add_argument("--cfg-stage", choices=CFG_STAGES,
                        default="denoised")


def build_parser():
    """
    Returns (parser, {command: subparser}).

    """
    parser = argparse.ArgumentParser(
        prog="toolkit.py",
        description="Restoration-guided diffusion toolkit.")
    subparsers = parser.add_subparsers(dest="command", required=True)
    commands = {}

    p = subparsers.add_parser("synth", help="Generate a texture corpus.")
    _add_common(p)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--negative-ratio", type=float,
                   default=settings.NEGATIVE_RATIO)
    p.add_argument("--size", type=int, default=settings.TEXTURE_SIZE)
    p.add_argument("--palette", choices=["gray", "rgb"], default="gray")
    p.set_defaults(func=cmd_synth)
    commands["synth"] = p

    p = subparsers.add_parser("degrade", help="Build LQ images from a "
                              "corpus.")
    _add_common(p)
    p.add_argument("--manifest", help="Corpus manifest.")
    p.add_argument("--preset", help="Degradation preset: {}.".format(
        ", ".join(settings.DEGRADATION_PRESETS)))
    p.add_argument("--spec", help="JSON file with a degradation spec.")
    p.set_defaults(func=cmd_degrade)
    commands["degrade"] = p

    p = subparsers.add_parser("train", help="Train the controlled "
                              "denoiser.")
    _add_common(p)
    p.add_argument("--manifest", help="Corpus manifest.")
    p.add_argument("--init", help="Start from this denoiser checkpoint.")
    p.add_argument("--preset", help="Fixed training degradation instead of "
                   "the randomized one.")
    p.add_argument("--steps", type=int, default=settings.TRAIN_STEPS,
                   help="Adaptor training steps.")
    p.add_argument("--base-steps", type=int,
                   help="Base prior steps (default {} for a fresh network, "
                   "0 with --init).".format(settings.TRAIN_BASE_STEPS))
    p.add_argument("--batch-size", type=int,
                   default=settings.TRAIN_BATCH_SIZE)
    p.add_argument("--lr", type=float, default=settings.TRAIN_LR)
    p.add_argument("--negative-ratio", type=float,
                   default=settings.NEGATIVE_RATIO)
    p.add_argument("--train-base", action="store_true",
                   help="Keep the base trainable during adaptor training.")
    p.set_defaults(func=cmd_train)
    commands["train"] = p

    p = subparsers.add_parser("train-encoder", help="Pretrain the "
                              "autoencoder and fine-tune its encoder.")
    _add_common(p)
    p.add_argument("--manifest", help="Corpus manifest.")
    p.add_argument("--preset", help="Fixed fine-tune degradation.")
    p.add_argument("--epochs", type=int, default=settings.AE_PRETRAIN_EPOCHS)
    p.add_argument("--finetune-epochs", type=int,
                   default=settings.AE_FINETUNE_EPOCHS)
    p.set_defaults(func=cmd_train_encoder)
    commands["train-encoder"] = p

    p = subparsers.add_parser("preview", help="Write robust encoder "
                              "previews D(E(x)).")
    _add_common(p)
    p.add_argument("--encoder", help="Robust encoder checkpoint.")
    p.add_argument("--input", help="Directory of PNG images.")
    p.set_defaults(func=cmd_preview)
    commands["preview"] = p

    p = subparsers.add_parser("restore", help="Restore LQ images.")
    _add_common(p)
    _add_sampler_options(p)
    p.add_argument("--trace", action="store_true",
                   help="Write a per-step trace CSV per image.")
    p.add_argument("--bit-depth", type=int, choices=[8, 16], default=8)
    p.set_defaults(func=cmd_restore)
    commands["restore"] = p

    p = subparsers.add_parser("evaluate", help="PSNR / SSIM against "
                              "references.")
    _add_common(p)
    p.add_argument("--restored", help="Directory of restored PNGs.")
    p.add_argument("--reference", help="Directory of reference PNGs.")
    p.add_argument("--store", action="store_true",
                   help="Store the report in the report database.")
    p.set_defaults(func=cmd_evaluate)
    commands["evaluate"] = p

    p = subparsers.add_parser("sweep-tau", help="Metrics as a function of "
                              "tau_r.")
    _add_common(p)
    _add_sampler_options(p)
    p.add_argument("--taus", type=_float_list,
                   default=list(settings.SWEEP_TAUS))
    p.add_argument("--gt", help="Directory of GT PNGs.")
    p.set_defaults(func=cmd_sweep_tau)
    commands["sweep-tau"] = p
    return parser, commands


def _apply_run_config(commands, data):
    known = set()
    for command, sub in commands.items():
        dests = set(vars(sub.parse_args([])))
        known |= dests
        defaults = {k.replace("-", "_"): v for k, v in data.items()
                    if not isinstance(v, dict)}
        defaults.update({k.replace("-", "_"): v
                         for k, v in data.get(command, {}).items()})
        sub.set_defaults(**{k: v for k, v in defaults.items() if k in dests})
    unknown = [k for k, v in data.items()
               if not isinstance(v, dict) and k.replace("-", "_") not in known
               and k != "command"]
    if unknown:
        raise RunConfigError("Unknown config keys: {}".format(
            ", ".join(sorted(unknown))))


def parse_cmd(argv=None):
    """
    Parse command line arguments, with defaults from --config.

    """
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser, commands = build_parser()
    if known.config:
        _apply_run_config(commands, load_run_config(known.config))
    return parser.parse_args(argv)


def configure_logging(verbosity):
    """
    Configure logging.

    Command line option for level has precedence.
    Format and file are configured from the config file.

    """
    if not verbosity:
        level = config.LOGGING_LEVEL
    else:
        level = getattr(logging, verbosity.upper())

    if config.LOGGING_FILE:
        logging.basicConfig(level=level,
                            format=config.LOGGING_FORMAT,
                            filename=config.LOGGING_FILE)
    else:
        logging.basicConfig(level=level,
                            format=config.LOGGING_FORMAT)


def _require(args, *names):
    missing = ["--" + n.replace("_", "-") for n in names
               if getattr(args, n) in (None, "")]
    if missing:
        raise GuidirInputError("Missing required option(s): {}".format(
            ", ".join(missing)))


def write_effective_config(out_dir, args):
    data = {k: v for k, v in vars(args).items()
            if k not in ("func", "config")}
    write_json(os.path.join(out_dir, config.EFFECTIVE_CONFIG_FILE), data)


def list_pngs(directory):
    """
    {stem: path} for the PNG files in ``directory``.

    """
    if not os.path.isdir(directory):
        raise GuidirInputError("'{}' is not a directory".format(directory))
    return {os.path.splitext(name)[0]: os.path.join(directory, name)
            for name in sorted(os.listdir(directory))
            if name.lower().endswith(".png")}


def _map(jobs, func, items):
    if jobs < 1:
        raise GuidirInputError("--jobs must be >= 1, got {}".format(jobs))
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(func, items))


def restore_image(net, lq, sampler_config, pos_tokens=(),
                  neg_tokens=settings.NEGATIVE_PROMPT_TOKENS, encoder=None,
                  cfg_stage="denoised", trace=None):
    """
    Restore one LQ Image with restoration-guided sampling. With ``encoder``
    the cleaned preview D(E(lq)) is the guidance target, otherwise the LQ
    pixels are.

    """
    if encoder is not None:
        _, guide = encode_lq(encoder, lq)
    else:
        guide = lq
    z_lq = guide.to_tensor()[None]
    cond_pos = net.condition(pos_tokens)
    cond_neg = net.condition(neg_tokens) \
        if sampler_config.lambda_cfg != 0 else None
    with torch.no_grad():
        z = restoration_guided_sample(net, z_lq, cond_pos, cond_neg,
                                      sampler_config.schedule(),
                                      sampler_config, cfg_stage=cfg_stage,
                                      trace=trace)
    return Image.from_tensor(z)


def _sampler_config(args, seed, tau_r=None):
    return SamplerConfig(T=args.steps, lambda_cfg=args.lambda_cfg,
                         tau_r=args.tau_r if tau_r is None else tau_r,
                         s_churn=args.s_churn, s_noise=args.s_noise,
                         s_min=args.s_min, s_max=args.s_max, seed=seed,
                         guidance_enabled=not args.no_guidance)


def _prompt_lookup(args):
    """
    Returns a function stem -> positive prompt tokens.

    """
    if args.prompt is not None:
        tokens = parse_prompt(args.prompt)
        return lambda stem: tokens
    captions = {}
    if args.manifest:
        captions = entries_by_stem(verify_manifest(args.manifest))

    def lookup(stem):
        if stem in captions:
            return list(captions[stem].caption_tokens)
        logger.warning("No caption for '{}', sampling unconditionally"
                       "".format(stem))
        return []
    return lookup


def _load_sampling_inputs(args):
    _require(args, "checkpoint", "input", "out")
    net = load_denoiser(args.checkpoint)
    encoder = load_autoencoder(args.encoder) if args.encoder else None
    images = list_pngs(args.input)
    if not images:
        raise GuidirInputError("No PNG images in '{}'".format(args.input))
    return net, encoder, images


CORPUS_OPTIONS = ("n", "seed", "negative_ratio", "size", "palette")


def _reusable_corpus(out, args):
    """
    True when ``out`` holds a verified corpus generated with the same
    options.

    """
    try:
        with open(os.path.join(out, config.EFFECTIVE_CONFIG_FILE), 'r') as f:
            previous = json.load(f)
    except (OSError, json.JSONDecodeError):
        return False
    if any(previous.get(k) != getattr(args, k) for k in CORPUS_OPTIONS):
        return False
    return cached_corpus(out) is not None


def cmd_synth(args):
    if args.out is None:
        args.out = os.path.join(config.CACHE_DIR, "corpus-n{}-s{}".format(
            args.n, args.seed))
        if _reusable_corpus(args.out, args):
            logger.warning("Reusing cached corpus in '{}'".format(args.out))
            return
    ensure_dir(args.out)
    generate_corpus(args.out, args.n, seed=args.seed,
                    negative_ratio=args.negative_ratio, size=args.size,
                    palette=args.palette, jobs=args.jobs)
    write_effective_config(args.out, args)


def cmd_degrade(args):
    _require(args, "manifest", "out")
    if bool(args.preset) == bool(args.spec):
        raise GuidirInputError("Give exactly one of --preset and --spec")
    if args.preset:
        spec = DegradationSpec.from_preset(args.preset)
    else:
        try:
            with open(args.spec, 'r') as f:
                spec = DegradationSpec.from_json(f.read())
        except OSError as e:
            raise GuidirInputError("Cannot read spec '{}': {}".format(
                args.spec, e))
    root = os.path.dirname(os.path.abspath(args.manifest))
    entries = [e for e in verify_manifest(args.manifest)
               if e.quality_label == "positive"]
    ensure_dir(os.path.join(args.out, "lq"))
    ensure_dir(os.path.join(args.out, "gt"))

    def degrade(item):
        index, entry = item
        hq = load_png(os.path.join(root, entry.path))
        item_spec = spec.with_seed(derive_seed(args.seed, index))
        lq_path = os.path.join("lq", entry.stem + ".png")
        save_png(apply_pipeline(hq, item_spec),
                 os.path.join(args.out, lq_path))
        save_png(hq, os.path.join(args.out, "gt", entry.stem + ".png"))
        return ManifestEntry.for_file(args.out, lq_path, entry.caption_tokens,
                                      "positive", item_spec.to_dict())

    lq_entries = _map(args.jobs, degrade, list(enumerate(entries)))
    build_manifest(args.out, lq_entries)
    write_effective_config(args.out, args)
    logger.info("Degraded {} images into '{}'".format(len(lq_entries),
                                                       args.out))


def cmd_train(args):
    _require(args, "manifest", "out")
    ensure_dir(args.out)
    positives, negatives = load_training_samples(args.manifest,
                                                 seed=args.seed,
                                                 preset=args.preset)
    if not positives:
        raise GuidirInputError("No positive samples in '{}'".format(
            args.manifest))
    if args.base_steps is None:
        args.base_steps = 0 if args.init else settings.TRAIN_BASE_STEPS
    cfg = TrainConfig(batch_size=args.batch_size, steps=args.steps,
                      lr=args.lr, negative_ratio=args.negative_ratio,
                      seed=args.seed, base_steps=args.base_steps,
                      freeze_base=not args.train_base)
    if args.init:
        net = load_denoiser(args.init)
    else:
        net = build_denoiser(channels=positives[0].hq.channels,
                             seed=args.seed)
    stream = mix_negative_samples(positives, negatives, cfg.negative_ratio,
                                  cfg.seed)
    net, history = train_denoiser(net, stream, cfg)
    save_denoiser(net, os.path.join(args.out, "denoiser.ckpt"))
    write_history(os.path.join(args.out, "history.csv"), history)
    with open(os.path.join(args.out, "train-config.json"), 'w') as f:
        f.write(cfg.to_json())
    write_effective_config(args.out, args)


def cmd_train_encoder(args):
    _require(args, "manifest", "out")
    ensure_dir(args.out)
    positives, _ = load_training_samples(args.manifest, seed=args.seed,
                                         preset=args.preset)
    ae, pretrain_history = pretrain_autoencoder(
        [s.hq for s in positives], epochs=args.epochs, seed=args.seed)
    tuned, finetune_history = degradation_robust_finetune(
        ae, [(s.lq, s.hq) for s in positives], epochs=args.finetune_epochs,
        seed=args.seed)
    save_autoencoder(tuned, os.path.join(args.out, "encoder.ckpt"))
    rows = [("pretrain", i, loss) for i, loss in enumerate(pretrain_history)]
    rows += [("finetune", i, loss) for i, loss in enumerate(finetune_history)]
    write_csv(os.path.join(args.out, "encoder-history.csv"),
              ("phase", "epoch", "loss"), rows)
    write_effective_config(args.out, args)


def cmd_preview(args):
    _require(args, "encoder", "input", "out")
    ensure_dir(args.out)
    encoder = load_autoencoder(args.encoder)
    images = list_pngs(args.input)

    def preview(item):
        stem, path = item
        _, cleaned = encode_lq(encoder, load_png(path))
        save_png(cleaned, os.path.join(args.out, stem + ".png"))

    _map(args.jobs, preview, list(images.items()))
    write_effective_config(args.out, args)


def cmd_restore(args):
    net, encoder, images = _load_sampling_inputs(args)
    ensure_dir(args.out)
    prompt_for = _prompt_lookup(args)
    neg_tokens = parse_prompt(args.negative_prompt)

    def restore(item):
        index, (stem, path) = item
        trace = [] if args.trace else None
        restored = restore_image(
            net, load_png(path),
            _sampler_config(args, derive_seed(args.seed, index)),
            prompt_for(stem), neg_tokens, encoder, args.cfg_stage, trace)
        save_png(restored, os.path.join(args.out, stem + ".png"),
                 bit_depth=args.bit_depth)
        if trace is not None:
            write_trace(os.path.join(args.out, stem + ".trace.csv"), trace)

    _map(args.jobs, restore, list(enumerate(images.items())))
    write_effective_config(args.out, args)
    logger.info("Restored {} images into '{}'".format(len(images), args.out))


def evaluate_dirs(restored_dir, reference_dir):
    """
    MetricReport over the PNG stems of two directories, which must match
    exactly.

    """
    restored = list_pngs(restored_dir)
    reference = list_pngs(reference_dir)
    unmatched = sorted(set(restored) ^ set(reference))
    if unmatched:
        raise GuidirInputError("Unmatched image stems: {}".format(
            ", ".join(unmatched)))
    if not restored:
        raise GuidirInputError("No PNG images in '{}'".format(restored_dir))
    report = MetricReport()
    for stem in sorted(restored):
        report.add(restored[stem], load_png(restored[stem]),
                   load_png(reference[stem]))
    return report


def cmd_evaluate(args):
    _require(args, "restored", "reference", "out")
    ensure_dir(args.out)
    report = evaluate_dirs(args.restored, args.reference)
    report.write_csv(os.path.join(args.out, "metrics.csv"))
    summary = report.summary()
    write_json(os.path.join(args.out, "summary.json"), summary)
    logger.info("{} images: PSNR {:.3f} dB, SSIM {:.4f}".format(
        summary['count'], summary['psnr_db_mean'], summary['ssim_mean']))
    if args.store:
        create_schema(config.DB_ENGINE)
        store_report(config.DB_ENGINE, report.rows, ReportType.evaluate,
                     args.restored, args.reference,
                     {k: v for k, v in vars(args).items()
                      if k not in ("func", "config")})
    write_effective_config(args.out, args)


def _mean(values):
    return math.fsum(values) / len(values)


def cmd_sweep_tau(args):
    net, encoder, images = _load_sampling_inputs(args)
    ensure_dir(args.out)
    gt = None
    if args.gt:
        gt = list_pngs(args.gt)
        unmatched = sorted(set(images) ^ set(gt))
        if unmatched:
            raise GuidirInputError("Unmatched image stems: {}".format(
                ", ".join(unmatched)))
    prompt_for = _prompt_lookup(args)
    neg_tokens = parse_prompt(args.negative_prompt)
    lq_images = {stem: load_png(path) for stem, path in images.items()}

    rows = []
    for tau_r in args.taus:
        def restore(item):
            index, stem = item
            restored = restore_image(
                net, lq_images[stem],
                _sampler_config(args, derive_seed(args.seed, index), tau_r),
                prompt_for(stem), neg_tokens, encoder, args.cfg_stage)
            scores = [psnr(restored, lq_images[stem]),
                      ssim(restored, lq_images[stem])]
            if gt is not None:
                reference = load_png(gt[stem])
                scores += [psnr(restored, reference),
                           ssim(restored, reference)]
            return scores

        scores = _map(args.jobs, restore, list(enumerate(lq_images)))
        row = [tau_r] + [_mean([s[i] for s in scores])
                         for i in range(len(scores[0]))]
        if gt is None:
            row += ["", ""]
        logger.info("tau_r {}: PSNR vs LQ {:.3f} dB".format(tau_r, row[1]))
        rows.append(row)

    write_csv(os.path.join(args.out, "sweep.csv"), SWEEP_CSV_HEADER, rows)
    with open(os.path.join(args.out, "sweep.dat"), 'w') as f:
        f.write("# " + " ".join(SWEEP_CSV_HEADER) + "\n")
        for row in rows:
            f.write(" ".join("NaN" if v == "" else repr(float(v))
                             for v in row) + "\n")
    write_effective_config(args.out, args)


def main(argv=None):
    """
    Parse the command line, run the command and return the exit code.

    """
    try:
        args = parse_cmd(argv)
    except SystemExit as e:
        return e.code
    except GuidirInputError as e:
        logging.critical("{}: {}".format(e.__class__.__name__, e))
        return EXIT_INPUT
    configure_logging(args.verbosity)
    try:
        args.func(args)
    except GuidirInputError as e:
        logging.critical("Invalid input!")
        logging.critical("{}: {}".format(e.__class__.__name__, e))
        return EXIT_INPUT
    except Exception as e:
        logging.critical("Execution failed!")
        logging.critical("{}: {}".format(e.__class__.__name__, e))
        return EXIT_FAILURE
    return EXIT_OK
