"""Command-line entry point.

Subcommands: train-denoiser, train-noise-gan, denoise, synth-data, eval,
verify, count-params. Exit codes: 0 success, 1 verification/criteria failure,
2 usage error, 3 I/O error. The ``GRDN_SEED`` environment variable overrides
every seed in the config file.
"""

import argparse
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint
from .config import AppConfig, TINY_CONFIG, load_config, parse_config
from .data import PairRecord, load_dataset, load_image, save_image, write_dataset
from .errors import CheckpointError, ConfigError, DataError
from .gan import build_conditioning, build_generator, heteroscedastic_noise, sample_noise
from .metrics import count_parameters, evaluate
from .models import build_grdn, build_rdn_baseline
from .tensor import Tensor
from .verify import SUITES, run_suites

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3


def _load_app(args) -> AppConfig:
    app = load_config(args.config) if args.config else parse_config(TINY_CONFIG)
    seed_override = os.environ.get("GRDN_SEED")
    if seed_override is not None:
        seed = int(seed_override)
        app.model.seed = seed
        app.gan.seed = seed
        app.data.seed = seed
        app.train_extras.seed = seed
        app.gan_train_extras.seed = seed
    return app


def cmd_train_denoiser(args) -> int:
    from .training import default_sources, noisy_input_psnr, train_denoiser

    app = _load_app(args)
    train, val = default_sources(app)
    print(f"noisy-input psnr on validation: {noisy_input_psnr(val):.2f} dB")
    result = train_denoiser(app, train, val, args.out, arch=args.arch,
                            resume_from=args.resume, quiet=False)
    print(f"best validation psnr: {result.best_psnr:.2f} dB")
    print(f"checkpoints: {result.last_checkpoint} (last), {result.best_checkpoint} (best)")
    print(f"log: {result.log_path}")
    return EXIT_OK


def cmd_train_noise_gan(args) -> int:
    from .training import default_sources, train_noise_gan

    app = _load_app(args)
    train, _ = default_sources(app)
    result = train_noise_gan(app, train, args.out, quiet=False)
    print(f"generator checkpoint: {result.generator_checkpoint}")
    print(f"log: {result.log_path}")
    return EXIT_OK


def _model_from_checkpoint(path, app: AppConfig, force: bool):
    ckpt = load_checkpoint(path, expected_fingerprint=app.fingerprint if not force else None,
                           force=force)
    cfg_app = parse_config(ckpt.config_text) if ckpt.config_text else app
    arch = "rdn" if any(k.startswith("sfe1") for k in ckpt.tensors) else "grdn"
    model = build_rdn_baseline(cfg_app.model) if arch == "rdn" else build_grdn(cfg_app.model)
    model.load_state_dict(ckpt.tensors)
    return model.eval(), ckpt


def cmd_denoise(args) -> int:
    app = _load_app(args)
    model, ckpt = _model_from_checkpoint(args.checkpoint, app, args.force)
    os.makedirs(args.out, exist_ok=True)
    names = sorted(f for f in os.listdir(args.input) if f.lower().endswith(".png"))
    if not names:
        raise DataError(f"no PNG files in {args.input}")
    from .metrics import EvalReport, pad_to_even, psnr, ssim

    report = EvalReport(model_fingerprint=ckpt.fingerprint, config_echo=ckpt.config_text)
    for name in names:
        noisy = load_image(os.path.join(args.input, name)).data
        padded, (h, w) = pad_to_even(noisy)
        out = model(Tensor(padded[None]))
        denoised = out.data[0, :, :h, :w]
        save_image(os.path.join(args.out, name), Tensor(denoised))
        if args.reference:
            clean = load_image(os.path.join(args.reference, name)).data
            report.entries.append((name, psnr(clean, denoised), ssim(clean, denoised)))
    print(f"denoised {len(names)} images into {args.out}")
    if args.reference:
        csv_path = os.path.join(args.out, "report.csv")
        with open(csv_path, "w") as fh:
            fh.write(report.to_csv())
        print(f"mean psnr {report.mean_psnr:.2f} dB, mean ssim {report.mean_ssim:.4f}")
        print(f"report: {csv_path}")
    return EXIT_OK


def cmd_synth_data(args) -> int:
    from .data import SCENE_KINDS, SceneSpec, generate_scene

    app = _load_app(args)
    rng = np.random.default_rng(app.data.seed)
    records = []
    generator = None
    if args.generator:
        gaon = load_checkpoint(args.generator, force=True)
        generator = build_generator(parse_config(gaon.config_text).gan)
        generator.load_state_dict(gaon.tensors)
    for i in range(args.count):
        kind = SCENE_KINDS[i % len(SCENE_KINDS)]
        clean = generate_scene(SceneSpec(kind, (app.data.scene_size, app.data.scene_size),
                                         seed=(app.data.seed, 31, i))).data
        camera = int(rng.integers(5))
        iso = float(rng.choice((100.0, 400.0, 800.0, 1600.0, 3200.0)))
        shutter = float(rng.choice((1e-3, 4e-3, 1e-2, 1e-1, 0.5)))
        if generator is not None:
            cond = build_conditioning([camera], [iso], [shutter],
                                      clean[None].astype(generator.config.np_dtype))
            noise = sample_noise(generator, cond, seed=(app.data.seed, 37, i)).data[0]
            noisy = clean + noise.astype(np.float64)
            source = "gan"
        else:
            noisy = heteroscedastic_noise(Tensor(clean), app.data.noise_a, app.data.noise_b,
                                          seed=(app.data.seed, 37, i)).data
            source = "stat"
        records.append(PairRecord(f"scene{i:04d}", clean, noisy, camera, iso, shutter,
                                  app.data.noise_a, app.data.noise_b, source))
    write_dataset(args.out, records)
    print(f"wrote {len(records)} pairs to {args.out} ({records[0].source} noise)")
    return EXIT_OK


def cmd_eval(args) -> int:
    app = _load_app(args)
    model, ckpt = _model_from_checkpoint(args.checkpoint, app, args.force)
    records = load_dataset(args.data)
    dataset = [(r.name, r.clean, r.noisy) for r in records]
    report = evaluate(model, dataset, fingerprint=ckpt.fingerprint, config_echo=ckpt.config_text)
    print(report.to_csv(), end="")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report.to_csv())
    return EXIT_OK


def cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    return EXIT_OK if run_suites(names) else EXIT_VERIFY_FAILED


def cmd_count_params(args) -> int:
    app = _load_app(args)
    grdn = build_grdn(app.model)
    rdn = build_rdn_baseline(app.model)
    g, r = count_parameters(grdn), count_parameters(rdn)
    print(f"grdn: {g:,} parameters")
    print(f"rdn baseline: {r:,} parameters")
    print(f"relative difference: {abs(g - r) / r:.3%}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grdn",
        description="Grouped residual dense denoiser and conditioned "
                    "relativistic noise GAN, on a from-scratch autodiff core.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", help="config file (key=value sections); "
                                        "defaults to the built-in tiny config")

    p = sub.add_parser("train-denoiser", help="train the denoiser on procedural data")
    add_config(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--arch", choices=("grdn", "rdn"), default="grdn")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train_denoiser)

    p = sub.add_parser("train-noise-gan", help="train the conditional noise generator")
    add_config(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_noise_gan)

    p = sub.add_parser("denoise", help="denoise a directory of PNGs")
    add_config(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="directory of noisy PNGs")
    p.add_argument("--out", required=True)
    p.add_argument("--reference", help="directory of clean PNGs for a metrics report")
    p.add_argument("--force", action="store_true", help="ignore fingerprint mismatch")
    p.set_defaults(fn=cmd_denoise)

    p = sub.add_parser("synth-data", help="write a synthetic paired dataset")
    add_config(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--generator", help="generator checkpoint; statistical noise if omitted")
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a written dataset")
    add_config(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset directory with manifest.txt")
    p.add_argument("--out", help="write the CSV report here")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify", help="run self-check suites")
    p.add_argument("--suite", choices=list(SUITES) + ["all"], default="all")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("count-params", help="print model parameter counts")
    add_config(p)
    p.set_defaults(fn=cmd_count_params)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
