"""Training loops for the denoiser and the noise GAN.

Both loops draw the batch for iteration ``t`` as a pure function of
``(seed, t)``, so a run is bitwise reproducible and resuming from a
checkpoint continues exactly where the interrupted run left off.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import AppConfig
from .data import MixSpec, PairRecord, PatchSampler, SceneSpec, batch_at, generate_scene
from .errors import CheckpointError, TrainingDiverged
from .gan import (
    GanBatch,
    _cergan_losses_with_scores,
    build_conditioning,
    build_discriminator,
    build_generator,
    heteroscedastic_noise,
    sample_noise,
)
from .layers import Adam, clip_grad_norm, global_grad_norm, l1_loss
from .metrics import psnr
from .models import build_grdn, build_rdn_baseline
from .schedule import lr_at
from .tensor import Tensor

CAMERA_COUNT = 5
ISO_CHOICES = (100.0, 400.0, 800.0, 1600.0, 3200.0)
SHUTTER_CHOICES = (1e-3, 4e-3, 1e-2, 1e-1, 0.5)


def build_procedural_pairs(data_cfg, n: int, seed_base: int, source: str = "real"):
    """Clean scenes plus heteroscedastic noise, with synthetic metadata."""
    from .data import SCENE_KINDS

    records = []
    for i in range(n):
        kind = SCENE_KINDS[i % len(SCENE_KINDS)]
        clean = generate_scene(SceneSpec(kind, (data_cfg.scene_size, data_cfg.scene_size),
                                         seed=(seed_base, i))).data
        meta_rng = np.random.default_rng((seed_base, i, 1))
        noisy = heteroscedastic_noise(Tensor(clean), data_cfg.noise_a, data_cfg.noise_b,
                                      seed=(seed_base, i, 2)).data
        records.append(PairRecord(
            name=f"{source}{i:04d}",
            clean=clean,
            noisy=noisy,
            camera=int(meta_rng.integers(CAMERA_COUNT)),
            iso=float(meta_rng.choice(ISO_CHOICES)),
            shutter=float(meta_rng.choice(SHUTTER_CHOICES)),
            noise_a=data_cfg.noise_a,
            noise_b=data_cfg.noise_b,
            source=source,
        ))
    return records


def default_sources(app: AppConfig):
    """Train/validation record lists from the [data] section."""
    train = build_procedural_pairs(app.data, app.data.num_scenes, app.data.seed)
    val = build_procedural_pairs(app.data, app.data.num_val_scenes, app.data.seed + 7919)
    return train, val


@dataclass
class TrainResult:
    last_checkpoint: str
    best_checkpoint: str
    log_path: str
    losses: list = field(default_factory=list)
    validations: list = field(default_factory=list)   # (iter, psnr)
    best_psnr: float = -math.inf


def _to_dtype(arr, dtype):
    return np.ascontiguousarray(arr, dtype=dtype)


def validation_psnr(model, val_records, dtype) -> float:
    model.eval()
    values = []
    for rec in val_records:
        out = model(Tensor(_to_dtype(rec.noisy[None], dtype)))
        values.append(psnr(rec.clean, out.data[0].astype(np.float64)))
    model.train()
    return float(np.mean(values))


def noisy_input_psnr(val_records) -> float:
    return float(np.mean([psnr(r.clean, r.noisy) for r in val_records]))


def _diverged(t, lr, params, loss_value):
    return TrainingDiverged(
        f"non-finite loss {loss_value!r} at iteration={t}, lr={lr:.3e}, "
        f"grad_norm={global_grad_norm(params):.3e}"
    )


def train_denoiser(app: AppConfig, sources, val_records, out_dir,
                   arch: str = "grdn", resume_from: str | None = None,
                   mix: MixSpec | None = None, quiet: bool = True) -> TrainResult:
    """Forward / L1 / backward / Adam with periodic validation and checkpoints."""
    os.makedirs(out_dir, exist_ok=True)
    sched = app.train
    extras = app.train_extras
    model = build_grdn(app.model) if arch == "grdn" else build_rdn_baseline(app.model)
    dtype = app.model.np_dtype
    params = model.parameters()
    opt = Adam(params, lr=sched.lr0, beta1=sched.beta1, beta2=sched.beta2)
    sampler = PatchSampler(app.data.patch_size, app.data.margin)
    mix = mix or MixSpec((1.0, 0.0, 0.0))
    source_list = sources if isinstance(sources[0], list) else [sources, [], []]

    start = 0
    if resume_from is not None:
        # schedule edits (a longer run, say) are fine on resume, but the
        # model topology must match exactly
        ckpt = load_checkpoint(resume_from, force=True)
        from .config import parse_config

        if ckpt.config_text and parse_config(ckpt.config_text).model != app.model:
            raise CheckpointError(
                f"{resume_from} was trained with a different [model] section"
            )
        model.load_state_dict(ckpt.tensors)
        if ckpt.optimizer is None:
            raise CheckpointError(f"{resume_from} has no optimizer state; cannot resume")
        opt.load_state_dict(ckpt.optimizer)
        start = ckpt.iteration

    log_path = os.path.join(out_dir, f"train_{arch}.csv")
    last_path = os.path.join(out_dir, f"{arch}_last.ckpt")
    best_path = os.path.join(out_dir, f"{arch}_best.ckpt")
    result = TrainResult(last_path, best_path, log_path)

    def save(path, iteration):
        save_checkpoint(path, Checkpoint(model.state_dict(), app.fingerprint,
                                         app.text, iteration, opt.state_dict()))

    mode = "a" if start > 0 else "w"
    with open(log_path, mode) as log:
        if start == 0:
            log.write("iter,lr,loss,psnr\n")
        for t in range(start, sched.total_iterations):
            clean_np, noisy_np, _ = batch_at(mix, source_list, sampler,
                                             sched.batch_size, extras.seed, t)
            noisy = T.constant(_to_dtype(noisy_np, dtype))
            clean = T.constant(_to_dtype(clean_np, dtype))
            lr = lr_at(sched, t)
            opt.lr = lr
            loss = l1_loss(model(noisy), clean)
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                raise _diverged(t, lr, params, loss_value)
            opt.zero_grad()
            T.backward(loss)
            if sched.grad_clip > 0:
                clip_grad_norm(params, sched.grad_clip)
            opt.step()
            result.losses.append(loss_value)

            val_field = ""
            if extras.val_every and (t + 1) % extras.val_every == 0:
                val = validation_psnr(model, val_records, dtype)
                result.validations.append((t + 1, val))
                val_field = f"{val:.6f}"
                if val > result.best_psnr:
                    result.best_psnr = val
                    save(best_path, t + 1)
                if not quiet:
                    print(f"iter {t + 1}: loss {loss_value:.5f}, val psnr {val:.2f} dB")
            log.write(f"{t},{lr:.10g},{loss_value:.10g},{val_field}\n")
            if extras.checkpoint_every and (t + 1) % extras.checkpoint_every == 0:
                save(last_path, t + 1)
    save(last_path, sched.total_iterations)
    if not os.path.exists(best_path):
        save(best_path, sched.total_iterations)
    return result


@dataclass
class GanTrainResult:
    generator_checkpoint: str
    log_path: str
    losses_g: list = field(default_factory=list)
    losses_d: list = field(default_factory=list)


def train_noise_gan(app: AppConfig, sources, out_dir, quiet: bool = True) -> GanTrainResult:
    """Alternating discriminator/generator steps on real-vs-generated noise."""
    os.makedirs(out_dir, exist_ok=True)
    sched = app.gan_train
    extras = app.gan_train_extras
    dtype = app.gan.np_dtype
    gen = build_generator(app.gan)
    disc = build_discriminator(app.gan)
    opt_g = Adam(gen.parameters(), lr=sched.lr0, beta1=sched.beta1, beta2=sched.beta2)
    opt_d = Adam(disc.parameters(), lr=sched.lr0, beta1=sched.beta1, beta2=sched.beta2)
    patch = app.data.gan_patch_size
    sampler = PatchSampler(patch, app.data.margin)
    mix = MixSpec((1.0, 0.0, 0.0))
    source_list = [sources, [], []]

    log_path = os.path.join(out_dir, "train_gan.csv")
    gen_path = os.path.join(out_dir, "generator.ckpt")
    result = GanTrainResult(gen_path, log_path)

    with open(log_path, "w") as log:
        log.write("iter,lr,loss_g,loss_d,d_rf,d_fr\n")
        for t in range(sched.total_iterations):
            clean_np, noisy_np, recs = batch_at(mix, source_list, sampler,
                                                sched.batch_size, extras.seed, t)
            clean_np = _to_dtype(clean_np, dtype)
            x_r = T.constant(_to_dtype(noisy_np, dtype) - clean_np)
            x_c = build_conditioning([r.camera for r in recs], [r.iso for r in recs],
                                     [r.shutter for r in recs], clean_np)
            z = T.constant(np.random.default_rng((extras.seed, t, 3)).standard_normal(
                (sched.batch_size, app.gan.latent_channels, patch, patch)).astype(dtype))

            lr = lr_at(sched, t)
            opt_g.lr = lr
            opt_d.lr = lr * app.gan.disc_lr_scale

            x_f = gen(x_c, z)
            loss_g, loss_d, (d_rf, d_fr) = _cergan_losses_with_scores(
                disc, GanBatch(x_r, x_f, x_c))
            lg, ld = loss_g.item(), loss_d.item()
            if not (math.isfinite(lg) and math.isfinite(ld)):
                raise _diverged(t, lr, gen.parameters() + disc.parameters(), (lg, ld))

            # both backwards run before any parameter update
            opt_g.zero_grad()
            opt_d.zero_grad()
            T.backward(loss_g)
            opt_d.zero_grad()  # generator loss also reached D; D trains on its own loss
            T.backward(loss_d)
            if sched.grad_clip > 0:
                clip_grad_norm(gen.parameters(), sched.grad_clip)
                clip_grad_norm(disc.parameters(), sched.grad_clip)
            opt_d.step()
            opt_g.step()

            result.losses_g.append(lg)
            result.losses_d.append(ld)
            log.write(f"{t},{lr:.10g},{lg:.10g},{ld:.10g},{d_rf:.6f},{d_fr:.6f}\n")
            if not quiet and (t + 1) % max(1, extras.val_every) == 0:
                print(f"iter {t + 1}: L_G {lg:.4f}, L_D {ld:.4f}")

            if extras.checkpoint_every and (t + 1) % extras.checkpoint_every == 0:
                save_checkpoint(gen_path, Checkpoint(gen.state_dict(), app.fingerprint,
                                                     app.text, t + 1, opt_g.state_dict()))
    save_checkpoint(gen_path, Checkpoint(gen.state_dict(), app.fingerprint,
                                         app.text, sched.total_iterations, opt_g.state_dict()))
    return result


def generated_noise_statistics(generator, records, patch_size: int, seed,
                               n_patches: int = 8, n_samples: int = 64):
    """Signal-dependence diagnostics for a trained generator.

    Per-pixel variance is estimated across ``n_samples`` independent draws for
    fixed clean patches, then correlated against the clean intensity.
    """
    sampler = PatchSampler(patch_size)
    rng = np.random.default_rng((seed, 17))
    cleans, cams, isos, shts = [], [], [], []
    for k in range(n_patches):
        rec = records[k % len(records)]
        (r, c), = sampler.offsets(rec.clean.shape[-2], rec.clean.shape[-1], 1, rng)
        cleans.append(rec.clean[:, r : r + patch_size, c : c + patch_size])
        cams.append(rec.camera)
        isos.append(rec.iso)
        shts.append(rec.shutter)
    clean_batch = np.stack(cleans)
    x_c = build_conditioning(cams, isos, shts, clean_batch.astype(generator.config.np_dtype))
    draws = np.stack([
        sample_noise(generator, x_c, seed=(seed, 23, k)).data.astype(np.float64)
        for k in range(n_samples)
    ])
    per_pixel_var = draws.var(axis=0)
    intensity = clean_batch.reshape(-1)
    variance = per_pixel_var.reshape(-1)
    r_matrix = np.corrcoef(intensity, variance)
    slope = np.polyfit(intensity, variance, 1)[0]
    return {
        "noise_std": float(draws.std()),
        "pearson_r": float(r_matrix[0, 1]),
        "slope": float(slope),
        "per_pixel_var": per_pixel_var,
    }
