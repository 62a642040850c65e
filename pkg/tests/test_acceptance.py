"""Acceptance criteria, one pass/fail line per criterion.

Criteria 5 and 6 are desk-scale training experiments marked ``slow`` (minutes
of single-core CPU each); everything else finishes in seconds to a couple of
minutes. Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import math
import time

import numpy as np
import pytest

from grdn import tensor as T
from grdn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from grdn.config import TINY_CONFIG, parse_config
from grdn.data import PatchSampler
from grdn.gan import (
    GanBatch,
    GanConfig,
    build_conditioning,
    build_discriminator,
    build_generator,
    cergan_losses,
    ragan_d,
)
from grdn.metrics import count_parameters, psnr, ssim
from grdn.models import ModelConfig, build_grdb, build_grdn, build_rdb, build_rdn_baseline
from grdn.schedule import TrainingSchedule, lr_at
from grdn.tensor import Tensor
from grdn.verify import gradcheck_suite


def criterion(number, ok: bool, detail: str):
    print(f"\nACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {number}: {detail}"


class TestCriterion1ParameterCounts:
    def test_parameter_count_reproduction(self):
        t0 = time.time()
        grdn = count_parameters(build_grdn(ModelConfig(dtype="float32")))
        rdn = count_parameters(build_rdn_baseline(ModelConfig(dtype="float32")))
        rel = abs(grdn - rdn) / rdn
        elapsed = time.time() - t0
        criterion(
            1,
            21_500_000 <= grdn <= 22_500_000
            and 21_400_000 <= rdn <= 22_400_000
            and rel < 0.015,
            f"grdn {grdn:,} in [21.5M, 22.5M], rdn {rdn:,} in [21.4M, 22.4M], "
            f"diff {rel:.2%} < 1.5% ({elapsed:.1f}s)",
        )


class TestCriterion2GradientChecks:
    def test_gradient_check_suite(self, capsys):
        t0 = time.time()
        ok = gradcheck_suite()
        elapsed = time.time() - t0
        with capsys.disabled():
            criterion(2, ok, f"all op kinds < 1e-5 (composite < 1e-3) at 64-bit "
                             f"({elapsed:.0f}s)")


class TestCriterion3StructuralIdentities:
    def test_residual_identities_and_shapes(self, rng):
        t0 = time.time()
        worst = 0.0

        feat = rng.standard_normal((1, 8, 12, 12))
        rdb = build_rdb(ModelConfig.tiny())
        rdb.fusion.weight.data[:] = 0.0
        rdb.fusion.bias.data[:] = 0.0
        worst = max(worst, float(np.abs(rdb(Tensor(feat)).data - feat).max()))

        grdb = build_grdb(ModelConfig.tiny())
        grdb.fusion.weight.data[:] = 0.0
        grdb.fusion.bias.data[:] = 0.0
        worst = max(worst, float(np.abs(grdb(Tensor(feat)).data - feat).max()))

        # pair-skip level: block residuals off, zeroed fusions zero the branch
        x = rng.random((1, 3, 16, 16))
        skip = build_grdn(ModelConfig.tiny(skip_every_2=True, grdb_residual=False))
        for g in skip.grdbs:
            g.fusion.weight.data[:] = 0.0
            g.fusion.bias.data[:] = 0.0
        h = skip.down(skip.head(Tensor(x)))
        out = h
        for i, g in enumerate(skip.grdbs):
            if i % 2 == 0:
                pair = out
            out = g(out)
            if i % 2 == 1:
                out = out + pair
        worst = max(worst, float(np.abs(out.data - h.data).max()))

        model = build_grdn(ModelConfig.tiny())
        model.tail.weight.data[:] = 0.0
        model.tail.bias.data[:] = 0.0
        worst = max(worst, float(np.abs(model(Tensor(x)).data - x).max()))

        shapes_ok = True
        fresh = build_grdn(ModelConfig.tiny())
        for hw in (8, 16, 32, 48, 96):
            out = fresh(Tensor(rng.random((1, 3, hw, hw))))
            shapes_ok = shapes_ok and out.shape == (1, 3, hw, hw)
        elapsed = time.time() - t0
        criterion(3, worst < 1e-12 and shapes_ok,
                  f"four residual identities max abs diff {worst:.1e} < 1e-12, "
                  f"shapes preserved for H,W in {{8,16,32,48,96}} ({elapsed:.0f}s)")


class TestCriterion4LossAlgebra:
    def test_swap_degenerate_and_mean_shift(self, rng):
        t0 = time.time()
        cfg = GanConfig(num_resblocks=1, width=4, disc_stages=1, disc_width=4, seed=1)
        disc = build_discriminator(cfg).eval()
        disc.score.weight.data[:] = rng.standard_normal(disc.score.weight.shape)
        cond = build_conditioning([1, 3], [400.0, 1600.0], [0.01, 0.2],
                                  rng.random((2, 3, 8, 8)))
        a = Tensor(rng.standard_normal((2, 3, 8, 8)) * 0.1)
        b = Tensor(rng.standard_normal((2, 3, 8, 8)) * 0.1)
        lg, ld = cergan_losses(disc, GanBatch(a, b, cond), require_graph=False)
        lg_s, ld_s = cergan_losses(disc, GanBatch(b, a, cond), require_graph=False)
        swap_err = max(abs(lg.item() - ld_s.item()), abs(ld.item() - lg_s.item()))

        disc0 = build_discriminator(cfg).eval()  # zero score head: D = 0.5
        lg0, ld0 = cergan_losses(disc0, GanBatch(a, b, cond), require_graph=False)
        degen_err = max(abs(lg0.item() - 0.25), abs(ld0.item() - 0.25))

        c_r = rng.standard_normal((6, 1))
        c_f = rng.standard_normal((6, 1))
        base = ragan_d(Tensor(c_r), Tensor(c_f))
        shifted = ragan_d(Tensor(c_r + 4.2), Tensor(c_f + 4.2))
        shift_err = max(float(np.abs(p.data - q.data).max()) for p, q in zip(base, shifted))
        elapsed = time.time() - t0
        criterion(4, swap_err < 1e-12 and degen_err < 1e-12 and shift_err < 1e-12,
                  f"swap identity {swap_err:.1e}, degenerate point {degen_err:.1e}, "
                  f"mean-shift invariance {shift_err:.1e}, all < 1e-12 ({elapsed:.1f}s)")


@pytest.fixture(scope="module")
def denoising_runs(tmp_path_factory):
    from grdn.training import default_sources, noisy_input_psnr, train_denoiser

    out = tmp_path_factory.mktemp("accept_dn")
    app = parse_config(TINY_CONFIG)
    train, val = default_sources(app)
    results = {"noisy": noisy_input_psnr(val)}
    t0 = time.time()
    results["grdn"] = train_denoiser(app, train, val, out, arch="grdn").best_psnr
    results["rdn"] = train_denoiser(app, train, val, out, arch="rdn").best_psnr
    results["minutes"] = (time.time() - t0) / 60
    return results


@pytest.mark.slow
class TestCriterion5DeskScaleDenoising:
    def test_5a_improvement_over_noisy_input(self, denoising_runs, capsys):
        r = denoising_runs
        with capsys.disabled():
            criterion("5a", r["grdn"] >= r["noisy"] + 3.0,
                      f"tiny grdn {r['grdn']:.2f} dB >= noisy {r['noisy']:.2f} + 3 dB "
                      f"({r['minutes']:.1f} min for both runs)")

    def test_5b_ordering_against_flat_baseline(self, denoising_runs, capsys):
        # Known red at this scale: the stride-2 trunk at 8 channels cannot
        # carry the full-rank noise correction (2x2x3 = 12 values per
        # position), so the full-resolution flat cascade leads by far more
        # than the tolerance. At base width >= 12 the ordering tightens;
        # the operating point is pinned here, so the gap is structural.
        r = denoising_runs
        with capsys.disabled():
            criterion("5b", r["grdn"] >= r["rdn"] - 0.5,
                      f"tiny grdn {r['grdn']:.2f} dB vs rdn {r['rdn']:.2f} - 0.5 dB")


@pytest.mark.slow
class TestCriterion6DeskScaleNoiseGan:
    def test_generated_noise_statistics(self, tmp_path, capsys):
        from grdn.training import (
            default_sources,
            generated_noise_statistics,
            train_noise_gan,
        )

        app = parse_config(TINY_CONFIG
                           .replace("noise_a = 0.0", "noise_a = 0.02")
                           .replace("noise_b = 0.009611687812379854", "noise_b = 1e-4"))
        train, val = default_sources(app)
        t0 = time.time()
        result = train_noise_gan(app, train, tmp_path)
        minutes = (time.time() - t0) / 60
        gen = build_generator(app.gan)
        gen.load_state_dict(load_checkpoint(result.generator_checkpoint).tensors)
        stats = generated_noise_statistics(gen, val, app.data.gan_patch_size, seed=123)
        real_std = float(np.concatenate([(r.noisy - r.clean).ravel() for r in val]).std())
        ratio = stats["noise_std"] / real_std
        with capsys.disabled():
            criterion(6, 0.7 <= ratio <= 1.3 and stats["pearson_r"] > 0.3
                         and stats["slope"] > 0,
                      f"std ratio {ratio:.2f} in [0.7, 1.3], per-pixel variance vs "
                      f"intensity r {stats['pearson_r']:.2f} > 0.3, slope "
                      f"{stats['slope']:.2e} > 0 ({minutes:.1f} min)")


class TestCriterion7ScheduleAndDeterminism:
    def test_schedules_checkpoints_seeds_and_borders(self, tmp_path, rng):
        from grdn.training import default_sources, train_denoiser

        t0 = time.time()
        step = TrainingSchedule(lr0=1e-4, policy="step", step_period=200_000)
        linear = TrainingSchedule(lr0=2e-4, policy="linear",
                                  linear_start=320_000, linear_end=340_000)
        lr_ok = (lr_at(step, 200_000) == 5e-5 and lr_at(step, 0) == 1e-4
                 and lr_at(linear, 330_000) == 1e-4 and lr_at(linear, 340_000) == 0.0)

        tensors = {"a": rng.standard_normal((3, 4)),
                   "b": rng.standard_normal(7).astype(np.float32),
                   "c": np.array(12, dtype=np.int64)}
        path = tmp_path / "rt.ckpt"
        save_checkpoint(path, Checkpoint(tensors, "fp", "cfg", 5, {"m": tensors["a"]}))
        loaded = load_checkpoint(path)
        rt_ok = all(
            np.array_equal(loaded.tensors[k], v) and loaded.tensors[k].dtype == v.dtype
            for k, v in tensors.items()
        )

        app = parse_config(TINY_CONFIG
                           .replace("total_iterations = 5000", "total_iterations = 40")
                           .replace("val_every = 500", "val_every = 20")
                           .replace("checkpoint_every = 2500", "checkpoint_every = 0"))
        train, val = default_sources(app)
        r1 = train_denoiser(app, train, val, tmp_path / "s1")
        r2 = train_denoiser(app, train, val, tmp_path / "s2")
        log_ok = open(r1.log_path).read() == open(r2.log_path).read() and r1.losses == r2.losses

        sampler = PatchSampler(patch_size=32, margin=8, seed=77)
        offsets = np.array(sampler.offsets(256, 256, 100_000))
        border_ok = offsets.min() >= 8 and (offsets + 32).max() <= 248
        elapsed = time.time() - t0
        criterion(7, lr_ok and rt_ok and log_ok and border_ok,
                  f"lr worked examples exact, checkpoint round-trip bit-exact, "
                  f"seeded loss logs bit-identical, border exclusion over 1e5 draws "
                  f"({elapsed:.0f}s)")


class TestCriterion8MetricCorrectness:
    def test_metric_fixed_points(self, rng):
        t0 = time.time()
        x = rng.random((3, 24, 24))
        ssim_ok = ssim(x, x.copy()) == 1.0
        value = psnr(np.zeros((3, 64, 64)), np.full((3, 64, 64), 1.0 / 255.0))
        psnr_ok = abs(value - 20.0 * math.log10(255.0)) < 0.01
        sym_ok = psnr(x, 1 - x) == psnr(1 - x, x) and math.isinf(psnr(x, x.copy()))
        elapsed = time.time() - t0
        criterion(8, ssim_ok and psnr_ok and sym_ok,
                  f"ssim(x,x) == 1, uniform 1/255 error -> {value:.2f} dB "
                  f"(48.13 within 0.01), psnr symmetric and inf at equality ({elapsed:.1f}s)")
