"""Self-check suites behind the ``verify`` subcommand.

Each suite runs a list of named checks, prints one table row per check, and
reports overall success. These mirror the library's structural guarantees so
a build can be validated without the test harness.
"""

import numpy as np

from . import tensor as T
from .gan import (
    GanBatch,
    GanConfig,
    build_conditioning,
    build_discriminator,
    build_generator,
    cergan_losses,
    ragan_d,
)
from .gradcheck import grad_check
from .layers import (
    Adam,
    BatchNormLayer,
    Cbam,
    ChannelAttention,
    SpatialAttention,
    SpectralNorm,
    l1_loss,
)
from .metrics import count_parameters, psnr, ssim
from .models import ModelConfig, build_grdn, build_rdn_baseline
from .tensor import Tensor


class CheckTable:
    def __init__(self):
        self.rows = []

    def add(self, name: str, ok: bool, detail: str = ""):
        self.rows.append((name, ok, detail))

    def run(self, name: str, fn):
        try:
            detail = fn()
            self.add(name, True, detail if isinstance(detail, str) else "")
        except AssertionError as exc:
            self.add(name, False, str(exc))
        except Exception as exc:  # a crashed check is a failed check
            self.add(name, False, f"{type(exc).__name__}: {exc}")

    def print_report(self, title: str):
        width = max((len(r[0]) for r in self.rows), default=10) + 2
        print(f"== {title} ==")
        for name, ok, detail in self.rows:
            mark = "PASS" if ok else "FAIL"
            suffix = f"  {detail}" if detail else ""
            print(f"  {name:<{width}} {mark}{suffix}")
        failed = sum(1 for _, ok, _ in self.rows if not ok)
        print(f"  {len(self.rows) - failed}/{len(self.rows)} checks passed")
        return failed == 0


def _gc(build, params, tol, name, sample=None):
    rep = grad_check(build, params, op_name=name, sample=sample)
    assert rep.max_abs_analytic > 0.0, "no live gradient reached the checked parameters"
    assert rep.max_rel_error < tol, f"max rel err {rep.max_rel_error:.2e} >= {tol:g}"
    return f"max rel err {rep.max_rel_error:.1e}"


def gradcheck_suite() -> bool:
    rng = np.random.default_rng(42)
    table = CheckTable()

    x = T.parameter(rng.standard_normal((1, 2, 5, 5)))
    w = T.parameter(rng.standard_normal((3, 2, 3, 3)) * 0.5)
    b = T.parameter(rng.standard_normal(3))
    tgt = T.constant(rng.standard_normal((1, 3, 5, 5)))
    table.run("conv2d", lambda: _gc(
        lambda: T.reduce_sum(T.mul(T.conv2d(x, w, b, 1, 1), tgt)), [x, w, b], 1e-5, "conv2d"))

    xt = T.parameter(rng.standard_normal((1, 3, 4, 4)))
    wt = T.parameter(rng.standard_normal((3, 2, 4, 4)) * 0.5)
    tgt_t = T.constant(rng.standard_normal((1, 2, 8, 8)))
    table.run("conv2d_transpose", lambda: _gc(
        lambda: T.reduce_sum(T.mul(T.conv2d_transpose(xt, wt, None, 2, 1), tgt_t)),
        [xt, wt], 1e-5, "conv2d_transpose"))

    act_in = T.parameter(rng.standard_normal(40) + np.sign(rng.standard_normal(40)) * 0.05)
    for kind in ("relu", "sigmoid", "leaky-relu"):
        table.run(f"activation[{kind}]", lambda k=kind: _gc(
            lambda: T.reduce_sum(T.activation(k, act_in) ** 2), [act_in], 1e-5, k))

    bn = BatchNormLayer(3)
    bn.gamma.data[:] = rng.uniform(0.5, 1.5, 3)
    xbn = T.parameter(rng.standard_normal((4, 3, 4, 4)))
    tbn = T.constant(rng.standard_normal((4, 3, 4, 4)))
    table.run("batchnorm", lambda: _gc(
        lambda: T.reduce_sum(T.mul(bn(xbn, mode="train"), tbn)),
        [xbn, bn.gamma, bn.beta], 1e-5, "batchnorm"))

    xp = T.parameter(rng.standard_normal((2, 3, 4, 4)))
    for kind in ("avg", "max"):
        table.run(f"pool_global[{kind}]", lambda k=kind: _gc(
            lambda: T.reduce_sum(T.pool_global(k, xp) ** 2), [xp], 1e-5, k))

    ca = ChannelAttention(4, 2, rng=rng)
    sa = SpatialAttention(rng=rng)
    xa = T.parameter(rng.standard_normal((2, 4, 8, 8)))
    ta = T.constant(rng.standard_normal((2, 4, 8, 8)))
    table.run("channel_attention", lambda: _gc(
        lambda: T.reduce_sum(T.mul(T.mul(xa, ca(xa)), ta)),
        [xa] + ca.parameters(), 1e-5, "channel_attention"))
    table.run("spatial_attention", lambda: _gc(
        lambda: T.reduce_sum(T.mul(T.mul(xa, sa(xa)), ta)),
        [xa] + sa.parameters(), 1e-5, "spatial_attention"))

    pred = T.parameter(rng.standard_normal(12) + np.sign(rng.standard_normal(12)) * 0.2)
    target = T.constant(rng.standard_normal(12) * 0.01)
    table.run("l1_loss", lambda: _gc(lambda: l1_loss(pred, target), [pred], 1e-5, "l1"))

    cfg = ModelConfig.tiny(num_grdbs=1, rdbs_per_grdb=1, convs_per_rdb=2, seed=5)
    model = build_grdn(cfg)
    model.tail.weight.data[:] = 0.1 * rng.standard_normal(model.tail.weight.shape)
    xin = T.constant(rng.random((1, 3, 8, 8)))
    yin = T.constant(rng.random((1, 3, 8, 8)))
    params = model.parameters()
    picks = [params[i] for i in rng.choice(len(params), 5, replace=False)]
    table.run("grdn-tiny composite", lambda: _gc(
        lambda: l1_loss(model(xin), yin), picks, 1e-3, "grdn-tiny", sample=3))

    gcfg = GanConfig(num_resblocks=1, width=4, disc_stages=1, disc_width=4, seed=3)
    gen = build_generator(gcfg).eval()
    disc = build_discriminator(gcfg).eval()
    disc.score.weight.data[:] = rng.standard_normal(disc.score.weight.shape)
    cond = build_conditioning([1], [800.0], [0.01], rng.random((1, 3, 4, 4)))
    z = gen.latent_like(cond, 0)
    x_r = T.constant(rng.standard_normal((1, 3, 4, 4)) * 0.1)

    def gan_loss():
        loss_g, _ = cergan_losses(disc, GanBatch(x_r, gen(cond, z), cond))
        return loss_g

    gparams = gen.parameters() + disc.parameters()
    gpicks = [gparams[i] for i in rng.choice(len(gparams), 5, replace=False)]
    table.run("cergan loss graph", lambda: _gc(gan_loss, gpicks, 1e-5, "cergan", sample=3))

    return table.print_report("gradient checks (64-bit central differences)")


def invariants_suite() -> bool:
    rng = np.random.default_rng(7)
    table = CheckTable()

    def adjoint():
        worst = 0.0
        for k, s, p, hw in [(3, 1, 1, (8, 9)), (4, 2, 1, (8, 10)), (1, 1, 0, (6, 6))]:
            x = rng.standard_normal((2, 3) + hw)
            w = rng.standard_normal((4, 3, k, k))
            y = T.conv2d(Tensor(x), Tensor(w), None, s, p).data
            yr = rng.standard_normal(y.shape)
            lhs = np.vdot(y, yr)
            rhs = np.vdot(x, T.conv2d_transpose(Tensor(yr), Tensor(w), None, s, p).data)
            worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-12))
        assert worst < 1e-10, f"adjoint identity rel err {worst:.2e}"
        return f"rel err {worst:.1e}"

    table.run("conv adjoint identity", adjoint)

    def residual_identities():
        from .models import build_grdb, build_rdb

        x = rng.random((1, 3, 16, 16))
        cfg = ModelConfig.tiny()
        feat = rng.standard_normal((1, 8, 12, 12))
        rdb = build_rdb(cfg)
        rdb.fusion.weight.data[:] = 0.0
        rdb.fusion.bias.data[:] = 0.0
        d1 = np.abs(rdb(Tensor(feat)).data - feat).max()
        grdb = build_grdb(cfg)
        grdb.fusion.weight.data[:] = 0.0
        grdb.fusion.bias.data[:] = 0.0
        d2 = np.abs(grdb(Tensor(feat)).data - feat).max()
        model = build_grdn(cfg)
        model.tail.weight.data[:] = 0.0
        model.tail.bias.data[:] = 0.0
        d3 = np.abs(model(Tensor(x)).data - x).max()
        # pair-skip level: with block residuals off, zeroed fusions make the
        # two-block branch the zero map and the skip-add the identity
        skip_model = build_grdn(ModelConfig.tiny(skip_every_2=True, grdb_residual=False))
        for g in skip_model.grdbs:
            g.fusion.weight.data[:] = 0.0
            g.fusion.bias.data[:] = 0.0
        h = skip_model.down(skip_model.head(Tensor(x)))
        out = h
        for i, g in enumerate(skip_model.grdbs):
            if i % 2 == 0:
                pair = out
            out = g(out)
            if i % 2 == 1:
                out = out + pair
        d4 = np.abs(out.data - h.data).max()
        worst = max(d1, d2, d3, d4)
        assert worst < 1e-12, f"residual identity abs err {worst:.2e}"
        return f"abs err {worst:.1e}"

    table.run("residual identities (4 levels)", residual_identities)

    def shapes():
        model = build_grdn(ModelConfig.tiny())
        for hw in (8, 16, 32, 48, 96):
            out = model(Tensor(rng.random((1, 3, hw, hw))))
            assert out.shape == (1, 3, hw, hw), f"shape broken at {hw}"
        return "H,W in {8,16,32,48,96}"

    table.run("shape preservation", shapes)

    def swap():
        cfg = GanConfig(num_resblocks=1, width=4, disc_stages=1, disc_width=4, seed=1)
        disc = build_discriminator(cfg).eval()
        disc.score.weight.data[:] = rng.standard_normal(disc.score.weight.shape)
        cond = build_conditioning([1, 2], [400.0, 800.0], [0.01, 0.1],
                                  rng.random((2, 3, 8, 8)))
        a = Tensor(rng.standard_normal((2, 3, 8, 8)) * 0.1)
        b = Tensor(rng.standard_normal((2, 3, 8, 8)) * 0.1)
        lg, ld = cergan_losses(disc, GanBatch(a, b, cond), require_graph=False)
        lg_s, ld_s = cergan_losses(disc, GanBatch(b, a, cond), require_graph=False)
        err = max(abs(lg.item() - ld_s.item()), abs(ld.item() - lg_s.item()))
        assert err < 1e-12, f"swap identity err {err:.2e}"
        return f"err {err:.1e}"

    table.run("generator/discriminator loss swap", swap)

    def degenerate():
        cfg = GanConfig(num_resblocks=1, width=4, disc_stages=1, disc_width=4, seed=1)
        disc = build_discriminator(cfg).eval()
        cond = build_conditioning([0], [100.0], [0.01], rng.random((1, 3, 8, 8)))
        a = Tensor(rng.standard_normal((1, 3, 8, 8)))
        lg, ld = cergan_losses(disc, GanBatch(a, a, cond), require_graph=False)
        err = max(abs(lg.item() - 0.25), abs(ld.item() - 0.25))
        assert err < 1e-12, f"degenerate point err {err:.2e}"
        return "L_G = L_D = 0.25"

    table.run("degenerate point at D=0.5", degenerate)

    def mean_shift():
        c_r = Tensor(rng.standard_normal((6, 1)))
        c_f = Tensor(rng.standard_normal((6, 1)))
        base = ragan_d(c_r, c_f)
        shifted = ragan_d(Tensor(c_r.data + 5.1), Tensor(c_f.data + 5.1))
        err = max(np.abs(x.data - y.data).max() for x, y in zip(base, shifted))
        assert err < 1e-12, f"mean shift err {err:.2e}"
        return f"err {err:.1e}"

    table.run("relativistic mean-shift invariance", mean_shift)

    def sn_convergence():
        w = T.parameter(rng.standard_normal((8, 72)))
        sn = SpectralNorm(w, n_iterations=20)
        sigma = np.linalg.svd(sn.apply().data, compute_uv=False)[0]
        assert 0.95 <= sigma <= 1.05, f"normalized sigma {sigma:.4f}"
        return f"sigma {sigma:.4f}"

    table.run("spectral norm convergence", sn_convergence)

    def cbam_bound():
        cbam = Cbam(8, reduction=4, rng=rng)
        x = rng.standard_normal((2, 8, 6, 6)) * 2
        out = cbam(Tensor(x)).data
        assert np.all(np.abs(out) <= np.abs(x)), "attention amplified a feature"
        return "gates < 1"

    table.run("attention never amplifies", cbam_bound)

    def adam_idle():
        p = T.parameter(rng.standard_normal(6))
        before = p.data.copy()
        opt = Adam([p], lr=0.5)
        for _ in range(5):
            p.grad = np.zeros(6)
            opt.step()
        assert np.array_equal(p.data, before), "parameters moved with zero gradient"
        return "bit-identical"

    table.run("adam idle on zero gradients", adam_idle)

    def metric_examples():
        x = rng.random((3, 24, 24))
        assert ssim(x, x.copy()) == 1.0
        value = psnr(np.zeros((3, 40, 40)), np.full((3, 40, 40), 1 / 255))
        assert abs(value - 20 * np.log10(255)) < 0.01, f"psnr {value:.4f}"
        return "ssim(x,x)=1, uniform-error psnr ok"

    table.run("metric fixed points", metric_examples)

    return table.print_report("structural and algebraic invariants")


def params_suite() -> bool:
    table = CheckTable()

    def window():
        grdn = count_parameters(build_grdn(ModelConfig(dtype="float32")))
        rdn = count_parameters(build_rdn_baseline(ModelConfig(dtype="float32")))
        print(f"  grdn default: {grdn:,} parameters")
        print(f"  rdn  default: {rdn:,} parameters")
        assert 21_500_000 <= grdn <= 22_500_000, f"grdn count {grdn:,} outside window"
        assert 21_400_000 <= rdn <= 22_400_000, f"rdn count {rdn:,} outside window"
        rel = abs(grdn - rdn) / rdn
        assert rel < 0.015, f"relative difference {rel:.3%} >= 1.5%"
        return f"grdn {grdn/1e6:.2f}M, rdn {rdn/1e6:.2f}M, diff {rel:.2%}"

    table.run("default parameter counts", window)

    def closed_form():
        cfg = ModelConfig()
        block_params = count_parameters(__import__("grdn.models", fromlist=["build_rdb"])
                                        .build_rdb(cfg))
        g0, g, c = cfg.base_filters, cfg.growth, cfg.convs_per_rdb
        formula = sum(9 * g * (g0 + (i - 1) * g) for i in range(1, c + 1)) + c * g \
            + (g0 + c * g) * g0 + g0
        assert block_params == formula == 1_364_544, f"{block_params} != {formula}"
        return f"dense block = {block_params:,}"

    table.run("dense block closed form", closed_form)

    return table.print_report("parameter-count reproduction")


SUITES = {"gradcheck": gradcheck_suite, "invariants": invariants_suite, "params": params_suite}


def run_suites(names) -> bool:
    ok = True
    for name in names:
        ok = SUITES[name]() and ok
    return ok
