"""Parameter-owning layers and the optimizer.

A :class:`Module` discovers parameters by walking its attributes (tensors
with ``requires_grad`` are parameters, nested modules and lists of modules
recurse; plain numpy arrays are non-learned buffers). Layers are mutable
during training and owned by one trainer; eval-mode forward on frozen layers
is side-effect free except where noted (spectral-norm power iteration).
"""

import numpy as np

from . import tensor as T
from .errors import ConfigError, GraphError, ShapeError
from .tensor import Tensor

SUPPORTED_KERNELS = (1, 3, 4, 7)


class Module:
    training: bool = True

    def named_parameters(self, prefix: str = ""):
        out = []
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((key, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{key}.{i}."))
        if not prefix:  # a shared tensor (e.g. a spectrally normalized weight) counts once
            seen, unique = set(), []
            for key, p in out:
                if id(p) not in seen:
                    seen.add(id(p))
                    unique.append((key, p))
            return unique
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        out = [self]
        for value in vars(self).values():
            if isinstance(value, Module):
                out.extend(value.modules())
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        out.extend(item.modules())
        return out

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def named_buffers(self, prefix: str = ""):
        """Non-learned numpy state: running stats, power-iteration vectors."""
        out = []
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, np.ndarray):
                out.append((key, value))
            elif isinstance(value, Module):
                out.extend(value.named_buffers(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_buffers(f"{key}.{i}."))
        return out

    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({f"buffer:{name}": b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict):
        own = {name: p for name, p in self.named_parameters()}
        own_buffers = dict(self.named_buffers())
        expected = set(own) | {f"buffer:{n}" for n in own_buffers}
        missing = expected - set(state)
        extra = set(state) - expected
        if missing or extra:
            raise ShapeError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in own.items():
            arr = state[name]
            if arr.shape != p.data.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != model {p.data.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)
        self._assign_buffers({n: state[f"buffer:{n}"] for n in own_buffers})

    def _assign_buffers(self, buffers: dict, prefix: str = ""):
        for name, value in list(vars(self).items()):
            key = f"{prefix}{name}"
            if isinstance(value, np.ndarray) and key in buffers:
                setattr(self, name, buffers[key].astype(value.dtype, copy=True))
            elif isinstance(value, Module):
                value._assign_buffers(buffers, f"{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        item._assign_buffers(buffers, f"{key}.{i}.")

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming_uniform(shape, fan_in: int, rng: np.random.Generator, dtype=np.float64):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class ConvLayer(Module):
    """3x3/1x1/4x4/7x7 zero-padded convolution without dilation."""

    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=None, bias=True,
                 rng=None, dtype=np.float64):
        if kernel not in SUPPORTED_KERNELS:
            raise ConfigError(f"kernel size {kernel} not in {SUPPORTED_KERNELS}")
        if padding is None:
            padding = kernel // 2
        self.stride = stride
        self.padding = padding
        rng = rng or np.random.default_rng(0)
        fan_in = in_ch * kernel * kernel
        self.weight = T.parameter(kaiming_uniform((out_ch, in_ch, kernel, kernel), fan_in, rng, dtype))
        self.bias = T.parameter(np.zeros(out_ch, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class TransposedConvLayer(Module):
    """Up-sampling layer: adjoint of a strided convolution."""

    def __init__(self, in_ch, out_ch, kernel, stride, padding, bias=True,
                 rng=None, dtype=np.float64):
        if kernel not in SUPPORTED_KERNELS:
            raise ConfigError(f"kernel size {kernel} not in {SUPPORTED_KERNELS}")
        self.stride = stride
        self.padding = padding
        rng = rng or np.random.default_rng(0)
        fan_in = in_ch * kernel * kernel
        self.weight = T.parameter(kaiming_uniform((in_ch, out_ch, kernel, kernel), fan_in, rng, dtype))
        self.bias = T.parameter(np.zeros(out_ch, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d_transpose(x, self.weight, self.bias, self.stride, self.padding)


class BatchNormLayer(Module):
    """Per-channel batch normalization with running statistics.

    Train mode normalizes by batch statistics (differentiable) and updates the
    running buffers; eval mode uses the running buffers only.
    """

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float64):
        self.gamma = T.parameter(np.ones(channels, dtype=dtype))
        self.beta = T.parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor, mode: str | None = None) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.gamma.size:
            raise ShapeError(f"batchnorm expects (N,{self.gamma.size},H,W), got {x.shape}")
        train = self.training if mode is None else (mode == "train")
        gamma = T.reshape(self.gamma, (1, -1, 1, 1))
        beta = T.reshape(self.beta, (1, -1, 1, 1))
        if train:
            n, _, h, w = x.shape
            if n * h * w == 1:
                raise ShapeError("degenerate variance: train-mode batchnorm over a single value")
            mean = T.reduce_mean(x, axes=(0, 2, 3), keepdims=True)
            var = T.reduce_mean((x - mean) ** 2, axes=(0, 2, 3), keepdims=True)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean.data.reshape(-1)
            self.running_var = (1 - m) * self.running_var + m * var.data.reshape(-1)
            xhat = (x - mean) / T.sqrt(var + self.eps)
        else:
            rm = T.constant(self.running_mean.reshape(1, -1, 1, 1))
            rv = np.sqrt(self.running_var + self.eps).reshape(1, -1, 1, 1)
            xhat = (x - rm) / T.constant(rv)
        return gamma * xhat + beta


def batchnorm_forward(layer: BatchNormLayer, x: Tensor, mode: str) -> Tensor:
    return layer.forward(x, mode=mode)


class SpectralNorm(Module):
    """Largest-singular-value normalization of a weight via power iteration.

    The weight is viewed as (C_out, rest). ``u``/``v`` are non-learned
    buffers, updated in place only when ``update=True`` (training); the
    returned tensor is weight / sigma with gradient through both.
    """

    def __init__(self, weight: Tensor, n_iterations: int = 1, eps: float = 1e-12, rng=None):
        rng = rng or np.random.default_rng(0)
        rows = weight.shape[0]
        cols = int(np.prod(weight.shape[1:]))
        self.weight = weight
        self.n_iterations = n_iterations
        self.eps = eps
        self.u = _l2_normalize(rng.standard_normal(rows), eps)
        self.v = _l2_normalize(rng.standard_normal(cols), eps)

    def apply(self, update: bool = True, n_iterations: int | None = None) -> Tensor:
        w2d = self.weight.data.reshape(self.weight.shape[0], -1)
        if float(np.abs(w2d).max(initial=0.0)) == 0.0:
            raise ZeroDivisionError("spectral norm of an all-zero weight")
        u, v = self.u, self.v
        iters = self.n_iterations if n_iterations is None else n_iterations
        if update:
            for _ in range(iters):
                v = _l2_normalize(w2d.T @ u, self.eps)
                u = _l2_normalize(w2d @ v, self.eps)
            self.u, self.v = u, v
        outer = T.constant(np.outer(u, v).astype(w2d.dtype))
        sigma = T.reduce_sum(T.reshape(self.weight, w2d.shape) * outer)
        return self.weight / sigma

    def converge(self, n: int = 20):
        """Power-iterate u, v on the current weight without building a graph.

        Fresh random vectors can make u^T W v nearly zero, which would blow
        up the normalized weight; layers converge at construction so even an
        untrained eval-mode forward is well scaled.
        """
        w2d = self.weight.data.reshape(self.weight.shape[0], -1)
        u, v = self.u, self.v
        for _ in range(n):
            v = _l2_normalize(w2d.T @ u, self.eps)
            u = _l2_normalize(w2d @ v, self.eps)
        self.u, self.v = u, v

    def estimate(self) -> float:
        """Current sigma estimate without touching u, v."""
        w2d = self.weight.data.reshape(self.weight.shape[0], -1)
        return float(self.u @ w2d @ self.v)


def _l2_normalize(vec, eps):
    return vec / (np.linalg.norm(vec) + eps)


def spectral_normalize(sn: SpectralNorm, update: bool = True, n_iterations=None) -> Tensor:
    return sn.apply(update=update, n_iterations=n_iterations)


class SNConvLayer(Module):
    """Convolution whose weight is spectrally normalized at every forward."""

    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=None, bias=True,
                 n_iterations=1, rng=None, dtype=np.float64):
        self.conv = ConvLayer(in_ch, out_ch, kernel, stride, padding, bias, rng, dtype)
        self.sn = SpectralNorm(self.conv.weight, n_iterations, rng=rng)
        self.sn.converge()

    def forward(self, x: Tensor) -> Tensor:
        w_eff = self.sn.apply(update=self.training)
        return T.conv2d(x, w_eff, self.conv.bias, self.conv.stride, self.conv.padding)


class ChannelAttention(Module):
    """Per-channel gate in (0,1): sigmoid(MLP(avgpool) + MLP(maxpool))."""

    def __init__(self, channels, reduction, rng=None, dtype=np.float64):
        if channels % reduction != 0:
            raise ConfigError(f"channels {channels} not divisible by reduction {reduction}")
        self.fc1 = ConvLayer(channels, channels // reduction, 1, bias=False, rng=rng, dtype=dtype)
        self.fc2 = ConvLayer(channels // reduction, channels, 1, bias=False, rng=rng, dtype=dtype)

    def _mlp(self, pooled):
        return self.fc2(T.relu(self.fc1(pooled)))

    def forward(self, x: Tensor) -> Tensor:
        avg = self._mlp(T.pool_global("avg", x))
        mx = self._mlp(T.pool_global("max", x))
        return T.sigmoid(avg + mx)


class SpatialAttention(Module):
    """Per-pixel gate in (0,1) from a 7x7 conv over channel-avg and channel-max."""

    def __init__(self, kernel=7, rng=None, dtype=np.float64):
        self.conv = ConvLayer(2, 1, kernel, bias=False, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        avg = T.reduce_mean(x, axes=1, keepdims=True)
        mx = T.reduce_max(x, axes=1, keepdims=True)
        return T.sigmoid(self.conv(T.concat_channels([avg, mx])))


class Cbam(Module):
    """Channel gate then spatial gate, each multiplied into the features."""

    def __init__(self, channels, reduction=16, spatial_kernel=7, rng=None, dtype=np.float64):
        self.channel = ChannelAttention(channels, reduction, rng=rng, dtype=dtype)
        self.spatial = SpatialAttention(spatial_kernel, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = x * self.channel(x)
        return x * self.spatial(x)


def channel_attention(x: Tensor, module: ChannelAttention, reduction=None) -> Tensor:
    return module(x)


def spatial_attention(x: Tensor, module: SpatialAttention) -> Tensor:
    return module(x)


# ---------------------------------------------------------------------------
# losses


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over all elements."""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: shapes {pred.shape} and {target.shape} differ")
    return T.reduce_mean(T.absolute(pred - target))


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Bias-corrected Adam. ``step`` consumes gradients but never clears them;
    callers zero between iterations."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise GraphError(f"adam: parameter {i} has no gradient")
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            # rebind instead of mutating: graphs built before the step keep
            # consistent saved values
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_dict(self):
        state = {"t": np.array(self.t, dtype=np.int64)}
        for i in range(len(self.params)):
            state[f"m.{i}"] = self.m[i]
            state[f"v.{i}"] = self.v[i]
        return state

    def load_state_dict(self, state):
        self.t = int(state["t"])
        for i in range(len(self.params)):
            self.m[i] = state[f"m.{i}"].copy()
            self.v[i] = state[f"v.{i}"].copy()


def adam_step(state: Adam, params=None):
    state.step()


def global_grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    return float(np.sqrt(total))


def clip_grad_norm(params, max_norm: float):
    norm = global_grad_norm(params)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm
