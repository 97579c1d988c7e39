"""Minimal differentiable network engine: dense / conv / relu / flatten
layers with a softmax cross-entropy head.

Everything is float64 numpy. Models are flat parameter lists paired with
an immutable architecture description, so averaging client models
elementwise is well defined. The backward pass computes exact analytic
gradients with respect to the parameters and, on request, with respect
to the input image - the latter is what the sign-gradient attack
consumes.

All operations are pure functions of their arguments; values can be
shared freely across threads.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import STREAM_INIT, child_rng


# ---------------------------------------------------------------------------
# Architecture description


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class Conv2D:
    """Square-kernel 2-D convolution, stride 1, valid padding, NHWC."""

    in_channels: int
    out_channels: int
    kernel_size: int


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class ModelArch:
    """Layer topology. Frozen, so an instance doubles as the architecture
    identity tag: two parameter sets are averageable iff their arches
    compare equal."""

    name: str
    input_shape: tuple[int, ...]  # (H, W, C) for images, (D,) for vectors
    num_classes: int
    layers: tuple

    def __post_init__(self):
        shape = self.feature_shapes()[-1]
        if shape != (self.num_classes,):
            raise ValueError(
                f"arch {self.name!r}: final feature shape {shape} does not "
                f"match num_classes={self.num_classes}"
            )

    def feature_shapes(self) -> list[tuple[int, ...]]:
        """Per-layer output shapes (excluding the batch axis), starting
        with the input shape. Raises on any inconsistent layer spec."""
        shapes = [tuple(self.input_shape)]
        cur = shapes[0]
        for spec in self.layers:
            if isinstance(spec, Dense):
                if len(cur) != 1 or cur[0] != spec.in_features:
                    raise ValueError(f"dense expects ({spec.in_features},), got {cur}")
                cur = (spec.out_features,)
            elif isinstance(spec, Conv2D):
                if len(cur) != 3 or cur[2] != spec.in_channels:
                    raise ValueError(
                        f"conv expects (H, W, {spec.in_channels}), got {cur}"
                    )
                k = spec.kernel_size
                if cur[0] < k or cur[1] < k:
                    raise ValueError(f"conv kernel {k} larger than input {cur}")
                cur = (cur[0] - k + 1, cur[1] - k + 1, spec.out_channels)
            elif isinstance(spec, Relu):
                pass
            elif isinstance(spec, Flatten):
                cur = (int(np.prod(cur)),)
            else:
                raise ValueError(f"unsupported layer spec: {spec!r}")
            shapes.append(cur)
        return shapes


def mnist_mlp(hidden: int = 128) -> ModelArch:
    return ModelArch(
        name=f"mnist_mlp_{hidden}",
        input_shape=(28, 28, 1),
        num_classes=10,
        layers=(Flatten(), Dense(784, hidden), Relu(), Dense(hidden, 10)),
    )


def cifar_cnn() -> ModelArch:
    return ModelArch(
        name="cifar_cnn",
        input_shape=(32, 32, 3),
        num_classes=10,
        layers=(
            Conv2D(3, 8, 5),
            Relu(),
            Conv2D(8, 16, 5),
            Relu(),
            Flatten(),
            Dense(16 * 24 * 24, 10),
        ),
    )


ARCH_FACTORIES = {
    "mnist_mlp": mnist_mlp,
    "cifar_cnn": cifar_cnn,
}


def make_arch(name: str) -> ModelArch:
    try:
        return ARCH_FACTORIES[name]()
    except KeyError:
        raise ValueError(f"unknown architecture {name!r}") from None


# ---------------------------------------------------------------------------
# Parameters


@dataclass
class ModelParams:
    """Flat ordered parameter list: [weight, bias] per parameterized layer."""

    arch: ModelArch
    layers: list  # list[np.ndarray], float64

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, [a.copy() for a in self.layers])

    def num_scalars(self) -> int:
        return int(sum(a.size for a in self.layers))


def init_params(arch: ModelArch, seed) -> ModelParams:
    """Deterministic init: weights uniform in +-sqrt(6/(fan_in+fan_out)),
    biases zero."""
    arch.feature_shapes()  # reject invalid specs before drawing anything
    rng = child_rng(seed, STREAM_INIT)
    layers = []
    for spec in arch.layers:
        if isinstance(spec, Dense):
            fan_in, fan_out = spec.in_features, spec.out_features
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            layers.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            layers.append(np.zeros(fan_out))
        elif isinstance(spec, Conv2D):
            k = spec.kernel_size
            fan_in = k * k * spec.in_channels
            fan_out = k * k * spec.out_channels
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            layers.append(
                rng.uniform(-bound, bound, size=(k, k, spec.in_channels, spec.out_channels))
            )
            layers.append(np.zeros(spec.out_channels))
    return ModelParams(arch, layers)


def _check_same_arch(a: ModelParams, b: ModelParams):
    if a.arch != b.arch:
        raise ValueError(f"architecture mismatch: {a.arch.name} vs {b.arch.name}")


# ---------------------------------------------------------------------------
# Forward / backward


def _as_batch(arch: ModelArch, x) -> tuple[np.ndarray, bool]:
    """Promote a single sample to a batch of one. Returns (batch, was_single)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape == tuple(arch.input_shape):
        return x[None, ...], True
    if x.ndim >= 1 and x.shape[1:] == tuple(arch.input_shape):
        return x, False
    raise ValueError(
        f"input shape {x.shape} does not match arch input {arch.input_shape}"
    )


def _forward_cached(params: ModelParams, xb: np.ndarray):
    """Forward pass over a batch, keeping per-layer caches for backward."""
    h = xb
    caches = []
    idx = 0
    for spec in params.arch.layers:
        if isinstance(spec, Dense):
            w, b = params.layers[idx], params.layers[idx + 1]
            idx += 2
            caches.append(h)
            h = h @ w + b
        elif isinstance(spec, Conv2D):
            w, b = params.layers[idx], params.layers[idx + 1]
            idx += 2
            windows = sliding_window_view(
                h, (spec.kernel_size, spec.kernel_size), axis=(1, 2)
            )
            # windows: (N, Ho, Wo, Cin, kh, kw); w: (kh, kw, Cin, Cout)
            caches.append(windows)
            h = np.einsum("nijcab,abco->nijo", windows, w, optimize=True) + b
        elif isinstance(spec, Relu):
            mask = h > 0
            caches.append(mask)
            h = np.where(mask, h, 0.0)
        elif isinstance(spec, Flatten):
            caches.append(h.shape)
            h = h.reshape(h.shape[0], -1)
    return h, caches


def forward(params: ModelParams, x) -> np.ndarray:
    """Logits for one sample (C,) or a batch (N, C)."""
    xb, single = _as_batch(params.arch, x)
    logits, _ = _forward_cached(params, xb)
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits (diverged parameters or input?)")
    return logits[0] if single else logits


def softmax_probs(logits) -> np.ndarray:
    """Numerically stable softmax along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class LossGradients:
    """Mean cross-entropy over the batch plus its exact gradients."""

    loss_value: float
    param_grads: list  # list[np.ndarray], shapes mirror ModelParams.layers
    input_grad: "np.ndarray | None" = None


def loss_and_grads(
    params: ModelParams, x, labels, want_input_grad: bool = False
) -> LossGradients:
    """Cross-entropy-of-softmax loss and its gradients.

    `x` may be one sample or a batch; `labels` an int or an int array.
    The loss is the mean over the batch, so for a single sample it is the
    plain per-example loss.
    """
    xb, single = _as_batch(params.arch, x)
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, c = xb.shape[0], params.arch.num_classes
    if y.shape != (n,):
        raise ValueError(f"labels shape {y.shape} does not match batch size {n}")
    if y.min() < 0 or y.max() >= c:
        raise ValueError(f"label out of range [0, {c})")

    logits, caches = _forward_cached(params, xb)

    zmax = logits.max(axis=1, keepdims=True)
    ez = np.exp(logits - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    # loss_i = logsumexp(z_i) - z_i[y_i] >= 0
    loss = float(np.mean(zmax[:, 0] + np.log(sez[:, 0]) - logits[np.arange(n), y]))

    dz = ez / sez
    dz[np.arange(n), y] -= 1.0
    dz /= n

    param_grads = [None] * len(params.layers)
    idx = len(params.layers)
    dh = dz
    for li in range(len(params.arch.layers) - 1, -1, -1):
        spec = params.arch.layers[li]
        cache = caches[li]
        if isinstance(spec, Dense):
            idx -= 2
            w = params.layers[idx]
            param_grads[idx] = cache.T @ dh
            param_grads[idx + 1] = dh.sum(axis=0)
            dh = dh @ w.T
        elif isinstance(spec, Conv2D):
            idx -= 2
            w = params.layers[idx]
            k = spec.kernel_size
            param_grads[idx] = np.einsum("nijcab,nijo->abco", cache, dh, optimize=True)
            param_grads[idx + 1] = dh.sum(axis=(0, 1, 2))
            dpad = np.pad(dh, ((0, 0), (k - 1, k - 1), (k - 1, k - 1), (0, 0)))
            dwin = sliding_window_view(dpad, (k, k), axis=(1, 2))
            dh = np.einsum("nyxoab,abco->nyxc", dwin, w[::-1, ::-1], optimize=True)
        elif isinstance(spec, Relu):
            dh = np.where(cache, dh, 0.0)
        elif isinstance(spec, Flatten):
            dh = dh.reshape(cache)

    if not np.isfinite(loss) or any(not np.all(np.isfinite(g)) for g in param_grads):
        raise ValueError("non-finite gradients (diverged parameters?)")

    input_grad = None
    if want_input_grad:
        input_grad = dh[0] if single else dh
    return LossGradients(loss_value=loss, param_grads=param_grads, input_grad=input_grad)


def sgd_step(params: ModelParams, grads: LossGradients, lr: float) -> ModelParams:
    """One plain gradient step: p' = p - lr * g. Returns new params."""
    if len(grads.param_grads) != len(params.layers):
        raise ValueError("gradient/parameter layer count mismatch")
    new_layers = []
    for p, g in zip(params.layers, grads.param_grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        new_layers.append(p - lr * g)
    return ModelParams(params.arch, new_layers)
