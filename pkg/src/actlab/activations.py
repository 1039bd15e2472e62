"""The four activation functions under test.

relu, gelu and swish are stateless baselines. zc_swish ("zero-centered
swish") carries three learnable parameters per channel:

* ``c``, a centering anchor that shifts the swish kink,
* ``beta_raw``, steepness through a softplus, so beta = softplus(beta_raw)
  stays strictly positive,
* ``g``, an output gain.

Its forward map is

    f(x) = g * [ (x - c) * sigmoid(beta * (x - c)) + c * sigmoid(-beta * c) ]

per channel. The second term is a per-channel constant that cancels the
shifted swish at the origin, so f(0) == 0 holds exactly (bit for bit, not
just approximately: both occurrences of sigmoid(-beta*c) are computed
from identical float products). Inactive units therefore contribute no
baseline offset, which is the property the whole lab is built to study.

gelu uses the tanh approximation
0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3))). It stays within
1e-3 of the erf form, which is negligible at the accuracy scales measured
here, and avoids a special-function dependency in the hot path.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from actlab.tensor import DEFAULT_DTYPE, ShapeError, Tensor, record_op

__all__ = [
    "ActivationKind",
    "ZCSwishParams",
    "C_INIT",
    "BETA_RAW_INIT",
    "G_INIT",
    "sigmoid",
    "softplus",
    "relu",
    "gelu",
    "swish",
    "zc_swish",
    "relu_eval",
    "gelu_eval",
    "swish_eval",
    "zc_swish_eval",
    "CenteringResult",
    "find_centering_anchor",
    "activation_curves",
]

# Initial values of the learnable triple. softplus(BETA_RAW_INIT) ~= 1.0,
# so a freshly built zc_swish starts out almost exactly as a unit-gain
# swish with a 0.01 anchor.
C_INIT = 0.01
BETA_RAW_INIT = 0.5413
G_INIT = 1.0

_GELU_K = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function, any float dtype."""
    x = np.asarray(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + exp(x)) without overflow for large x."""
    return np.logaddexp(np.asarray(x).dtype.type(0.0), x)


class ActivationKind(enum.Enum):
    """Activation selector. swish uses the fixed unit-steepness convention;
    only zc_swish carries learnable parameters."""

    RELU = "relu"
    GELU = "gelu"
    SWISH = "swish"
    ZCSWISH = "zcswish"

    @classmethod
    def parse(cls, name: str) -> "ActivationKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown activation {name!r}, expected one of: {valid}") from None

    @property
    def params_per_channel(self) -> int:
        return 3 if self is ActivationKind.ZCSWISH else 0


@dataclass
class ZCSwishParams:
    """Per-channel learnable triple (c, beta_raw, g), each a 1-d tensor."""

    c: Tensor
    beta_raw: Tensor
    g: Tensor

    @classmethod
    def initial(cls, channels: int, dtype=DEFAULT_DTYPE, requires_grad: bool = True) -> "ZCSwishParams":
        def full(v):
            return Tensor(np.full(channels, v, dtype=dtype), requires_grad=requires_grad)

        return cls(c=full(C_INIT), beta_raw=full(BETA_RAW_INIT), g=full(G_INIT))

    @property
    def channels(self) -> int:
        return self.c.data.shape[0]

    def tensors(self) -> list[Tensor]:
        return [self.c, self.beta_raw, self.g]

    def param_count(self) -> int:
        return 3 * self.channels


def _unary(x: Tensor, out_data: np.ndarray, dfn) -> Tensor:
    out = Tensor(out_data)

    def backward_fn(g: np.ndarray):
        if x.requires_grad:
            x.grad += g * dfn()

    return record_op(out, (x,), backward_fn)


def relu(x: Tensor) -> Tensor:
    d = x.data
    return _unary(x, np.maximum(d.dtype.type(0.0), d), lambda: (d > 0).astype(d.dtype))


def gelu(x: Tensor) -> Tensor:
    d = x.data
    k = d.dtype.type(_GELU_K)
    a = d.dtype.type(_GELU_A)
    half = d.dtype.type(0.5)
    t = np.tanh(k * (d + a * d * d * d))

    def deriv():
        return half * (1.0 + t) + half * d * (1.0 - t * t) * k * (1.0 + 3.0 * a * d * d)

    return _unary(x, half * d * (1.0 + t), deriv)


def swish(x: Tensor) -> Tensor:
    d = x.data
    s = sigmoid(d)
    return _unary(x, d * s, lambda: s * (1.0 + d * (1.0 - s)))


def _param_view(p: np.ndarray, ndim: int) -> np.ndarray:
    # broadcast a per-channel vector over [N, C] or [N, C, H, W]
    if ndim == 2:
        return p.reshape(1, -1)
    return p.reshape(1, -1, 1, 1)


def zc_swish(x: Tensor, params: ZCSwishParams) -> Tensor:
    """Per-channel zero-centered swish, recorded with all four gradients.

    x is [N, C] or [N, C, H, W] with C equal to ``params.channels``.
    Parameter gradients are summed over the batch and spatial positions.
    The per-channel constant c * sigmoid(-beta*c) is recomputed on every
    call, because the parameters move every optimization step.
    """
    if x.ndim not in (2, 4):
        raise ShapeError(f"zc_swish input must be [N,C] or [N,C,H,W], got shape {x.shape}")
    channels = x.shape[1]
    if channels != params.channels:
        raise ShapeError(f"channel mismatch: input has C={channels}, params carry C={params.channels}")

    d = x.data
    dt = d.dtype
    c = params.c.data.astype(dt, copy=False)
    beta = softplus(params.beta_raw.data.astype(dt, copy=False))
    gain = params.g.data.astype(dt, copy=False)

    u = d - _param_view(c, d.ndim)
    s = sigmoid(_param_view(beta, d.ndim) * u)
    q = sigmoid(-(beta * c))  # per channel
    bias = c * q
    core = u * s + _param_view(bias, d.ndim)
    out = Tensor(_param_view(gain, d.ndim) * core)

    reduce_axes = (0,) if d.ndim == 2 else (0, 2, 3)

    def backward_fn(gout: np.ndarray):
        beta_b = _param_view(beta, d.ndim)
        gain_b = _param_view(gain, d.ndim)
        sp = s * (1.0 - s)
        if x.requires_grad:
            x.grad += gout * gain_b * s * (1.0 + beta_b * u * (1.0 - s))
        need_c = params.c.requires_grad
        need_b = params.beta_raw.requires_grad
        need_g = params.g.requires_grad
        if not (need_c or need_b or need_g):
            return
        gsum = gout.sum(axis=reduce_axes)
        qp = q * (1.0 - q)
        if need_c:
            main = (gout * gain_b * -(s + beta_b * u * sp)).sum(axis=reduce_axes)
            const = gsum * gain * (q - beta * c * qp)
            params.c.grad += main + const
        if need_b:
            main = (gout * gain_b * (u * u * sp)).sum(axis=reduce_axes)
            const = gsum * gain * (c * c * qp)
            dbeta = main - const
            params.beta_raw.grad += dbeta * sigmoid(params.beta_raw.data.astype(dt, copy=False))
        if need_g:
            params.g.grad += (gout * core).sum(axis=reduce_axes)

    return record_op(out, (x, params.c, params.beta_raw, params.g), backward_fn)


def apply_activation(x: Tensor, kind: ActivationKind, params: ZCSwishParams | None = None) -> Tensor:
    if kind is ActivationKind.RELU:
        return relu(x)
    if kind is ActivationKind.GELU:
        return gelu(x)
    if kind is ActivationKind.SWISH:
        return swish(x)
    if params is None:
        raise ValueError("zc_swish needs its parameter triple")
    return zc_swish(x, params)


# ---------------------------------------------------------------------------
# plain-array evaluators (diagnostics, curve dumps, the centering oracle)
# ---------------------------------------------------------------------------


def relu_eval(x):
    x = np.asarray(x)
    return np.maximum(x.dtype.type(0.0), x)


def gelu_eval(x):
    x = np.asarray(x)
    return 0.5 * x * (1.0 + np.tanh(_GELU_K * (x + _GELU_A * x**3)))


def swish_eval(x):
    x = np.asarray(x)
    return x * sigmoid(x)


def zc_swish_eval(x, c: float = C_INIT, beta: float | None = None, g: float = G_INIT, beta_raw: float | None = None):
    """Scalar-parameter zero-centered swish on a plain array.

    Pass either ``beta`` directly or ``beta_raw`` (softplus applied);
    defaults reproduce the initial learnable triple.
    """
    x = np.asarray(x)
    dt = x.dtype if x.dtype in (np.float32, np.float64) else np.float64
    x = x.astype(dt, copy=False)
    if beta is None:
        beta = float(softplus(np.asarray(beta_raw if beta_raw is not None else BETA_RAW_INIT, dtype=dt)))
    scalar = np.dtype(dt).type
    c, beta, g = scalar(c), scalar(beta), scalar(g)
    u = x - c
    return g * (u * sigmoid(beta * u) + c * sigmoid(-(beta * c)))


@dataclass
class CenteringResult:
    """Outcome of the offline centering search (never raises for no-root)."""

    c: float
    mean_at_c: float
    converged: bool
    bracket: tuple[float, float]
    iterations: int
    note: str = ""


def find_centering_anchor(
    sample, beta: float = 1.0, tol: float = 1e-8, g: float = 1.0, max_iter: int = 200
) -> CenteringResult:
    """Find the anchor c that zeroes the sample mean of zc_swish.

    Bisects mean(f(sample; c, beta, g)) over c in [-10*std, +10*std] of
    the sample until |mean| < tol. A bracket without a sign change is
    reported in the result, not raised.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    sample = np.asarray(sample, dtype=np.float64).ravel()
    if sample.size == 0:
        raise ValueError("sample is empty")

    def mean_at(c: float) -> float:
        return float(np.mean(zc_swish_eval(sample, c=c, beta=beta, g=g)))

    if np.all(sample == 0.0):
        # f(0) == 0 for every parameter choice, so any anchor works.
        return CenteringResult(0.0, 0.0, True, (0.0, 0.0), 0, "all-zero sample, mean is 0 for any c")

    sd = float(sample.std())
    lo, hi = -10.0 * sd, 10.0 * sd
    if sd == 0.0:
        return CenteringResult(0.0, mean_at(0.0), False, (lo, hi), 0, "degenerate constant sample, empty bracket")

    f_lo, f_hi = mean_at(lo), mean_at(hi)
    if f_lo == 0.0:
        return CenteringResult(lo, f_lo, True, (lo, hi), 0)
    if f_hi == 0.0:
        return CenteringResult(hi, f_hi, True, (lo, hi), 0)
    if np.sign(f_lo) == np.sign(f_hi):
        # one coarse scan for an interior sign change before giving up
        grid = np.linspace(lo, hi, 65)
        vals = [mean_at(float(gc)) for gc in grid]
        found = False
        for i in range(len(grid) - 1):
            if np.sign(vals[i]) != np.sign(vals[i + 1]):
                lo, hi, f_lo, f_hi = float(grid[i]), float(grid[i + 1]), vals[i], vals[i + 1]
                found = True
                break
        if not found:
            best = int(np.argmin(np.abs(vals)))
            return CenteringResult(
                float(grid[best]),
                vals[best],
                False,
                (-10.0 * sd, 10.0 * sd),
                0,
                f"no sign change of mean(f) on [-10*std, +10*std] = [{-10.0 * sd:.6g}, {10.0 * sd:.6g}]",
            )

    c_mid, f_mid = lo, f_lo
    for it in range(1, max_iter + 1):
        c_mid = 0.5 * (lo + hi)
        f_mid = mean_at(c_mid)
        if abs(f_mid) < tol:
            return CenteringResult(c_mid, f_mid, True, (lo, hi), it)
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = c_mid, f_mid
        else:
            hi, f_hi = c_mid, f_mid
    return CenteringResult(c_mid, f_mid, abs(f_mid) < tol, (lo, hi), max_iter, "iteration cap reached")


def activation_curves(xs) -> dict[str, np.ndarray]:
    """Columns for the baseline comparison curve: all four activations on
    one grid, zc_swish at its initial parameter triple."""
    xs = np.asarray(xs, dtype=np.float64)
    return {
        "x": xs,
        "relu": relu_eval(xs),
        "gelu": gelu_eval(xs),
        "swish": swish_eval(xs),
        "zcswish": zc_swish_eval(xs),
    }
