"""Small 1-D convolutional encoders for RGB and depth strips, AT layers, feature loss.

Activations are channels-last: a batch of observations is ``(B, W, C)``.
Each encoder is two stride-2 convolutions (kernel 5, zero padding 2, tanh)
followed by a dense layer to a ``D``-dimensional feature.  Optional affine
transformation (AT) layers sit between each convolution and its tanh.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import diffcore as dc
from .diffcore import ParamSet, ShapeError, Tensor

KERNEL = 5
STRIDE = 2
PAD = 2
CHANNELS = (16, 32)
FEATURE_DIM = 64
IN_CHANNELS = {"rgb": 3, "depth": 1}
ENCODER_PREFIXES = ("rgb.", "depth.")
AT_PREFIXES = ("at.rgb.", "at.depth.")


def conv_length(width: int) -> int:
    return (width + 2 * PAD - KERNEL) // STRIDE + 1


def output_lengths(width: int) -> tuple[int, int]:
    l1 = conv_length(width)
    return l1, conv_length(l1)


def init_encoder(channel: str, rng: np.random.Generator, width: int = 64,
                 dim: int = FEATURE_DIM) -> ParamSet:
    """Glorot-scaled normal weights, zero biases, names prefixed with the channel."""
    cin = IN_CHANNELS[channel]
    _, l2 = output_lengths(width)
    shapes = [
        ("conv1.w", (KERNEL * cin, CHANNELS[0])),
        ("conv1.b", (CHANNELS[0],)),
        ("conv2.w", (KERNEL * CHANNELS[0], CHANNELS[1])),
        ("conv2.b", (CHANNELS[1],)),
        ("fc.w", (l2 * CHANNELS[1], dim)),
        ("fc.b", (dim,)),
    ]
    ps = ParamSet()
    for name, shape in shapes:
        if len(shape) == 1:
            ps.add(f"{channel}.{name}", np.zeros(shape))
        else:
            std = np.sqrt(2.0 / (shape[0] + shape[1]))
            ps.add(f"{channel}.{name}", rng.normal(0.0, std, shape))
    return ps


def init_encoders(seed, width: int = 64, dim: int = FEATURE_DIM) -> ParamSet:
    rng = np.random.default_rng(seed)
    return init_encoder("rgb", rng, width, dim).merged(init_encoder("depth", rng, width, dim))


def init_at(init_std_param: float = -2.0) -> ParamSet:
    """AT hyperparameters, one (eps, rho) pair of C x 1 vectors per conv layer."""
    ps = ParamSet()
    for channel in ("rgb", "depth"):
        for layer, c in enumerate(CHANNELS, start=1):
            ps.add(f"at.{channel}.eps{layer}", np.full((c, 1), init_std_param))
            ps.add(f"at.{channel}.rho{layer}", np.full((c, 1), init_std_param))
    return ps


def prepare_inputs(rgb: np.ndarray, depth: np.ndarray, d_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Centre RGB and normalise depth to (0, 1]; depth gains a trailing channel axis."""
    return np.asarray(rgb, dtype=np.float64) - 0.5, (np.asarray(depth, dtype=np.float64) / d_max)[..., None]


# ---------------------------------------------------------------------------
# AT layers


class _ATCounter:
    """Counts AT sampling calls so callers can assert a code path never used AT."""

    def __init__(self):
        self.calls = 0


AT_USAGE = _ATCounter()


def sample_at(at: Mapping, channel: str, rng: np.random.Generator, identity: bool = False):
    """Reparameterised draws (eps, rho) for every insertion point of one encoder.

    eps = 1 + softplus(theta_eps) * n and rho = softplus(theta_rho) * n' with
    standard normal n, n'.  ``identity`` forces both standard deviations to 0.
    """
    AT_USAGE.calls += 1
    draws = []
    for layer in range(1, len(CHANNELS) + 1):
        te = dc.as_tensor(at[f"at.{channel}.eps{layer}"])
        tr = dc.as_tensor(at[f"at.{channel}.rho{layer}"])
        n_e = rng.standard_normal(te.shape)
        n_r = rng.standard_normal(tr.shape)
        std_e, std_r = dc.softplus(te), dc.softplus(tr)
        if identity:
            std_e, std_r = dc.scale(std_e, 0.0), dc.scale(std_r, 0.0)
        eps = dc.add(dc.mul(std_e, n_e), 1.0)
        rho = dc.mul(std_r, n_r)
        draws.append((eps, rho))
    return draws


def modulate(z, eps, rho, channel_axis: int = -2) -> Tensor:
    """z_hat[c, s] = eps[c] * z[c, s] + rho[c].

    ``eps`` and ``rho`` hold one value per channel, shaped ``(C, 1)`` for the
    channels-first default or ``(C,)`` when ``channel_axis=-1``.
    """
    z, eps, rho = dc.as_tensor(z), dc.as_tensor(eps), dc.as_tensor(rho)
    c = z.shape[channel_axis]
    if eps.data.size != c or rho.data.size != c:
        raise ShapeError(f"modulate: {c} channels but eps {eps.shape}, rho {rho.shape}")
    shape = (c, 1) if channel_axis == -2 else (c,)
    if eps.shape != shape:
        eps = dc.reshape(eps, shape)
    if rho.shape != shape:
        rho = dc.reshape(rho, shape)
    return dc.add(dc.mul(z, eps), rho)


# ---------------------------------------------------------------------------
# encoders


def _get(params: Mapping, name: str) -> Tensor:
    try:
        return dc.as_tensor(params[name])
    except KeyError:
        raise KeyError(f"missing encoder parameter {name!r}") from None


def _conv(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Stride-2 1-D convolution over (B, W, C) via strided slices (im2col)."""
    bsz, width, cin = x.shape
    pad = np.zeros((bsz, PAD, cin))
    xp = dc.concat([Tensor(pad), x, Tensor(pad)], axis=1)
    length = conv_length(width)
    stop = STRIDE * (length - 1) + 1
    cols = dc.concat([xp[:, j:j + stop:STRIDE, :] for j in range(KERNEL)], axis=2)
    return cols @ w + b


def encode(params: Mapping, x, channel: str, at=None, at_identity: bool = False) -> Tensor:
    """Features ``(B, D)`` for a batch of prepared observations ``x`` of shape (B, W, C).

    ``at`` is an optional ``(at_params, rng)`` pair; when given, one (eps, rho)
    draw per insertion point is made from ``rng`` and shared by the batch.
    """
    if channel not in IN_CHANNELS:
        raise ValueError(f"unknown channel {channel!r}")
    x = dc.as_tensor(x)
    if x.ndim == 2 and channel == "depth":
        x = dc.reshape(x, x.shape + (1,))
    if x.ndim != 3 or x.shape[2] != IN_CHANNELS[channel]:
        raise ShapeError(f"encode[{channel}]: expected (B, W, {IN_CHANNELS[channel]}), got {x.shape}")
    fc_w = _get(params, f"{channel}.fc.w")
    _, l2 = output_lengths(x.shape[1])
    if l2 * CHANNELS[1] != fc_w.shape[0]:
        raise ShapeError(
            f"encode[{channel}]: observation width {x.shape[1]} does not match encoder "
            f"(dense input {fc_w.shape[0]})")
    draws = sample_at(at[0], channel, at[1], at_identity) if at is not None else None
    h = x
    for layer in (1, 2):
        z = _conv(h, _get(params, f"{channel}.conv{layer}.w"), _get(params, f"{channel}.conv{layer}.b"))
        if draws is not None:
            eps, rho = draws[layer - 1]
            z = modulate(z, eps, rho, channel_axis=-1)
        h = dc.tanh(z)
    flat = dc.reshape(h, (h.shape[0], h.shape[1] * h.shape[2]))
    out = flat @ fc_w + _get(params, f"{channel}.fc.b")
    if not np.all(np.isfinite(out.data)):
        raise dc.NonFiniteError(f"encode[{channel}]: non-finite activations")
    return out


def encode_pair(params: Mapping, rgb, depth, at=None, at_identity: bool = False):
    """Both encoders on prepared inputs; with AT, RGB draws precede depth draws."""
    return (encode(params, rgb, "rgb", at, at_identity),
            encode(params, depth, "depth", at, at_identity))


def feature_loss(reference, trainee) -> Tensor:
    """Sum over frames and dimensions of |reference - trainee|."""
    reference, trainee = dc.as_tensor(reference), dc.as_tensor(trainee)
    if reference.shape != trainee.shape:
        raise ShapeError(f"feature_loss: shapes {reference.shape} and {trainee.shape} differ")
    return dc.l1_distance(reference, trainee)
