"""Dense feed-forward networks with adaptive activations and derivative jets.

Hidden layers apply sigma(n * a * (W h + b)) with a single trainable slope a
shared across the network and a fixed integer scale n; the output layer is
purely affine.  forward_jet propagates values, first spatial derivatives and
pure second spatial derivatives through the layers, with every step recorded
on the tape so parameter gradients flow through derivative slots.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor, relu, where

ACTIVATIONS = ("sigmoid", "swish", "selu", "relu", "tanh", "xtanh")

_SELU_LAMBDA = 1.0507
_SELU_ALPHA = 1.67326


def _stable_sigmoid(z: Tensor) -> Tensor:
    # evaluate exp on -|z| only; both where-branches stay overflow-free
    neg_abs = where(z.value >= 0, -z, z)
    e = neg_abs.exp()
    return where(z.value >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def activation_eval(kind: str, a, n: float, x):
    """(value, d/dx, d2/dx2) of the adaptive activation sigma(n a x).

    Derivatives are with respect to the pre-activation input x and include
    the n*a chain factors; all three outputs are tape expressions, so
    gradients with respect to a trainable slope flow through them.
    """
    a = as_tensor(a)
    x = as_tensor(x)
    na = a * float(n)
    z = na * x
    if kind == "sigmoid":
        sig = _stable_sigmoid(z)
        d1 = sig * (1.0 - sig)
        return sig, na * d1, na * na * d1 * (1.0 - 2.0 * sig)
    if kind == "swish":
        sig = _stable_sigmoid(z)
        d1 = sig * (1.0 - sig)
        return z * sig, na * (sig + z * d1), na * na * (2.0 * d1 + z * d1 * (1.0 - 2.0 * sig))
    if kind == "selu":
        pos = x.value > 0
        ez = where(pos, Tensor(np.zeros_like(z.value)), z).exp()
        val = where(pos, _SELU_LAMBDA * z, _SELU_LAMBDA * _SELU_ALPHA * (ez - 1.0))
        d1 = where(pos, _SELU_LAMBDA * na, _SELU_LAMBDA * _SELU_ALPHA * na * ez)
        d2 = where(pos, Tensor(np.zeros_like(z.value)), _SELU_LAMBDA * _SELU_ALPHA * na * na * ez)
        return val, d1, d2
    if kind == "relu":
        # second derivative defined as 0 everywhere, subgradient 0 at 0
        mask = z.value > 0
        zero = Tensor(np.zeros_like(z.value))
        return relu(z), where(mask, na * Tensor(np.ones_like(z.value)), zero), zero
    if kind == "tanh":
        th = z.tanh()
        sech2 = 1.0 - th * th
        return th, na * sech2, -2.0 * na * na * th * sech2
    if kind == "xtanh":
        th = z.tanh()
        sech2 = 1.0 - th * th
        val = z * th
        d1 = th + z * sech2
        d2 = 2.0 * sech2 - 2.0 * z * th * sech2
        return val, na * d1, na * na * d2
    raise ValueError(f"unknown activation kind: {kind}")


@dataclass
class Network:
    """Dense network parameters plus the shared adaptive slope."""

    widths: tuple
    weights: list
    biases: list
    slope: Tensor
    activation: str = "swish"
    scale_n: float = 3.0
    trainable_slope: bool = True
    seed: int | None = None

    def params(self) -> list[Tensor]:
        leaves = [*self.weights, *self.biases]
        if self.trainable_slope:
            leaves.append(self.slope)
        return leaves

    def param_names(self) -> list[str]:
        names = [f"W{i + 1}" for i in range(len(self.weights))]
        names += [f"b{i + 1}" for i in range(len(self.biases))]
        if self.trainable_slope:
            names.append("a")
        return names


def xavier_init(
    widths,
    seed: int,
    activation: str = "swish",
    scale_n: float = 3.0,
    trainable_slope: bool = True,
) -> Network:
    """Draw W^l ~ N(0, 2/(d_l + d_{l+1})), zero biases, unit slope."""
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation kind: {activation}")
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ValueError(f"invalid layer widths: {widths}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for d_in, d_out in zip(widths[:-1], widths[1:]):
        std = np.sqrt(2.0 / (d_in + d_out))
        weights.append(Tensor(rng.normal(0.0, std, size=(d_out, d_in))))
        biases.append(Tensor(np.zeros(d_out)))
    return Network(
        widths=widths,
        weights=weights,
        biases=biases,
        slope=Tensor(1.0),
        activation=activation,
        scale_n=scale_n,
        trainable_slope=trainable_slope,
        seed=seed,
    )


def forward(net: Network, point) -> Tensor:
    """Network output at a point (d0,) or batch (d0, N); output width must be 1."""
    x = np.asarray(point, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if x.shape[0] != net.widths[0]:
        raise ValueError(f"input dimension {x.shape[0]} != d0 = {net.widths[0]}")
    h = Tensor(x)
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = w @ h + b.reshape(-1, 1)
        if l < last:
            h, _, _ = activation_eval(net.activation, net.slope, net.scale_n, h)
    out = h[0]
    return out[0] if squeeze else out


@dataclass
class Jet:
    """Value and pure spatial derivatives of a scalar field at a point batch.

    dx[i] and dxx[i] are the first and diagonal second derivative with
    respect to spatial coordinate i; dt is optional.
    """

    value: Tensor
    dx: list = field(default_factory=list)
    dxx: list = field(default_factory=list)
    dt: Tensor | None = None


def forward_jet(net: Network, point, space_dim: int, with_time: bool = False) -> Jet:
    """Propagate value + derivative slots through the layers.

    point has shape (d0,) or (d0, N) with the first space_dim rows holding
    spatial coordinates; the remaining rows (time, extra features) get no
    derivative slots unless with_time picks up row space_dim.
    """
    x = np.asarray(point, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    d0, n_pts = x.shape
    if d0 != net.widths[0]:
        raise ValueError(f"input dimension {d0} != d0 = {net.widths[0]}")
    if space_dim > d0:
        raise ValueError("space_dim exceeds input dimension")

    n_slots = space_dim + (1 if with_time else 0)
    val = Tensor(x)
    seeds = []
    for i in range(n_slots):
        e = np.zeros((d0, n_pts))
        e[i if i < space_dim else space_dim] = 1.0
        seeds.append(Tensor(e))
    first = seeds
    second = [Tensor(np.zeros((d0, n_pts))) for _ in range(n_slots)]

    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        val = w @ val + b.reshape(-1, 1)
        first = [w @ j for j in first]
        second = [w @ h for h in second]
        if l < last:
            val, d1, d2 = activation_eval(net.activation, net.slope, net.scale_n, val)
            first_new = [d1 * j for j in first]
            second = [d2 * j * j + d1 * h for j, h in zip(first, second)]
            first = first_new

    def take(t: Tensor) -> Tensor:
        row = t[0]
        return row[0] if squeeze else row

    jet = Jet(value=take(val))
    jet.dx = [take(first[i]) for i in range(space_dim)]
    jet.dxx = [take(second[i]) for i in range(space_dim)]
    if with_time:
        jet.dt = take(first[space_dim])
    return jet


def save_params(net: Network, path: str) -> None:
    """Snapshot: one JSON header line, then raw little-endian float64 data.

    Data order is W^1 row-major, ..., W^L, b^1, ..., b^L, slope.
    """
    header = {
        "widths": list(net.widths),
        "activation": net.activation,
        "scale_n": net.scale_n,
        "trainable_slope": net.trainable_slope,
        "seed": net.seed,
    }
    flat = np.concatenate(
        [w.value.ravel() for w in net.weights]
        + [b.value.ravel() for b in net.biases]
        + [np.atleast_1d(net.slope.value)]
    ).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        fh.write(flat.tobytes())


def load_params(path: str) -> Network:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        flat = np.frombuffer(fh.read(), dtype="<f8").copy()
    widths = tuple(header["widths"])
    net = Network(
        widths=widths,
        weights=[],
        biases=[],
        slope=Tensor(1.0),
        activation=header["activation"],
        scale_n=header["scale_n"],
        trainable_slope=header["trainable_slope"],
        seed=header["seed"],
    )
    pos = 0
    for d_in, d_out in zip(widths[:-1], widths[1:]):
        net.weights.append(Tensor(flat[pos : pos + d_in * d_out].reshape(d_out, d_in)))
        pos += d_in * d_out
    for d_out in widths[1:]:
        net.biases.append(Tensor(flat[pos : pos + d_out]))
        pos += d_out
    net.slope = Tensor(flat[pos])
    return net
