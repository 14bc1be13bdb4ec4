"""Convolutional encoder-decoder with skip connections, written against numpy.

Layers operate on ``(batch, channels, height, width)`` arrays.  Convolutions
use im2col; transposed convolutions are the adjoint of the same mapping.
Parameters are kept as a list of ``(W, b)`` pairs in the traversal order
``conv 1..D, state 1..D, deconv D..1``, which is also the checkpoint order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DataError, ShapeError, TrainingError

MAX_DEPTH = 6


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | deconv | state
    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (1, 1)
    activation: str = "relu"  # relu | sigmoid | none

    def __post_init__(self):
        if self.kind not in ("conv", "deconv", "state"):
            raise ArgumentError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ("relu", "sigmoid", "none"):
            raise ArgumentError(f"unknown activation {self.activation!r}")
        if self.kind == "state" and (self.stride != (1, 1) or
                                     self.in_channels != self.out_channels or
                                     any(2 * p != k - 1 for p, k in zip(self.padding, self.kernel))):
            raise ArgumentError("state layers must preserve shape")

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "deconv":
            return (self.in_channels, self.out_channels, *self.kernel)
        return (self.out_channels, self.in_channels, *self.kernel)

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel[0] * self.kernel[1]

    def out_shape(self, h: int, w: int, target: tuple[int, int] | None = None) -> tuple[int, int]:
        (kh, kw), (sh, sw), (ph, pw) = self.kernel, self.stride, self.padding
        if self.kind == "deconv":
            if target is not None:
                return target
            return (h - 1) * sh - 2 * ph + kh, (w - 1) * sw - 2 * pw + kw
        return (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1


def _im2col(x, kernel, stride, padding, out_hw):
    (kh, kw), (sh, sw), (ph, pw), (oh, ow) = kernel, stride, padding, out_hw
    b, c = x.shape[:2]
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw]
    return cols.reshape(b, c * kh * kw, oh * ow)


def _col2im(cols, shape, kernel, stride, padding, out_hw):
    (kh, kw), (sh, sw), (ph, pw), (oh, ow) = kernel, stride, padding, out_hw
    b, c, h, w = shape
    xp = np.zeros((b, c, h + 2 * ph + sh, w + 2 * pw + sw), dtype=cols.dtype)
    cols = cols.reshape(b, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += cols[:, :, i, j]
    return xp[:, :, ph:ph + h, pw:pw + w]


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _activate_grad(a, z, kind, da):
    if kind == "relu":
        return da * (z > 0)
    if kind == "sigmoid":
        return da * a * (1.0 - a)
    return da


def layer_forward(x, spec: LayerSpec, weights, target: tuple[int, int] | None = None,
                  cache: dict | None = None):
    """Apply one layer; ``target`` fixes a transposed convolution's output size."""
    W, bias = weights
    x = np.asarray(x, dtype=float)
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ShapeError(f"expected (B, {spec.in_channels}, H, W), got {x.shape}")
    if W.shape != spec.weight_shape or bias.shape != (spec.out_channels,):
        raise ShapeError("weight shapes do not match layer spec")
    b, _, h, w = x.shape
    oh, ow = spec.out_shape(h, w, target)
    if oh < 1 or ow < 1:
        raise ShapeError(f"input {h}x{w} too small for layer {spec}")
    if spec.kind == "deconv":
        lo = spec.out_shape(h, w)
        extra = (oh - lo[0], ow - lo[1])
        if not all(0 <= e < s for e, s in zip(extra, spec.stride)) and extra != (0, 0):
            raise ShapeError(f"cannot reach {oh}x{ow} from {h}x{w} with stride {spec.stride}")
        cols = W.reshape(spec.in_channels, -1).T @ x.reshape(b, spec.in_channels, h * w)
        z = _col2im(cols, (b, spec.out_channels, oh, ow), spec.kernel, spec.stride,
                    spec.padding, (h, w))
        z = z + bias[None, :, None, None]
    else:
        cols = _im2col(x, spec.kernel, spec.stride, spec.padding, (oh, ow))
        z = (W.reshape(spec.out_channels, -1) @ cols).reshape(b, spec.out_channels, oh, ow)
        z = z + bias[None, :, None, None]
    a = _activate(z, spec.activation)
    if cache is not None:
        cache.update(x=x, z=z, a=a, cols=cols)
    return a


def layer_backward(da, spec: LayerSpec, weights, cache: dict):
    """Return ``(dx, dW, db)`` for one layer given its forward cache."""
    W, _ = weights
    x, z, a = cache["x"], cache["z"], cache["a"]
    dz = _activate_grad(a, z, spec.activation, da)
    b, _, h, w = x.shape
    db = dz.sum(axis=(0, 2, 3))
    if spec.kind == "deconv":
        dcols = _im2col(dz, spec.kernel, spec.stride, spec.padding, (h, w))
        xf = x.reshape(b, spec.in_channels, h * w)
        dW = np.tensordot(xf, dcols, axes=([0, 2], [0, 2])).reshape(W.shape)
        dx = (W.reshape(spec.in_channels, -1) @ dcols).reshape(x.shape)
    else:
        cols = cache["cols"]
        dzf = dz.reshape(b, spec.out_channels, -1)
        dW = np.tensordot(dzf, cols, axes=([0, 2], [0, 2])).reshape(W.shape)
        dcols = W.reshape(spec.out_channels, -1).T @ dzf
        dx = _col2im(dcols, x.shape, spec.kernel, spec.stride, spec.padding, z.shape[2:])
    return dx, dW, db


@dataclass(frozen=True)
class NetworkSpec:
    in_channels: int
    depth: int = 4
    base_channels: int = 32
    output_activation: str = "sigmoid"
    hidden_activation: str = "relu"

    def __post_init__(self):
        if not 1 <= self.depth <= MAX_DEPTH:
            raise ArgumentError(f"depth must lie in 1..{MAX_DEPTH}")
        if self.in_channels < 1 or self.base_channels < 1:
            raise ArgumentError("channel counts must be positive")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** (level - 1)

    @property
    def encoder(self) -> list[LayerSpec]:
        out = [LayerSpec("conv", self.in_channels, self.channels(1), activation=self.hidden_activation)]
        for k in range(2, self.depth + 1):
            out.append(LayerSpec("conv", self.channels(k - 1), self.channels(k), stride=(2, 2),
                                 activation=self.hidden_activation))
        return out

    @property
    def states(self) -> list[LayerSpec]:
        return [LayerSpec("state", self.channels(k), self.channels(k), activation=self.hidden_activation)
                for k in range(1, self.depth + 1)]

    @property
    def decoder(self) -> list[LayerSpec]:
        """Deconv D..1; all but the deepest take the state output concatenated with the level below."""
        out = []
        for k in range(self.depth, 0, -1):
            cin = self.channels(k) * (1 if k == self.depth else 2)
            if k == 1:
                out.append(LayerSpec("deconv", cin, self.in_channels, activation=self.output_activation))
            else:
                out.append(LayerSpec("deconv", cin, self.channels(k - 1), stride=(2, 2),
                                     activation=self.hidden_activation))
        return out

    @property
    def layers(self) -> list[LayerSpec]:
        return self.encoder + self.states + self.decoder

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s.weight_shape)) + s.out_channels for s in self.layers)

    def to_dict(self) -> dict:
        return asdict(self)


def init_weights(net: NetworkSpec, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Uniform fan-in initialisation ``U(-sqrt(6/fan_in), sqrt(6/fan_in))`` with small biases.

    The sqrt(6) factor keeps activation variance roughly constant through
    relu layers, so deep levels still receive usable gradients.
    """
    rng = np.random.default_rng(seed)
    out = []
    for s in net.layers:
        lim = np.sqrt(6.0 / s.fan_in)
        out.append((rng.uniform(-lim, lim, s.weight_shape),
                    rng.uniform(-0.1, 0.1, s.out_channels)))
    return out


def network_forward(M, net: NetworkSpec, weights, caches: list | None = None) -> np.ndarray:
    """Reconstruct ``M``; when ``caches`` is a list it receives per-layer caches in layer order."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 3:
        M = M[None]
    if M.ndim != 4 or M.shape[1] != net.in_channels:
        raise ShapeError(f"expected (B, {net.in_channels}, H, W), got {M.shape}")
    D = net.depth
    store = [None] * len(net.layers) if caches is not None else None

    def run(idx, x, spec, target=None):
        c = {} if store is not None else None
        y = layer_forward(x, spec, weights[idx], target, c)
        if store is not None:
            store[idx] = c
        return y

    enc, st = [], []
    x = M
    for k, spec in enumerate(net.encoder):
        x = run(k, x, spec)
        enc.append(x)
    for k, spec in enumerate(net.states):
        st.append(run(D + k, enc[k], spec))
    u = None
    for n, spec in enumerate(net.decoder):
        level = D - n  # 1-based encoder level this deconv reads
        inp = st[level - 1] if u is None else np.concatenate([st[level - 1], u], axis=1)
        target = M.shape[2:] if level == 1 else enc[level - 2].shape[2:]
        u = run(2 * D + n, inp, spec, target)
    if caches is not None:
        caches[:] = store
    return u


def network_backward(dout, net: NetworkSpec, weights, caches: list) -> list[tuple[np.ndarray, np.ndarray]]:
    """Back-propagate ``dL/dM~`` through the network; returns gradients shaped like ``weights``."""
    D = net.depth
    layers = net.layers
    grads: list = [None] * len(layers)
    d_state = [None] * D
    du = dout  # gradient wrt the output of the deconv being processed
    for level in range(1, D + 1):
        idx = 2 * D + (D - level)
        dx, dW, db = layer_backward(du, layers[idx], weights[idx], caches[idx])
        grads[idx] = (dW, db)
        if level == D:
            d_state[level - 1] = dx
        else:
            c = net.channels(level)
            d_state[level - 1], du = dx[:, :c], dx[:, c:]
    d_enc = [None] * D
    for k in range(D):
        dx, dW, db = layer_backward(d_state[k], layers[D + k], weights[D + k], caches[D + k])
        grads[D + k] = (dW, db)
        d_enc[k] = dx
    for k in range(D - 1, -1, -1):
        dx, dW, db = layer_backward(d_enc[k], layers[k], weights[k], caches[k])
        grads[k] = (dW, db)
        if k > 0:
            d_enc[k - 1] = d_enc[k - 1] + dx
    return grads


def reconstruction_loss(M, M_hat) -> float:
    """Mean squared reconstruction error over every element."""
    M, M_hat = np.asarray(M, dtype=float), np.asarray(M_hat, dtype=float)
    if M.shape != M_hat.shape:
        raise ShapeError(f"shape mismatch {M.shape} vs {M_hat.shape}")
    return float(np.mean((M - M_hat) ** 2))


def loss_and_grad(M, net: NetworkSpec, weights, scale: float = 1.0):
    """``scale * mean((M~ - M)^2)`` and its gradient with respect to every parameter."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 3:
        M = M[None]
    caches: list = []
    out = network_forward(M, net, weights, caches)
    diff = out - M
    loss = scale * float(np.mean(diff ** 2))
    grads = network_backward(scale * 2.0 * diff / diff.size, net, weights, caches)
    return loss, grads


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, weights, **hyper) -> "AdamState":
        m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in weights]
        v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in weights]
        return cls(m, v, **hyper)


def adam_step(weights, grads, state: AdamState):
    """One bias-corrected Adam update; returns ``(weights, state)`` (state is updated in place)."""
    if not state.lr > 0:
        raise ArgumentError("learning rate must be positive")
    if len(grads) != len(weights):
        raise ShapeError("one gradient pair per layer is required")
    for g in grads:
        if not (np.all(np.isfinite(g[0])) and np.all(np.isfinite(g[1]))):
            raise TrainingError("non-finite gradient")
    state.step += 1
    b1, b2, t = state.beta1, state.beta2, state.step
    c1, c2 = 1 - b1 ** t, 1 - b2 ** t
    new = []
    for n, (w_pair, g_pair) in enumerate(zip(weights, grads)):
        upd = []
        for p in range(2):
            w, g = w_pair[p], g_pair[p]
            if w.shape != g.shape:
                raise ShapeError("gradient shape differs from weight shape")
            m = b1 * state.m[n][p] + (1 - b1) * g
            v = b2 * state.v[n][p] + (1 - b2) * g * g
            state.m[n] = (m, state.m[n][1]) if p == 0 else (state.m[n][0], m)
            state.v[n] = (v, state.v[n][1]) if p == 0 else (state.v[n][0], v)
            upd.append(w - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new.append(tuple(upd))
    return new, state


def train(data, net: NetworkSpec, weights=None, epochs: int = 200, batch_size: int | None = None,
          seed: int = 0, lr: float = 1e-3):
    """Minimise the mean reconstruction loss; returns ``(weights, loss_history)``.

    ``loss_history[e]`` is the full-data loss before epoch ``e``, with a final
    entry after the last epoch.  Mini-batches are shuffled from ``seed``.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 4 or len(data) == 0:
        raise DataError("training data must be a non-empty (N, C, H, W) array")
    weights = init_weights(net, seed) if weights is None else weights
    state = AdamState.zeros(weights, lr=lr)
    rng = np.random.default_rng(seed)
    bs = len(data) if batch_size is None else batch_size
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(data)) if bs < len(data) else np.arange(len(data))
        epoch_loss = 0.0
        for s in range(0, len(data), bs):
            batch = data[order[s:s + bs]]
            loss, grads = loss_and_grad(batch, net, weights)
            epoch_loss += loss * len(batch)
            weights, state = adam_step(weights, grads, state)
        history.append(epoch_loss / len(data))
    history.append(reconstruction_loss(data, network_forward(data, net, weights)))
    return weights, history


def flatten(weights) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in weights])


def unflatten(flat, net: NetworkSpec):
    flat = np.asarray(flat, dtype=float)
    if flat.size != net.n_params:
        raise ShapeError(f"expected {net.n_params} parameters, got {flat.size}")
    out, pos = [], 0
    for s in net.layers:
        n = int(np.prod(s.weight_shape))
        W = flat[pos:pos + n].reshape(s.weight_shape)
        b = flat[pos + n:pos + n + s.out_channels]
        out.append((W.copy(), b.copy()))
        pos += n + s.out_channels
    return out


def gradient_check(net: NetworkSpec, M, eps: float = 1e-5, seed: int = 0, weights=None) -> float:
    """Largest relative gap between back-propagated and central-difference gradients."""
    weights = init_weights(net, seed) if weights is None else weights
    _, grads = loss_and_grad(M, net, weights)
    analytic = flatten(grads)
    flat = flatten(weights)
    numeric = np.empty_like(flat)
    for n in range(flat.size):
        orig = flat[n]
        flat[n] = orig + eps
        up = reconstruction_loss(M if np.ndim(M) == 4 else M[None],
                                 network_forward(M, net, unflatten(flat, net)))
        flat[n] = orig - eps
        dn = reconstruction_loss(M if np.ndim(M) == 4 else M[None],
                                 network_forward(M, net, unflatten(flat, net)))
        flat[n] = orig
        numeric[n] = (up - dn) / (2 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom))


@dataclass
class Checkpoint:
    spec: NetworkSpec
    weights: list
    seed: int = 0
    epoch: int = 0
    loss_history: list = field(default_factory=list)

    def save(self, directory) -> None:
        """Write ``manifest.json`` and ``weights.bin`` (little-endian float64, layer order)."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        flatten(self.weights).astype("<f8").tofile(d / "weights.bin")
        manifest = {"spec": self.spec.to_dict(), "seed": self.seed, "epoch": self.epoch,
                    "loss_history": [float(v) for v in self.loss_history],
                    "n_params": self.spec.n_params,
                    "layout": [[s.kind, list(s.weight_shape), s.out_channels] for s in self.spec.layers]}
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> "Checkpoint":
        d = Path(directory)
        try:
            manifest = json.loads((d / "manifest.json").read_text())
            flat = np.fromfile(d / "weights.bin", dtype="<f8")
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read checkpoint in {d}: {exc}") from exc
        spec = NetworkSpec(**manifest["spec"])
        return cls(spec, unflatten(flat, spec), manifest.get("seed", 0), manifest.get("epoch", 0),
                   manifest.get("loss_history", []))
