"""Encoder with two parallel decoders: multipath alleviation and localization.

Parameters live in an ordered ``dict`` mapping names such as ``enc0.w`` or
``loc3.b`` to arrays.  Every function here is pure; nothing holds state
besides the caches handed back from :func:`forward`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers

Params = dict[str, np.ndarray]
HEADS = ("mp", "loc")


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int = 3
    height: int = 41
    width: int = 65
    enc_channels: tuple[int, ...] = (16, 32, 64, 64)
    kernel: int = 3
    stride: int = 2
    l1_weight: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "enc_channels", tuple(int(c) for c in self.enc_channels))
        if self.input_channels < 1:
            raise ValueError("need at least one input channel")
        if self.l1_weight < 0:
            raise ValueError("l1 weight must be non-negative")
        if not self.enc_channels:
            raise ValueError("encoder needs at least one layer")
        if min(self.spatial_sizes()[-1]) < 1:
            raise ValueError("input too small for the encoder depth")

    @property
    def pad(self) -> int:
        return self.kernel // 2

    def spatial_sizes(self) -> list[tuple[int, int]]:
        """Feature-map size at the input and after each encoder layer."""
        sizes = [(self.height, self.width)]
        for _ in self.enc_channels:
            h, w = sizes[-1]
            sizes.append((layers.conv_out_size(h, self.kernel, self.stride, self.pad),
                          layers.conv_out_size(w, self.kernel, self.stride, self.pad)))
        return sizes

    def decoder_channels(self, head: str) -> list[tuple[int, int]]:
        """(in, out) channels of each transposed convolution of one decoder."""
        enc = list(self.enc_channels)
        outs = enc[-2::-1] + [self.input_channels if head == "mp" else 1]
        ins = [enc[-1]] + outs[:-1]
        return list(zip(ins, outs))

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    k = config.kernel
    shapes: dict[str, tuple[int, ...]] = {}
    cin = config.input_channels
    for i, cout in enumerate(config.enc_channels):
        shapes[f"enc{i}.w"] = (cout, cin, k, k)
        shapes[f"enc{i}.b"] = (cout,)
        cin = cout
    for head in HEADS:
        for i, (ci, co) in enumerate(config.decoder_channels(head)):
            shapes[f"{head}{i}.w"] = (ci, co, k, k)
            shapes[f"{head}{i}.b"] = (co,)
    return shapes


def init_params(config: ModelConfig, dtype=np.float32) -> Params:
    """Fan-in scaled uniform weights, zero biases, drawn from ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    params: Params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        if name.startswith("enc"):
            fan_in = shape[1] * shape[2] * shape[3]
        else:
            fan_in = shape[0] * shape[2] * shape[3] / config.stride**2
        limit = np.sqrt(3.0 / fan_in)
        params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return params


def zeros_like(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def forward(params: Params, config: ModelConfig, x: np.ndarray, heads=HEADS, keep_cache: bool = False):
    """Run the encoder and the requested decoders.

    ``x`` is (N, Y, X) or a batch (B, N, Y, X).  Returns a dict with the
    multipath output ``"mp"`` (B, N, Y, X) and the localization output
    ``"loc"`` (B, Y, X), plus the cache when ``keep_cache`` is set.
    """
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    expect = (config.input_channels, config.height, config.width)
    if x.shape[1:] != expect:
        raise ValueError(f"input shape {x.shape[1:]} does not match the model's {expect}")
    x = x.astype(params["enc0.w"].dtype, copy=False)
    s, p = config.stride, config.pad
    cache: dict = {"enc": []}
    h = x
    for i in range(len(config.enc_channels)):
        z, c = layers.conv2d_forward(h, params[f"enc{i}.w"], params[f"enc{i}.b"], s, p)
        h = np.tanh(z)
        cache["enc"].append((c, h))
    code = h

    sizes = config.spatial_sizes()[-2::-1]
    out: dict = {}
    for head in heads:
        h = code
        steps = []
        n_layers = len(config.decoder_channels(head))
        for i in range(n_layers):
            z, c = layers.conv_transpose2d_forward(h, params[f"{head}{i}.w"], params[f"{head}{i}.b"], sizes[i], s, p)
            if i < n_layers - 1:
                h = np.tanh(z)
            elif head == "loc":
                h = _sigmoid(z)
            else:
                h = z
            steps.append((c, h))
        cache[head] = steps
        out[head] = h[:, 0] if head == "loc" else h
    if single:
        out = {k: v[0] for k, v in out.items()}
    if keep_cache:
        out["cache"] = cache
    return out


def loss_multipath(outputs, labels) -> float:
    """Mean over arrays of the l2 norm of each array's residual surface."""
    outputs, labels = np.asarray(outputs, dtype=float), np.asarray(labels, dtype=float)
    if outputs.shape != labels.shape:
        raise ValueError("multipath outputs and labels differ in shape")
    r = (outputs - labels).reshape(outputs.shape[0], -1)
    return float(np.mean(np.linalg.norm(r, axis=1)))


def loss_localization(output, target, l1_weight: float) -> float:
    output, target = np.asarray(output, dtype=float), np.asarray(target, dtype=float)
    if output.shape != target.shape:
        raise ValueError("localization output and target differ in shape")
    if l1_weight < 0:
        raise ValueError("l1 weight must be non-negative")
    return float(np.linalg.norm((output - target).ravel()) + l1_weight * np.abs(output).sum())


def _safe_unit(r: np.ndarray, axes) -> tuple[np.ndarray, np.ndarray]:
    norm = np.sqrt(np.sum(r.astype(np.float64) ** 2, axis=axes, keepdims=True))
    unit = np.divide(r, norm, out=np.zeros_like(r), where=norm > 0)
    return unit, norm


def loss_and_grads(params: Params, config: ModelConfig, x, mp_labels, heatmaps, ablate: bool = False):
    """Batch-mean summed loss and its gradient w.r.t. every parameter.

    With ``ablate`` the multipath decoder is neither evaluated nor updated;
    its gradients are returned as zeros.
    """
    x = np.asarray(x)
    if x.ndim == 3:
        x, mp_labels, heatmaps = x[None], np.asarray(mp_labels)[None], np.asarray(heatmaps)[None]
    heads = ("loc",) if ablate else HEADS
    res = forward(params, config, x, heads=heads, keep_cache=True)
    cache = res["cache"]
    B = x.shape[0]
    dtype = params["enc0.w"].dtype
    grads = zeros_like(params)
    lam = config.l1_weight

    t_out = res["loc"]
    r_loc = t_out - heatmaps.astype(dtype)
    unit, norm = _safe_unit(r_loc, (1, 2))
    l_loc = norm.ravel() + lam * np.abs(t_out).sum(axis=(1, 2))
    d_out = {"loc": ((unit + lam * np.sign(t_out)) / B).astype(dtype)}
    parts = {"localization": float(l_loc.mean())}
    total = l_loc.copy()

    if not ablate:
        r_mp = res["mp"] - mp_labels.astype(dtype)
        unit, norm = _safe_unit(r_mp, (2, 3))
        N = r_mp.shape[1]
        l_mp = norm.reshape(B, N).mean(axis=1)
        d_out["mp"] = (unit / (N * B)).astype(dtype)
        parts["multipath"] = float(l_mp.mean())
        total += l_mp

    s, p = config.stride, config.pad
    d_code = None
    for head in heads:
        steps = cache[head]
        n_layers = len(steps)
        g = d_out[head]
        if head == "loc":
            sig = steps[-1][1]
            g = (g * sig[:, 0] * (1 - sig[:, 0]))[:, None]
        for i in range(n_layers - 1, -1, -1):
            c, h = steps[i]
            if i < n_layers - 1:
                g = g * (1 - h * h)
            g, dw, db = layers.conv_transpose2d_backward(g, params[f"{head}{i}.w"], c, s, p)
            grads[f"{head}{i}.w"] = dw
            grads[f"{head}{i}.b"] = db
        d_code = g if d_code is None else d_code + g

    g = d_code
    for i in range(len(config.enc_channels) - 1, -1, -1):
        c, h = cache["enc"][i]
        g = g * (1 - h * h)
        g, dw, db = layers.conv2d_backward(g, params[f"enc{i}.w"], c, s, p, need_dx=i > 0)
        grads[f"enc{i}.w"] = dw
        grads[f"enc{i}.b"] = db
    return float(total.mean()), parts, grads


def backward(params: Params, config: ModelConfig, record, ablate: bool = False) -> Params:
    """Gradient of the summed losses for one :class:`TrainingRecord`."""
    _, _, grads = loss_and_grads(params, config, record.input, record.multipath_labels, record.heatmap, ablate)
    return grads


def flatten(params: Params) -> np.ndarray:
    return np.concatenate([v.ravel() for v in params.values()])


def unflatten(flat: np.ndarray, config: ModelConfig, dtype=np.float32) -> Params:
    out: Params = {}
    pos = 0
    for name, shape in param_shapes(config).items():
        n = int(np.prod(shape))
        out[name] = np.asarray(flat[pos : pos + n], dtype=dtype).reshape(shape)
        pos += n
    if pos != flat.size:
        raise ValueError(f"parameter block holds {flat.size} values, model needs {pos}")
    return out


@dataclass(frozen=True, eq=False)
class TrainingRecord:
    input: np.ndarray
    multipath_labels: np.ndarray
    heatmap: np.ndarray
    truth: tuple[float, float]
    datapoint: int = 0
    snapshot: int = 0
    extra: dict = field(default_factory=dict)
