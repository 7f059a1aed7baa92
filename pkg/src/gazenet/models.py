"""Network catalogue and runner.

Builds the concrete gaze-regression architectures, statically shape-checks
them, counts parameters / multiply-accumulates / receptive field, runs the
forward and backward passes on top of the layer math in `gazenet.nn`, and
serializes weights in the bit-exact ``GZNT`` format.

All architectures take a 36-row by 60-column input (1 or 2 channels), inject
the head pose after the first dense layer, and regress two radians
(yaw, pitch).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn

INPUT_HEIGHT = 36
INPUT_WIDTH = 60

ARCH_NAMES = ("baseline-dual", "baseline-dual-half", "hw-3x3", "single-eye")


class SpecError(ValueError):
    """An architecture description is internally inconsistent."""


class WeightFormatError(ValueError):
    """A weight file violates the GZNT contract."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str                 # conv | maxpool2 | dense | relu | concat-pose
    name: str
    kernel: int = 0           # conv only; 3 or 5
    out_channels: int = 0     # conv only
    padding: str = "valid"    # conv only
    width: int = 0            # dense only


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    in_channels: int
    layers: tuple

    def __post_init__(self):
        validate_spec(self)

    def param_layers(self):
        return [l for l in self.layers if l.kind in ("conv", "dense")]

    def param_names(self):
        names = []
        for l in self.param_layers():
            names += [f"{l.name}.w", f"{l.name}.b"]
        return names


def _conv(name, kernel, out_channels, padding="valid"):
    return LayerSpec(kind="conv", name=name, kernel=kernel,
                     out_channels=out_channels, padding=padding)


def _dense(name, width):
    return LayerSpec(kind="dense", name=name, width=width)


def _relu(name):
    return LayerSpec(kind="relu", name=name)


def _pool(name):
    return LayerSpec(kind="maxpool2", name=name)


def _concat(name="concat_pose"):
    return LayerSpec(kind="concat-pose", name=name)


def _scaled(width: int, scale: float) -> int:
    return max(1, int(width * scale))


def build_arch(name: str, width_scale: float = 1.0) -> NetworkSpec:
    """Construct one of the canonical architectures.

    `width_scale` multiplies every conv channel count and hidden dense width
    (the output stays 2-wide), which is how the width/depth grid and the
    reduced-size gradient checks are produced.
    """
    s = width_scale
    if name in ("baseline-dual", "single-eye"):
        layers = (
            _conv("conv1", 5, _scaled(20, s)), _relu("relu1"), _pool("pool1"),
            _conv("conv2", 5, _scaled(50, s)), _relu("relu2"), _pool("pool2"),
            _dense("dense1", _scaled(500, s)), _relu("relu3"),
            _concat(), _dense("dense2", 2),
        )
        channels = 1 if name == "single-eye" else 2
        return NetworkSpec(name=name, in_channels=channels, layers=layers)
    if name == "baseline-dual-half":
        layers = (
            _conv("conv1", 5, _scaled(10, s)), _relu("relu1"), _pool("pool1"),
            _conv("conv2", 5, _scaled(25, s)), _relu("relu2"), _pool("pool2"),
            _dense("dense1", _scaled(250, s)), _relu("relu3"),
            _concat(), _dense("dense2", 2),
        )
        return NetworkSpec(name=name, in_channels=2, layers=layers)
    if name == "hw-3x3":
        layers = (
            _conv("conv1", 3, _scaled(16, s)), _relu("relu1"),
            _conv("conv2", 3, _scaled(16, s)), _relu("relu2"), _pool("pool1"),
            _conv("conv3", 3, _scaled(32, s)), _relu("relu3"),
            _conv("conv4", 3, _scaled(32, s)), _relu("relu4"), _pool("pool2"),
            _dense("dense1", _scaled(256, s)), _relu("relu5"),
            _concat(), _dense("dense2", 2),
        )
        return NetworkSpec(name="hw-3x3", in_channels=2, layers=layers)
    raise SpecError(f"unknown architecture '{name}' (choose from {', '.join(ARCH_NAMES)})")


# ---------------------------------------------------------------------------
# Static shape check
# ---------------------------------------------------------------------------


def shape_chain(spec: NetworkSpec):
    """Shapes after each layer, starting from the input; raises SpecError on
    any incompatibility so bad specs die at build time, not run time."""
    shapes = [(spec.in_channels, INPUT_HEIGHT, INPUT_WIDTH)]
    cur = shapes[0]
    for layer in spec.layers:
        if layer.kind == "conv":
            if len(cur) != 3:
                raise SpecError(f"layer '{layer.name}': conv after flatten")
            c, h, w = cur
            if layer.kernel not in (3, 5):
                raise SpecError(f"layer '{layer.name}': kernel must be 3 or 5")
            if layer.out_channels < 1:
                raise SpecError(f"layer '{layer.name}': needs >= 1 output channel")
            if layer.padding == "valid":
                h, w = h - layer.kernel + 1, w - layer.kernel + 1
            elif layer.padding != "same":
                raise SpecError(f"layer '{layer.name}': bad padding '{layer.padding}'")
            if h < 1 or w < 1:
                raise SpecError(f"layer '{layer.name}': spatial dims vanish ({h}x{w})")
            cur = (layer.out_channels, h, w)
        elif layer.kind == "maxpool2":
            c, h, w = cur
            if h % 2 or w % 2:
                raise SpecError(f"layer '{layer.name}': pooling odd dims {h}x{w}")
            cur = (c, h // 2, w // 2)
        elif layer.kind == "dense":
            if layer.width < 1:
                raise SpecError(f"layer '{layer.name}': dense width must be >= 1")
            cur = (layer.width,)
        elif layer.kind == "relu":
            pass
        elif layer.kind == "concat-pose":
            if len(cur) != 1:
                raise SpecError(f"layer '{layer.name}': pose concat before flatten")
            cur = (cur[0] + 2,)
        else:
            raise SpecError(f"layer '{layer.name}': unknown kind '{layer.kind}'")
        shapes.append(cur)
    return shapes


def validate_spec(spec: NetworkSpec) -> None:
    names = [l.name for l in spec.layers]
    if len(set(names)) != len(names):
        raise SpecError(f"spec '{spec.name}': duplicate layer names")
    if spec.in_channels not in (1, 2):
        raise SpecError(f"spec '{spec.name}': input channels must be 1 or 2")
    if sum(1 for l in spec.layers if l.kind == "concat-pose") != 1:
        raise SpecError(f"spec '{spec.name}': exactly one pose concat required")
    if not spec.layers or spec.layers[-1].kind != "dense":
        raise SpecError(f"spec '{spec.name}': final layer must be a linear dense")
    shapes = shape_chain(spec)
    if shapes[-1] != (2,):
        raise SpecError(f"spec '{spec.name}': output width is {shapes[-1]}, expected 2")


# ---------------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------------


@dataclass
class LayerCost:
    name: str
    kind: str
    out_shape: tuple
    params: int
    macs: int
    receptive_field: int


@dataclass
class CostReport:
    arch: str
    layers: list = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(l.params for l in self.layers)

    @property
    def total_macs(self) -> int:
        return sum(l.macs for l in self.layers)

    def conv_macs(self) -> int:
        return sum(l.macs for l in self.layers if l.kind == "conv")


def count_cost(spec: NetworkSpec) -> CostReport:
    """Per-layer parameter and multiply-accumulate counts plus the receptive
    field at each depth (one MAC = one multiply + one add)."""
    shapes = shape_chain(spec)
    report = CostReport(arch=spec.name)
    rf, jump = 1, 1
    for i, layer in enumerate(spec.layers):
        prev, out = shapes[i], shapes[i + 1]
        params = macs = 0
        if layer.kind == "conv":
            in_c = prev[0]
            out_c, oh, ow = out
            params = out_c * in_c * layer.kernel ** 2 + out_c
            macs = oh * ow * out_c * in_c * layer.kernel ** 2
            rf += (layer.kernel - 1) * jump
        elif layer.kind == "maxpool2":
            rf += jump
            jump *= 2
        elif layer.kind == "dense":
            width_in = prev[0] if len(prev) == 1 else prev[0] * prev[1] * prev[2]
            params = width_in * layer.width + layer.width
            macs = width_in * layer.width
        report.layers.append(LayerCost(
            name=layer.name, kind=layer.kind, out_shape=tuple(out),
            params=params, macs=macs, receptive_field=rf))
    return report


def receptive_field(spec: NetworkSpec, depth: int) -> int:
    """Input pixels seen by one activation after `depth` layers."""
    if not 0 <= depth <= len(spec.layers):
        raise SpecError(f"depth {depth} outside spec '{spec.name}'")
    rf, jump = 1, 1
    for layer in spec.layers[:depth]:
        if layer.kind == "conv":
            rf += (layer.kernel - 1) * jump
        elif layer.kind == "maxpool2":
            rf += jump
            jump *= 2
    return rf


def stacked_conv_mac_ratio() -> float:
    """MAC ratio of two stacked 3x3 convs vs one 5x5 conv at equal channel
    counts over identical same-padded output grids (both see a 5-pixel
    receptive field).  The ratio is channel-count independent: 18/25."""
    def net(convs):
        layers = tuple(convs) + (
            _relu("relu1"), _pool("pool1"), _dense("dense1", 4), _relu("relu2"),
            _concat(), _dense("dense2", 2))
        return NetworkSpec(name="mac-probe", in_channels=2, layers=layers)

    # channel count equals the 2 input channels, so every conv maps C -> C
    stacked = net([_conv("conv_a", 3, 2, "same"), _conv("conv_b", 3, 2, "same")])
    single = net([_conv("conv_a", 5, 2, "same")])
    stacked_macs = sum(l.macs for l in count_cost(stacked).layers if l.kind == "conv")
    single_macs = sum(l.macs for l in count_cost(single).layers if l.kind == "conv")
    return stacked_macs / single_macs


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def param_shapes(spec: NetworkSpec) -> dict:
    """Ordered mapping of parameter names to their array shapes."""
    shapes = shape_chain(spec)
    out = {}
    for i, layer in enumerate(spec.layers):
        prev = shapes[i]
        if layer.kind == "conv":
            out[f"{layer.name}.w"] = (layer.out_channels, prev[0], layer.kernel, layer.kernel)
            out[f"{layer.name}.b"] = (layer.out_channels,)
        elif layer.kind == "dense":
            width_in = prev[0] if len(prev) == 1 else prev[0] * prev[1] * prev[2]
            out[f"{layer.name}.w"] = (width_in, layer.width)
            out[f"{layer.name}.b"] = (layer.width,)
    return out


# He scaling through the whole stack leaves initial predictions at a few
# radians while the targets live within ~0.4, and for some seeds the first
# momentum steps then blow the weights up (observed: epoch-1 divergence or a
# permanent half-collapsed basin).  Shrinking only the regression head puts
# the initial predictions on the target scale and removes that failure mode.
HEAD_INIT_SCALE = 0.02


def init_params(spec: NetworkSpec, seed: int, dtype=np.float32) -> dict:
    """He-style init (weights ~ N(0, sqrt(2 / fan_in)), zero biases) with a
    scaled-down final regression layer."""
    rng = np.random.default_rng(seed)
    params = {}
    head = f"{spec.layers[-1].name}.w"
    for name, shape in param_shapes(spec).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            std = np.sqrt(2.0 / fan_in) * (HEAD_INIT_SCALE if name == head else 1.0)
            params[name] = rng.normal(0.0, std, shape).astype(dtype)
    return params


def cast_params(params: dict, dtype) -> dict:
    return {k: v.astype(dtype) for k, v in params.items()}


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _flatten_nchw(x_nhwc: np.ndarray) -> np.ndarray:
    # flatten in (channel, row, column) order to match the public layout
    n = x_nhwc.shape[0]
    return np.ascontiguousarray(x_nhwc.transpose(0, 3, 1, 2)).reshape(n, -1)


def _unflatten_nchw(flat: np.ndarray, like: np.ndarray) -> np.ndarray:
    n, h, w, c = like.shape
    return np.ascontiguousarray(flat.reshape(n, c, h, w).transpose(0, 2, 3, 1))


def _run_layers(spec: NetworkSpec, params: dict, x_nhwc: np.ndarray,
                pose: np.ndarray, start: int = 0, acts_in=None, keep: bool = False):
    """Run layers start..end; optionally keep every layer input for backward.

    Conv outputs are handed onward as views into the conv canvas; the relu
    that always follows compacts them for free.
    """
    cur = x_nhwc if acts_in is None else acts_in[start]
    acts = [] if not keep else [None] * start
    for layer in spec.layers[start:]:
        if keep:
            acts.append(cur)
        if layer.kind == "conv":
            canvas, oh, ow = nn.conv2d_raw_nhwc(
                cur if cur.flags.c_contiguous else np.ascontiguousarray(cur),
                params[f"{layer.name}.w"], params[f"{layer.name}.b"], layer.padding)
            cur = canvas[:, :oh, :ow, :]
        elif layer.kind == "relu":
            cur = nn.relu(cur)
        elif layer.kind == "maxpool2":
            cur = nn.maxpool2x2_nhwc(cur)
        elif layer.kind == "dense":
            if cur.ndim == 4:
                cur = _flatten_nchw(cur)
            cur = nn.dense(cur, params[f"{layer.name}.w"],
                           params[f"{layer.name}.b"], name=layer.name)
        elif layer.kind == "concat-pose":
            cur = nn.concat_pose(cur, pose)
    return cur, acts


def _check_inputs(spec: NetworkSpec, x: np.ndarray, pose: np.ndarray):
    if x.ndim != 4 or x.shape[1:] != (spec.in_channels, INPUT_HEIGHT, INPUT_WIDTH):
        raise nn.ShapeError(
            f"'{spec.name}' expects input (n, {spec.in_channels}, "
            f"{INPUT_HEIGHT}, {INPUT_WIDTH}), got {x.shape}")
    if pose.shape != (x.shape[0], 2):
        raise nn.ShapeError(f"pose must be ({x.shape[0]}, 2), got {pose.shape}")


def forward(spec: NetworkSpec, params: dict, x: np.ndarray, pose: np.ndarray) -> np.ndarray:
    """Predict (yaw, pitch) radians for a (n, channels, 36, 60) batch."""
    _check_inputs(spec, x, pose)
    x_nhwc = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    pred, _ = _run_layers(spec, params, x_nhwc, pose.astype(x.dtype))
    return pred


def forward_backward(spec: NetworkSpec, params: dict, x: np.ndarray,
                     pose: np.ndarray, target: np.ndarray):
    """One training step's math: returns (loss, predictions, gradients)."""
    _check_inputs(spec, x, pose)
    x_nhwc = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    pose = pose.astype(x.dtype)
    pred, acts = _run_layers(spec, params, x_nhwc, pose, keep=True)
    loss, g = nn.euclidean_loss(pred, target)
    grads = {}
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        x_in = acts[i]
        if layer.kind == "conv":
            if not x_in.flags.c_contiguous:
                x_in = np.ascontiguousarray(x_in)
            g, gw, gb = nn.conv2d_backward_nhwc(g, x_in, params[f"{layer.name}.w"],
                                                layer.padding, need_input_grad=i > 0)
            grads[f"{layer.name}.w"] = gw
            grads[f"{layer.name}.b"] = gb
        elif layer.kind == "relu":
            g = nn.relu_backward(g, x_in)
        elif layer.kind == "maxpool2":
            pooled = acts[i + 1] if i + 1 < len(acts) else None
            g = nn.maxpool2x2_backward_nhwc(g, x_in, pooled)
        elif layer.kind == "dense":
            flat = _flatten_nchw(x_in) if x_in.ndim == 4 else x_in
            g, gw, gb = nn.dense_backward(g, flat, params[f"{layer.name}.w"])
            grads[f"{layer.name}.w"] = gw
            grads[f"{layer.name}.b"] = gb
            if x_in.ndim == 4:
                g = _unflatten_nchw(g, x_in)
        elif layer.kind == "concat-pose":
            g, _ = nn.concat_pose_backward(g)
    return loss, pred, grads


# ---------------------------------------------------------------------------
# GZNT weight files
# ---------------------------------------------------------------------------
#
# Layout (little endian): magic "GZNT", version u32 = 1, tensor count u32,
# then per tensor: name length u16 + UTF-8 name, dtype byte (0 = float32),
# rank byte, dims as u32s, raw payload.  Tensor names carry the architecture
# as a prefix ("hw-3x3/conv1.w") so a file identifies the spec it belongs to.

_MAGIC = b"GZNT"
_VERSION = 1


def save_weights(spec: NetworkSpec, params: dict, path) -> None:
    names = spec.param_names()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(names)))
        for name in names:
            arr = np.ascontiguousarray(params[name].astype(np.float32))
            full = f"{spec.name}/{name}".encode("utf-8")
            fh.write(struct.pack("<H", len(full)))
            fh.write(full)
            fh.write(struct.pack("<BB", 0, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


class _Reader:
    def __init__(self, path):
        self.path = path
        self.buf = open(path, "rb").read()
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise WeightFormatError(f"{self.path}: truncated weight file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out


def _read_header(reader: _Reader) -> int:
    if reader.take(4) != _MAGIC:
        raise WeightFormatError(f"{reader.path}: bad magic, not a GZNT file")
    version, count = struct.unpack("<II", reader.take(8))
    if version != _VERSION:
        raise WeightFormatError(f"{reader.path}: unsupported version {version}")
    if count == 0:
        raise WeightFormatError(f"{reader.path}: file contains no tensors")
    return count


def _read_tensor(reader: _Reader):
    (name_len,) = struct.unpack("<H", reader.take(2))
    name = reader.take(name_len).decode("utf-8")
    dtype_byte, rank = struct.unpack("<BB", reader.take(2))
    if dtype_byte != 0:
        raise WeightFormatError(f"{reader.path}: tensor '{name}' has unknown dtype {dtype_byte}")
    dims = struct.unpack(f"<{rank}I", reader.take(4 * rank))
    n_items = int(np.prod(dims)) if rank else 1
    payload = reader.take(4 * n_items)
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return name, arr


def load_weights(spec: NetworkSpec, path) -> dict:
    """Load parameters saved by `save_weights`; bit-exact round trip."""
    reader = _Reader(path)
    count = _read_header(reader)
    expected = [f"{spec.name}/{n}" for n in spec.param_names()]
    params = {}
    shapes = param_shapes(spec)
    for i, want in enumerate(expected):
        if i >= count:
            raise WeightFormatError(
                f"{path}: file has {count} tensors, spec '{spec.name}' needs {len(expected)}")
        name, arr = _read_tensor(reader)
        if name != want:
            raise WeightFormatError(f"{path}: tensor name '{name}' does not match '{want}'")
        short = want.split("/", 1)[1]
        if arr.shape != shapes[short]:
            raise WeightFormatError(
                f"{path}: tensor '{name}' has dims {arr.shape}, spec needs {shapes[short]}")
        params[short] = arr
    if count != len(expected):
        raise WeightFormatError(
            f"{path}: file has {count} tensors, spec '{spec.name}' needs {len(expected)}")
    return params


def peek_arch(path) -> str:
    """Architecture name embedded in a GZNT file's tensor names."""
    reader = _Reader(path)
    _read_header(reader)
    name, _ = _read_tensor(reader)
    if "/" not in name:
        raise WeightFormatError(f"{path}: tensor '{name}' carries no architecture prefix")
    return name.split("/", 1)[0]


# ---------------------------------------------------------------------------
# Network-level finite-difference gradient check
# ---------------------------------------------------------------------------
#
# The oracle always evaluates losses in float64 (its shadow mode); the mode
# chooses which production path is being verified.  Checking the float32
# backward pass against a float32 loss would drown real signals in rounding
# noise for small gradients, while the float64 oracle isolates exactly what
# the check is after: is the analytic gradient the derivative of the math.

FD_STEP = 1e-5
FD_RETRY_FACTORS = (0.25, 4.0, 0.0625)
FD_TOLERANCES = {np.float32: 1e-3, np.float64: 1e-6}
_FD_MAX_RETRIES = 128


def _suffix_loss(spec, params, acts, pose, target, start):
    pred, _ = _run_layers(spec, params, None, pose, start=start, acts_in=acts)
    loss, _ = nn.euclidean_loss(pred, target)
    return loss


def _dense_fd_grads(spec, params, acts, pose, target, layer_idx, name, step, chunk=4096):
    """Central differences for one dense block, vectorized over parameters.

    Perturbing dense weight w[i, j] changes only pre-activation column j, by
    step * x[:, i] (bias: by step), so both loss evaluations per parameter can
    share the suffix forward pass, batched over many perturbations at once.
    """
    layer = spec.layers[layer_idx]
    x_in = acts[layer_idx]
    flat = _flatten_nchw(x_in) if x_in.ndim == 4 else x_in
    w, b = params[f"{layer.name}.w"], params[f"{layer.name}.b"]
    base_z = nn.dense(flat, w, b)
    n, width = base_z.shape
    is_bias = name.endswith(".b")
    n_params = b.size if is_bias else w.size
    numeric = np.empty(n_params, dtype=np.float64)

    def suffix_losses(z_batch):
        # z_batch (p, n, width): run the remaining layers on each candidate
        p = z_batch.shape[0]
        cur = z_batch.reshape(p * n, width)
        pose_rep = np.repeat(pose[np.newaxis], p, axis=0).reshape(p * n, 2)
        for later in spec.layers[layer_idx + 1:]:
            if later.kind == "relu":
                cur = nn.relu(cur)
            elif later.kind == "dense":
                cur = nn.dense(cur, params[f"{later.name}.w"], params[f"{later.name}.b"])
            elif later.kind == "concat-pose":
                cur = nn.concat_pose(cur, pose_rep)
            else:
                raise SpecError(f"unexpected layer '{later.name}' after dense")
        diff = cur.reshape(p, n, 2) - target[np.newaxis].astype(cur.dtype)
        return np.sum(diff * diff, axis=(1, 2)).astype(np.float64) / (2.0 * n)

    dt = base_z.dtype.type
    for lo in range(0, n_params, chunk):
        hi = min(lo + chunk, n_params)
        idx = np.arange(lo, hi)
        cols = idx % width
        for sign, out in ((1.0, "plus"), (-1.0, "minus")):
            z = np.repeat(base_z[np.newaxis], hi - lo, axis=0)
            if is_bias:
                delta = np.full(hi - lo, dt(sign * step), dtype=base_z.dtype)
                z[np.arange(hi - lo), :, cols] += delta[:, np.newaxis]
            else:
                rows = idx // width
                z[np.arange(hi - lo), :, cols] += dt(sign * step) * flat[:, rows].T
            losses = suffix_losses(z)
            if sign > 0:
                plus = losses
            else:
                minus = losses
        numeric[lo:hi] = (plus - minus) / (2.0 * step)
    return numeric


def _scalar_fd(spec, params64, acts, pose, target, layer_idx, name, flat_idx, step):
    """One central difference, recomputing the network from the perturbed
    layer onward (prefix activations cannot change)."""
    work = params64[name].copy()
    flat = work.reshape(-1)
    pert = dict(params64)
    pert[name] = work
    orig = flat[flat_idx]
    flat[flat_idx] = orig + step
    lp = _suffix_loss(spec, pert, acts, pose, target, layer_idx)
    flat[flat_idx] = orig - step
    lm = _suffix_loss(spec, pert, acts, pose, target, layer_idx)
    if not (np.isfinite(lp) and np.isfinite(lm)):
        return float("nan")
    return (lp - lm) / (2.0 * step)


def _draw_problem(spec: NetworkSpec, seed: int, attempt: int, batch: int):
    rng = np.random.default_rng((seed << 16) + attempt)
    x64 = rng.uniform(-0.5, 0.5, (batch, spec.in_channels, INPUT_HEIGHT, INPUT_WIDTH))
    pose64 = rng.uniform(-0.4, 0.4, (batch, 2))
    target64 = rng.uniform(-0.4, 0.4, (batch, 2))
    return x64, pose64, target64


def _problem_margin(spec: NetworkSpec, params64: dict, x64, pose64) -> float:
    """Distance of the check point from the nearest relu kink or pool tie.

    Central differences only measure gradients where the network is
    differentiable; the margin says how far activations may shift under a
    perturbation before a max switches branches.
    """
    x_nhwc = np.ascontiguousarray(x64.transpose(0, 2, 3, 1))
    _, acts = _run_layers(spec, params64, x_nhwc, pose64, keep=True)
    margin = np.inf
    for i, layer in enumerate(spec.layers):
        if layer.kind == "relu":
            margin = min(margin, float(np.min(np.abs(acts[i]))))
        elif layer.kind == "maxpool2":
            v = np.stack(nn._pool_views(acts[i]))
            top2 = np.partition(v, -2, axis=0)[-2:]
            margin = min(margin, float(np.min(top2[1] - top2[0])))
    return margin


def _fd_problem(spec: NetworkSpec, params64: dict, seed: int, batch: int,
                step: float, attempts: int = 64):
    """Deterministically pick a check point clear of kinks for this seed."""
    best = None
    for attempt in range(attempts):
        problem = _draw_problem(spec, seed, attempt, batch)
        margin = _problem_margin(spec, params64, problem[0], problem[1])
        if margin > 6.0 * step:
            return problem
        if best is None or margin > best[0]:
            best = (margin, problem)
    return best[1]


def _fd_reports(spec, analytics, tolerances, params64, x64, pose64, target64, step):
    """Shared oracle pass compared against one or more analytic gradient
    sets; returns one GradientReport per (analytic, tolerance) pair.

    Entries whose first estimate misses the tightest tolerance are
    re-measured on a ladder of steps before the block norms are taken: a
    perturbation straddling a relu/pool kink self-corrects when the step
    moves, a wrong analytic gradient never does.
    """
    x_nhwc = np.ascontiguousarray(x64.transpose(0, 2, 3, 1))
    _, acts = _run_layers(spec, params64, x_nhwc, pose64, keep=True)
    reports = [nn.GradientReport(step=step, tolerance=t) for t in tolerances]
    ref = analytics[int(np.argmin(tolerances))]
    ref_tol = min(tolerances)

    layer_of = {}
    for i, layer in enumerate(spec.layers):
        if layer.kind in ("conv", "dense"):
            layer_of[f"{layer.name}.w"] = i
            layer_of[f"{layer.name}.b"] = i

    for name, base64 in params64.items():
        i = layer_of[name]
        if spec.layers[i].kind == "dense":
            numeric = _dense_fd_grads(spec, params64, acts, pose64, target64, i, name, step)
        else:
            numeric = np.empty(base64.size)
            for j in range(base64.size):
                numeric[j] = _scalar_fd(spec, params64, acts, pose64, target64,
                                        i, name, j, step)
        gref = ref[name].reshape(-1).astype(np.float64)
        scalar_errs = np.array([
            nn.relative_error(float(a), float(nv)) if np.isfinite(nv) else np.inf
            for a, nv in zip(gref, numeric)])
        suspects = np.flatnonzero(scalar_errs >= ref_tol)
        for j in suspects[np.argsort(scalar_errs[suspects])[::-1]][:_FD_MAX_RETRIES]:
            best_err, best_val = scalar_errs[j], numeric[j]
            for factor in FD_RETRY_FACTORS:
                retry = _scalar_fd(spec, params64, acts, pose64, target64,
                                   i, name, int(j), step * factor)
                if np.isfinite(retry):
                    err = nn.relative_error(float(gref[j]), retry)
                    if err < best_err:
                        best_err, best_val = err, retry
                if best_err < ref_tol:
                    break
            numeric[j] = best_val
        for report, analytic in zip(reports, analytics):
            report.block_errors[name] = nn.block_relative_error(
                analytic[name].reshape(-1), numeric)
    return reports


def finite_diff_check_network(spec: NetworkSpec, seed: int = 0, dtype=np.float32,
                              step: float = FD_STEP, tolerance: float | None = None,
                              batch: int = 1, params: dict | None = None,
                              corrupt_block: str | None = None) -> nn.GradientReport:
    """Check every parameter's analytic gradient against central finite
    differences of the float64 shadow forward pass.

    `dtype` selects the production path under test: float32 verifies the
    production backward at 1e-3 block relative error, float64 verifies the
    math itself at 1e-6.  `corrupt_block` sign-flips one analytic block, the
    negative control that must make the report fail.
    """
    dtype = np.dtype(dtype).type
    tolerance = FD_TOLERANCES[dtype] if tolerance is None else tolerance
    if params is None:
        params = init_params(spec, seed=seed + 1, dtype=dtype)
    else:
        params = cast_params(params, dtype)
    params64 = cast_params(params, np.float64)
    x64, pose64, target64 = _fd_problem(spec, params64, seed, batch, step)
    _, _, analytic = forward_backward(
        spec, params, x64.astype(dtype), pose64.astype(dtype), target64.astype(dtype))
    if corrupt_block is not None:
        analytic = dict(analytic)
        analytic[corrupt_block] = -analytic[corrupt_block]
    return _fd_reports(spec, [analytic], [tolerance], params64,
                       x64, pose64, target64, step)[0]


def finite_diff_check_modes(spec: NetworkSpec, seed: int = 0, step: float = FD_STEP,
                            batch: int = 1) -> dict:
    """Float32 and float64 checks sharing one float64 oracle pass.

    The float32 parameters cast to float64 denote the same point, so one set
    of central differences serves both comparisons.  Returns {32: report,
    64: report}.
    """
    params32 = init_params(spec, seed=seed + 1, dtype=np.float32)
    params64 = cast_params(params32, np.float64)
    x64, pose64, target64 = _fd_problem(spec, params64, seed, batch, step)
    _, _, a32 = forward_backward(
        spec, params32, x64.astype(np.float32), pose64.astype(np.float32),
        target64.astype(np.float32))
    _, _, a64 = forward_backward(spec, params64, x64, pose64, target64)
    r64, r32 = _fd_reports(
        spec, [a64, a32], [FD_TOLERANCES[np.float64], FD_TOLERANCES[np.float32]],
        params64, x64, pose64, target64, step)
    return {32: r32, 64: r64}
