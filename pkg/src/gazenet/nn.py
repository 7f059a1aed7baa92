"""Minimal deterministic CNN math: forward/backward for every layer the gaze
networks need, the euclidean regression loss, SGD with momentum, and a
central-finite-difference gradient checker.

All operations are pure functions of their inputs (no hidden state), so they
are safe to call concurrently on disjoint data.  Activations use a
channels-last internal layout; the public `conv2d`/`maxpool2x2` entry points
accept and return the (sample, channel, row, column) layout used everywhere
else in the package.

Production paths run in float32.  Every function also accepts float64 arrays,
which is what the gradient checker's high-precision shadow mode uses.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.blas import dgemm, sgemm

# Reference mode is single-threaded: small tap GEMMs gain nothing from BLAS
# threads, and the numpy and scipy BLAS pools spin against each other when
# calls alternate between them.  Overridable for experimentation.
_BLAS_THREADS = int(os.environ.get("GAZENET_BLAS_THREADS", "1"))
try:
    import threadpoolctl

    threadpoolctl.threadpool_limits(_BLAS_THREADS, "blas")
except ImportError:  # pragma: no cover
    pass

# The blocked convolution loop sizes its sample chunks so the working set of
# one chunk stays cache-resident; measured ~3x faster than unblocked GEMMs on
# the 60x36 inputs this package uses.
_CONV_CHUNK_BYTES = 400_000

REL_ERR_EPS = 1e-8


class ShapeError(ValueError):
    """A tensor did not match the shape a layer requires."""


def _layer(name: str | None) -> str:
    return f" in layer '{name}'" if name else ""


def _gemm_acc(c: np.ndarray, a: np.ndarray, b: np.ndarray) -> None:
    """c += a @ b without temporaries.

    `c` (m,n), `a` (m,k), and `b` (k,n) must be C-contiguous.  The call runs
    as c.T = b.T @ a.T, the same product expressed on the F-contiguous
    transposed views, so BLAS accumulates straight into `c`.
    """
    gemm = sgemm if c.dtype == np.float32 else dgemm
    gemm(1.0, b.T, a.T, beta=1.0, c=c.T, overwrite_c=1)


def _gemm_acc_t(c: np.ndarray, a: np.ndarray, b: np.ndarray) -> None:
    """c += a.T @ b for C-contiguous c (m,n), a (l,m), b (l,n)."""
    gemm = sgemm if c.dtype == np.float32 else dgemm
    gemm(1.0, b.T, a.T, beta=1.0, c=c.T, overwrite_c=1, trans_b=1)


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------
#
# Internally a convolution works on a channels-last "canvas" the size of the
# input.  Flattening (row, col) lets every kernel tap become one GEMM on a
# contiguous view of the input, shifted by the tap offset; output rows that
# fall outside the valid region (or bleed across sample boundaries) are
# discarded by slicing.  The backward pass zero-pads the output gradient into
# the same canvas, which makes the tap arithmetic exact at the borders.


def _chunk_samples(n: int, per_sample_bytes: int) -> int:
    return max(1, min(n, _CONV_CHUNK_BYTES // max(per_sample_bytes, 1)))


def conv2d_raw_nhwc(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
                    padding: str = "valid"):
    """Correlate a channels-last batch with (out_c, in_c, k, k) weights.

    Returns (canvas, oh, ow): the bias-seeded (n, h, w, out_c) canvas whose
    valid region is canvas[:, :oh, :ow, :].  Callers that follow with an
    elementwise op compact the view for free.  No kernel flip is applied.
    """
    out_c, in_c, k, _ = weights.shape
    n, h, w, xc = x.shape
    if padding == "same":
        p = (k - 1) // 2
        xp = np.zeros((n, h + k - 1, w + k - 1, xc), dtype=x.dtype)
        xp[:, p : p + h, p : p + w, :] = x
        x, h, w = xp, h + k - 1, w + k - 1
    oh, ow = h - k + 1, w - k + 1
    hw = h * w
    w_taps = np.ascontiguousarray(weights.transpose(2, 3, 1, 0))
    out = np.empty((n, hw, out_c), dtype=x.dtype)
    out[:] = bias.astype(x.dtype)
    xf = x.reshape(n, hw, -1)
    l_last = hw - (k - 1) * w - (k - 1)
    chunk = _chunk_samples(n, hw * (in_c + out_c) * x.itemsize)
    for c0 in range(0, n, chunk):
        c1 = min(c0 + chunk, n)
        xa = xf[c0:c1].reshape(-1, xf.shape[2])
        oa = out[c0:c1].reshape(-1, out_c)
        length = (c1 - c0 - 1) * hw + l_last
        for di in range(k):
            base = di * w
            for dj in range(k):
                off = base + dj
                _gemm_acc(oa[:length], xa[off : off + length], w_taps[di, dj])
    return out.reshape(n, h, w, out_c), oh, ow


def conv2d_nhwc(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
                padding: str = "valid") -> np.ndarray:
    """Like conv2d_raw_nhwc but returning the compact (n, oh, ow, out_c)."""
    canvas, oh, ow = conv2d_raw_nhwc(x, weights, bias, padding)
    return np.ascontiguousarray(canvas[:, :oh, :ow, :])


def _embed_valid(grad_out: np.ndarray, n, h, w, oh, ow, out_c, dtype) -> np.ndarray:
    buf = np.empty((n, h, w, out_c), dtype=dtype)
    buf[:, :oh, :ow, :] = grad_out
    buf[:, oh:, :, :] = 0
    buf[:, :oh, ow:, :] = 0
    return buf


def conv2d_backward_nhwc(grad_out: np.ndarray, x: np.ndarray, weights: np.ndarray,
                         padding: str = "valid", need_input_grad: bool = True):
    """Gradients of conv2d_nhwc w.r.t. input, weights, and bias.

    `need_input_grad=False` skips the input-gradient GEMMs (first layer).
    """
    out_c, in_c, k, _ = weights.shape
    n, h, w, _ = x.shape
    if padding == "same":
        p = (k - 1) // 2
        xp = np.zeros((n, h + k - 1, w + k - 1, in_c), dtype=x.dtype)
        xp[:, p : p + h, p : p + w, :] = x
        gx_pad, gw, gb = conv2d_backward_nhwc(grad_out, xp, weights, "valid",
                                              need_input_grad)
        gx = gx_pad[:, p : p + h, p : p + w, :] if need_input_grad else None
        return gx, gw, gb

    oh, ow = h - k + 1, w - k + 1
    hw = h * w
    g = _embed_valid(grad_out, n, h, w, oh, ow, out_c, x.dtype)
    gf = g.reshape(n, hw, out_c)
    xf = x.reshape(n, hw, in_c)
    gx = np.zeros((n, hw, in_c), dtype=x.dtype) if need_input_grad else None
    gw_taps = np.zeros((k, k, in_c, out_c), dtype=x.dtype)
    w_taps_t = np.ascontiguousarray(weights.transpose(2, 3, 0, 1))
    l_last = hw - (k - 1) * w - (k - 1)
    per_sample = hw * (in_c * (1 + need_input_grad) + out_c) * x.itemsize
    chunk = _chunk_samples(n, per_sample)
    for c0 in range(0, n, chunk):
        c1 = min(c0 + chunk, n)
        xa = xf[c0:c1].reshape(-1, in_c)
        ga = gf[c0:c1].reshape(-1, out_c)
        gxa = gx[c0:c1].reshape(-1, in_c) if need_input_grad else None
        length = (c1 - c0 - 1) * hw + l_last
        for di in range(k):
            base = di * w
            for dj in range(k):
                off = base + dj
                # weight grad: correlate input patch with output grad
                _gemm_acc_t(gw_taps[di, dj], xa[off : off + length], ga[:length])
                if need_input_grad:
                    # input grad: spread output grad through the tap weight
                    _gemm_acc(gxa[off : off + length], ga[:length], w_taps_t[di, dj])
    gw = np.ascontiguousarray(gw_taps.transpose(3, 2, 0, 1))
    gb = grad_out.sum(axis=(0, 1, 2))
    if need_input_grad:
        gx = gx.reshape(n, h, w, in_c)
    return gx, gw, gb


def _to_nhwc(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def _to_nchw(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


def conv2d(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
           padding: str = "valid", name: str | None = None) -> np.ndarray:
    """2-D correlation on a (sample, channel, row, column) batch.

    Valid padding shrinks each spatial axis by kernel-1; same padding keeps
    the input size (zero borders).  Bias is added per output channel.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input, got rank {x.ndim}{_layer(name)}")
    if weights.ndim != 4 or weights.shape[2] != weights.shape[3]:
        raise ShapeError(f"conv2d weights must be (out_c, in_c, k, k), got {weights.shape}{_layer(name)}")
    out_c, in_c, k, _ = weights.shape
    if padding not in ("valid", "same"):
        raise ShapeError(f"unknown padding mode '{padding}'{_layer(name)}")
    if x.shape[1] != in_c:
        raise ShapeError(
            f"input has {x.shape[1]} channels, weights expect {in_c}{_layer(name)}")
    if bias.shape != (out_c,):
        raise ShapeError(f"bias must have shape ({out_c},), got {bias.shape}{_layer(name)}")
    if padding == "valid" and (x.shape[2] < k or x.shape[3] < k):
        raise ShapeError(
            f"input {x.shape[2]}x{x.shape[3]} smaller than {k}x{k} kernel{_layer(name)}")
    return _to_nchw(conv2d_nhwc(_to_nhwc(x), weights, bias, padding))


def conv2d_backward(grad_out: np.ndarray, x: np.ndarray, weights: np.ndarray,
                    padding: str = "valid"):
    """Input/weight/bias gradients for `conv2d` (all in NCHW layout)."""
    gx, gw, gb = conv2d_backward_nhwc(_to_nhwc(grad_out), _to_nhwc(x), weights, padding)
    return _to_nchw(gx), gw, gb


# ---------------------------------------------------------------------------
# 2x2 max pooling
# ---------------------------------------------------------------------------


def _pool_views(x: np.ndarray):
    # window corners in row-major scan order: (0,0), (0,1), (1,0), (1,1)
    return (x[:, 0::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 0::2], x[:, 1::2, 1::2])


def maxpool2x2_nhwc(x: np.ndarray) -> np.ndarray:
    v00, v01, v10, v11 = _pool_views(x)
    return np.maximum(np.maximum(v00, v01), np.maximum(v10, v11))


def maxpool2x2_backward_nhwc(grad_out: np.ndarray, x: np.ndarray,
                             pooled: np.ndarray | None = None) -> np.ndarray:
    """Route gradient to each window's max; first occurrence wins on ties.

    `pooled` may pass the cached forward output to skip recomputing the max.
    """
    v00, v01, v10, v11 = _pool_views(x)
    m = pooled if pooled is not None else \
        np.maximum(np.maximum(v00, v01), np.maximum(v10, v11))
    t00 = v00 == m
    t01 = (v01 == m) & ~t00
    t10 = (v10 == m) & ~(t00 | t01)
    t11 = ~(t00 | t01 | t10)
    gx = np.empty_like(x)
    gx[:, 0::2, 0::2] = grad_out * t00
    gx[:, 0::2, 1::2] = grad_out * t01
    gx[:, 1::2, 0::2] = grad_out * t10
    gx[:, 1::2, 1::2] = grad_out * t11
    return gx


def maxpool2x2(x: np.ndarray, name: str | None = None) -> np.ndarray:
    """Non-overlapping 2x2 max pooling, stride 2, on a NCHW batch."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2x2 expects rank-4 input, got rank {x.ndim}{_layer(name)}")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(
            f"maxpool2x2 needs even spatial dims, got {x.shape[2]}x{x.shape[3]}{_layer(name)}")
    return _to_nchw(maxpool2x2_nhwc(_to_nhwc(x)))


def maxpool2x2_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return _to_nchw(maxpool2x2_backward_nhwc(_to_nhwc(grad_out), _to_nhwc(x)))


# ---------------------------------------------------------------------------
# Dense, ReLU, pose concatenation
# ---------------------------------------------------------------------------


def dense(x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
          name: str | None = None) -> np.ndarray:
    """Affine map y = x @ W + b for a (batch, features) input."""
    if x.shape[-1] != weights.shape[0]:
        raise ShapeError(
            f"dense input width {x.shape[-1]} != weight input width {weights.shape[0]}{_layer(name)}")
    return x @ weights + bias


def dense_backward(grad_out: np.ndarray, x: np.ndarray, weights: np.ndarray):
    return grad_out @ weights.T, x.T @ grad_out, grad_out.sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, x.dtype.type(0))


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    # inputs exactly at zero are treated as inactive
    return grad_out * (x > 0)


def concat_pose(features: np.ndarray, pose: np.ndarray) -> np.ndarray:
    """Append (yaw, pitch) head-pose radians to a feature batch."""
    return np.concatenate([features, pose.astype(features.dtype)], axis=-1)


def concat_pose_backward(grad_out: np.ndarray):
    """Split a concat_pose gradient back into (feature grad, pose grad)."""
    return grad_out[..., :-2], grad_out[..., -2:]


# ---------------------------------------------------------------------------
# Loss and optimizer
# ---------------------------------------------------------------------------


def euclidean_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared euclidean loss (1/2N) * sum ||pred - target||^2.

    Returns (loss, gradient w.r.t. pred); gradient is (pred - target) / N.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"loss shapes differ: {pred.shape} vs {target.shape}")
    n = pred.shape[0]
    diff = pred - target.astype(pred.dtype)
    loss = float(np.sum(diff * diff)) / (2.0 * n)
    return loss, diff / pred.dtype.type(n)


def sgd_step(params: dict, grads: dict, velocity: dict, lr: float, momentum: float) -> None:
    """In-place momentum SGD: v <- momentum*v + g; p <- p - lr*v."""
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape {p.shape} for '{key}'")
        v = velocity.get(key)
        if v is None:
            v = np.zeros_like(p)
            velocity[key] = v
        v *= p.dtype.type(momentum)
        v += g
        p -= p.dtype.type(lr) * v


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    """All forward/backward results must stay finite; NaN/Inf is a bug."""
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {what}")
    return x


# ---------------------------------------------------------------------------
# Finite-difference gradient check
# ---------------------------------------------------------------------------


@dataclass
class GradientReport:
    """Max relative analytic-vs-numeric gradient error per parameter block."""

    step: float
    tolerance: float
    block_errors: dict = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.block_errors.values()) if self.block_errors else 0.0

    @property
    def passed(self) -> bool:
        return bool(self.block_errors) and all(
            np.isfinite(e) and e < self.tolerance for e in self.block_errors.values())

    def lines(self):
        for name in sorted(self.block_errors):
            err = self.block_errors[name]
            verdict = "ok" if np.isfinite(err) and err < self.tolerance else "FAIL"
            yield f"{name:24s} max rel err {err:10.3e}  {verdict}"


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), REL_ERR_EPS)


def block_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """|a - n| / max(|a|, |n|, eps) with |.| the euclidean norm of the block.

    Individual entries of a correct float32 backward pass can drift far from
    the true derivative wherever the reduction cancels, so the meaningful
    per-block statistic is the norm ratio, not a per-entry maximum.
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(n)):
        return float("inf")
    return float(np.linalg.norm(a - n)
                 / max(np.linalg.norm(a), np.linalg.norm(n), REL_ERR_EPS))


def finite_diff_check(block_loss_fns: dict, params: dict, analytic: dict,
                      step: float, tolerance: float) -> GradientReport:
    """Compare analytic gradients against central finite differences.

    `block_loss_fns[name]` must evaluate the scalar loss given a replacement
    array for that one parameter block; every block is otherwise held at its
    value in `params`.  Each scalar parameter is perturbed by +/-step and the
    numeric slopes (f(w+h) - f(w-h)) / 2h are compared to the analytic block.
    Non-finite losses are reported as block failures, never raised.
    """
    report = GradientReport(step=step, tolerance=tolerance)
    for name, base in params.items():
        fn = block_loss_fns[name]
        work = base.copy()
        flat = work.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            # snap the perturbed values to representable floats so the
            # effective step is known exactly
            wp = base.dtype.type(orig + step)
            wm = base.dtype.type(orig - step)
            flat[i] = wp
            lp = fn(work)
            flat[i] = wm
            lm = fn(work)
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                numeric[i] = np.nan
                break
            numeric[i] = (lp - lm) / (float(wp) - float(wm))
        report.block_errors[name] = block_relative_error(analytic[name], numeric)
    return report
