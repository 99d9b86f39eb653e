"""Dense float64 arrays, reference convolution, and on-disk formats.

Everything in this library moves through plain C-contiguous float64
numpy arrays in channel-first [C, H, W] layout (batches prepend a dim).
Arrays are treated as immutable values once constructed; only optimizer
steps mutate parameters, and they do so explicitly.

`conv2d_naive` is the slow, loop-ordered reference used as an oracle by
the deformable and Gabor paths. `conv2d` is the im2col fast path the
layers actually run.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = [
    "zeros",
    "as_tensor",
    "conv2d_naive",
    "conv2d",
    "conv2d_backward",
    "save_tensor",
    "load_tensor",
    "save_container",
    "load_container",
    "dump_csv",
    "load_csv",
]

_MAGIC = b"DGT1"


def zeros(shape) -> np.ndarray:
    """All-zero float64 tensor. Empty shapes and non-positive dims are rejected."""
    dims = tuple(int(d) for d in shape)
    if len(dims) == 0:
        raise ValueError("tensor shape must have at least one dimension")
    if any(d < 1 for d in dims):
        raise ValueError(f"tensor dims must be >= 1, got {dims}")
    return np.zeros(dims, dtype=np.float64)


def as_tensor(data) -> np.ndarray:
    """Coerce to a C-contiguous float64 array."""
    return np.ascontiguousarray(data, dtype=np.float64)


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"{what} contains non-finite values")


def _out_size(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise ValueError(
            f"input size {size} with kernel {k}, stride {stride}, pad {pad} "
            "does not tile to an integral output size"
        )
    return span // stride + 1


def conv2d_naive(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Direct cross-correlation, quadruple loop over output and kernel taps.

    x: [Cin, Hi, Wi], w: [Cout, Cin, kh, kw]. No kernel flip (deep-learning
    convention). Deliberately slow and deterministic: this is the oracle
    the fast paths are checked against.
    """
    x = as_tensor(x)
    w = as_tensor(w)
    cin, hi, wi = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(f"input has {cin} channels but weight expects {cin_w}")
    ho = _out_size(hi, kh, stride, pad)
    wo = _out_size(wi, kw, stride, pad)
    xp = np.zeros((cin, hi + 2 * pad, wi + 2 * pad))
    xp[:, pad:pad + hi, pad:pad + wi] = x
    out = np.zeros((cout, ho, wo))
    for o in range(cout):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for c in range(cin):
                    patch = xp[c, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    acc += float(np.sum(patch * w[o, c]))
                out[o, i, j] = acc
    return out


def _patches(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """Zero-pad and expose sliding windows: returns (padded, view[Cin,Ho,Wo,kh,kw])."""
    cin, hi, wi = x.shape
    ho = _out_size(hi, kh, stride, pad)
    wo = _out_size(wi, kw, stride, pad)
    xp = np.zeros((cin, hi + 2 * pad, wi + 2 * pad))
    xp[:, pad:pad + hi, pad:pad + wi] = x
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return xp, win[:, ::stride, ::stride], (ho, wo)


def conv2d(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Fast cross-correlation via sliding windows + einsum. Same contract as conv2d_naive."""
    x = as_tensor(x)
    w = as_tensor(w)
    if x.shape[0] != w.shape[1]:
        raise ValueError(f"input has {x.shape[0]} channels but weight expects {w.shape[1]}")
    _, win, _ = _patches(x, w.shape[2], w.shape[3], stride, pad)
    return np.einsum("chwkl,ockl->ohw", win, w, optimize=True)


def conv2d_backward(grad_out: np.ndarray, x: np.ndarray, w: np.ndarray,
                    stride: int = 1, pad: int = 0):
    """Gradients of conv2d: returns (grad_x, grad_w).

    grad_w gathers from the same sliding windows as the forward pass;
    grad_x scatters tap by tap into the padded frame and crops.
    """
    grad_out = as_tensor(grad_out)
    x = as_tensor(x)
    w = as_tensor(w)
    cout, cin, kh, kw = w.shape
    _, win, (ho, wo) = _patches(x, kh, kw, stride, pad)
    grad_w = np.einsum("ohw,chwkl->ockl", grad_out, win, optimize=True)

    hi, wi = x.shape[1], x.shape[2]
    gxp = np.zeros((cin, hi + 2 * pad, wi + 2 * pad))
    # tap contribution: grad wrt the window pixel (k,l) of every output position
    gwin = np.einsum("ohw,ockl->chwkl", grad_out, w, optimize=True)
    for k in range(kh):
        for l in range(kw):
            gxp[:, k:k + stride * ho:stride, l:l + stride * wo:stride] += gwin[:, :, :, k, l]
    grad_x = gxp[:, pad:pad + hi, pad:pad + wi].copy()
    return grad_x, grad_w


# ---------------------------------------------------------------------------
# Serialization: little-endian binary, u32 rank + u32 dims + f64 payload.
# A container is a sequence of (name, tensor) sections behind a magic header.
# ---------------------------------------------------------------------------

def _write_tensor(fh, a: np.ndarray) -> None:
    a = as_tensor(a)
    fh.write(struct.pack("<I", a.ndim))
    fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
    fh.write(a.astype("<f8").tobytes())


def _read_tensor(fh) -> np.ndarray:
    (rank,) = struct.unpack("<I", fh.read(4))
    dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
    n = int(np.prod(dims))
    payload = fh.read(8 * n)
    if len(payload) != 8 * n:
        raise ValueError("truncated tensor payload")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)


def save_tensor(path, a: np.ndarray) -> None:
    with open(path, "wb") as fh:
        _write_tensor(fh, a)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return _read_tensor(fh)


def save_container(path, sections: dict) -> None:
    """Write named tensor sections; used for layer and model checkpoints."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(sections)))
        for name, a in sections.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            _write_tensor(fh, a)


def load_container(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path} is not a tensor container")
        (count,) = struct.unpack("<I", fh.read(4))
        sections = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            sections[name] = _read_tensor(fh)
        return sections


def dump_csv(path, a: np.ndarray) -> None:
    """Human-readable dump of a 2-D slice."""
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"csv dump needs a 2-D array, got shape {a.shape}")
    np.savetxt(path, a, delimiter=",", fmt="%.17g")


def load_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64))
