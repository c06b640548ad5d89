"""Radix-2 real-input FFTs with a naive DFT oracle.

Conventions, fixed for the whole project:

* forward transforms are unnormalized, inverses carry 1/n (per axis);
* transformed extents must be powers of two (callers zero-pad);
* real-input transforms store only the non-redundant half spectrum,
  ``n//2 + 1`` bins along the transformed axis;
* the inverse of a half spectrum treats the imaginary parts of the DC and
  Nyquist bins as zero (they are structurally zero for spectra of real
  signals), matching the usual c2r behaviour.

The workhorses are JIT-compiled kernels: an iterative decimation-in-time
radix-2 butterfly pass over batched rows, a strided variant for the
second-to-last axis, and real-input forward/inverse kernels that pack two
real samples per complex slot so a length-n real transform costs one
length-n/2 complex transform plus an O(n) untangle.
"""
from __future__ import annotations

import numpy as np
from numba import njit


class SpectralExtentError(ValueError):
    """Raised when a transform extent is not a power of two."""


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _require_pow2(n: int):
    if not is_power_of_two(n):
        raise SpectralExtentError(
            f"transform extent {n} is not a power of two; pad the signal first"
        )


def next_power_of_two(n: int) -> int:
    m = 1
    while m < n:
        m *= 2
    return m


# ------------------------------------------------------------ jit kernels


@njit(cache=True, fastmath=True, inline="always")
def _butterflies(row, twiddle, rev, n):
    """In-place radix-2 DIT pass over one contiguous complex row."""
    for i in range(n):
        j = rev[i]
        if j > i:
            tmp = row[i]
            row[i] = row[j]
            row[j] = tmp
    span = 1
    tstep = n // 2
    while span < n:
        for start in range(0, n, 2 * span):
            tw = 0
            for k in range(start, start + span):
                w = twiddle[tw]
                tw += tstep
                a = row[k]
                b = row[k + span] * w
                row[k] = a + b
                row[k + span] = a - b
        span *= 2
        tstep //= 2


@njit(cache=True, fastmath=True)
def _fft_rows(data, twiddle, rev):
    """In-place transform along the last axis of (m, n) complex data."""
    m, n = data.shape
    for r in range(m):
        _butterflies(data[r], twiddle, rev, n)


@njit(cache=True, fastmath=True)
def _fft_axis2(data, twiddle, rev):
    """In-place transform along axis -2 of (m, h, w) complex data.

    Butterflies act on whole length-w rows, so every inner operation is a
    contiguous sweep.
    """
    m, h, w = data.shape
    for r in range(m):
        block = data[r]
        for i in range(h):
            j = rev[i]
            if j > i:
                for c in range(w):
                    tmp = block[i, c]
                    block[i, c] = block[j, c]
                    block[j, c] = tmp
        span = 1
        tstep = h // 2
        while span < h:
            for start in range(0, h, 2 * span):
                tw = 0
                for k in range(start, start + span):
                    wt = twiddle[tw]
                    tw += tstep
                    for c in range(w):
                        a = block[k, c]
                        b = block[k + span, c] * wt
                        block[k, c] = a + b
                        block[k + span, c] = a - b
            span *= 2
            tstep //= 2


@njit(cache=True, fastmath=True)
def _rfft_rows(x, out, twiddle, rev, untangle):
    """Half spectra of real rows: (m, n) float64 -> (m, n//2+1) complex."""
    m, n = x.shape
    half = n // 2
    z = np.empty(half, dtype=np.complex128)
    for r in range(m):
        row = x[r]
        for j in range(half):
            z[j] = complex(row[2 * j], row[2 * j + 1])
        if half > 1:
            _butterflies(z, twiddle, rev, half)
        for k in range(half + 1):
            a = z[k % half] if half > 0 else 0j
            b = np.conj(z[(half - k) % half])
            even = 0.5 * (a + b)
            odd = -0.5j * (a - b)
            out[r, k] = even + untangle[k] * odd


@njit(cache=True, fastmath=True)
def _irfft_rows(spec, out, twiddle, rev, untangle):
    """Real rows from half spectra: (m, n//2+1) complex -> (m, n) float64.

    Imaginary parts of the DC and Nyquist bins are ignored.
    """
    m = spec.shape[0]
    n = out.shape[1]
    half = n // 2
    z = np.empty(half, dtype=np.complex128)
    for r in range(m):
        row = spec[r]
        dc = complex(row[0].real, 0.0)
        ny = complex(row[half].real, 0.0)
        for k in range(half):
            a = dc if k == 0 else row[k]
            idx = half - k
            b = np.conj(ny) if idx == half else np.conj(row[idx])
            even = 0.5 * (a + b)
            odd = 0.5 * (a - b) * untangle[k]
            z[k] = even + 1j * odd
        if half > 1:
            _butterflies(z, twiddle, rev, half)
        inv = 1.0 / half
        for j in range(half):
            out[r, 2 * j] = z[j].real * inv
            out[r, 2 * j + 1] = z[j].imag * inv


_PLAN_CACHE: dict = {}


def _plan(n: int, inverse: bool):
    """(twiddle, bit-reversal) tables for a length-n complex transform."""
    key = (n, inverse)
    plan = _PLAN_CACHE.get(key)
    if plan is None:
        bits = n.bit_length() - 1
        rev = np.zeros(n, dtype=np.int64)
        for i in range(n):
            r = 0
            x = i
            for _ in range(bits):
                r = (r << 1) | (x & 1)
                x >>= 1
            rev[i] = r
        sign = 2j if inverse else -2j
        twiddle = np.exp(sign * np.pi * np.arange(max(n // 2, 1)) / n)
        plan = (twiddle, rev)
        _PLAN_CACHE[key] = plan
    return plan


def _real_plan(n: int, inverse: bool):
    """Tables for the packed real transform: half-length FFT + untangle."""
    key = ("r", n, inverse)
    plan = _PLAN_CACHE.get(key)
    if plan is None:
        half = max(n // 2, 1)
        twiddle, rev = _plan(half, inverse)
        sign = 2j if inverse else -2j
        count = n // 2 + 1 if not inverse else n // 2
        untangle = np.exp(sign * np.pi * np.arange(max(count, 1)) / n)
        plan = (twiddle, rev, untangle)
        _PLAN_CACHE[key] = plan
    return plan


# ------------------------------------------------------------ complex API


def _c2c(z: np.ndarray, axis: int, inverse: bool, reuse: bool = False) -> np.ndarray:
    """Unnormalized complex FFT along one axis (conjugate twiddles if inverse).

    ``reuse=True`` lets the kernel work in place when the input is already a
    fresh contiguous complex array nobody else holds.
    """
    z = np.asarray(z, dtype=np.complex128)
    n = z.shape[axis]
    _require_pow2(n)
    if n == 1:
        return z.copy()
    twiddle, rev = _plan(n, inverse)
    axis = axis % z.ndim

    def _workbuf(arr):
        if reuse and arr.flags.c_contiguous and arr.dtype == np.complex128:
            return arr
        return np.ascontiguousarray(arr).copy()

    if axis == z.ndim - 1:
        out = _workbuf(z)
        _fft_rows(out.reshape(-1, n), twiddle, rev)
        return out
    if axis == z.ndim - 2:
        out = _workbuf(z)
        w = out.shape[-1]
        _fft_axis2(out.reshape(-1, n, w), twiddle, rev)
        return out
    moved = np.ascontiguousarray(np.moveaxis(z, axis, -1))
    _fft_rows(moved.reshape(-1, n), twiddle, rev)
    return np.moveaxis(moved, -1, axis)


def fft_complex(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unnormalized forward complex FFT."""
    return _c2c(z, axis, inverse=False)


def ifft_complex(z: np.ndarray, axis: int = -1) -> np.ndarray:
    """Inverse complex FFT with the 1/n normalization."""
    z = np.asarray(z, dtype=np.complex128)
    return _c2c(z, axis, inverse=True) / z.shape[axis]


# ------------------------------------------------------------ oracle


def dft_naive(signal: np.ndarray) -> np.ndarray:
    """O(n^2) direct DFT of a 1-D signal; the oracle the fast path is held to.

    Unnormalized forward convention: X[k] = sum_j x[j] exp(-2i pi jk / n).
    """
    x = np.asarray(signal)
    if x.ndim != 1:
        raise ValueError("dft_naive expects a 1-D signal")
    n = x.shape[0]
    if n < 1:
        raise ValueError("dft_naive expects length >= 1")
    j = np.arange(n)
    basis = np.exp(-2j * np.pi * np.outer(j, j) / n)
    return basis @ x.astype(np.complex128)


def dft_naive_2d(image: np.ndarray) -> np.ndarray:
    """Separable naive DFT over the two axes of a 2-D array."""
    img = np.asarray(image, dtype=np.complex128)
    if img.ndim != 2:
        raise ValueError("dft_naive_2d expects a 2-D array")
    rows = np.stack([dft_naive(r) for r in img])
    return np.stack([dft_naive(c) for c in rows.T]).T


# ------------------------------------------------------------ real API


def rfft_1d(signal: np.ndarray, axis: int = -1) -> np.ndarray:
    """Half spectrum of a real signal: bins 0..n//2 along `axis`."""
    x = np.asarray(signal, dtype=np.float64)
    n = x.shape[axis]
    _require_pow2(n)
    axis = axis % x.ndim
    if axis != x.ndim - 1:
        x = np.moveaxis(x, axis, -1)
    if n == 1:
        out = x.astype(np.complex128)
    else:
        flat = np.ascontiguousarray(x).reshape(-1, n)
        out = np.empty((flat.shape[0], n // 2 + 1), dtype=np.complex128)
        twiddle, rev, untangle = _real_plan(n, inverse=False)
        _rfft_rows(flat, out, twiddle, rev, untangle)
        out = out.reshape(x.shape[:-1] + (n // 2 + 1,))
    if axis != out.ndim - 1:
        out = np.moveaxis(out, -1, axis)
    return out


def irfft_1d(spec: np.ndarray, n: int, axis: int = -1) -> np.ndarray:
    """Real signal of length n from its half spectrum (1/n normalization)."""
    s = np.asarray(spec, dtype=np.complex128)
    _require_pow2(n)
    bins = s.shape[axis]
    if bins != n // 2 + 1:
        raise ValueError(
            f"half spectrum has {bins} bins along axis {axis}, expected {n // 2 + 1} for n={n}"
        )
    axis = axis % s.ndim
    if axis != s.ndim - 1:
        s = np.moveaxis(s, axis, -1)
    if n == 1:
        out = s[..., 0:1].real.astype(np.float64)
    else:
        flat = np.ascontiguousarray(s).reshape(-1, bins)
        out = np.empty((flat.shape[0], n), dtype=np.float64)
        twiddle, rev, untangle = _real_plan(n, inverse=True)
        _irfft_rows(flat, out, twiddle, rev, untangle)
        out = out.reshape(s.shape[:-1] + (n,))
    if axis != out.ndim - 1:
        out = np.moveaxis(out, -1, axis)
    return out


def rfft_2d(image: np.ndarray) -> np.ndarray:
    """2-D half spectrum over the trailing two axes: (..., H, W) -> (..., H, W//2+1)."""
    step = rfft_1d(image, axis=-1)
    return _c2c(step, -2, inverse=False, reuse=True)  # step is a fresh buffer


def irfft_2d(spec: np.ndarray, height: int, width: int) -> np.ndarray:
    """Inverse of rfft_2d with 1/(H*W) normalization."""
    s = np.asarray(spec, dtype=np.complex128)
    if s.shape[-2] != height:
        raise ValueError(f"spectrum has {s.shape[-2]} rows, expected {height}")
    rows = _c2c(s, -2, inverse=True)
    rows *= 1.0 / height
    return irfft_1d(rows, width, axis=-1)


# ------------------------------------------------------------ transposed maps


def _mid_scale(bins: int, factor: float) -> np.ndarray:
    w = np.ones(bins)
    if bins > 2:
        w[1:-1] = factor
    return w


def vjp_rfft_1d(cotangent: np.ndarray, n: int, axis: int = -1) -> np.ndarray:
    """Vector-Jacobian product of rfft_1d under the fixed conventions.

    The mirrored bins each appear once in the half spectrum, so the middle
    bins are re-weighted before riding the inverse transform back.
    """
    g = np.asarray(cotangent, dtype=np.complex128)
    gm = np.moveaxis(g, axis, -1) * _mid_scale(n // 2 + 1, 0.5)
    return n * irfft_1d(np.moveaxis(gm, -1, axis), n, axis=axis)


def vjp_irfft_1d(cotangent: np.ndarray, n: int, axis: int = -1) -> np.ndarray:
    """Vector-Jacobian product of irfft_1d (cotangent is real, length n)."""
    c = np.asarray(cotangent, dtype=np.float64)
    spec = rfft_1d(c, axis=axis)
    sm = np.moveaxis(spec, axis, -1) * _mid_scale(n // 2 + 1, 2.0)
    # gradients w.r.t. Im at DC/Nyquist are structurally zero; clear roundoff
    sm[..., 0] = sm[..., 0].real
    sm[..., -1] = sm[..., -1].real
    return np.moveaxis(sm, -1, axis) / n


def vjp_rfft_2d(cotangent: np.ndarray, height: int, width: int) -> np.ndarray:
    g = np.asarray(cotangent, dtype=np.complex128) * _mid_scale(width // 2 + 1, 0.5)
    return height * width * irfft_2d(g, height, width)


def vjp_irfft_2d(cotangent: np.ndarray, height: int, width: int) -> np.ndarray:
    spec = rfft_2d(np.asarray(cotangent, dtype=np.float64))
    out = spec * _mid_scale(width // 2 + 1, 2.0) / (height * width)
    # the self-conjugate columns of the gradient are structurally Hermitian;
    # project them so inert coordinates carry exact zeros, not roundoff
    return hermitianize_special_columns(out, inplace=True)


# ------------------------------------------------------------ hermitian utils


def hermitian_mirror_1d(spec: np.ndarray, n: int, axis: int = -1) -> np.ndarray:
    """Full length-n spectrum implied by a half spectrum."""
    s = np.moveaxis(np.asarray(spec, dtype=np.complex128), axis, -1)
    full = np.empty(s.shape[:-1] + (n,), dtype=np.complex128)
    full[..., : n // 2 + 1] = s
    if n > 1:
        full[..., n // 2 + 1 :] = np.conj(s[..., 1 : (n + 1) // 2][..., ::-1])
    return np.moveaxis(full, -1, axis)


def hermitian_mirror_2d(spec: np.ndarray, height: int, width: int) -> np.ndarray:
    """Full (H, W) spectrum implied by an (H, W//2+1) half spectrum.

    Mirrored columns satisfy full[kh, W-kw] = conj(full[(H-kh) % H, kw]);
    the stored columns are copied as they are.
    """
    s = np.asarray(spec, dtype=np.complex128)
    half = width // 2 + 1
    full = np.empty(s.shape[:-1] + (width,), dtype=np.complex128)
    full[..., :half] = s
    flipped = np.roll(s[..., ::-1, :], 1, axis=-2)
    full[..., half:] = np.conj(flipped[..., 1 : (width + 1) // 2][..., ::-1])
    return full


@njit(cache=True, fastmath=True)
def _sym_columns(col0, coln):
    """Hermitian-project the kw=0 and kw=W/2 columns along the H axis."""
    m, h = col0.shape
    for r in range(m):
        for k in range(h // 2 + 1):
            j = (h - k) % h
            a = col0[r, k]
            b = col0[r, j]
            col0[r, k] = 0.5 * (a + np.conj(b))
            if j != k:
                col0[r, j] = 0.5 * (b + np.conj(a))
            c = coln[r, k]
            d = coln[r, j]
            coln[r, k] = 0.5 * (c + np.conj(d))
            if j != k:
                coln[r, j] = 0.5 * (d + np.conj(c))


def hermitianize_special_columns(spec: np.ndarray, inplace: bool = False) -> np.ndarray:
    """Project the self-conjugate columns of a 2-D half spectrum.

    Columns kw = 0 and kw = W/2 of an (..., H, Wb) half spectrum must be
    Hermitian along the H axis for the block to describe a real field; this
    replaces them by their Hermitian part and leaves every other bin alone.
    Only the two affected columns are copied unless the array is written in
    place (``inplace=True`` for freshly allocated inputs).
    """
    s = np.asarray(spec, dtype=np.complex128)
    if not inplace:
        s = s.copy()
    h = s.shape[-2]
    col0 = np.ascontiguousarray(s[..., 0]).reshape(-1, h)
    coln = np.ascontiguousarray(s[..., s.shape[-1] - 1]).reshape(-1, h)
    _sym_columns(col0, coln)
    s[..., 0] = col0.reshape(s.shape[:-1])
    s[..., s.shape[-1] - 1] = coln.reshape(s.shape[:-1])
    return s


def hermitian_project_columns(col0: np.ndarray, coln: np.ndarray):
    """Hermitian parts of the two self-conjugate columns (fresh arrays)."""
    h = col0.shape[-1]
    a = np.ascontiguousarray(col0).reshape(-1, h).copy()
    b = np.ascontiguousarray(coln).reshape(-1, h).copy()
    _sym_columns(a, b)
    return a.reshape(col0.shape), b.reshape(coln.shape)
