"""Radix-2 FFT machinery and the band-wise transform feeding the complex stream.

The transform is an iterative Cooley-Tukey decimation-in-time FFT with a
precomputed bit-reversal permutation. The forward transform is
unnormalized (X[k] = sum_t x[t] exp(-2*pi*i*k*t/n)); the inverse conjugates
the twiddles and scales by 1/n, so inverse(forward(x)) == x.

Patch sizes are constrained to powers of two, which keeps the transform
exact without zero padding and preserves spatial alignment between the
real and complex streams.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError
from .tensor import ComplexTensor, Tensor

FORWARD = "forward"
INVERSE = "inverse"


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


class FftPlan:
    """Precomputed roots of unity and bit-reversal order for length n."""

    def __init__(self, n: int):
        if not _is_pow2(n):
            raise DimensionError(f"FFT length must be a power of two, got {n}")
        self.n = n
        k = np.arange(n, dtype=np.float64)
        ang = -2.0 * math.pi * k / n
        # twiddle[k] = exp(-2*pi*i*k/n), split storage
        self.tw_re = np.cos(ang)
        self.tw_im = np.sin(ang)
        self.bitrev = self._bit_reversal(n)

    @staticmethod
    def _bit_reversal(n: int) -> np.ndarray:
        bits = n.bit_length() - 1
        rev = np.zeros(n, dtype=np.intp)
        for i in range(n):
            r = 0
            x = i
            for _ in range(bits):
                r = (r << 1) | (x & 1)
                x >>= 1
            rev[i] = r
        return rev


_PLANS: dict = {}


def get_plan(n: int) -> FftPlan:
    plan = _PLANS.get(n)
    if plan is None:
        plan = FftPlan(n)
        _PLANS[n] = plan
    return plan


def _fft_last_axis(re: np.ndarray, im: np.ndarray, inverse: bool):
    """Transform along the last axis of same-shaped re/im arrays.

    Vectorized over all leading axes. Returns new arrays.
    """
    n = re.shape[-1]
    plan = get_plan(n)
    re = np.ascontiguousarray(re[..., plan.bitrev], dtype=np.float64)
    im = np.ascontiguousarray(im[..., plan.bitrev], dtype=np.float64)
    m = 1
    while m < n:
        # combine adjacent blocks of size m into blocks of size 2m;
        # stage twiddles are a stride-n/(2m) slice of the length-n table
        stride = n // (2 * m)
        wr = plan.tw_re[: m * stride : stride]
        wi = plan.tw_im[: m * stride : stride]
        if inverse:
            wi = -wi
        lead = re.shape[:-1]
        re_v = re.reshape(lead + (n // (2 * m), 2, m))
        im_v = im.reshape(lead + (n // (2 * m), 2, m))
        er, ei = re_v[..., 0, :], im_v[..., 0, :]
        orr, oi = re_v[..., 1, :], im_v[..., 1, :]
        tr = orr * wr - oi * wi
        ti = orr * wi + oi * wr
        re = np.concatenate([er + tr, er - tr], axis=-1).reshape(re.shape)
        im = np.concatenate([ei + ti, ei - ti], axis=-1).reshape(im.shape)
        m *= 2
    if inverse:
        re = re / n
        im = im / n
    return re, im


def fft_1d(x: ComplexTensor, direction: str = FORWARD) -> ComplexTensor:
    """FFT of a length-n complex vector; n must be a power of two."""
    if len(x.shape) != 1:
        raise DimensionError(f"fft_1d expects a vector, got shape {x.shape}")
    if direction not in (FORWARD, INVERSE):
        raise DimensionError(f"unknown direction {direction!r}")
    if not _is_pow2(x.shape[0]):
        raise DimensionError(f"fft_1d length must be a power of two, got {x.shape[0]}")
    re, im = _fft_last_axis(x.re_array(), x.im_array(), direction == INVERSE)
    return ComplexTensor.from_arrays(re, im)


def _fft2_arrays(re: np.ndarray, im: np.ndarray):
    """2D transform over the last two axes: rows then columns."""
    re, im = _fft_last_axis(re, im, inverse=False)
    re = np.swapaxes(re, -1, -2)
    im = np.swapaxes(im, -1, -2)
    re, im = _fft_last_axis(re, im, inverse=False)
    return np.swapaxes(re, -1, -2), np.swapaxes(im, -1, -2)


def fft_2d(x: ComplexTensor) -> ComplexTensor:
    """Forward 2D FFT of a square power-of-two complex matrix."""
    if len(x.shape) != 2:
        raise DimensionError(f"fft_2d expects a matrix, got shape {x.shape}")
    s0, s1 = x.shape
    if s0 != s1:
        raise DimensionError(f"fft_2d expects a square matrix, got {x.shape}")
    if not _is_pow2(s0):
        raise DimensionError(f"fft_2d size must be a power of two, got {s0}")
    re, im = _fft2_arrays(x.re_array(), x.im_array())
    return ComplexTensor.from_arrays(re, im)


def bandwise_fft(patch: Tensor) -> ComplexTensor:
    """Per-band 2D FFT of an [S,S,C] real patch, scaled by 1/S^2.

    Bands never mix; the scaling keeps complex-patch magnitudes on the
    same order as the standardized real patch. DC stays at bin (0,0).
    """
    if len(patch.shape) != 3:
        raise DimensionError(f"bandwise_fft expects [S,S,C], got {patch.shape}")
    s0, s1, _ = patch.shape
    if s0 != s1 or not _is_pow2(s0):
        raise DimensionError(f"bandwise_fft needs square power-of-two patches, got {patch.shape[:2]}")
    re, im = bandwise_fft_arrays(patch.as_array())
    return ComplexTensor.from_arrays(re, im)


def bandwise_fft_arrays(patches: np.ndarray):
    """Array fast path for bandwise_fft; accepts [..., S, S, C]."""
    s = patches.shape[-3]
    # move bands in front of the two spatial axes so the 2D transform
    # vectorizes across bands (and any batch axes)
    x = np.moveaxis(np.asarray(patches, dtype=np.float64), -1, -3)
    re, im = _fft2_arrays(x, np.zeros_like(x))
    scale = 1.0 / (s * s)
    re = np.moveaxis(re, -3, -1) * scale
    im = np.moveaxis(im, -3, -1) * scale
    return re, im
