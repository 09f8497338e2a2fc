"""Analog crossbar MVM behavior: bit slicing, write noise, ADC quantization.

A 16-bit weight is biased by +2^15 into an unsigned integer and decomposed
into base-(2^b) digits, one digit per physical crossbar (b bits per device,
default 2 -> 8 slices). Each slice computes an integer dot product with the
full-precision input; slice outputs pass through an ADC transfer function,
are recombined by shift-and-add, and the bias contribution is subtracted.
"""

import numpy as np

from .fixedpoint import (
    DEFAULT_FRAC_BITS,
    RAW_MAX,
    RAW_MIN,
    rshift_round_even,
    saturate,
)

WEIGHT_BIAS = 1 << 15
WEIGHT_BITS = 16


def slices_for_bits(bits_per_device):
    if bits_per_device not in (1, 2, 4):
        raise ValueError(f"bits per device must be 1, 2, or 4, got {bits_per_device}")
    return WEIGHT_BITS // bits_per_device


class SlicedMatrix:
    """Per-device digit planes of one weight matrix on one MVMU.

    slices[i] holds digit i (least significant first) of the biased
    weights; digits are ints in [0, 2^b - 1] before noise and real-valued
    conductances after.
    """

    def __init__(self, rows, cols, slices, bits_per_device=2, noise_sigma=0.0):
        self.rows = rows
        self.cols = cols
        self.slices = slices
        self.bits_per_device = bits_per_device
        self.noise_sigma = noise_sigma

    @property
    def num_slices(self):
        return len(self.slices)

    def reconstruct_raw(self):
        """Shift-and-add the (noise-free) digits back to signed raw weights."""
        radix = 1 << self.bits_per_device
        acc = np.zeros((self.rows, self.cols), dtype=np.int64)
        for i, digits in enumerate(self.slices):
            acc += np.asarray(np.rint(digits), dtype=np.int64) * (radix ** i)
        return acc - WEIGHT_BIAS


def slice_weights(w_raw, xbar_dim=128, bits_per_device=2):
    """Decompose a raw Fixed16 weight matrix into unsigned digit planes.

    Digit d of slice i equals floor((raw + 2^15) / (2^b)^i) mod 2^b.
    """
    w_raw = np.asarray(w_raw, dtype=np.int64)
    if w_raw.ndim != 2:
        raise ValueError("weight matrix must be 2-D")
    rows, cols = w_raw.shape
    if rows > xbar_dim or cols > xbar_dim:
        raise ValueError(
            f"matrix {rows}x{cols} exceeds crossbar dimension {xbar_dim}"
        )
    nslices = slices_for_bits(bits_per_device)
    radix = 1 << bits_per_device
    biased = w_raw + WEIGHT_BIAS
    if biased.min() < 0 or biased.max() >= 1 << WEIGHT_BITS:
        raise ValueError("weights outside 16-bit raw range")
    slices = []
    for i in range(nslices):
        slices.append(((biased >> (bits_per_device * i)) & (radix - 1)).astype(np.int64))
    return SlicedMatrix(rows, cols, slices, bits_per_device)


def apply_write_noise(m, sigma, seed):
    """Gaussian conductance write noise, applied once at configuration time.

    Each stored digit g becomes clamp(g + eps, 0, g_range) with
    eps ~ Normal(0, sigma * g_range). Deterministic for a fixed seed.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return SlicedMatrix(
            m.rows, m.cols, [s.copy() for s in m.slices], m.bits_per_device, 0.0
        )
    rng = np.random.default_rng(seed)
    g_range = (1 << m.bits_per_device) - 1
    noisy = []
    for digits in m.slices:
        eps = rng.normal(0.0, sigma * g_range, size=digits.shape)
        noisy.append(np.clip(np.asarray(digits, np.float64) + eps, 0.0, g_range))
    return SlicedMatrix(m.rows, m.cols, noisy, m.bits_per_device, sigma)


def default_adc_bits(xbar_dim=128):
    """ceil(log2(dim)) + 2; 9 bits at the default 128x128 crossbar."""
    return int(np.ceil(np.log2(xbar_dim))) + 2


def adc_transfer(values, adc_bits, full_scale):
    """Uniform mid-rise quantizer over [-full_scale, full_scale]."""
    step = 2.0 * full_scale / (1 << adc_bits)
    q = (np.floor(np.asarray(values, np.float64) / step) + 0.5) * step
    return np.clip(q, -full_scale + step / 2, full_scale - step / 2)


def crossbar_mvm(m, x_raw, adc_bits=None, frac_bits=DEFAULT_FRAC_BITS, xbar_dim=128):
    """One analog MVM: out[c] = sat(round(sum_r W[r][c] * x[r] * 2^-f)).

    adc_bits=None is the ideal mode (no ADC quantization); with integer
    digits and sigma=0 it is bit-exact to a double-width integer MAC.
    """
    x_raw = np.asarray(x_raw, dtype=np.int64)
    if x_raw.shape != (m.rows,):
        raise ValueError(f"input length {x_raw.shape} does not match {m.rows} rows")
    radix = 1 << m.bits_per_device
    ideal = adc_bits is None and all(
        np.issubdtype(np.asarray(s).dtype, np.integer) for s in m.slices
    )
    if ideal:
        acc = x_raw @ m.reconstruct_raw()          # int64, exact
        return saturate(rshift_round_even(acc, frac_bits))

    full_scale = float(xbar_dim * (radix - 1) * WEIGHT_BIAS)
    combined = np.zeros(m.cols, dtype=np.float64)
    for i, digits in enumerate(m.slices):
        s = x_raw.astype(np.float64) @ np.asarray(digits, np.float64)
        if adc_bits is not None:
            s = adc_transfer(s, adc_bits, full_scale)
        combined += s * float(radix ** i)
    combined -= float(WEIGHT_BIAS) * float(x_raw.sum())
    out = np.rint(combined / (1 << frac_bits))
    return np.clip(out, RAW_MIN, RAW_MAX).astype(np.int64)
