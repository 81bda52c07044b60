"""Transmit chain: gray-coded QAM, pilot layouts, OFDM (de)modulation and the
complex/real liftings used by the frequency-domain networks.

QAM symbols are handled in two coordinate systems. Over the air they have
unit average power. The detectors work on the integer PAM lattice
``{-2K-1, ..., 2K+1}`` per real dimension, where neighbouring points are two
apart; :func:`qam_scale` converts between the two.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PilotPattern",
    "PilotMode",
    "SubframeSpec",
    "Subframe",
    "qam_scale",
    "pam_levels",
    "bits_per_symbol",
    "map_bits_to_qam",
    "demap_qam_to_bits",
    "nearest_qam",
    "qam_constellation",
    "to_pam",
    "from_pam",
    "complex_to_real",
    "real_to_complex",
    "real_channel_form",
    "assemble_subframe",
    "ofdm_modulate",
    "ofdm_demodulate",
    "modulate_subframe",
    "demodulate_subframe",
]

SCATTERED_SYMBOLS = (2, 3, 11, 12)


class PilotPattern(str, enum.Enum):
    BLOCK_LEADING = "block"
    SCATTERED = "scattered"


class PilotMode(str, enum.Enum):
    RANDOM_FULL = "random"
    ORTHOGONAL_EMPTY = "orthogonal"


def _check_order(M: int) -> int:
    root = int(round(np.sqrt(M)))
    if M < 4 or root * root != M or root & (root - 1):
        raise ValueError(f"modulation order must be a square power of two >= 4, got {M}")
    return root


def bits_per_symbol(M: int) -> int:
    _check_order(M)
    return int(np.log2(M))


def qam_scale(M: int) -> float:
    """Factor mapping PAM-lattice coordinates to unit-average-power QAM."""
    _check_order(M)
    return float(np.sqrt(3.0 / (2.0 * (M - 1))))


def pam_levels(M: int) -> np.ndarray:
    """The per-axis lattice ``{-2K-1, ..., 2K+1}`` in ascending order."""
    root = _check_order(M)
    return np.arange(-(root - 1), root, 2, dtype=float)


def _gray_levels(root: int) -> np.ndarray:
    # code word (MSB first) -> lattice value; bit 0 sits on the positive side
    levels = np.empty(root)
    for code in range(root):
        idx, g = code, code >> 1
        while g:
            idx ^= g
            g >>= 1
        levels[code] = (root - 1) - 2 * idx
    return levels


def _bits_to_int(bits: np.ndarray) -> np.ndarray:
    weights = 1 << np.arange(bits.shape[-1] - 1, -1, -1)
    return bits @ weights


def map_bits_to_qam(bits, M: int) -> np.ndarray:
    """Map a bit sequence onto unit-power gray-coded M-QAM symbols.

    The first half of every ``log2(M)`` bit group selects the in-phase level
    and the second half the quadrature level, each with a reflected binary
    code, so nearest neighbours differ in exactly one bit.
    """
    root = _check_order(M)
    bits = np.asarray(bits, dtype=np.int64).ravel()
    k = bits_per_symbol(M)
    if bits.size % k:
        raise ValueError(f"bit count {bits.size} is not a multiple of log2(M)={k}")
    groups = bits.reshape(-1, k)
    levels = _gray_levels(root)
    half = k // 2
    re = levels[_bits_to_int(groups[:, :half])]
    im = levels[_bits_to_int(groups[:, half:])]
    return (re + 1j * im) * qam_scale(M)


def _quantize_index(v: np.ndarray, root: int) -> np.ndarray:
    return np.clip(np.rint(((root - 1) - v) / 2.0), 0, root - 1).astype(np.int64)


def demap_qam_to_bits(symbols, M: int) -> np.ndarray:
    """Hard-decision inverse of :func:`map_bits_to_qam` (nearest point)."""
    root = _check_order(M)
    k = bits_per_symbol(M)
    half = k // 2
    s = np.asarray(symbols).ravel() / qam_scale(M)
    out = np.empty((s.size, k), dtype=np.int8)
    shifts = np.arange(half - 1, -1, -1)
    for col, v in ((0, s.real), (half, s.imag)):
        idx = _quantize_index(v, root)
        code = idx ^ (idx >> 1)
        out[:, col:col + half] = (code[:, None] >> shifts) & 1
    return out.ravel()


def nearest_qam(symbols, M: int) -> np.ndarray:
    """Project complex values onto the nearest unit-power QAM point."""
    root = _check_order(M)
    scale = qam_scale(M)
    s = np.asarray(symbols) / scale
    re = (root - 1) - 2.0 * _quantize_index(s.real, root)
    im = (root - 1) - 2.0 * _quantize_index(s.imag, root)
    return (re + 1j * im) * scale


def qam_constellation(M: int) -> np.ndarray:
    lv = pam_levels(M)
    return (lv[:, None] + 1j * lv[None, :]).ravel() * qam_scale(M)


def to_pam(symbols, M: int) -> np.ndarray:
    """Complex QAM (unit power) -> integer lattice, stacked real over imaginary."""
    return complex_to_real(np.asarray(symbols) / qam_scale(M))


def from_pam(pam, M: int) -> np.ndarray:
    return real_to_complex(pam) * qam_scale(M)


def complex_to_real(v, axis: int = 0) -> np.ndarray:
    v = np.asarray(v)
    return np.concatenate([v.real, v.imag], axis=axis)


def real_to_complex(r, axis: int = 0) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    re, im = np.split(r, 2, axis=axis)
    return re + 1j * im


def real_channel_form(H) -> np.ndarray:
    """Real 2N_r x 2N_t block form ``[[Re, -Im], [Im, Re]]`` of a complex matrix."""
    H = np.atleast_2d(np.asarray(H, dtype=complex))
    return np.block([[H.real, -H.imag], [H.imag, H.real]])


@dataclass(frozen=True)
class SubframeSpec:
    """Dimensions and pilot arrangement of one transmitted subframe."""

    n_t: int = 4
    n_r: int = 4
    n_sc: int = 512
    n_cp: int = 32
    n_total: int = 20
    n_pilot: int = 4
    mod_order: int = 16
    pilot_pattern: PilotPattern = PilotPattern.BLOCK_LEADING
    pilot_mode: PilotMode = PilotMode.RANDOM_FULL
    pilot_from_data_constellation: bool = True

    def __post_init__(self):
        object.__setattr__(self, "pilot_pattern", PilotPattern(self.pilot_pattern))
        object.__setattr__(self, "pilot_mode", PilotMode(self.pilot_mode))
        _check_order(self.mod_order)
        if min(self.n_t, self.n_r, self.n_sc, self.n_total) < 1 or self.n_cp < 0:
            raise ValueError("subframe dimensions must be positive")
        if self.pilot_pattern is PilotPattern.BLOCK_LEADING:
            if not 1 <= self.n_pilot < self.n_total:
                raise ValueError(f"need 1 <= n_pilot < n_total, got {self.n_pilot}/{self.n_total}")
        elif self.n_total <= max(SCATTERED_SYMBOLS):
            raise ValueError(f"scattered pattern needs n_total > {max(SCATTERED_SYMBOLS)}")

    @property
    def symbol_len(self) -> int:
        return self.n_sc + self.n_cp

    @property
    def n_samples(self) -> int:
        return self.n_total * self.symbol_len

    @property
    def n_data(self) -> int:
        return self.n_total - self.n_pilot

    @property
    def bits_per_symbol(self) -> int:
        return bits_per_symbol(self.mod_order)

    def pilot_positions(self) -> np.ndarray:
        """Boolean (n_total, n_sc) grid of pilot resource elements."""
        mask = np.zeros((self.n_total, self.n_sc), dtype=bool)
        if self.pilot_pattern is PilotPattern.BLOCK_LEADING:
            mask[: self.n_pilot] = True
        else:
            sc = np.arange(self.n_sc)
            # two CDM groups of a type-2 DMRS comb, double symbol, front + additional
            mask[list(SCATTERED_SYMBOLS)] = (sc % 6) < 4
        return mask

    def pilot_owner(self) -> np.ndarray:
        """Antenna owning each pilot RE in orthogonal mode, -1 on data REs."""
        n, sc = np.meshgrid(np.arange(self.n_total), np.arange(self.n_sc), indexing="ij")
        if self.pilot_pattern is PilotPattern.BLOCK_LEADING:
            owner = (sc + n) % self.n_t
        else:
            owner = (2 * ((sc % 6) // 2) + (sc + n) % 2) % self.n_t
        return np.where(self.pilot_positions(), owner, -1)

    def pilot_symbols(self) -> np.ndarray:
        return np.flatnonzero(self.pilot_positions().any(axis=1))

    def n_data_re(self) -> int:
        return int((~self.pilot_positions()).sum())

    def n_data_bits(self) -> int:
        return self.n_data_re() * self.n_t * self.bits_per_symbol

    def overhead(self) -> float:
        return float(self.pilot_positions().mean())


@dataclass
class Subframe:
    """One frequency-domain subframe plus the ground truth kept for training."""

    spec: SubframeSpec
    freq: np.ndarray  # (n_total, n_t, n_sc)
    pilot_mask: np.ndarray  # (n_total, n_sc)
    data_bits: np.ndarray
    pilots: np.ndarray = field(repr=False)  # pilot values, zero on data REs

    @property
    def data_mask(self) -> np.ndarray:
        return ~self.pilot_mask

    def data_symbols(self) -> np.ndarray:
        """Data symbols ordered (RE in row-major (symbol, subcarrier) order, antenna)."""
        return self.freq.transpose(0, 2, 1)[self.data_mask]


def _redraw_singular_blocks(pilot_vals, spec: SubframeSpec, M: int, rng, guard: int = 1000):
    """Redraw per-subcarrier pilot blocks whose stacked matrix is rank deficient.

    ``pilot_vals`` is ``(n_pilot * n_sc, n_t)`` in row-major (symbol,
    subcarrier) order and is modified in place. Small constellations make
    singular blocks common (about 19% of 4x4 QPSK blocks), which would leave
    per-subcarrier pilot estimation undefined.
    """
    blocks = pilot_vals.reshape(spec.n_pilot, spec.n_sc, spec.n_t).transpose(1, 0, 2)  # (n_sc, P, n_t)
    bad = np.flatnonzero(np.linalg.matrix_rank(blocks) < spec.n_t)
    for k in bad:
        for _ in range(guard):
            if np.linalg.matrix_rank(blocks[k]) == spec.n_t:
                break
            bits = rng.integers(0, 2, size=spec.n_pilot * spec.n_t * bits_per_symbol(M))
            blocks[k] = map_bits_to_qam(bits, M).reshape(spec.n_pilot, spec.n_t)
        else:
            raise RuntimeError(f"no full-rank pilot block found on subcarrier {k}")
    pilot_vals[...] = blocks.transpose(1, 0, 2).reshape(pilot_vals.shape)


def assemble_subframe(spec: SubframeSpec, data_bits, seed) -> Subframe:
    data_bits = np.asarray(data_bits, dtype=np.int8).ravel()
    if data_bits.size != spec.n_data_bits():
        raise ValueError(f"expected {spec.n_data_bits()} data bits, got {data_bits.size}")
    rng = np.random.default_rng(seed)
    mask = spec.pilot_positions()
    freq = np.zeros((spec.n_total, spec.n_t, spec.n_sc), dtype=complex)

    n_pilot_re = int(mask.sum())
    M = spec.mod_order if spec.pilot_from_data_constellation else 4
    pilot_bits = rng.integers(0, 2, size=n_pilot_re * spec.n_t * bits_per_symbol(M))
    pilot_vals = map_bits_to_qam(pilot_bits, M).reshape(n_pilot_re, spec.n_t)
    if (spec.pilot_pattern is PilotPattern.BLOCK_LEADING and spec.pilot_mode is PilotMode.RANDOM_FULL
            and spec.n_pilot >= spec.n_t):
        _redraw_singular_blocks(pilot_vals, spec, M, rng)
    if spec.pilot_mode is PilotMode.ORTHOGONAL_EMPTY:
        owner = spec.pilot_owner()[mask]
        keep = owner[:, None] == np.arange(spec.n_t)[None, :]
        # empty REs elsewhere; the owner carries the full RE power
        pilot_vals = np.where(keep, pilot_vals, 0.0)

    view = freq.transpose(0, 2, 1)  # (n_total, n_sc, n_t), shares memory
    view[mask] = pilot_vals
    pilots = freq.copy()
    view[~mask] = map_bits_to_qam(data_bits, spec.mod_order).reshape(-1, spec.n_t)
    return Subframe(spec=spec, freq=freq, pilot_mask=mask, data_bits=data_bits, pilots=pilots)


def ofdm_modulate(freq_symbol, n_cp: int) -> np.ndarray:
    """Unitary IFFT along the last axis followed by cyclic-prefix insertion."""
    body = np.fft.ifft(np.asarray(freq_symbol), axis=-1, norm="ortho")
    if n_cp == 0:
        return body
    return np.concatenate([body[..., -n_cp:], body], axis=-1)


def ofdm_demodulate(time_symbol, n_cp: int) -> np.ndarray:
    return np.fft.fft(np.asarray(time_symbol)[..., n_cp:], axis=-1, norm="ortho")


def modulate_subframe(freq: np.ndarray, n_cp: int) -> np.ndarray:
    """(n_total, n_t, n_sc) frequency grid -> (n_t, n_total * (n_sc + n_cp)) signal."""
    t = ofdm_modulate(freq, n_cp)
    return t.transpose(1, 0, 2).reshape(freq.shape[1], -1)


def demodulate_subframe(signal: np.ndarray, n_total: int, n_sc: int, n_cp: int) -> np.ndarray:
    """Inverse of :func:`modulate_subframe` for any number of rows."""
    rows = signal.shape[0]
    blocks = signal.reshape(rows, n_total, n_sc + n_cp).transpose(1, 0, 2)
    return ofdm_demodulate(blocks, n_cp)
