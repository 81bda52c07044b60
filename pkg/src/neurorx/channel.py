"""Time-varying multipath MIMO channels, Rapp power amplifier and AWGN.

A tapped-delay-line Rayleigh channel with an exponential power-delay profile
stands in for a measured/ray-traced model. Each tap evolves with a Clarke
sum-of-sinusoids process, so its autocorrelation follows ``J0(2 pi f_d tau)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .txchain import SubframeSpec, bits_per_symbol

__all__ = [
    "ChannelModel",
    "ChannelProfile",
    "ChannelRealization",
    "PaConfig",
    "ConfigurationError",
    "doppler_from_speed",
    "exponential_pdp",
    "generate_channel",
    "rapp_pa",
    "pa_transmit",
    "ibo_db",
    "apply_channel",
    "noise_var_from_ebno",
    "true_freq_response",
]

SPEED_OF_LIGHT = 299_792_458.0


class ChannelModel(str, enum.Enum):
    BLOCK_STATIC_GAUSSIAN = "static"
    TDL_JAKES = "jakes"


def doppler_from_speed(speed_kmh: float, carrier_hz: float = 3.5e9) -> float:
    """Maximum Doppler shift for a terminal moving at ``speed_kmh``."""
    return speed_kmh / 3.6 * carrier_hz / SPEED_OF_LIGHT


def exponential_pdp(n_taps: int, decay_db: float = 20.0) -> np.ndarray:
    """Exponential profile whose last tap sits ``decay_db`` below the first."""
    if n_taps == 1:
        return np.ones(1)
    db = -decay_db * np.arange(n_taps) / (n_taps - 1)
    p = 10.0 ** (db / 10.0)
    return p / p.sum()


@dataclass(frozen=True)
class ChannelProfile:
    n_taps: int = 8
    power_delay_profile: Optional[tuple] = None
    doppler_hz: float = 97.0
    sample_rate_hz: float = 15e3 * 512
    model: ChannelModel = ChannelModel.TDL_JAKES
    n_sinusoids: int = 32

    def __post_init__(self):
        object.__setattr__(self, "model", ChannelModel(self.model))
        if self.n_taps < 1:
            raise ConfigurationError("n_taps must be >= 1")
        if self.power_delay_profile is not None:
            p = np.asarray(self.power_delay_profile, dtype=float)
            if p.shape != (self.n_taps,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise ConfigurationError("power_delay_profile must have n_taps nonnegative entries summing to 1")
            object.__setattr__(self, "power_delay_profile", tuple(float(v) for v in p))
        if self.doppler_hz < 0 or self.sample_rate_hz <= 0:
            raise ConfigurationError("doppler_hz must be >= 0 and sample_rate_hz > 0")

    def pdp(self) -> np.ndarray:
        if self.power_delay_profile is None:
            return exponential_pdp(self.n_taps)
        return np.asarray(self.power_delay_profile)

    @classmethod
    def for_spec(cls, spec: SubframeSpec, subcarrier_spacing_hz: float = 15e3, **kw) -> "ChannelProfile":
        return cls(sample_rate_hz=subcarrier_spacing_hz * spec.n_sc, **kw)


@dataclass(frozen=True)
class ChannelRealization:
    taps: np.ndarray = field(repr=False)  # (n_r, n_t, n_taps, n_samples)
    seed: object = None

    @property
    def n_r(self) -> int:
        return self.taps.shape[0]

    @property
    def n_t(self) -> int:
        return self.taps.shape[1]

    @property
    def n_samples(self) -> int:
        return self.taps.shape[3]


def _clarke_processes(rng, shape, n_samples, fd_norm, n_sin):
    """Unit-power sum-of-sinusoids fading, one process per entry of ``shape``."""
    theta = rng.uniform(-np.pi, np.pi, size=shape + (n_sin,))
    phi = rng.uniform(-np.pi, np.pi, size=shape + (n_sin,))
    m = np.arange(n_samples)
    out = np.zeros(shape + (n_samples,), dtype=complex)
    for k in range(n_sin):
        w = 2.0 * np.pi * fd_norm * np.cos(theta[..., k])
        out += np.exp(1j * (w[..., None] * m + phi[..., k][..., None]))
    return out / np.sqrt(n_sin)


def generate_channel(profile: ChannelProfile, n_r: int, n_t: int, n_samples: int, seed,
                     n_cp: Optional[int] = None) -> ChannelRealization:
    """Draw one channel realization spanning ``n_samples`` samples.

    Parameters
    ----------
    profile : ChannelProfile
    n_r, n_t : int
        Receive / transmit antenna counts.
    n_samples : int
        Number of time samples to synthesize.
    seed : int or SeedSequence
    n_cp : int, optional
        When given, the delay spread is checked against the cyclic prefix.
    """
    if n_cp is not None and profile.n_taps > n_cp:
        raise ConfigurationError(f"channel spans {profile.n_taps} taps but n_cp={n_cp}")
    rng = np.random.default_rng(seed)
    amp = np.sqrt(profile.pdp())[None, None, :, None]
    shape = (n_r, n_t, profile.n_taps)
    if profile.model is ChannelModel.BLOCK_STATIC_GAUSSIAN or profile.doppler_hz == 0:
        g = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
        taps = np.broadcast_to(g[..., None], shape + (n_samples,)).copy()
    else:
        fd_norm = profile.doppler_hz / profile.sample_rate_hz
        taps = _clarke_processes(rng, shape, n_samples, fd_norm, profile.n_sinusoids)
    taps = taps * amp
    taps.setflags(write=False)
    return ChannelRealization(taps=taps, seed=seed)


@dataclass(frozen=True)
class PaConfig:
    """Rapp amplifier. ``literal_exponent`` switches the outer exponent from
    the usual ``1/(2 rho)`` to ``rho/2``."""

    x_sat: float = 1.0
    rho: float = 3.0
    enabled: bool = False
    ibo_db: Optional[float] = None
    literal_exponent: bool = False

    def __post_init__(self):
        if self.x_sat <= 0 or self.rho <= 0:
            raise ConfigurationError("PA needs x_sat > 0 and rho > 0")


def rapp_pa(x, cfg: PaConfig) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    r = np.abs(x) / cfg.x_sat
    outer = 0.5 * cfg.rho if cfg.literal_exponent else 1.0 / (2.0 * cfg.rho)
    return x / (1.0 + r ** (2.0 * cfg.rho)) ** outer


def ibo_db(x, x_sat: float) -> float:
    """Input back-off of signal ``x`` relative to saturation amplitude ``x_sat``."""
    return float(10.0 * np.log10(x_sat ** 2 / np.mean(np.abs(np.asarray(x)) ** 2)))


def pa_transmit(x, cfg: PaConfig, mean_power: float = 1.0) -> np.ndarray:
    """Drive the amplifier at the configured back-off.

    The input is scaled so its mean power sits ``ibo_db`` below ``x_sat**2``
    and the output is scaled back, so only the distortion changes with IBO and
    the Eb/No calibration is untouched.
    """
    x = np.asarray(x, dtype=complex)
    if not cfg.enabled:
        return x
    if cfg.ibo_db is None:
        return rapp_pa(x, cfg)
    a = cfg.x_sat / np.sqrt(mean_power * 10.0 ** (cfg.ibo_db / 10.0))
    return rapp_pa(a * x, cfg) / a


def apply_channel(x_time, ch: ChannelRealization, pa: Optional[PaConfig] = None,
                  noise_var: float = 0.0, seed=None) -> np.ndarray:
    """Pass ``(n_t, n_samples)`` transmit samples through PA, channel and noise."""
    x = np.asarray(x_time, dtype=complex)
    if x.ndim != 2 or x.shape[0] != ch.n_t:
        raise ValueError(f"expected ({ch.n_t}, n) transmit grid, got {x.shape}")
    n = x.shape[1]
    if n > ch.n_samples:
        raise ValueError(f"signal has {n} samples but channel spans {ch.n_samples}")
    if pa is not None:
        x = pa_transmit(x, pa)
    y = np.zeros((ch.n_r, n), dtype=complex)
    for lag in range(ch.taps.shape[2]):
        if lag >= n:
            break
        xs = np.zeros_like(x)
        xs[:, lag:] = x[:, : n - lag]
        y += np.einsum("rtm,tm->rm", ch.taps[:, :, lag, :n], xs)
    if noise_var > 0:
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((2,) + y.shape)
        y += np.sqrt(noise_var / 2.0) * (w[0] + 1j * w[1])
    return y


def noise_var_from_ebno(ebno_db: float, M: int, spec: Optional[SubframeSpec] = None) -> float:
    """Complex noise variance per receive sample for a target Eb/No.

    Every transmit antenna radiates unit power per sample (unit-power QAM
    through a unitary IFFT, CP included) and the channel has unit average
    gain, so the per-receive-antenna signal power equals ``n_t``.
    """
    n_t = 1 if spec is None else spec.n_t
    return n_t / (bits_per_symbol(M) * 10.0 ** (ebno_db / 10.0))


def true_freq_response(ch: ChannelRealization, symbol_index: int, spec: SubframeSpec) -> np.ndarray:
    """(n_r, n_t, n_sc) frequency response from the taps at the symbol midpoint."""
    m = symbol_index * spec.symbol_len + spec.symbol_len // 2
    if m >= ch.n_samples:
        raise ValueError(f"symbol {symbol_index} lies outside the realization")
    return np.fft.fft(ch.taps[:, :, :, m], n=spec.n_sc, axis=-1)
