"""Labeled, SNR-calibrated IQ frame synthesis.

Digital schemes map Gray-coded bits onto unit-average-power
constellations, upsample, and pulse-shape; CPFSK and FM are
phase-continuous; AM/FM carry a seeded band-limited noise message.
AWGN is calibrated against the measured signal power, split evenly
between I and Q.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import DatasetHeader, IQFrame, header_from_frames, write_dataset
from .errors import DataError
from .seeding import derive_seed, gaussians, philox

INFINITE_SNR = math.inf

# analog message shaping: band-limited noise, peak-normalized
MESSAGE_CUTOFF = 0.08  # cycles per sample
AM_DEPTH = 0.5
FM_PEAK_DEVIATION = 0.15  # cycles per sample at message peak
CPFSK_MOD_INDEX = 0.5

_BITS_PER_SYMBOL = {
    "BPSK": 1, "QPSK": 2, "PSK8": 3, "QAM16": 4, "PAM4": 2,
    "CPFSK": 1, "AM": 0, "FM": 0,
}
SCHEME_NAMES = tuple(_BITS_PER_SYMBOL)
DIGITAL_LINEAR = ("BPSK", "QPSK", "PSK8", "QAM16", "PAM4")


@dataclass
class SchemeSpec:
    name: str
    samples_per_symbol: int = 8
    shaping: str = "rrc"  # rrc | none; linear digital schemes only
    rrc_rolloff: float = 0.35
    rrc_span: int = 6

    def validate(self) -> None:
        if self.name not in _BITS_PER_SYMBOL:
            raise DataError(f"unknown scheme name {self.name!r}")
        if self.samples_per_symbol < 1:
            raise DataError(f"samples_per_symbol must be >= 1, got {self.samples_per_symbol}")
        if self.shaping not in ("rrc", "none"):
            raise DataError(f"shaping must be 'rrc' or 'none', got {self.shaping!r}")
        if self.shaping == "rrc" and self.name in DIGITAL_LINEAR:
            if not 0.0 < self.rrc_rolloff <= 1.0:
                raise DataError(f"rrc_rolloff must be in (0,1], got {self.rrc_rolloff}")
            if self.rrc_span < 2:
                raise DataError(f"rrc_span must be >= 2, got {self.rrc_span}")
            if self.samples_per_symbol < 2:
                raise DataError("rrc shaping needs samples_per_symbol >= 2")


@dataclass
class DatasetSpec:
    schemes: list[SchemeSpec]
    snr_grid_db: list[int] = field(default_factory=lambda: list(range(-20, 19, 2)))
    frames_per_class_per_snr: int = 100
    master_seed: int = 0
    frame_length: int = 128

    def validate(self) -> None:
        if not self.schemes:
            raise DataError("schemes must be non-empty")
        names = [s.name for s in self.schemes]
        if len(set(names)) != len(names):
            raise DataError("scheme names must be unique")
        for s in self.schemes:
            s.validate()
        if not self.snr_grid_db:
            raise DataError("snr grid must be non-empty")
        if any(b <= a for a, b in zip(self.snr_grid_db, self.snr_grid_db[1:])):
            raise DataError("snr grid must be strictly increasing")
        if self.frames_per_class_per_snr < 1:
            raise DataError("frames_per_class_per_snr must be >= 1")
        if self.frame_length < 1:
            raise DataError("frame_length must be >= 1")


def _gray(n: int) -> int:
    return n ^ (n >> 1)


def constellation(name: str) -> np.ndarray:
    """Unit-average-power points indexed by the raw bit-group value.

    Geometric neighbors differ in exactly one bit (Gray mapping).
    """
    if name == "BPSK":
        return np.array([1.0 + 0.0j, -1.0 + 0.0j])
    if name == "QPSK":
        pts = np.empty(4, dtype=complex)
        for v in range(4):
            i = 1.0 if (v >> 1) == 0 else -1.0
            q = 1.0 if (v & 1) == 0 else -1.0
            pts[v] = (i + 1j * q) / math.sqrt(2.0)
        return pts
    if name == "PSK8":
        pts = np.empty(8, dtype=complex)
        for pos in range(8):
            pts[_gray(pos)] = np.exp(2j * np.pi * pos / 8.0)
        return pts
    if name == "QAM16":
        level = np.empty(4)
        for pos, amp in enumerate((-3.0, -1.0, 1.0, 3.0)):
            level[_gray(pos)] = amp
        pts = np.empty(16, dtype=complex)
        for v in range(16):
            pts[v] = (level[v >> 2] + 1j * level[v & 3]) / math.sqrt(10.0)
        return pts
    if name == "PAM4":
        level = np.empty(4)
        for pos, amp in enumerate((-3.0, -1.0, 1.0, 3.0)):
            level[_gray(pos)] = amp
        return (level / math.sqrt(5.0)).astype(complex)
    raise DataError(f"{name} has no constellation")


def rrc_filter(rolloff: float, span: int, sps: int) -> np.ndarray:
    """Root-raised-cosine taps, length span*sps + 1, unit energy."""
    if not 0.0 < rolloff <= 1.0:
        raise DataError(f"rolloff must be in (0,1], got {rolloff}")
    if span < 2:
        raise DataError(f"span must be >= 2 symbols, got {span}")
    if sps < 2:
        raise DataError(f"sps must be >= 2, got {sps}")
    n = span * sps
    t = (np.arange(n + 1) - n / 2.0) / sps  # in symbol periods
    beta = rolloff
    taps = np.empty(n + 1)
    singular = 1.0 / (4.0 * beta)
    for idx, ti in enumerate(t):
        if abs(ti) < 1e-12:
            taps[idx] = 1.0 + beta * (4.0 / np.pi - 1.0)
        elif abs(abs(ti) - singular) < 1e-12:
            taps[idx] = (beta / math.sqrt(2.0)) * (
                (1.0 + 2.0 / np.pi) * math.sin(np.pi / (4.0 * beta))
                + (1.0 - 2.0 / np.pi) * math.cos(np.pi / (4.0 * beta))
            )
        else:
            num = math.sin(np.pi * ti * (1.0 - beta)) + 4.0 * beta * ti * math.cos(np.pi * ti * (1.0 + beta))
            den = np.pi * ti * (1.0 - (4.0 * beta * ti) ** 2)
            taps[idx] = num / den
    return taps / math.sqrt(np.sum(taps**2))


def _bits_to_symbols(bits: np.ndarray, bps: int) -> np.ndarray:
    if bits.size % bps != 0:
        raise DataError(f"bit count {bits.size} not divisible by {bps} bits per symbol")
    groups = bits.reshape(-1, bps)
    values = np.zeros(groups.shape[0], dtype=np.int64)
    for b in range(bps):  # MSB first
        values = (values << 1) | groups[:, b]
    return values


def _bandlimited_message(seed: int, n: int) -> np.ndarray:
    white = gaussians(philox(seed), n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n)
    spectrum[freqs > MESSAGE_CUTOFF] = 0.0
    msg = np.fft.irfft(spectrum, n)
    peak = np.max(np.abs(msg))
    return msg / peak if peak > 0 else msg


def shaping_transient(spec: SchemeSpec) -> int:
    """Samples to trim per end: half the pulse span, else nothing."""
    if spec.shaping == "rrc" and spec.name in DIGITAL_LINEAR:
        return spec.rrc_span * spec.samples_per_symbol // 2
    return 0


def modulate(spec: SchemeSpec, bits, seed: int = 0) -> np.ndarray:
    """Complex baseband samples at unit average power.

    Digital schemes consume the bits; AM/FM ignore bit values and use
    len(bits) as the duration in symbol periods, drawing a seeded
    band-limited message.
    """
    spec.validate()
    bits = np.asarray(list(bits), dtype=np.int64)
    if bits.size and not np.isin(bits, (0, 1)).all():
        raise DataError("bits must be 0 or 1")
    sps = spec.samples_per_symbol
    name = spec.name

    if name in DIGITAL_LINEAR:
        symbols = constellation(name)[_bits_to_symbols(bits, _BITS_PER_SYMBOL[name])]
        if spec.shaping == "rrc":
            up = np.zeros(symbols.size * sps, dtype=complex)
            up[::sps] = symbols
            taps = rrc_filter(spec.rrc_rolloff, spec.rrc_span, sps)
            # unit-energy taps leave average power 1/sps; compensate
            return np.convolve(up, taps, mode="same") * math.sqrt(sps)
        return np.repeat(symbols, sps)

    if name == "CPFSK":
        if bits.size % 1 != 0 or bits.size == 0:
            raise DataError("CPFSK needs at least one bit")
        levels = np.repeat(2.0 * bits - 1.0, sps)
        increments = np.pi * CPFSK_MOD_INDEX * levels / sps
        return np.exp(1j * np.cumsum(increments))

    # analog: duration from the bit count, message from the seed
    n = max(bits.size, 1) * sps
    msg = _bandlimited_message(derive_seed(seed, "analog-message"), n)
    if name == "AM":
        envelope = 1.0 + AM_DEPTH * msg
        signal = envelope.astype(complex)
        return signal / math.sqrt(np.mean(np.abs(signal) ** 2))
    # FM
    increments = 2.0 * np.pi * FM_PEAK_DEVIATION * msg
    return np.exp(1j * np.cumsum(increments))


def awgn(signal: np.ndarray, snr_db: float, seed: int) -> np.ndarray:
    """Add circular complex Gaussian noise at the requested SNR.

    Noise variance is measured-signal-power / 10^(snr_db/10), split
    evenly between I and Q. snr_db == INFINITE_SNR bypasses the noise
    path entirely.
    """
    signal = np.asarray(signal, dtype=complex)
    if signal.size == 0:
        raise DataError("cannot add noise to an empty signal")
    power = float(np.mean(np.abs(signal) ** 2))
    if power <= 0.0:
        raise DataError("cannot set an SNR on a zero-power signal")
    if snr_db == INFINITE_SNR:
        return signal.copy()
    variance = power * 10.0 ** (-snr_db / 10.0)
    g = gaussians(philox(seed), 2 * signal.size)
    noise = math.sqrt(variance / 2.0) * (g[0::2] + 1j * g[1::2])
    return signal + noise


def generate_frame(spec: SchemeSpec, snr_db, class_index: int, seed: int,
                   frame_length: int = 128) -> IQFrame:
    """One labeled frame: modulate, trim transients, add noise, window.

    Pure function of its arguments; every random choice derives from
    the frame seed.
    """
    spec.validate()
    sps = spec.samples_per_symbol
    transient = shaping_transient(spec)
    needed = frame_length + 2 * transient + 4 * sps
    n_symbols = -(-needed // sps)  # ceil
    bps = max(_BITS_PER_SYMBOL[spec.name], 1)
    bits = philox(derive_seed(seed, "bits")).integers(0, 2, size=n_symbols * bps)

    signal = modulate(spec, bits, seed=derive_seed(seed, "message"))
    if transient:
        signal = signal[transient:-transient]
    noisy = awgn(signal, snr_db, derive_seed(seed, "noise"))
    start = int(philox(derive_seed(seed, "window")).integers(0, noisy.size - frame_length + 1))
    window = noisy[start : start + frame_length]
    return IQFrame(
        i=window.real.astype(np.float32),
        q=window.imag.astype(np.float32),
        class_index=int(class_index),
        snr_db=snr_db,
    )


def frame_seed(master_seed: int, class_index: int, snr_db: int, index: int) -> int:
    return derive_seed(master_seed, "frame", class_index, snr_db, index)


def generate_dataset(spec: DatasetSpec, out_path, threads: int = 1) -> DatasetHeader:
    """Emit one frame per (scheme, snr, index) into the portable format.

    Frames derive independent seeds, so worker count cannot change the
    output bytes; records are written in (class, snr, index) order.
    """
    spec.validate()
    jobs = [
        (scheme, ci, snr, idx)
        for ci, scheme in enumerate(spec.schemes)
        for snr in spec.snr_grid_db
        for idx in range(spec.frames_per_class_per_snr)
    ]

    def _make(job) -> IQFrame:
        scheme, ci, snr, idx = job
        return generate_frame(scheme, snr, ci,
                              frame_seed(spec.master_seed, ci, snr, idx),
                              frame_length=spec.frame_length)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            frames = list(pool.map(_make, jobs))
    else:
        frames = [_make(job) for job in jobs]

    header = header_from_frames(frames, [s.name for s in spec.schemes],
                                spec.snr_grid_db, spec.frame_length)
    write_dataset(header, frames, out_path)
    return header
