import math

import numpy as np
import pytest

from modrec.dataset import read_dataset
from modrec.errors import DataError
from modrec.seeding import philox
from modrec.signals import (
    CPFSK_MOD_INDEX,
    FM_PEAK_DEVIATION,
    INFINITE_SNR,
    DIGITAL_LINEAR,
    DatasetSpec,
    SchemeSpec,
    awgn,
    constellation,
    generate_dataset,
    generate_frame,
    modulate,
    rrc_filter,
    shaping_transient,
)

BITS_PER_SYMBOL = {"BPSK": 1, "QPSK": 2, "PSK8": 3, "QAM16": 4, "PAM4": 2}


# ---------------------------------------------------------------------------
# constellations


def test_bpsk_mapping():
    out = modulate(SchemeSpec("BPSK", samples_per_symbol=1, shaping="none"), [0, 1])
    assert np.allclose(out, [1 + 0j, -1 + 0j], atol=1e-15)


def test_qpsk_gray_map_first_point():
    out = modulate(SchemeSpec("QPSK", samples_per_symbol=1, shaping="none"), [0, 0])
    assert out[0] == pytest.approx((1 + 1j) / math.sqrt(2), abs=1e-15)


def test_qam16_unit_power_from_grid():
    pts = constellation("QAM16")
    # direct 16-point average; the unnormalized +/-1,+/-3 grid averages 10
    assert np.mean(np.abs(pts) ** 2) == pytest.approx(1.0, abs=1e-12)
    grid = pts * math.sqrt(10.0)
    assert np.mean(np.abs(grid) ** 2) == pytest.approx(10.0, abs=1e-9)


@pytest.mark.parametrize("name", DIGITAL_LINEAR)
def test_every_digital_constellation_has_unit_power(name):
    pts = constellation(name)
    assert np.mean(np.abs(pts) ** 2) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("name", ["QPSK", "PSK8", "QAM16", "PAM4"])
def test_gray_mapping_neighbors_differ_one_bit(name):
    pts = constellation(name)
    bits = int(math.log2(len(pts)))
    for v in range(len(pts)):
        dists = np.abs(pts - pts[v])
        dists[v] = np.inf
        nearest = np.min(dists)
        for u in np.nonzero(np.abs(dists - nearest) < 1e-9)[0]:
            assert bin(u ^ v).count("1") == 1, f"{name}: {v:0{bits}b} vs {u:0{bits}b}"


# ---------------------------------------------------------------------------
# rrc filter


def test_rrc_even_symmetry():
    taps = rrc_filter(0.35, 6, 8)
    assert len(taps) == 6 * 8 + 1
    assert np.allclose(taps, taps[::-1], atol=1e-15)


def test_rrc_unit_energy():
    for rolloff, span, sps in [(0.35, 6, 8), (0.25, 8, 4), (1.0, 4, 2)]:
        taps = rrc_filter(rolloff, span, sps)
        assert np.sum(taps**2) == pytest.approx(1.0, abs=1e-12)


def test_rrc_cascade_isi():
    # truncation tails scale like 1/(4*pi*beta*t^2), so the 1e-3 bound
    # needs a long pulse; numerical convolution oracle at span 32
    sps = 8
    taps = rrc_filter(0.35, 32, sps)
    rc = np.convolve(taps, taps)
    center = len(rc) // 2
    rc = rc / rc[center]
    isi = [abs(rc[center + m * sps]) for m in range(1, 32)]
    assert max(isi) <= 1e-3


def test_rrc_singular_points_finite():
    # rolloff 0.25 puts t = 1/(4*beta) = 1 exactly on a tap
    taps = rrc_filter(0.25, 6, 8)
    assert np.all(np.isfinite(taps))
    assert abs(taps[0]) < abs(taps[len(taps) // 2])


@pytest.mark.parametrize("rolloff,span,sps", [(0.0, 6, 8), (1.5, 6, 8), (0.35, 1, 8), (0.35, 6, 1)])
def test_rrc_parameter_range(rolloff, span, sps):
    with pytest.raises(DataError):
        rrc_filter(rolloff, span, sps)


# ---------------------------------------------------------------------------
# modulate


def test_modulate_rejects_partial_symbol():
    with pytest.raises(DataError):
        modulate(SchemeSpec("QPSK", samples_per_symbol=1, shaping="none"), [0, 1, 0])


def test_modulate_rejects_unknown_scheme():
    with pytest.raises(DataError):
        SchemeSpec("OFDM").validate()


@pytest.mark.parametrize("name", ["BPSK", "QPSK", "PSK8", "QAM16", "PAM4", "CPFSK", "AM", "FM"])
def test_modulate_unit_average_power(name):
    spec = SchemeSpec(name)
    bps = BITS_PER_SYMBOL.get(name, 1)
    bits = philox(77).integers(0, 2, 16384 * bps)
    signal = modulate(spec, bits, seed=5)
    trim = shaping_transient(spec)
    if trim:
        signal = signal[trim:-trim]
    power = np.mean(np.abs(signal) ** 2)
    assert abs(power - 1.0) <= 0.02


def test_cpfsk_phase_continuity():
    spec = SchemeSpec("CPFSK")
    signal = modulate(spec, philox(3).integers(0, 2, 256), seed=0)
    assert np.allclose(np.abs(signal), 1.0, atol=1e-12)
    steps = np.angle(signal[1:] * np.conj(signal[:-1]))
    bound = np.pi * CPFSK_MOD_INDEX / spec.samples_per_symbol
    assert np.max(np.abs(steps)) <= bound + 1e-12


def test_fm_phase_continuity():
    signal = modulate(SchemeSpec("FM"), [0] * 256, seed=9)
    assert np.allclose(np.abs(signal), 1.0, atol=1e-12)
    steps = np.angle(signal[1:] * np.conj(signal[:-1]))
    assert np.max(np.abs(steps)) <= 2 * np.pi * FM_PEAK_DEVIATION + 1e-12


def test_am_fm_seeded_and_deterministic():
    for name in ("AM", "FM"):
        a = modulate(SchemeSpec(name), [0] * 64, seed=1)
        b = modulate(SchemeSpec(name), [1] * 64, seed=1)  # bit values ignored
        c = modulate(SchemeSpec(name), [0] * 64, seed=2)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


# ---------------------------------------------------------------------------
# awgn


def test_awgn_infinite_snr_bypasses_noise():
    signal = philox(5).normal(size=64) + 1j * philox(6).normal(size=64)
    out = awgn(signal, INFINITE_SNR, seed=3)
    assert np.array_equal(out, signal)


@pytest.mark.parametrize("snr_db,expected", [(0.0, 1.0), (10.0, 0.1)])
def test_awgn_noise_power_monte_carlo(snr_db, expected):
    n = 1_000_000
    signal = np.exp(2j * np.pi * np.arange(n) * 0.1)  # unit power
    out = awgn(signal, snr_db, seed=11)
    measured = np.mean(np.abs(out - signal) ** 2)
    assert abs(measured - expected) / expected <= 0.01


def test_awgn_zero_power_rejected():
    with pytest.raises(DataError):
        awgn(np.zeros(8, dtype=complex), 10.0, seed=0)


def test_awgn_empirical_snr_within_tenth_db():
    n = 200_000
    signal = np.exp(2j * np.pi * np.arange(n) * 0.07)
    for target in (-10.0, 0.0, 10.0):
        out = awgn(signal, target, seed=21)
        noise = out - signal
        est = 10.0 * np.log10(np.mean(np.abs(signal) ** 2) / np.mean(np.abs(noise) ** 2))
        assert abs(est - target) <= 0.1


# ---------------------------------------------------------------------------
# frame generation


def test_generate_frame_deterministic():
    spec = SchemeSpec("QPSK")
    a = generate_frame(spec, 0, 1, seed=42)
    b = generate_frame(spec, 0, 1, seed=42)
    assert np.array_equal(a.i, b.i) and np.array_equal(a.q, b.q)
    c = generate_frame(spec, 0, 1, seed=43)
    assert not np.array_equal(a.i, c.i)


def test_bpsk_noiseless_frame_is_real():
    frame = generate_frame(SchemeSpec("BPSK"), INFINITE_SNR, 0, seed=7)
    assert np.max(np.abs(frame.q)) <= 1e-9
    assert np.max(np.abs(frame.i)) > 0.1


def test_frame_power_doubles_at_zero_db():
    spec = SchemeSpec("QPSK")
    clean_powers = []
    noisy_powers = []
    for idx in range(1000):
        clean = generate_frame(spec, INFINITE_SNR, 0, seed=idx)
        noisy = generate_frame(spec, 0, 0, seed=idx)
        clean_powers.append(np.mean(clean.i.astype(np.float64) ** 2 + clean.q.astype(np.float64) ** 2))
        noisy_powers.append(np.mean(noisy.i.astype(np.float64) ** 2 + noisy.q.astype(np.float64) ** 2))
    ratio = np.mean(noisy_powers) / np.mean(clean_powers)
    assert abs(ratio - 2.0) / 2.0 <= 0.10


def test_frame_length_configurable():
    frame = generate_frame(SchemeSpec("QAM16"), 10, 0, seed=3, frame_length=64)
    assert frame.i.shape == (64,) and frame.q.shape == (64,)


# ---------------------------------------------------------------------------
# dataset generation


def _small_spec(**kwargs):
    defaults = dict(
        schemes=[SchemeSpec("BPSK"), SchemeSpec("QPSK")],
        snr_grid_db=[0, 10],
        frames_per_class_per_snr=10,
        master_seed=5,
    )
    defaults.update(kwargs)
    return DatasetSpec(**defaults)


def test_generate_dataset_counts(tmp_path):
    path = tmp_path / "ds.iqds"
    header = generate_dataset(_small_spec(), path)
    assert header.total_frames == 2 * 2 * 10
    _, frames = read_dataset(path)
    assert len(frames) == 40


def test_generate_dataset_deterministic_bytes(tmp_path):
    p1, p2 = tmp_path / "a.iqds", tmp_path / "b.iqds"
    generate_dataset(_small_spec(), p1)
    generate_dataset(_small_spec(), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_generate_dataset_threads_do_not_change_bytes(tmp_path):
    p1, p2 = tmp_path / "a.iqds", tmp_path / "b.iqds"
    generate_dataset(_small_spec(), p1, threads=1)
    generate_dataset(_small_spec(), p2, threads=4)
    assert p1.read_bytes() == p2.read_bytes()


def test_generate_dataset_stratum_counts(tmp_path):
    path = tmp_path / "ds.iqds"
    spec = _small_spec(frames_per_class_per_snr=7)
    generate_dataset(spec, path)
    _, frames = read_dataset(path)
    counts = {}
    for f in frames:
        counts[(f.class_index, f.snr_db)] = counts.get((f.class_index, f.snr_db), 0) + 1
    assert set(counts.values()) == {7}
    assert len(counts) == 4


def test_dataset_spec_validation():
    with pytest.raises(DataError):
        DatasetSpec(schemes=[]).validate()
    with pytest.raises(DataError):
        DatasetSpec(schemes=[SchemeSpec("BPSK")], snr_grid_db=[4, 4]).validate()
    with pytest.raises(DataError):
        DatasetSpec(schemes=[SchemeSpec("BPSK"), SchemeSpec("BPSK")]).validate()
