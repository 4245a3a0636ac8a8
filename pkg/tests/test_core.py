import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csirff.channels import flat_channel, model_spec, sample_channel
from csirff.core import (FFT_BINS, N_SUBCARRIERS, SUBCARRIER_INDICES, CsiDataset, CsiRecord, Fingerprint,
                         NoiseSpec, ValidationError, add_noise, as_subcarriers, denoise, forward_csi,
                         plant_fingerprint, snr_estimate)


def test_subcarrier_layout():
    assert len(SUBCARRIER_INDICES) == N_SUBCARRIERS == 52
    assert 0 not in SUBCARRIER_INDICES
    assert SUBCARRIER_INDICES.min() == -26 and SUBCARRIER_INDICES.max() == 26
    assert set(FFT_BINS) == set(range(1, 27)) | set(range(38, 64))


def test_as_subcarriers_rejects_bad_input():
    with pytest.raises(ValidationError):
        as_subcarriers(np.ones(51))
    with pytest.raises(ValidationError):
        as_subcarriers(np.r_[np.ones(51), np.nan])
    arr = as_subcarriers(np.ones(52))
    assert not arr.flags.writeable


def test_plant_fingerprint_is_deterministic():
    a = plant_fingerprint(1, 0.02, 0)
    b = plant_fingerprint(1, 0.02, 0)
    assert a.deviation.tobytes() == b.deviation.tobytes()
    assert not np.array_equal(a.deviation, plant_fingerprint(1, 0.02, 1).deviation)


@pytest.mark.parametrize("sigma", [0.0, -0.1])
def test_plant_fingerprint_rejects_non_positive_sigma(sigma):
    with pytest.raises(ValidationError):
        plant_fingerprint(1, sigma, 0)


def test_plant_fingerprint_scale():
    draws = np.concatenate([plant_fingerprint(7, 0.02, d).deviation for d in range(200)])
    # 10^4 complex samples; E|f|^2 = sigma^2
    assert len(draws) >= 10_000
    assert math.sqrt(np.mean(np.abs(draws) ** 2)) == pytest.approx(0.02, rel=0.05)


def test_smoothed_fingerprint_keeps_scale():
    f = plant_fingerprint(3, 0.02, 0, smooth=5).deviation
    assert math.sqrt(np.mean(np.abs(f) ** 2)) == pytest.approx(0.02, rel=1e-9)


def test_forward_flat_channel_exposes_fingerprint():
    fp = plant_fingerprint(2, 0.02, 4)
    rec = forward_csi(fp, flat_channel(), NoiseSpec.noiseless())
    assert np.max(np.abs(rec.csi - 1.0 - fp.deviation)) < 1e-12
    zero = Fingerprint(np.zeros(52), 0)
    np.testing.assert_array_equal(forward_csi(zero, flat_channel(), NoiseSpec.noiseless()).csi, np.ones(52))


def test_forward_applies_channel_elementwise():
    fp = plant_fingerprint(2, 0.02, 1)
    ch = sample_channel(model_spec("C"), 5, 0)
    rec = forward_csi(fp, ch, NoiseSpec.noiseless(), position_id=3, rx_index=1)
    np.testing.assert_allclose(rec.csi, ch.freq_response * (1 + fp.deviation), atol=1e-15)
    assert (rec.device_id, rec.position_id, rec.rx_index, rec.channel_tag) == (1, 3, 1, ch.tag_byte)


def test_forward_is_bitwise_deterministic():
    fp = plant_fingerprint(2, 0.02, 1)
    ch = sample_channel(model_spec("B"), 9, 2)
    a = forward_csi(fp, ch, NoiseSpec(20, 11))
    b = forward_csi(fp, ch, NoiseSpec(20, 11))
    assert a.csi.tobytes() == b.csi.tobytes()


def test_snr_definition_monte_carlo():
    signal = np.ones(100_000, np.complex128)
    noisy = add_noise(signal, NoiseSpec(20, 3))
    assert np.var(noisy - signal) == pytest.approx(0.01, rel=0.02)


@settings(max_examples=20, deadline=None)
@given(snr=st.floats(-20, 60), seed=st.integers(0, 2**63 - 1))
def test_noise_spec_accepts_supported_range(snr, seed):
    assert NoiseSpec(snr, seed).snr_db == snr


@pytest.mark.parametrize("snr", [-20.5, 61, float("nan")])
def test_noise_spec_rejects_out_of_range(snr):
    with pytest.raises(ValidationError):
        NoiseSpec(snr)


def _records(snr, n, seed=0):
    fp = plant_fingerprint(0, 0.02, 0)
    ch = sample_channel(model_spec("B"), 1, 0)
    return [forward_csi(fp, ch, NoiseSpec(snr, seed * 100_000 + k)) for k in range(n)], ch, fp


def test_denoise_window_one_and_identical_records():
    recs, _, _ = _records(20, 3)
    np.testing.assert_array_equal(denoise(recs, 1), recs[0].csi)
    clean = [CsiRecord(np.full(52, 2 + 1j), 0)] * 4
    np.testing.assert_array_equal(denoise(clean), clean[0].csi)


def test_denoise_averaging_law():
    recs, ch, fp = _records(20, 200)
    clean = ch.freq_response * (1 + fp.deviation)
    single = np.mean([np.mean(np.abs(r.csi - clean) ** 2) for r in recs[:100]])
    p100 = np.mean(np.abs(denoise(recs, 100) - clean) ** 2)
    assert single / p100 == pytest.approx(100, rel=2.0 / 3.0)
    # doubling the window halves the residual power, averaged over independent trials
    r50, r100 = [], []
    for t in range(20):
        rs, _, _ = _records(20, 100, seed=t + 1)
        r50.append(np.mean(np.abs(denoise(rs, 50) - clean) ** 2))
        r100.append(np.mean(np.abs(denoise(rs, 100) - clean) ** 2))
    assert np.mean(r50) / np.mean(r100) == pytest.approx(2.0, rel=0.25)


def test_denoise_errors():
    with pytest.raises(ValidationError):
        denoise([])
    a = CsiRecord(np.ones(52), 0)
    with pytest.raises(ValidationError):
        denoise([a, CsiRecord(np.ones(52), 1)])
    with pytest.raises(ValidationError):
        denoise([a], 0)


def test_snr_estimate_round_trip():
    recs, _, _ = _records(30, 100)
    assert snr_estimate(recs) == pytest.approx(30, abs=1.0)


def test_snr_estimate_special_cases():
    same = [CsiRecord(np.ones(52), 0)] * 3
    assert snr_estimate(same) == math.inf
    rng = np.random.default_rng(0)
    noise = [CsiRecord(rng.standard_normal(52) + 1j * rng.standard_normal(52), 0) for _ in range(50)]
    assert snr_estimate(noise) <= 0.0
    with pytest.raises(ValidationError):
        snr_estimate(same[:1])


def test_dataset_round_trip_through_records():
    recs, _, _ = _records(20, 5)
    ds = CsiDataset.from_records(recs)
    assert len(ds) == 5
    back = list(ds.records())
    for a, b in zip(recs, back):
        assert a.csi.tobytes() == b.csi.tobytes() and a.channel_tag == b.channel_tag
    both = CsiDataset.concat([ds, ds[[0, 1]]])
    assert len(both) == 7 and len(CsiDataset.concat([])) == 0
