import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csirff.augment import (DEFAULT_SNR_GRID, AugmentPlan, BaseCsi, augment_one, build_dataset, generate,
                            split)
from csirff.channels import compose_filter, default_pulse_filter, flat_channel, model_spec, sample_channel
from csirff.core import CsiDataset, NoiseSpec, ValidationError, plant_fingerprint
from csirff.extraction import extract_ss
from csirff.io import read_csir


def denoised_base(device=0):
    h = compose_filter(flat_channel(), default_pulse_filter()).freq_response
    return h * (1 + plant_fingerprint(1, 0.02, device).deviation)


def test_default_snr_grid():
    assert DEFAULT_SNR_GRID == (5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0)


def test_plan_validation():
    with pytest.raises(ValidationError):
        AugmentPlan(strategy="mixup")
    with pytest.raises(ValidationError):
        AugmentPlan(channel_specs=())
    with pytest.raises(ValidationError):
        AugmentPlan(snr_grid_db=())
    with pytest.raises(ValidationError):
        AugmentPlan(realizations_per_type=0)


def test_plan_dict_round_trip():
    plan = AugmentPlan("fingerprint", (model_spec("B"), model_spec("D", False)), (10, 20), 3, 99)
    assert AugmentPlan.from_dict(json.loads(json.dumps(plan.to_dict()))) == plan


def test_identity_channel_noiseless_returns_base():
    base = denoised_base()
    out = augment_one(base, flat_channel(), NoiseSpec.noiseless())
    np.testing.assert_array_equal(out.csi, base)


def test_fingerprint_strategy_identity():
    f_hat = extract_ss(denoised_base())
    out = augment_one(1 + f_hat, flat_channel(), NoiseSpec.noiseless(), strategy="fingerprint")
    np.testing.assert_array_equal(out.csi, 1 + f_hat)


@settings(max_examples=30, deadline=None)
@given(tag=st.sampled_from(["B", "C", "D"]), los=st.booleans(), seed=st.integers(0, 2**63 - 1),
       device=st.integers(0, 50))
def test_augmentation_never_perturbs_the_base(tag, los, seed, device):
    base = denoised_base(device)
    ch = sample_channel(model_spec(tag, los), seed)
    out = augment_one(base, ch, NoiseSpec.noiseless(), device_id=device)
    assert np.max(np.abs(out.csi / ch.freq_response - base)) < 1e-12
    assert out.device_id == device and out.channel_tag == ch.tag_byte


def test_divide_out_known_channel_leaves_only_noise():
    base = denoised_base()
    ratios = []
    for i in range(400):
        ch = sample_channel(model_spec("B"), 3, i)
        out = augment_one(base, ch, NoiseSpec(40, i))
        residual = (out.csi / ch.freq_response - base) * ch.freq_response
        ratios.append(np.mean(np.abs(residual) ** 2) / np.mean(np.abs(ch.freq_response * base) ** 2))
    assert 10 * np.log10(np.mean(ratios)) == pytest.approx(-40, abs=0.3)
    assert out.snr_db == 40


def test_small_plan_counts():
    plan = AugmentPlan(channel_specs=(model_spec("C"),), snr_grid_db=(10, 20), realizations_per_type=2)
    data = build_dataset([BaseCsi(denoised_base(), 0)], plan)
    assert len(data) == 4 == plan.total_records(1)
    assert sorted(data.snr_db.tolist()) == [10, 10, 20, 20]


def test_paper_scale_count_identity():
    plan = AugmentPlan(realizations_per_type=45_600)
    assert len(plan.channel_specs) == 6 and len(plan.snr_grid_db) == 8
    assert plan.total_records(1) == 2_188_800


@settings(max_examples=15, deadline=None)
@given(n_bases=st.integers(1, 3), n_types=st.integers(1, 3), reals=st.integers(1, 3), n_snr=st.integers(1, 3))
def test_count_identity_holds(n_bases, n_types, reals, n_snr):
    specs = tuple(model_spec(t) for t in "BCD"[:n_types])
    plan = AugmentPlan(channel_specs=specs, snr_grid_db=tuple(range(10, 10 + 5 * n_snr, 5)),
                       realizations_per_type=reals)
    bases = [BaseCsi(denoised_base(d), d) for d in range(n_bases)]
    assert sum(len(c) for c in generate(bases, plan)) == n_bases * n_types * reals * n_snr


def test_streamed_files_are_byte_identical(tmp_path):
    plan = AugmentPlan(channel_specs=(model_spec("B"), model_spec("D", False)), snr_grid_db=(10, 30),
                       realizations_per_type=3, base_seed=7)
    bases = [BaseCsi(denoised_base(d), d) for d in range(2)]
    a, b = tmp_path / "a.csir", tmp_path / "b.csir"
    manifest = build_dataset(bases, plan, a)
    build_dataset(bases, plan, b)
    assert a.read_bytes() == b.read_bytes()
    assert manifest["complete"] and manifest["written"] == 24
    assert sum(manifest["counts"].values()) == 24
    on_disk = json.loads((tmp_path / "a.csir.manifest.json").read_text())
    assert on_disk == manifest
    mem = build_dataset(bases, plan)
    back = read_csir(a)
    np.testing.assert_array_equal(back.csi, mem.csi.astype(np.complex64))
    np.testing.assert_array_equal(back.device_id, mem.device_id)


def test_storage_failure_writes_partial_manifest(tmp_path, monkeypatch):
    from csirff import io
    plan = AugmentPlan(channel_specs=(model_spec("B"), model_spec("C")), snr_grid_db=(10,), realizations_per_type=2)
    real_write, calls = io.CsirWriter.write, []

    def flaky(self, data):
        if calls:
            raise OSError("disk full")
        calls.append(1)
        real_write(self, data)

    monkeypatch.setattr(io.CsirWriter, "write", flaky)
    target = tmp_path / "x.csir"
    with pytest.raises(OSError):
        build_dataset([BaseCsi(denoised_base(), 0)], plan, target)
    manifest = json.loads((tmp_path / "x.csir.manifest.json").read_text())
    assert manifest["written"] == 2 and not manifest["complete"] and manifest["expected_records"] == 4


def test_different_seeds_differ():
    bases = [BaseCsi(denoised_base(), 0)]
    a = build_dataset(bases, AugmentPlan(snr_grid_db=(20,), realizations_per_type=1, base_seed=1))
    b = build_dataset(bases, AugmentPlan(snr_grid_db=(20,), realizations_per_type=1, base_seed=2))
    assert not np.array_equal(a.csi, b.csi)


def _labelled(n_per_class, classes=5):
    labels = np.repeat(np.arange(classes), n_per_class)
    n = len(labels)
    return CsiDataset(np.ones((n, 52), complex), labels, np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n))


def test_split_sizes_and_disjointness():
    s = split(_labelled(20), (0.8, 0.1, 0.1), seed=3)
    assert (len(s.train), len(s.val), len(s.test)) == (80, 10, 10)
    assert not set(s.train) & set(s.val) and not set(s.val) & set(s.test) and not set(s.train) & set(s.test)
    assert set(s.train) | set(s.val) | set(s.test) == set(range(100))


@settings(max_examples=20, deadline=None)
@given(n=st.integers(3, 40), classes=st.integers(1, 6), seed=st.integers(0, 2**32))
def test_split_is_stratified_and_deterministic(n, classes, seed):
    data = _labelled(n, classes)
    s = split(data, seed=seed)
    for part in (s.train, s.val, s.test):
        assert set(data.device_id[part]) == set(range(classes))
    t = split(data, seed=seed)
    assert all(np.array_equal(x, y) for x, y in ((s.train, t.train), (s.val, t.val), (s.test, t.test)))
    assert len(s.train) + len(s.val) + len(s.test) == n * classes


def test_split_errors():
    with pytest.raises(ValidationError):
        split(_labelled(10), (0.5, 0.2, 0.2))
    with pytest.raises(ValidationError):
        split(_labelled(2), seed=0)
