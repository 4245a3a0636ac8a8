import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csirff.channels import compose_filter, default_pulse_filter, model_spec, sample_channel
from csirff.core import CsiDataset, CsiRecord, NoiseSpec, ValidationError, add_noise
from csirff.experiment import ExperimentConfig, run_experiment
from csirff.fusion import (FusionGroup, borda_scores, evaluate, export_feature_heatmap, fuse, fuse_ap,
                           fuse_bc, fuse_data, fuse_mv, fusion_windows, mean_pairwise_correlation,
                           minmax_rows)
from csirff.io import LabelOracle
from csirff.net import Decision

from oracles import fuse_ap_direct, fuse_bc_direct, fuse_mv_direct


def random_probs(rng, n, m, coarse=False):
    if coarse:
        # few distinct values so ties are common
        p = rng.integers(0, 4, (n, m)).astype(float) + 1e-3
    else:
        p = rng.random((n, m))
    return p / p.sum(axis=1, keepdims=True)


def test_ap_hand_example():
    d = fuse_ap([[0.6, 0.4], [0.3, 0.7]])
    np.testing.assert_allclose(d.probs, [0.45, 0.55])
    assert d.label == 1


def test_mv_hand_examples():
    eye = np.eye(10)
    assert fuse_mv(eye[[3, 3, 7]]).label == 3
    p = np.array([eye[3] * 0.6 + eye[7] * 0.4, eye[7] * 0.9 + eye[3] * 0.1])
    assert fuse_mv(p).label == 7
    # full tie in votes and mean goes to the lower index
    assert fuse_mv(np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5]])).label == 1


def test_bc_hand_example():
    p = np.array([[0.5, 0.3, 0.2], [0.1, 0.6, 0.3]])
    np.testing.assert_array_equal(borda_scores(p), [2, 3, 1])
    assert fuse_bc(p).label == 1


@pytest.mark.parametrize("method", ["ap", "mv", "bc"])
def test_single_member_is_identity(method, rng):
    for _ in range(50):
        p = random_probs(rng, 1, 19)
        d = fuse(p, method)
        assert d.label == int(np.argmax(p[0]))
        np.testing.assert_allclose(d.probs, p[0])


def test_rules_agree_when_members_agree(rng):
    for _ in range(100):
        p = random_probs(rng, 5, 6)
        p[:, 2] += 10
        p /= p.sum(axis=1, keepdims=True)
        assert fuse_ap(p).label == fuse_mv(p).label == 2


@pytest.mark.parametrize("coarse", [False, True])
def test_rules_match_oracles(coarse):
    rng = np.random.default_rng(int(coarse))
    for _ in range(1000):
        n, m = int(rng.integers(1, 9)), int(rng.integers(2, 20))
        p = random_probs(rng, n, m, coarse)
        rows = p.tolist()
        assert fuse_ap(p).label == fuse_ap_direct(rows)
        assert fuse_mv(p).label == fuse_mv_direct(rows)
        assert fuse_bc(p).label == fuse_bc_direct(rows)


def test_ap_matches_direct_7x19(rng):
    p = random_probs(rng, 7, 19)
    assert fuse_ap(p).label == fuse_ap_direct(p.tolist())
    assert fuse_bc(random_probs(rng, 5, 19)).label is not None


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32), n=st.integers(1, 8), method=st.sampled_from(["ap", "mv", "bc"]))
def test_fusion_is_permutation_invariant(seed, n, method):
    rng = np.random.default_rng(seed)
    p = random_probs(rng, n, 7, coarse=bool(seed % 2))
    assert fuse(p, method).label == fuse(p[rng.permutation(n)], method).label


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), n=st.integers(1, 8))
def test_ap_output_on_simplex(seed, n):
    p = random_probs(np.random.default_rng(seed), n, 19)
    d = fuse_ap(FusionGroup(p))
    assert np.all(d.probs >= 0) and abs(d.probs.sum() - 1) < 1e-9


def test_group_from_decisions_and_errors():
    g = FusionGroup.from_decisions([Decision(np.array([0.2, 0.8])), Decision(np.array([0.9, 0.1]))])
    assert g.size == 2
    with pytest.raises(ValidationError):
        FusionGroup(np.zeros((0, 3)))
    with pytest.raises(ValidationError):
        fuse(g, "median")


class MeanNet:
    """Stand-in classifier: probability mass on the sign pattern of the mean real part."""

    class config:
        num_classes = 2

    def predict_proba(self, csi):
        csi = np.atleast_2d(csi)
        p1 = (np.mean(csi.real, axis=1) > 0).astype(float)
        return np.stack([1 - p1, p1], axis=1)

    def predict_dataset(self, data):
        return self.predict_proba(data.csi)


def test_data_fusion_basics():
    net = MeanNet()
    rec = CsiRecord(np.full(52, 1.0 + 0j), 1)
    assert fuse_data([rec], net).label == net.predict_proba(rec.csi).argmax()
    assert fuse_data([rec] * 5, net).probs.tolist() == fuse_data([rec], net).probs.tolist()
    with pytest.raises(ValidationError):
        fuse_data([], net)


def test_data_fusion_averages_complex_values():
    net = MeanNet()
    recs = [CsiRecord(np.full(52, 3.0), 1), CsiRecord(np.full(52, -1.0), 1)]
    assert fuse_data(recs, net).label == 1


def grid_dataset(devices=3, positions=2, n_rx=4, n_meas=4):
    dev, pos, rx = np.meshgrid(np.arange(devices), np.arange(positions), np.arange(n_rx), indexing="ij")
    dev, pos, rx = (np.repeat(a.ravel(), n_meas) for a in (dev, pos, rx))
    n = len(dev)
    return CsiDataset(np.ones((n, 52), complex), dev, pos, rx, np.zeros(n), np.full(n, 30.0))


def test_fusion_windows_structure():
    data = grid_dataset()
    groups, dropped_g, dropped_r = fusion_windows(data, 2, 4)
    assert len(groups) == 3 * 2 * 2 and dropped_g == dropped_r == 0
    for g in groups:
        assert len(g) == 8
        assert len(set(data.device_id[g])) == 1 and len(set(data.position_id[g])) == 1
        assert sorted(set(data.rx_index[g])) == [0, 1, 2, 3]


def test_fusion_windows_drop_and_count():
    data = grid_dataset(devices=1, positions=1, n_rx=3, n_meas=5)
    groups, dropped_g, dropped_r = fusion_windows(data, 2, 2)
    assert len(groups) == 2
    assert dropped_r == 15 - 8 and dropped_g == 2
    with pytest.raises(ValidationError):
        fusion_windows(data, 0, 1)


def test_oracle_classifier_scores_one_everywhere():
    data = grid_dataset()
    for n_csi, n_rx in [(1, 1), (1, 4), (2, 4), (4, 4)]:
        rep = evaluate(LabelOracle(3), data, "ap", n_csi, n_rx)
        assert rep.mean_accuracy == 1.0 and rep.min_accuracy == 1.0
        assert all(r["accuracy"] == 1.0 for r in rep.rows())
        np.testing.assert_array_equal(rep.support, rep.confusion.sum(axis=1))


class UniformRandom:
    def __init__(self, m, seed=0):
        self.m, self.rng = m, np.random.default_rng(seed)

    @property
    def num_classes(self):
        return self.m

    def predict_dataset(self, data):
        return random_probs(self.rng, len(data), self.m)


def test_random_classifier_is_at_chance():
    data = grid_dataset(devices=19, positions=50, n_rx=1, n_meas=4)
    rep = evaluate(UniformRandom(19), data)
    n = rep.n_groups
    ci = 4 * np.sqrt((1 / 19) * (18 / 19) / n)
    assert abs(rep.overall_accuracy - 1 / 19) < ci
    assert rep.confusion.sum() == n == 3800


def test_report_serialization():
    data = grid_dataset()
    rep = evaluate(LabelOracle(3), data, "mv", 1, 1)
    doc = json.loads(rep.to_json())
    assert doc["n_groups"] == len(data) and doc["confusion"][0][0] == 32
    csv = rep.to_csv().splitlines()
    assert csv[0].startswith("slice,value,groups,correct,accuracy")
    assert any(line.startswith("snr_db,30,") for line in csv)
    assert "mv" in rep.summary()
    with pytest.raises(ValidationError):
        evaluate(LabelOracle(3), data, "vote")
    with pytest.raises(ValidationError):
        evaluate(LabelOracle(3), data, group_by=("colour",))


def test_minmax_rows_rules():
    out = minmax_rows(np.array([[1.0, 3.0, 2.0], [5.0, 5.0, 5.0]]))
    np.testing.assert_allclose(out, [[0.0, 1.0, 0.5], [0.5, 0.5, 0.5]])


# --- trained toy pipeline -------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_run():
    # flat channel at 20 dB: single-shot is well below 100%, so fusion has room to help
    cfg = ExperimentConfig(train_types=(("Flat", True),), snr_grid_db=(15, 20, 25), realizations_per_type=100,
                           test_model="Flat", test_los=True, test_snr_db=20, test_positions=10, max_epochs=4,
                           patience=4, batch_size=50)
    return run_experiment(cfg)


def test_toy_fusion_trend_and_data_baseline(toy_run):
    acc = [toy_run.accuracy[k] for k in (1, 4, 16)]
    assert all(b >= a - 0.01 for a, b in zip(acc, acc[1:])), acc
    assert acc[0] < acc[2]
    assert toy_run.accuracy[16] >= toy_run.data_fusion_accuracy


def test_heatmap_rows(toy_run, tmp_path):
    net = toy_run.net
    rec = CsiRecord(np.exp(1j * np.linspace(0, 1, 52)), 0)
    ids, rows = export_feature_heatmap(net, [rec, rec], tmp_path / "h.csv")
    assert rows.shape == (2, 52) and rows.min() >= 0 and rows.max() <= 1
    np.testing.assert_array_equal(rows[0], rows[1])
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0].startswith("record,r0,") and len(lines) == 3


def test_features_are_more_stable_than_raw_csi(toy_run):
    from csirff.experiment import make_bases
    fps, _ = make_bases(toy_run.config)
    filt = default_pulse_filter()
    spec = model_spec("D", False)
    csi = np.stack([add_noise(compose_filter(sample_channel(spec, 99, i), filt).freq_response
                              * (1 + fps[0].deviation), NoiseSpec(30, i)) for i in range(100)])
    _, feats = export_feature_heatmap(toy_run.net, CsiDataset.from_records([CsiRecord(c, 0) for c in csi]))
    raw = minmax_rows(np.abs(csi))
    assert mean_pairwise_correlation(feats) > mean_pairwise_correlation(raw)
