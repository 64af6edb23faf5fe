import math

import numpy as np
import pytest

from acpm.data import (PRESET_NAMES, StreamSpec, TargetShape, classify_streams, load_csv, load_preset,
                       records_to_arrays, stream_maes, synth_generate, three_means_1d, tier_labels)
from acpm.learners import MeanRegressor, SGDLinearRegressor


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_csv_shape(tmp_path):
    p = write(tmp_path, "week,y,a,b\nw1,1.0,2,3\nw2,2.0,4,5\nw3,3.5,6,7\n")
    recs = load_csv(p, "y", ["a", "b"], timestamp_column="week")
    assert len(recs) == 3
    assert [r.record_id for r in recs] == [0, 1, 2]
    assert recs[2].features == (6.0, 7.0) and recs[2].true_value == 3.5
    assert recs[0].timestamp == "w1"
    assert load_csv(p, "y", timestamp_column="week")[0].features == (2.0, 3.0)


def test_load_csv_missing_feature(tmp_path):
    p = write(tmp_path, "y,a,b\n1,NA,2\n")
    (r,) = load_csv(p, "y", ["a", "b"])
    assert math.isnan(r.features[0]) and r.features[1] == 2.0


def test_load_csv_missing_target_names_row(tmp_path):
    p = write(tmp_path, "y,a\n1,2\nNA,3\n")
    with pytest.raises(ValueError, match="line 3"):
        load_csv(p, "y", ["a"])


def test_load_csv_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "nope.csv", "y")
    p = write(tmp_path, "y,a\n1,2\n")
    with pytest.raises(ValueError, match="target column"):
        load_csv(p, "z")
    with pytest.raises(ValueError, match="not in header"):
        load_csv(p, "y", ["q"])


def test_noiseless_stream_equals_target():
    recs = synth_generate(50, [StreamSpec("s")], seed=1)
    X, y = records_to_arrays(recs)
    assert np.array_equal(X[:, 0], y)


def test_synth_deterministic():
    streams = [StreamSpec("a", "low", 1.0, 0.1, 1), StreamSpec("b", "high", 0.1)]
    assert synth_generate(100, streams, 5) == synth_generate(100, streams, 5)
    assert synth_generate(100, streams, 5) != synth_generate(100, streams, 6)


def test_lag_shifts_stream():
    recs = synth_generate(30, [StreamSpec("a", lag=2), StreamSpec("b")], seed=0)
    X, y = records_to_arrays(recs)
    assert np.array_equal(X[2:, 0], y[:-2])
    assert np.array_equal(X[:, 1], y)


def test_full_corruption_stays_in_target_range():
    recs = synth_generate(200, [StreamSpec("a", corruption_rate=1.0)], seed=0)
    X, y = records_to_arrays(recs)
    assert not np.array_equal(X[:, 0], y)
    assert X.min() >= y.min() - 1e-12 and X.max() <= y.max() + 1e-12


def test_target_shape():
    t = np.arange(4.0)
    shape = TargetShape()
    expected = 2 * np.sin(2 * np.pi * t / 52) + 0.5 * np.sin(2 * np.pi * t / 13) + 0.001 * t
    np.testing.assert_allclose(shape.clean(t), expected)


def test_stream_spec_validation():
    with pytest.raises(ValueError):
        StreamSpec("x", "best")
    with pytest.raises(ValueError):
        StreamSpec("x", noise_sigma=-1)
    with pytest.raises(ValueError):
        StreamSpec("x", corruption_rate=2)
    with pytest.raises(ValueError):
        synth_generate(0, [StreamSpec("x")], 0)


def test_tier_labels():
    assert tier_labels(["a", "b", "c"], [0.1, 0.6, 1.2]) == {"a": "high", "b": "medium", "c": "low"}
    assert tier_labels(["a", "b", "c"], [0.5, 0.5, 0.5]) == {"a": "medium", "b": "medium", "c": "medium"}
    assert list(three_means_1d([5.0, 0.1, 0.11, 2.0, 2.1])) == [2, 0, 0, 1, 1]


def test_classify_streams():
    streams = [StreamSpec("h", "high", 0.05), StreamSpec("m", "medium", 0.6), StreamSpec("l", "low", 2.0)]
    recs = synth_generate(300, streams, seed=0)
    assert classify_streams(recs, streams, SGDLinearRegressor()) == {"h": "high", "m": "medium", "l": "low"}
    identical = [StreamSpec(n) for n in "abc"]
    recs = synth_generate(40, identical, seed=0)
    assert set(classify_streams(recs, identical, SGDLinearRegressor()).values()) == {"medium"}
    with pytest.raises(ValueError, match="30 records"):
        classify_streams(recs[:29], identical, SGDLinearRegressor())


def test_noisier_stream_has_larger_error_across_seeds():
    streams = [StreamSpec("low", "low", 0.6), StreamSpec("high", "high", 0.1)]
    wins = 0
    for seed in range(100):
        maes = stream_maes(synth_generate(200, streams, seed), SGDLinearRegressor())
        wins += maes[0] > maes[1]
    assert wins >= 95


def test_mean_learner_cannot_rank_streams():
    streams = [StreamSpec("low", "low", 0.6), StreamSpec("high", "high", 0.1)]
    maes = stream_maes(synth_generate(100, streams, 0), MeanRegressor())
    assert maes[0] == maes[1]


TABLE_COUNTS = {"type1": (0, 100, 0), "type2": (0, 97, 3), "type3": (12, 88, 0), "type4": (13, 84, 3)}


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_presets(name):
    p = load_preset(name)
    mt = p.market_type
    assert (mt.n_low, mt.n_medium, mt.n_high) == TABLE_COUNTS[name]
    sig = {}
    for s in p.streams:
        sig.setdefault(s.quality_tier, set()).add(s.noise_sigma)
    ordered = [max(sig[t]) for t in ("high", "medium", "low") if t in sig]
    assert ordered == sorted(ordered) and len(set(ordered)) == len(ordered)
    lagged = [s for s in p.streams if s.lag]
    assert [(s.quality_tier, s.lag) for s in lagged] == [("medium", 2)]
    assert len(p.generate(0, 20)) == 20 and p.n_records == 500


def test_preset_from_file(tmp_path):
    p = tmp_path / "mine.json"
    p.write_text('{"name": "mine", "n_records": 10, "tiers": {"high": {"count": 2, "noise_sigma": 0.1}}}')
    pre = load_preset(p)
    assert [s.stream_id for s in pre.streams] == ["high_00", "high_01"]
    assert len(pre.generate(3)) == 10


def test_tier_monotonicity_type4():
    p = load_preset("type4")
    means = {t: [] for t in ("high", "medium", "low")}
    for seed in range(3):
        maes = stream_maes(p.generate(seed, 200), SGDLinearRegressor())
        for s, m in zip(p.streams, maes):
            means[s.quality_tier].append(m)
    avg = {t: np.mean(v) for t, v in means.items()}
    assert avg["high"] < avg["medium"] < avg["low"]
