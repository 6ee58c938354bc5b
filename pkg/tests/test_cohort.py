import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from labsched.cohort import (CohortConfig, EpisodeSet, PopulationStats, RawStay,
                             compute_population_stats, discretize, episode_from_record,
                             episode_record, fill_and_normalize, filter_stays, is_valid_stay,
                             read_raw_stays, split_stay_ids, synth_cohort, write_raw_stays)
from labsched.errors import ConfigError, DataError, GenerationError
from labsched.cohort import calibrate_label_bias
from labsched.signals import BASOPHILS, HEART_RATE, SIGNAL_FREQUENCIES, static_feature_names

from oracles import bucket_means, scan_fill


def stay(events, duration=24.0, death=None, sid=0, u=38):
    return RawStay.from_events(sid, np.zeros(u), events, duration, death)


def test_discretize_paper_example():
    s = stay([(3.1, 2, 10.0), (3.5, 2, 14.0), (0.2, 0, 1.0), (4.0, 2, 99.0)])
    values, mask = discretize(s, 23, 38, 1.0)
    assert values[3, 2] == pytest.approx((10.0 + 14.0) / 2)
    assert mask[3, 2] == 1 and mask[4, 2] == 1 and mask[2, 2] == 0
    assert np.isnan(values[2, 2])


def test_discretize_no_events():
    _, mask = discretize(stay([]), 23, 38, 1.0)
    assert not mask.any()


def test_discretize_matches_bucket_oracle(rng):
    events = [(float(rng.uniform(0, 6)), int(rng.integers(0, 4)), float(rng.normal()))
              for _ in range(50)]
    values, mask = discretize(stay(events, duration=6.0, u=3), 6, 4, 1.0)
    ref_v, ref_m = bucket_means(events, 6, 4, 1.0)
    np.testing.assert_array_equal(mask, ref_m)
    np.testing.assert_allclose(values[mask == 1], ref_v[ref_m == 1], rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 9.99), st.integers(0, 2), st.floats(-5, 5)),
                max_size=30), st.randoms())
def test_discretize_is_permutation_invariant(events, rnd):
    shuffled = list(events)
    rnd.shuffle(shuffled)
    a = discretize(stay(events, duration=10.0, u=3), 10, 3, 1.0)
    b = discretize(stay(shuffled, duration=10.0, u=3), 10, 3, 1.0)
    np.testing.assert_array_equal(a[1], b[1])
    np.testing.assert_allclose(np.nan_to_num(a[0]), np.nan_to_num(b[0]), rtol=1e-12, atol=1e-12)


def test_event_outside_duration_is_rejected():
    with pytest.raises(DataError):
        discretize(stay([(30.0, 0, 1.0)], duration=24.0), 23, 38, 1.0)


def test_fill_constant_signal_at_mean_is_zero():
    values = np.full((5, 2), 3.0)
    mask = np.ones((5, 2), np.uint8)
    out = fill_and_normalize(values, mask, PopulationStats(np.array([3.0, 3.0]), np.ones(2)))
    assert not out.any()


def test_fill_leading_hole_not_backfilled():
    values = np.array([[np.nan], [5.0], [np.nan]])
    mask = np.array([[0], [1], [0]], np.uint8)
    out = fill_and_normalize(values, mask, PopulationStats(np.array([1.0]), np.array([2.0])))
    np.testing.assert_array_equal(out[:, 0], [0.0, 2.0, 2.0])


def test_fill_matches_reference_scan(rng):
    values = rng.normal(size=(12, 5))
    mask = (rng.random((12, 5)) < 0.4).astype(np.uint8)
    values[mask == 0] = np.nan
    mean, std = rng.normal(size=5), rng.uniform(0.5, 2, size=5)
    out = fill_and_normalize(values, mask, PopulationStats(mean, std))
    np.testing.assert_allclose(out, scan_fill(values, mask, mean, std), rtol=1e-12, atol=1e-15)
    assert np.isfinite(out).all()


def test_fill_identity_stats_idempotent(rng):
    values = rng.normal(size=(8, 3))
    mask = np.ones((8, 3), np.uint8)
    once = fill_and_normalize(values, mask, PopulationStats.identity(3))
    np.testing.assert_array_equal(fill_and_normalize(once, mask, PopulationStats.identity(3)), once)


def test_zero_std_signal_is_config_error():
    values = np.ones((2, 4, 3))
    values[..., 1] = np.arange(8).reshape(2, 4)
    mask = np.ones((2, 4, 3), np.uint8)
    with pytest.raises(ConfigError, match=r"\[0, 2\]"):
        compute_population_stats(values, mask)


def test_population_stats_json_round_trip(tmp_path):
    st_ = PopulationStats(np.array([0.1, -2.5]), np.array([1.5, 1e-3]))
    st_.save(tmp_path / "s.json")
    back = PopulationStats.load(tmp_path / "s.json")
    assert back.mean.tobytes() == st_.mean.tobytes() and back.std.tobytes() == st_.std.tobytes()


def events(n):
    return [(0.5 + 0.1 * k, 0, 1.0) for k in range(n)]


def test_filter_excludes_short_stay():
    assert filter_stays([stay(events(20), duration=11.9)]) == []


def test_filter_boundary_is_kept():
    s = stay(events(5), duration=12.0)
    assert filter_stays([s]) == [s]


def test_filter_drops_stays_ending_after_death():
    assert not is_valid_stay(stay(events(10), duration=20.0, death=19.0))
    assert is_valid_stay(stay(events(10), duration=20.0, death=21.0))
    assert is_valid_stay(stay(events(10), duration=20.0, death=19.0), labeled=False)


def test_filter_matches_predicate_oracle(rng):
    stays = []
    for k in range(1000):
        dur = float(rng.uniform(8, 16))
        n = int(rng.integers(0, 9))
        death = float(rng.uniform(8, 30)) if rng.random() < 0.3 else None
        stays.append(stay([(dur * j / 10, 0, 0.0) for j in range(n)], dur, death, sid=k))
    expected = [s.stay_id for s in stays
                if s.duration_hours >= 12 and s.n_events >= 5
                and not (s.death_time_hours is not None and s.duration_hours > s.death_time_hours)]
    kept = filter_stays(stays)
    assert [s.stay_id for s in kept] == expected
    assert [s.stay_id for s in filter_stays(kept)] == expected


def test_splits_are_disjoint_and_cover():
    parts = split_stay_ids(range(1000), seed=4)
    sets = [set(parts[k].tolist()) for k in ("train", "val", "test")]
    assert sum(len(s) for s in sets) == 1000
    assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])
    assert len(sets[0]) == 700 and len(sets[1]) == 150


def test_static_feature_names_length():
    names = static_feature_names(38)
    assert len(names) == 38 and names[:3] == ("age", "gender", "ethnicity")


def test_synth_is_reproducible():
    cfg = CohortConfig(n_stays=40, seed=11)
    a, ta, la = synth_cohort(cfg)
    b, tb, lb = synth_cohort(cfg)
    assert la == lb
    np.testing.assert_array_equal(ta.latents, tb.latents)
    for x, y in zip(a, b):
        assert x.event_values.tobytes() == y.event_values.tobytes()
        assert x.event_times.tobytes() == y.event_times.tobytes()


def test_synth_mortality_rate_in_band():
    _, truth, labels = synth_cohort(CohortConfig(n_stays=20000, seed=0))
    rate = np.mean(list(labels.values()))
    assert 0.10 <= rate <= 0.14


def test_synth_stays_pass_filter_and_latent_is_ar1():
    cfg = CohortConfig(n_stays=300, seed=5)
    stays, truth, labels = synth_cohort(cfg)
    assert len(filter_stays(stays)) == len(stays)
    z = truth.latents
    resid = z[:, 1:] - cfg.ar_coef * z[:, :-1]
    assert resid.std() == pytest.approx(cfg.ar_noise_sd, rel=0.05)
    np.testing.assert_allclose(truth.mortality_prob,
                               expit(truth.label_slope * z[:, -1] + truth.label_bias))


def test_equal_frequencies_give_equal_observation_counts():
    m = 6
    cfg = CohortConfig(n_stays=400, m=m, signal_frequencies=(1.0,) * m, seed=2)
    stays, _, _ = synth_cohort(cfg)
    counts = np.zeros(m)
    for s in stays:
        _, mask = discretize(s, cfg.T, m, cfg.interval_hours)
        counts += mask.sum(axis=0)
    n = len(stays) * cfg.T
    p = cfg.max_obs_prob
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) < 3 * sigma)


def test_heart_rate_vs_basophils_observation_ratio():
    cfg = CohortConfig(n_stays=1500, seed=6)
    stays, _, _ = synth_cohort(cfg)
    hr = bas = 0
    for s in stays:
        _, mask = discretize(s, cfg.T, cfg.m, cfg.interval_hours)
        hr += mask[:, HEART_RATE].sum()
        bas += mask[:, BASOPHILS].sum()
    scale = 0.95 / max(SIGNAL_FREQUENCIES)
    expected = min(7.22 * scale, 0.95) / (1.0 * scale)
    assert hr / bas == pytest.approx(expected, rel=0.05)


def test_calibration_failure_raises():
    with pytest.raises(GenerationError):
        calibrate_label_bias(np.zeros(10), np.full(10, 0.5), 1.0, 0.12, max_steps=50, tol=1e-9)


def test_raw_and_episode_records_round_trip(tmp_path, small_cohort, small_dataset):
    _, stays, _, labels = small_cohort
    write_raw_stays(tmp_path / "raw.jsonl", stays[:20], labels)
    back, lab = read_raw_stays(tmp_path / "raw.jsonl")
    assert [s.stay_id for s in back] == [s.stay_id for s in stays[:20]]
    assert all(lab[s.stay_id] == labels[s.stay_id] for s in back)
    assert back[3].event_values.tobytes() == stays[3].event_values.tobytes()
    ep = small_dataset["train"].episode(0)
    rec = episode_from_record(episode_record(ep))
    assert rec.X_tv.tobytes() == ep.X_tv.tobytes()
    assert rec.observed_mask.tobytes() == ep.observed_mask.tobytes()


def test_episode_set_validates_shapes():
    with pytest.raises(Exception):
        EpisodeSet([0, 1], np.zeros((2, 3)), np.zeros((2, 4, 5)), np.zeros((3, 4, 5)), [0, 1])
