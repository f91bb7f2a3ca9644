import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import attndec.decoding as dec
from attndec.decoding import (
    DecodeConfig,
    bootstrap_segments,
    channel_subset,
    combine_modalities,
    decide_trial,
    decode_subject,
    group_by_subject,
    kept_rows,
    loo_pair_split,
    mismatch_sampler,
    mismatch_start,
    project_feature_batch,
    run_task,
)
from attndec.errors import InvalidArgument, InvalidDataset, NumericDegeneracy
from attndec.linalg import LagSpec, TimeSeries
from attndec.mvcorr import ConfoundSet, embed_confound, embed_view, fit_cca, fit_pcca
from attndec.simulator import SimConfig, simulate_subject


def ts(a, rate=30.0, labels=()):
    return TimeSeries(np.asarray(a, dtype=float), rate, labels)


@pytest.fixture(scope="module")
def seven_pairs():
    config = SimConfig(n_subjects=1, n_pairs=7, trial_seconds=20, n_channels=4, seed=2)
    return simulate_subject(config, 0)[0]


class TestConfigDefaults:
    def test_protocol_defaults(self):
        c = DecodeConfig()
        assert c.segment_seconds == 30
        assert c.lag_x.offsets == (-1, 0, 1)
        assert c.lag_y.offsets == tuple(range(-14, 1))
        assert len(c.lag_gcca) == 5
        assert (c.K, c.m) == (5, 2)
        assert c.n_circular_shifts == 100 and c.n_phase_surrogates == 500
        assert c.alpha == 0.05
        assert c.task == "svad" and c.modality == "EEG"

    @pytest.mark.parametrize("bad", [dict(task="x"), dict(m=6), dict(segment_seconds=0),
                                     dict(confound_mode="y"), dict(saccade_removal="z"), dict(ridge=-1)])
    def test_validation(self, bad):
        with pytest.raises(InvalidArgument):
            DecodeConfig(**bad)


class TestSplit:
    def test_seven_pairs(self, seven_pairs):
        folds = loo_pair_split(seven_pairs)
        assert len(folds) == 7
        for (train, test), p in zip(folds, range(1, 8)):
            assert {r.pair_id for r in test} == {p}
            assert sorted(r.presentation for r in test) == [1, 2]
            assert p not in {r.pair_id for r in train}
            assert len(train) + len(test) == 14

    def test_two_pairs(self, seven_pairs):
        recs = [r for r in seven_pairs if r.pair_id < 3]
        folds = loo_pair_split(recs)
        assert len(folds) == 2 and all(len(te) == 2 for _, te in folds)

    def test_missing_presentation(self, seven_pairs):
        recs = [r for r in seven_pairs if not (r.pair_id == 4 and r.presentation == 2)]
        with pytest.raises(InvalidDataset):
            loo_pair_split(recs)

    def test_single_pair(self, seven_pairs):
        with pytest.raises(InvalidDataset):
            loo_pair_split([r for r in seven_pairs if r.pair_id == 1])


class TestBootstrap:
    def test_count(self):
        assert bootstrap_segments(300, 30, 0).size == 100

    def test_single_feasible_start(self):
        s = bootstrap_segments(30, 30, 0)
        assert s.size == 10 and np.all(s == 0)

    def test_deterministic(self):
        np.testing.assert_array_equal(bootstrap_segments(240, 30, 9), bootstrap_segments(240, 30, 9))

    def test_too_short(self):
        with pytest.raises(InvalidArgument):
            bootstrap_segments(20, 30, 0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(30, 2000), st.integers(0, 2**31))
    def test_properties(self, length, seed):
        s = bootstrap_segments(length, 30, seed)
        assert s.size == int(length // 3)
        assert np.all(s >= 0) and np.all(s <= length - 30)


class TestMismatch:
    def test_example_feasible_set(self):
        rng = np.random.default_rng(0)
        starts = {mismatch_start(300, 0, 30, rng) for _ in range(2000)}
        assert min(starts) == 30 and max(starts) == 270

    def test_two_sided_set(self):
        rng = np.random.default_rng(1)
        starts = np.array([mismatch_start(100, 40, 20, rng) for _ in range(3000)])
        assert set(starts) == set(range(0, 21)) | set(range(60, 81))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 400), st.data())
    def test_no_overlap(self, total, data):
        length = data.draw(st.integers(1, total // 2))
        start = data.draw(st.integers(0, total - length))
        before = start - length + 1 > 0
        after = total - 2 * length - start + 1 > 0
        if not (before or after):
            with pytest.raises(InvalidArgument):
                mismatch_start(total, start, length, 0)
            return
        rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
        for _ in range(10):
            s = mismatch_start(total, start, length, rng)
            assert 0 <= s <= total - length
            assert s + length <= start or s >= start + length

    def test_sampler_returns_segment(self, rng):
        stream = ts(np.arange(300.0))
        seg = mismatch_sampler(stream, (0, 30), rng)
        assert seg.n_samples == 30 and seg.data[0, 0] >= 30

    def test_infeasible(self):
        with pytest.raises(InvalidArgument):
            mismatch_start(50, 10, 30, 0)


class TestDecideTrial:
    def _model(self, rng):
        x = ts(rng.standard_normal((200, 2)))
        return fit_cca(x, ts(rng.standard_normal(200)), LagSpec((0,)), LagSpec((0,)), K=1), x

    def test_arithmetic(self, rng, monkeypatch):
        model, x = self._model(rng)
        a, b = ts(rng.standard_normal(200)), ts(rng.standard_normal(200))
        values = {id(a): [0.10, 0.05], id(b): [0.03, 0.02]}
        monkeypatch.setattr(dec, "evaluate", lambda m, X, Y, c=None: np.array(values[id(Y)]))
        decision, s_t, s_i = decide_trial(model, x, a, b, m=2)
        assert decision == "target"
        assert s_t == pytest.approx(0.15) and s_i == pytest.approx(0.05)

    def test_tie_goes_to_imposter(self, rng):
        model, x = self._model(rng)
        f = ts(rng.standard_normal(200))
        assert decide_trial(model, x, f, f, m=1)[0] == "imposter"

    def test_length_mismatch(self, rng):
        model, x = self._model(rng)
        with pytest.raises(InvalidArgument):
            decide_trial(model, x, ts(np.zeros(200)), ts(np.zeros(100)), m=1)

    def test_four_to_one_modulation(self):
        rng = np.random.default_rng(8)
        rate, T = 30.0, 30 * 60 * 30
        smooth = lambda z: np.convolve(z, np.hanning(9) / np.hanning(9).sum(), "same")
        fa = np.abs(smooth(rng.standard_normal(T)))
        fu = np.abs(smooth(rng.standard_normal(T)))
        kernel = np.hanning(9)
        resp = lambda f: np.convolve(f - f.mean(), kernel)[:T]
        drive = 4 * resp(fa) + resp(fu)
        topo = rng.standard_normal(8)
        X = np.outer(drive, topo) + 3 * drive.std() * rng.standard_normal((T, 8))
        half = T // 2
        model = fit_cca(ts(X[:half]), ts(fa[:half]), K=2)
        L = 900
        starts = rng.integers(half, T - L, size=200)
        wins = sum(
            decide_trial(model, ts(X[s:s + L]), ts(fa[s:s + L]), ts(fu[s:s + L]), m=2)[0] == "target"
            for s in starts
        )
        assert wins / 200 > 0.9


class TestChannels:
    def test_whole_is_identity(self, rng):
        x = ts(rng.standard_normal((10, 4)))
        assert channel_subset(x, "whole") is x

    def test_two_channel_region(self, rng):
        from attndec.layout import channel_labels
        labels = channel_labels(64)
        x = ts(rng.standard_normal((10, 64)), labels=labels)
        out = channel_subset(x, "occ", {"occ": (labels[40], labels[7])})
        assert out.labels == (labels[7], labels[40])
        np.testing.assert_array_equal(out.data, x.data[:, [7, 40]])

    def test_shipped_regions_partition_64(self):
        from attndec.layout import channel_labels, region_map_for
        labels = channel_labels(64)
        regions = region_map_for(labels)
        assert set(regions) == {"frontal", "central", "temporal", "parietal_occipital"}
        flat = [c for chans in regions.values() for c in chans]
        assert sorted(flat) == sorted(labels)

    def test_unknown_region(self, rng):
        with pytest.raises(InvalidArgument, match="unknown region"):
            channel_subset(ts(rng.standard_normal((5, 3))), "nowhere", {"a": ("ch0",)})

    def test_missing_channel(self, rng):
        with pytest.raises(InvalidArgument, match="ch9"):
            channel_subset(ts(rng.standard_normal((5, 3))), "a", {"a": ("ch0", "ch9")})

    def test_combine(self, rng):
        eeg = ts(rng.standard_normal((100, 64)))
        out = combine_modalities(eeg, ts(rng.standard_normal(100)))
        assert out.n_channels == 65 and out.labels[-1] == "GAZE_V"
        assert out.data[:, -1].std() == pytest.approx(np.median(eeg.data.std(axis=0)))

    def test_combine_zero_variance(self, rng):
        out = combine_modalities(ts(rng.standard_normal((50, 4))), ts(np.full(50, 2.0)))
        np.testing.assert_array_equal(out.data[:, -1], 0)

    def test_combine_rate_mismatch(self, rng):
        with pytest.raises(InvalidArgument):
            combine_modalities(ts(rng.standard_normal((50, 4))), ts(np.zeros(50), rate=60.0))


def test_kept_rows_accounts_for_lags():
    keep = np.ones(10, dtype=bool)
    keep[5] = False
    np.testing.assert_array_equal(np.flatnonzero(~kept_rows(keep, (-1, 0))), [5, 6])
    np.testing.assert_array_equal(np.flatnonzero(~kept_rows(keep, (0, 2))), [3, 5])


@pytest.mark.parametrize("lag", [LagSpec.past(15), LagSpec.centered(3), LagSpec((0, 3)), LagSpec((2, 4))])
def test_feature_batch_matches_embedding(rng, lag):
    S = rng.standard_normal((120, 4))
    W = rng.standard_normal((len(lag), 3))
    C = embed_confound(ts(rng.standard_normal((120, 2))), LagSpec.centered(3))
    for conf in (None, C):
        Y = project_feature_batch(S, lag, W, conf)
        for j in range(4):
            ref = embed_view(ts(S[:, j]), lag, conf) @ W
            np.testing.assert_allclose(Y[:, j], ref, atol=1e-12)


class TestFolds:
    def test_fit_fold_equals_fit_cca(self, small_records):
        recs = group_by_subject(small_records)["sub-01"]
        config = DecodeConfig()
        cache = [dec._embed_record(r, config) for r in recs]
        grams = [e.gram() for e in cache]
        train = [i for i, r in enumerate(recs) if r.pair_id != 1]
        model = dec.fit_fold(cache, grams, train, config)
        ref = fit_cca([recs[i].modalities["EEG"] for i in train], [recs[i].attended_feature for i in train])
        np.testing.assert_allclose(model.train_corrs, ref.train_corrs, atol=1e-10)
        np.testing.assert_allclose(model.W_x, ref.W_x, atol=1e-8 * np.abs(ref.W_x).max())

    def test_fit_fold_partial_equals_fit_pcca(self, small_records):
        recs = group_by_subject(small_records)["sub-01"]
        config = DecodeConfig(confound_mode="regress")
        cache = [dec._embed_record(r, config) for r in recs]
        train = [i for i, r in enumerate(recs) if r.pair_id != 2]
        model = dec.fit_fold(cache, [e.gram() for e in cache], train, config)
        conf = ConfoundSet(tuple(dec.confound_series(recs[i]) for i in train), config.lag_c)
        ref = fit_pcca([recs[i].modalities["EEG"] for i in train], [recs[i].attended_feature for i in train], conf)
        np.testing.assert_allclose(model.train_corrs, ref.train_corrs, atol=1e-10)

    def test_training_ignores_test_data(self, small_records):
        recs = group_by_subject(small_records)["sub-01"]
        config = DecodeConfig()
        train = [i for i, r in enumerate(recs) if r.pair_id != 3]
        cache = [dec._embed_record(r, config) for r in recs]
        a = dec.fit_fold(cache, [e.gram() for e in cache], train, config)
        for i, r in enumerate(recs):
            if r.pair_id == 3:
                cache[i] = dec._Embedded(np.full_like(cache[i].x, 1e6), cache[i].y, None, r.attended_object, 3)
        b = dec.fit_fold(cache, [e.gram() for e in cache], train, config)
        np.testing.assert_array_equal(a.W_x, b.W_x)

    def test_subject_result(self, small_records, fast_decode):
        recs = group_by_subject(small_records)["sub-02"]
        res = decode_subject(recs, fast_decode)
        assert len(res.folds) == 3
        # 2 x 60 s held out per fold -> 40 segments
        assert all(f.n_trials == 40 and f.n_effective == 4 for f in res.folds)
        assert res.n_trials == 120
        assert res.accuracy == pytest.approx(np.mean([t.correct for f in res.folds for t in f.trials]))
        assert res.null_accuracy.values.size == 20
        assert res.p_value_smoothed >= res.p_value

    def test_swap_labels_inverts(self, small_records, fast_decode):
        recs = group_by_subject(small_records)["sub-01"]
        a = decode_subject(recs, fast_decode)
        b = decode_subject(recs, fast_decode.replace(swap_labels=True))
        ties = sum(t.score_target == t.score_imposter for f in a.folds for t in f.trials)
        assert ties == 0
        assert b.accuracy == pytest.approx(1 - a.accuracy, abs=1e-12)

    def test_deterministic(self, small_records, fast_decode):
        recs = group_by_subject(small_records)["sub-03"]
        a = decode_subject(recs, fast_decode.replace(task="mm"))
        b = decode_subject(recs, fast_decode.replace(task="mm"))
        assert [t for f in a.folds for t in f.trials] == [t for f in b.folds for t in f.trials]
        np.testing.assert_array_equal(a.null_accuracy.values, b.null_accuracy.values)

    def test_mm_imposters_do_not_overlap(self, small_records, fast_decode):
        res = decode_subject(group_by_subject(small_records)["sub-01"], fast_decode.replace(task="mm"))
        for f in res.folds:
            for t in f.trials:
                assert abs(t.imposter_start - t.start) >= 900

    def test_fold_failure_recorded(self, small_records, fast_decode, monkeypatch):
        real = dec._decode_fold

        def flaky(subject_id, fold, *args):
            if fold == 1:
                raise NumericDegeneracy("matrix 'R_xx' is not positive definite")
            return real(subject_id, fold, *args)

        monkeypatch.setattr(dec, "_decode_fold", flaky)
        report = run_task(group_by_subject(small_records)["sub-01"], fast_decode)
        sub = report.subjects[0]
        assert sub.n_failed == 1 and sub.folds[0].failed
        assert sub.n_trials == 80
        assert len(report.warnings) == 1 and "R_xx" in report.warnings[0]

    def test_gaze_velocity_modality(self, small_records, fast_decode):
        res = decode_subject(group_by_subject(small_records)["sub-01"], fast_decode.replace(modality="GAZE_V"))
        assert all(f.train_corrs.size == 3 for f in res.folds)  # K clamped to 1 channel x 3 lags
        assert res.accuracy > 0.5

    def test_phase_null_size(self, small_records):
        cfg = DecodeConfig(n_phase_surrogates=7, n_circular_shifts=0)
        res = decode_subject(group_by_subject(small_records)["sub-01"], cfg)
        assert all(f.null_corr.size == 7 * 5 for f in res.folds)
        assert res.null_accuracy is None

    def test_saccade_modes_run(self, small_records, fast_decode):
        recs = group_by_subject(small_records)["sub-01"]
        cfg = fast_decode.replace(saccade_post_s=0.2, saccade_pre_s=0.1)
        a = decode_subject(recs, cfg.replace(saccade_removal="saccade"))
        b = decode_subject(recs, cfg.replace(saccade_removal="control"))
        kept_a = sum(dec.saccade_rows(r, cfg.replace(saccade_removal="saccade")).sum() for r in recs)
        kept_b = sum(dec.saccade_rows(r, cfg.replace(saccade_removal="control")).sum() for r in recs)
        assert abs(kept_a - kept_b) / kept_a < 0.05
        assert 0 <= a.accuracy <= 1 and 0 <= b.accuracy <= 1


def test_workers_do_not_change_results(small_records, fast_decode):
    one = run_task(small_records, fast_decode, workers=1)
    two = run_task(small_records, fast_decode, workers=2)
    assert one.accuracies == two.accuracies
    np.testing.assert_array_equal(one.null_accuracy.values, two.null_accuracy.values)


def test_null_pooled_across_subjects(small_records, fast_decode):
    report = run_task(small_records, fast_decode)
    assert report.null_accuracy.values.size == 3 * 20
    assert report.mean_accuracy > report.accuracy_threshold
