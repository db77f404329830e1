"""Synthetic ground truth: stimuli, the simulated brain, seed derivation,
selectivity scoring, and the end-to-end experiment driver."""

import numpy as np
import pytest

from voxelmax.featurizer import FeatureLayout, LayoutEntry
from voxelmax.harness import (
    ExperimentConfig,
    StageError,
    SyntheticBrain,
    _scatter_lagged,
    calibration_table,
    color_matrix_from_covariance,
    derive_seeds,
    diagonal_hits,
    expected_ceiling,
    format_report,
    format_selectivity,
    generate_stimuli,
    make_brain,
    objective_selectivity,
    read_selectivity_csv,
    rgb_covariance,
    run_experiment,
    selectivity_matrix,
    sigma_for_ceiling,
    write_accuracy_csv,
    write_report,
    write_selectivity_csv,
)
from voxelmax.objective import ContrastObjective
from voxelmax.synthesizer import SynthesisConfig


def flat_layout(n_segments=4, seg_len=25):
    entries = tuple(LayoutEntry(f"seg{i}", seg_len, ()) for i in range(n_segments))
    return FeatureLayout(entries)


# ---------------------------------------------------------------------------
# stimuli


class TestStimuli:
    def test_shape_range_dtype(self):
        imgs = generate_stimuli(9, 32, seed=0)
        assert imgs.shape == (9, 32, 32, 3)
        assert imgs.dtype == np.float32
        assert imgs.min() >= 0.0 and imgs.max() <= 1.0

    def test_deterministic(self):
        np.testing.assert_array_equal(generate_stimuli(6, 16, 3), generate_stimuli(6, 16, 3))
        assert not np.array_equal(generate_stimuli(6, 16, 3), generate_stimuli(6, 16, 4))

    def test_images_vary(self):
        imgs = generate_stimuli(6, 16, 1)
        for i in range(5):
            assert not np.array_equal(imgs[i], imgs[i + 1])

    def test_rgb_covariance(self):
        imgs = generate_stimuli(12, 16, 2)
        cov = rgb_covariance(imgs)
        assert cov.shape == (3, 3)
        np.testing.assert_allclose(cov, cov.T, atol=1e-12)
        assert (np.linalg.eigvalsh(cov) > 0).all()

    def test_rgb_covariance_needs_pixels(self):
        with pytest.raises(ValueError, match="two pixels"):
            rgb_covariance(np.ones((1, 3)))

    def test_color_matrix_unit_norm_factor(self):
        cov = rgb_covariance(generate_stimuli(12, 16, 5))
        M = color_matrix_from_covariance(cov)
        assert np.linalg.norm(M, 2) == pytest.approx(1.0)
        # M is the Cholesky factor up to one global scale
        s = cov[0, 0] / (M @ M.T)[0, 0]
        np.testing.assert_allclose(s * (M @ M.T), cov, rtol=1e-10)


# ---------------------------------------------------------------------------
# noise arithmetic


class TestCeilingArithmetic:
    def test_known_points(self):
        assert expected_ceiling(0.0) == 1.0
        assert expected_ceiling(1.0) == 0.5
        assert expected_ceiling(0.1) == pytest.approx(1.0 / 1.01)

    def test_roundtrip(self):
        for r in (0.25, 0.5, 0.9, 1.0):
            assert expected_ceiling(sigma_for_ceiling(r)) == pytest.approx(r)

    def test_bounds(self):
        with pytest.raises(ValueError):
            sigma_for_ceiling(0.0)
        with pytest.raises(ValueError):
            sigma_for_ceiling(1.5)


# ---------------------------------------------------------------------------
# the brain, by hand


def hand_brain(readout, lags=(1,), kernel=(1.0,), labels=None, sigma=0.0):
    readout = np.asarray(readout, dtype=np.float64)
    labels = np.asarray(labels if labels is not None else ["a"] * readout.shape[0])
    return SyntheticBrain(readout, np.asarray(kernel, dtype=np.float64), tuple(lags),
                          labels, sigma, 0, 0)


class TestSyntheticBrain:
    def test_single_lag_shifts_by_one(self):
        W = np.array([[1.0, 2.0, 0.0]])
        brain = hand_brain(W)
        F = np.arange(12.0).reshape(4, 3)
        resp = brain.respond(F)
        static = F @ W.T
        assert resp[0, 0] == 0.0
        np.testing.assert_allclose(resp[1:, 0], static[:-1, 0])

    def test_lag_mixture_matches_manual_sum(self):
        rng = np.random.default_rng(0)
        W = rng.normal(size=(2, 4))
        brain = hand_brain(W, lags=(1, 3), kernel=(0.5, 0.2))
        F = rng.normal(size=(7, 4))
        static = F @ W.T
        expected = np.zeros((7, 2))
        expected[1:] += 0.5 * static[:-1]
        expected[3:] += 0.2 * static[:-3]
        np.testing.assert_allclose(brain.respond(F), expected, rtol=1e-12)

    def test_respond_static_collapses_kernel(self):
        W = np.array([[2.0, 0.0], [0.0, 3.0]])
        brain = hand_brain(W, lags=(1, 2, 3), kernel=(0.5, 0.3, 0.2))
        f = np.array([1.0, 1.0])
        np.testing.assert_allclose(brain.respond_static(f), [2.0, 3.0])  # kernel sums to 1
        np.testing.assert_allclose(brain.respond_static(np.stack([f, 2 * f])),
                                   [[2.0, 3.0], [4.0, 6.0]])

    def test_full_readout_is_lag_blocked(self):
        W = np.array([[1.0, 2.0]])
        brain = hand_brain(W, lags=(1, 2), kernel=(0.5, 0.25))
        np.testing.assert_allclose(brain.full_readout, [[0.5, 1.0, 0.25, 0.5]])

    def test_noise_reproducible(self):
        brain = hand_brain(np.ones((1, 2)), sigma=1.0)
        F = np.random.default_rng(1).normal(size=(10, 2))
        a = brain.respond(F, noise_seed=7)
        b = brain.respond(F, noise_seed=7)
        c = brain.respond(F, noise_seed=8)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_sequence_too_short(self):
        brain = hand_brain(np.ones((1, 2)), lags=(5,), kernel=(1.0,))
        with pytest.raises(ValueError, match="lag 5"):
            brain.respond(np.ones((4, 2)))

    def test_roi_lookup(self):
        brain = hand_brain(np.ones((3, 2)), labels=["v1", "v1", "v2"])
        assert brain.roi_names == ["v1", "v2"]
        np.testing.assert_array_equal(brain.voxels_of("v2"), [2])
        with pytest.raises(KeyError, match="v9"):
            brain.voxels_of("v9")
        assert brain.n_voxels == 3


# ---------------------------------------------------------------------------
# generated brains


class TestMakeBrain:
    def setup_method(self):
        rng = np.random.default_rng(42)
        self.layout = flat_layout()
        self.F = rng.normal(size=(300, self.layout.total))

    def test_shapes_and_labels(self):
        brain = make_brain(self.F, self.layout, 0, 1, n_rois=2, voxels_per_roi=5)
        assert brain.readout.shape == (10, 100)
        assert brain.roi_names == ["roi0", "roi1"]
        assert brain.prototypes.shape == (2, 100)

    def test_signal_std_is_unit_on_calibration_set(self):
        brain = make_brain(self.F, self.layout, 0, 1, n_rois=2, voxels_per_roi=5)
        np.testing.assert_allclose(brain._signal(self.F).std(axis=0), 1.0, rtol=1e-10)

    def test_bands_are_disjoint(self):
        brain = make_brain(self.F, self.layout, 3, 1, n_rois=4, voxels_per_roi=2)
        P = brain.prototypes
        overlap = (P != 0).astype(int) @ (P != 0).astype(int).T
        np.fill_diagonal(overlap, 0)
        assert (overlap == 0).all()

    def test_structure_shared_across_subjects(self):
        a = make_brain(self.F, self.layout, 7, 100, n_rois=2, voxels_per_roi=3)
        b = make_brain(self.F, self.layout, 7, 200, n_rois=2, voxels_per_roi=3)
        np.testing.assert_array_equal(a.prototypes != 0, b.prototypes != 0)
        # same tuning bands, different per-voxel jitter
        np.testing.assert_array_equal(a.readout != 0, b.readout != 0)
        assert not np.allclose(a.readout, b.readout)

    def test_different_structures_differ(self):
        a = make_brain(self.F, self.layout, 7, 100, n_rois=2, voxels_per_roi=3)
        b = make_brain(self.F, self.layout, 8, 100, n_rois=2, voxels_per_roi=3)
        assert not np.array_equal(a.prototypes != 0, b.prototypes != 0)

    def test_too_many_rois(self):
        with pytest.raises(ValueError, match="layer segments"):
            make_brain(self.F, self.layout, 0, 1, n_rois=5)

    def test_validation(self):
        with pytest.raises(ValueError, match="do not match layout"):
            make_brain(self.F[:, :50], self.layout, 0, 1)
        with pytest.raises(ValueError, match="density"):
            make_brain(self.F, self.layout, 0, 1, n_rois=2, density=0.0)
        with pytest.raises(ValueError, match="at least one"):
            make_brain(self.F, self.layout, 0, 1, n_rois=0)
        with pytest.raises(ValueError, match="lengths differ"):
            make_brain(self.F, self.layout, 0, 1, n_rois=2, lags=(1, 2), lag_kernel=(1.0,))

    def test_calibration_matches_analytic(self):
        brain = make_brain(self.F, self.layout, 1, 2, n_rois=2, voxels_per_roi=5)
        rows = calibration_table(brain, self.F, [0.0, 1.0, 2.0], seed=3)
        assert rows[0][1] == pytest.approx(1.0, abs=1e-9)
        for sigma, measured, analytic in rows[1:]:
            assert analytic == pytest.approx(expected_ceiling(sigma))
            assert abs(measured - analytic) < 0.1


# ---------------------------------------------------------------------------
# seeds


class TestSeeds:
    def test_stable_and_named(self):
        seeds = derive_seeds(5)
        assert seeds == derive_seeds(5)
        assert set(seeds) == {"train_stimuli", "test_stimuli", "structure", "subject",
                              "train_noise", "test_noise", "permutation", "cv", "synthesis"}

    def test_streams_distinct(self):
        seeds = derive_seeds(0)
        assert len(set(seeds.values())) == len(seeds)

    def test_masters_distinct(self):
        assert derive_seeds(0) != derive_seeds(1)


# ---------------------------------------------------------------------------
# selectivity scoring


class TestSelectivity:
    def make_pair(self):
        readout = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        brain = hand_brain(readout, labels=["a", "a", "b"])
        feats = {"a": np.array([[5.0, 0.0]]), "b": np.array([[0.0, 7.0]])}
        return brain, feats

    def test_ground_truth_matrix(self):
        brain, feats = self.make_pair()
        R = selectivity_matrix(brain, feats, ["a", "b"])
        np.testing.assert_allclose(R, [[5.0, 0.0], [0.0, 7.0]])
        assert diagonal_hits(R) == 2

    def test_objective_matrix(self):
        _, feats = self.make_pair()
        objs = {"a": ContrastObjective(np.array([1.0, 0.0]), "a", ""),
                "b": ContrastObjective(np.array([0.0, 1.0]), "b", "")}
        C = objective_selectivity(objs, feats, ["a", "b"])
        np.testing.assert_allclose(C, [[5.0, 0.0], [0.0, 7.0]])

    def test_diagonal_hits_counts(self):
        assert diagonal_hits(np.eye(4)) == 4
        assert diagonal_hits(np.array([[0.0, 1.0], [1.0, 0.0]])) == 0
        assert diagonal_hits(np.array([[2.0, 1.0], [3.0, 1.0]])) == 1

    def test_scatter_lagged_roundtrip(self):
        rng = np.random.default_rng(4)
        full = rng.normal(size=(3, 2 * 6))           # 2 lags x 6 features
        live = np.array([True, False, True, True, False, True])
        kept = full.reshape(3, 2, 6)[:, :, live].reshape(3, -1)
        back = _scatter_lagged(kept, live, 2)
        expected = full.reshape(3, 2, 6).copy()
        expected[:, :, ~live] = 0.0
        np.testing.assert_array_equal(back, expected.reshape(3, 12))


# ---------------------------------------------------------------------------
# the full loop, desk scale


@pytest.fixture(scope="module")
def small_result():
    cfg = ExperimentConfig(
        master_seed=11, n_train=60, n_test=24, image_size=64, backbone="tiny",
        f_max=64, sigma=0.5, n_rois=2, voxels_per_roi=4, images_per_roi=1,
        n_splits=5, n_resamples=1, n_permutations=49,
        synthesis=SynthesisConfig.desk(canvas=64, iterations=8, learning_rate=0.05),
    )
    return run_experiment(cfg)


class TestRunExperiment:
    def test_result_is_complete(self, small_result):
        r = small_result
        assert r.roi_names == ["roi0", "roi1"]
        assert r.brain.n_voxels == 8
        assert r.raw_accuracy.shape == (8,)
        assert r.selectivity.shape == (2, 2)
        assert r.fitted_selectivity.shape == (2, 2)
        assert set(r.objectives) == {"roi0", "roi1"}
        assert len(r.images["roi0"]) == 1
        assert r.images["roi0"][0].shape == (64, 64, 3)
        assert r.image_features["roi1"].shape == (1, r.train_features.shape[1])
        assert r.traces["roi1"][0].scores.size == 8

    def test_seeds_recorded(self, small_result):
        assert small_result.seeds == derive_seeds(11)

    def test_verdict_keys(self, small_result):
        v = small_result.verdicts()
        assert set(v) == {"reliability_calibrated", "positive_accuracy",
                          "selectivity", "fitted_consistency"}
        assert all(isinstance(x, bool) for x in v.values())

    def test_reliability_calibrated_at_desk_scale(self, small_result):
        med = float(np.nanmedian(small_result.ceiling.mean_r))
        assert abs(med - expected_ceiling(0.5)) < 0.15

    def test_report_sections(self, small_result):
        text = format_report(small_result)
        assert "master seed: 11" in text
        assert "per-ROI accuracy" in text
        assert "selectivity on the ground-truth brain" in text
        assert "verdicts" in text
        assert "roi0" in text and "roi1" in text
        for name in small_result.verdicts():
            assert name in text

    def test_report_without_selectivity(self, small_result):
        from dataclasses import replace

        bare = replace(small_result, selectivity=None, fitted_selectivity=None)
        text = format_report(bare)
        assert "selectivity on the ground-truth brain" not in text
        assert "winner" not in text

    def test_stage_failure_names_stage(self):
        cfg = ExperimentConfig(n_train=30, n_test=10, f_max=64, n_rois=10,
                               n_permutations=5)
        with pytest.raises(StageError, match="stage 'simulate brain' failed"):
            run_experiment(cfg)

    def test_explicit_structure_seed_overrides(self):
        # same master, pinned structure: brain bands must follow the pin
        base = ExperimentConfig(master_seed=1, n_train=40, n_test=24, f_max=64,
                                sigma=0.5, n_rois=2, voxels_per_roi=2, images_per_roi=1,
                                n_splits=4, n_resamples=1, n_permutations=39,
                                synthesis=SynthesisConfig.desk(canvas=64, iterations=2))
        from dataclasses import replace as rep

        a = run_experiment(rep(base, structure_seed=77, subject_seed=5))
        b = run_experiment(rep(base, structure_seed=77, subject_seed=6))
        np.testing.assert_array_equal(a.brain.prototypes != 0, b.brain.prototypes != 0)
        assert not np.allclose(a.brain.readout, b.brain.readout)


# ---------------------------------------------------------------------------
# tables and files


class TestTables:
    def test_selectivity_csv_roundtrip(self, tmp_path):
        R = np.array([[1.25, -0.5], [0.0, 3.75]])
        path = tmp_path / "sel.csv"
        write_selectivity_csv(R, ["v1", "v2"], path)
        back, names = read_selectivity_csv(path)
        np.testing.assert_allclose(back, R, rtol=1e-9)
        assert names == ["v1", "v2"]

    def test_selectivity_csv_rejects_ragged(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("roi,a,b\na,1.0,2.0\n")
        with pytest.raises(ValueError, match="expected square"):
            read_selectivity_csv(path)

    def test_format_selectivity_contains_values(self):
        text = format_selectivity(np.array([[1.5, 0.0], [0.25, 2.0]]), ["a", "b"])
        assert "1.500" in text and "0.250" in text
        assert text.count("\n") == 3

    def test_accuracy_csv(self, small_result, tmp_path):
        path = tmp_path / "acc.csv"
        write_accuracy_csv(small_result, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "voxel,roi,reliability_r,reliability_p,reliable,raw_r,corrected_r"
        assert len(lines) == 1 + small_result.brain.n_voxels
        first = lines[1].split(",")
        assert first[0] == "0" and first[1] == "roi0"
        float(first[2]), float(first[5])  # numeric columns parse

    def test_write_report(self, small_result, tmp_path):
        path = tmp_path / "report.txt"
        write_report(small_result, path)
        assert "verdicts" in path.read_text()
