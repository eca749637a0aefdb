import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmtlab import data, nn
from dmtlab.data import AugmentSpec
from dmtlab.errors import ConfigError, ParseError, ShapeError


def train_linear(x, y, steps=400, lr=0.5):
    model = nn.init_model(0, [x.shape[1], 2])
    targets = nn.target_matrix(y, np.ones(len(y)), 2)
    for _ in range(steps):
        _, grads = nn.loss_and_grad(model, x, targets, len(x))
        nn.sgd_step(model, grads, lr)
    return model


class TestToyBinary:
    def test_deterministic(self):
        a, b = data.gen_toy_binary(200, seed=4), data.gen_toy_binary(200, seed=4)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_seed_matters(self):
        assert not np.array_equal(data.gen_toy_binary(50, seed=1).features,
                                  data.gen_toy_binary(50, seed=2).features)

    @pytest.mark.parametrize("n", [4, 5, 101, 1000])
    def test_balance(self, n):
        counts = np.bincount(data.gen_toy_binary(n, seed=0).labels, minlength=2)
        assert abs(counts[0] - n / 2) <= 1 and counts.sum() == n

    def test_separable(self):
        ds = data.gen_toy_binary(200, class_separation=3.0, noise=0.0, seed=3)
        model = train_linear(ds.features, ds.labels)
        pred = nn.argmax(nn.predict_proba(model, ds.features))
        assert np.mean(pred == ds.labels) == 1.0

    def test_too_small(self):
        with pytest.raises(ConfigError):
            data.gen_toy_binary(3)

    def test_blob_centres_and_spread(self):
        ds = data.gen_toy_binary(4000, class_separation=1.0, seed=5)
        for label, centre in ((0, 1.0), (1, -1.0)):
            pts = ds.features[ds.labels == label]
            np.testing.assert_allclose(pts.mean(axis=0), [0.0, centre], atol=0.05)
            np.testing.assert_allclose(pts.std(axis=0), [0.4, 0.4], atol=0.03)

    def test_overlap_grows_with_noise(self):
        def bayes_error(noise):
            ds = data.gen_toy_binary(4000, noise=noise, seed=6)
            return np.mean((ds.features[:, 1] < 0) != (ds.labels == 1))
        assert bayes_error(0.2) < bayes_error(0.4) < bayes_error(0.8)

    def test_moons_on_arcs(self):
        ds = data.gen_toy_binary(300, noise=0.0, seed=2, shape="moons")
        upper = ds.features[ds.labels == 0]
        lower = ds.features[ds.labels == 1] - [1.0, 0.5]
        np.testing.assert_allclose(np.hypot(*upper.T), 1.0, atol=1e-12)
        np.testing.assert_allclose(np.hypot(*lower.T), 1.0, atol=1e-12)

    @pytest.mark.parametrize("kwargs", [{"shape": "spirals"}, {"noise": -0.1}])
    def test_rejects(self, kwargs):
        with pytest.raises(ConfigError):
            data.gen_toy_binary(10, **kwargs)


class TestGridSeg:
    def test_shapes(self):
        ds = data.gen_grid_seg(6, 8, 10, class_count=3, seed=1)
        assert ds.images.shape == (6, 8, 10, 2) and ds.labels.shape == (6, 8, 10)
        assert ds.feature_dim == 2 * 9 + 2

    def test_balanced_frequencies(self):
        ds = data.gen_grid_seg(60, 8, 8, class_count=4, imbalance=1.0, seed=0)
        counts = np.bincount(ds.labels.ravel(), minlength=4)
        assert np.all(np.abs(counts - counts.mean()) <= 0.1 * counts.mean())

    def test_imbalance_order(self):
        ds = data.gen_grid_seg(60, 16, 16, class_count=4, imbalance=2.0, seed=0)
        counts = np.bincount(ds.labels.ravel(), minlength=4)
        assert np.all(np.diff(counts) < 0)

    def test_all_background(self):
        ds = data.gen_grid_seg(5, 6, 6, class_count=3, seed=2, background_fraction=1.0)
        assert np.all(ds.labels == 0)

    def test_fractions(self):
        np.testing.assert_allclose(data.class_fractions(3, 2.0), np.array([4, 2, 1]) / 7, rtol=1e-15)
        np.testing.assert_allclose(data.class_fractions(3, 1.0, 0.5), [0.5, 0.25, 0.25])

    def test_small_grid_rejected(self):
        with pytest.raises(ConfigError):
            data.gen_grid_seg(2, 3, 8)

    def test_deterministic(self):
        a, b = data.gen_grid_seg(4, seed=9), data.gen_grid_seg(4, seed=9)
        np.testing.assert_array_equal(a.images, b.images)


    def test_twist_changes_colours_not_labels(self):
        a = data.gen_grid_seg(10, seed=3, twist=0.0)
        b = data.gen_grid_seg(10, seed=3, twist=3.0)
        np.testing.assert_array_equal(a.labels, b.labels)
        assert not np.allclose(a.images, b.images)


class TestPixelFeatures:
    def test_window_oracle(self):
        rng = nn.make_rng(0)
        img = rng.normal(size=(1, 5, 6, 2))
        feats = data.pixel_features(img, 1)
        padded = np.pad(img[0], ((1, 1), (1, 1), (0, 0)), mode="edge")
        for r in range(5):
            for c in range(6):
                row = feats[r * 6 + c]
                expected = [padded[r + dy, c + dx, k] for dy in range(3) for dx in range(3) for k in range(2)]
                np.testing.assert_array_equal(row[:-2], expected)
                np.testing.assert_array_equal(row[-2:], [r / 4, c / 5])

    def test_radius_zero(self):
        img = np.arange(32.0).reshape(1, 4, 4, 2)
        np.testing.assert_array_equal(data.pixel_features(img, 0)[:, :2], img.reshape(16, 2))


class TestSplit:
    def test_full_ratio(self):
        ds = data.split(data.gen_toy_binary(100, seed=0), 1.0, test_fraction=0.2)
        assert ds.count("unlabeled") == 0 and ds.count("labeled") == 80

    def test_eighth(self):
        ds = data.split(data.gen_toy_binary(1000, seed=0), 1 / 8, test_fraction=0.2)
        assert ds.count("labeled") == 100 and ds.count("test") == 200 and ds.count("unlabeled") == 700

    def test_rows_preserved(self):
        raw = data.gen_toy_binary(300, seed=1)
        ds = data.split(raw, 0.1, valtiny_size=20, seed=2)
        assert sum(ds.count(s) for s in data.SPLITS) == 300
        np.testing.assert_array_equal(ds.features, raw.features)

    def test_labeled_count(self):
        ds = data.split(data.gen_toy_binary(1000, seed=0), labeled_count=10, valtiny_size=50)
        assert ds.count("labeled") == 10
        assert np.bincount(ds.labels_for("labeled"), minlength=2).tolist() == [5, 5]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.02, 1.0))
    def test_stratified(self, seed, ratio):
        raw = data.TabularDataset(np.zeros((150, 1)), np.repeat([0, 1, 2], [90, 40, 20]), 3)
        ds = data.split(raw, ratio, seed=seed, test_fraction=0.0)
        k = ds.count("labeled")
        got = np.bincount(ds.labels_for("labeled"), minlength=3)
        assert np.all(np.abs(got - k * np.array([90, 40, 20]) / 150) < 1 + 1e-9)

    def test_grid_split_per_image(self):
        ds = data.split(data.gen_grid_seg(40, seed=0), 1 / 8, valtiny_size=4, seed=0)
        assert ds.count("test") == 8 and ds.count("valtiny") == 4 and ds.count("labeled") == 4

    def test_sealed(self):
        ds = data.split(data.gen_toy_binary(40, seed=0), 0.25)
        with pytest.raises(PermissionError):
            ds.labels_for("unlabeled")
        assert ds.sealed_truth().size == ds.count("unlabeled")

    def test_bad_ratio(self):
        with pytest.raises(ConfigError):
            data.split(data.gen_toy_binary(40), 0.0)

    def test_valtiny_too_big(self):
        with pytest.raises(ConfigError):
            data.split(data.gen_toy_binary(10), 0.5, valtiny_size=20)


class TestAugment:
    def test_flip_involution(self):
        rng = nn.make_rng(0)
        img, lab = rng.normal(size=(5, 6, 2)), rng.integers(0, 3, (5, 6))
        back = data.flip_horizontal(*data.flip_horizontal(img, lab))
        np.testing.assert_array_equal(back[0], img)
        np.testing.assert_array_equal(back[1], lab)

    @pytest.mark.parametrize("seed", range(10))
    def test_maps_stay_aligned(self, seed):
        rng = nn.make_rng(seed)
        ids = np.arange(48).reshape(6, 8)
        img = np.stack([ids, -ids], axis=-1).astype(float)
        out_img, (out_ids,) = data.augment_pixels(img, [ids], AugmentSpec(flip_prob=0.5, crop=(4, 5)), rng)
        assert out_img.shape == (4, 5, 2)
        np.testing.assert_array_equal(out_img[..., 0], out_ids)

    def test_identity(self):
        x = np.arange(6.0).reshape(3, 2)
        assert data.augment(x, AugmentSpec(), nn.make_rng(0)) is x

    def test_jitter_scale(self):
        out = data.augment(np.zeros((4000, 2)), AugmentSpec(sigma=0.5), nn.make_rng(1))
        assert out.std() == pytest.approx(0.5, rel=0.05)

    def test_crop_too_big(self):
        with pytest.raises(ConfigError):
            data.augment_pixels(np.zeros((4, 4, 1)), [], AugmentSpec(crop=(5, 4)), nn.make_rng(0))

    def test_bad_spec(self):
        with pytest.raises(ConfigError):
            AugmentSpec(sigma=-1)

    def test_map_shape_mismatch(self):
        with pytest.raises(ShapeError):
            data.augment_pixels(np.zeros((4, 4, 1)), [np.zeros((4, 5))], AugmentSpec(), nn.make_rng(0))


class TestCsv:
    def test_tabular_round_trip(self, tmp_path):
        ds = data.split(data.gen_toy_binary(60, seed=3), 0.2, valtiny_size=5)
        ds.labels[ds.mask("unlabeled")] = data.NO_LABEL
        path = tmp_path / "d.csv"
        data.save_dataset(ds, path)
        back = data.load_csv(path)
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.splits.tolist() == ds.splits.tolist()

    def test_grid_round_trip(self, tmp_path):
        ds = data.split(data.gen_grid_seg(6, 4, 5, class_count=3, seed=1), 0.5)
        path = tmp_path / "g.csv"
        data.save_dataset(ds, path)
        back = data.load_csv(path, class_count=3)
        np.testing.assert_array_equal(back.images, ds.images)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.splits.tolist() == ds.splits.tolist()

    def test_deterministic_bytes(self, tmp_path):
        ds = data.gen_toy_binary(30, seed=7)
        data.save_csv(ds, tmp_path / "a.csv")
        data.save_csv(ds, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    @pytest.mark.parametrize("body,line,msg", [
        ("0.1,0,labeled\nabc,1,test\n", 3, "non-numeric"),
        ("0.1,-,test\n", 2, "missing"),
        ("0.1,0,bogus\n", 2, "unknown split"),
        ("0.1,0\n", 2, "expected 3"),
    ])
    def test_parse_errors(self, tmp_path, body, line, msg):
        path = tmp_path / "bad.csv"
        path.write_text("f0,label,split\n" + body)
        with pytest.raises(ParseError, match=msg) as err:
            data.load_csv(path)
        assert err.value.line == line

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x,y\n")
        with pytest.raises(ParseError):
            data.load_csv(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            data.load_csv(tmp_path / "nope.csv")

    def test_unlabeled_dash(self, tmp_path):
        path = tmp_path / "u.csv"
        path.write_text("f0,label,split\n0.5,-,unlabeled\n1.5,1,labeled\n")
        ds = data.load_csv(path)
        assert ds.labels.tolist() == [-1, 1]
