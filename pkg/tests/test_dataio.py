import csv
import json
import warnings
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmbeam.channel import ArrayConfig, make_dft_codebook
from mmbeam.dataio import (
    NormalizationStats,
    PreprocessConfig,
    fix_pointcount,
    load_index,
    normalize_image,
    normalize_position,
    preprocess_split,
    read_cloud,
    read_ppm,
    resize_bilinear,
    save_dataset,
    tree_checksums,
    write_cloud,
    write_ppm,
)
from mmbeam.errors import (
    ChannelError,
    DegenerateRange,
    MissingArtifact,
    NonMonotonicTime,
    SchemaError,
    UpscaleWarning,
)
from mmbeam.scenario import ScenarioSpec, generate_scenario

ARRAY = ArrayConfig()
CB = make_dft_codebook(ARRAY, 64)


@pytest.fixture(scope="module")
def small_ds():
    return generate_scenario(ScenarioSpec(n_samples=10, seed=3), ARRAY, CB)


def _rewrite_index(path, edit):
    index = path / "index.csv"
    with open(index, newline="") as f:
        rows = list(csv.reader(f))
    edit(rows)
    with open(index, "w", newline="") as f:
        csv.writer(f, lineterminator="\n").writerows(rows)


# --- position ----------------------------------------------------------------

def test_normalize_position_examples():
    stats = NormalizationStats(10.0, 20.0, -5.0, 5.0)
    assert normalize_position((15.0, 0.0), stats).tolist() == [0.5, 0.5]
    assert normalize_position((10.0, 5.0), stats).tolist() == [0.0, 1.0]


def test_normalize_position_clamps():
    stats = NormalizationStats(10.0, 20.0, -5.0, 5.0)
    assert normalize_position((25.0, -9.0), stats).tolist() == [1.0, 0.0]


def test_degenerate_range():
    with pytest.raises(DegenerateRange):
        NormalizationStats(1.0, 1.0, 0.0, 2.0)
    with pytest.raises(DegenerateRange):
        NormalizationStats.from_positions([(1.0, 2.0)])


def test_stats_use_training_split_only():
    ds = generate_scenario(ScenarioSpec(n_samples=10, seed=3), ARRAY, CB)
    before = NormalizationStats.from_training(ds)
    outsider = int(ds.splits["test"][0])
    s = ds.samples[outsider]
    s.gps = (s.gps[0] + 50.0, s.gps[1] - 50.0)
    assert NormalizationStats.from_training(ds) == before


# --- image -------------------------------------------------------------------

def test_black_image_maps_to_negative_mean_over_std():
    out = normalize_image(np.zeros((224, 224, 3), np.uint8))
    assert out[0, 0] == pytest.approx([-2.1179, -2.0357, -1.8044], abs=1e-3)


def test_resize_is_identity_at_same_size():
    img = np.random.default_rng(0).integers(0, 256, (224, 224, 3)).astype(np.uint8)
    assert np.array_equal(resize_bilinear(img, 224, 224), img.astype(float))


def test_resize_preserves_constant_images():
    img = np.full((7, 5, 3), 40.0)
    assert np.allclose(resize_bilinear(img, 13, 11), 40.0)


def test_wrong_channel_count_rejected():
    with pytest.raises(ChannelError):
        normalize_image(np.zeros((224, 224, 4), np.uint8))


def test_upscaling_warns():
    with pytest.warns(UpscaleWarning):
        normalize_image(np.zeros((32, 32, 3), np.uint8))
    with warnings.catch_warnings():
        warnings.simplefilter("error", UpscaleWarning)
        normalize_image(np.zeros((300, 300, 3), np.uint8))


def test_uniform_noise_raster_mean():
    raw = np.random.default_rng(0).integers(0, 256, (224, 224, 3)).astype(np.uint8)
    out = normalize_image(raw)
    expected = (127.5 / 255 - np.array([0.485, 0.456, 0.406])) / np.array([0.229, 0.224, 0.225])
    assert out.reshape(-1, 3).mean(axis=0) == pytest.approx(expected, abs=0.02)


# --- point clouds ------------------------------------------------------------

def test_fix_pointcount_identity_at_target():
    cloud = np.random.default_rng(0).normal(size=(20, 3))
    pts, mask = fix_pointcount(cloud, 20)
    assert np.array_equal(pts, cloud) and mask.all()


def test_fix_pointcount_pads_with_masked_zeros():
    cloud = np.ones((3, 3))
    pts, mask = fix_pointcount(cloud, 5)
    assert mask.tolist() == [True, True, True, False, False]
    assert not pts[3:].any()


def test_fix_pointcount_subsample_is_seeded():
    cloud = np.random.default_rng(0).normal(size=(50, 3))
    a, _ = fix_pointcount(cloud, 10, seed=1)
    b, _ = fix_pointcount(cloud, 10, seed=1)
    c, _ = fix_pointcount(cloud, 10, seed=2)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.integers(1, 60), st.integers(0, 100))
def test_fix_pointcount_keeps_only_real_points(n, target, seed):
    cloud = np.random.default_rng(seed).normal(size=(n, 3))
    pts, mask = fix_pointcount(cloud, target, seed)
    assert pts.shape == (target, 3) and mask.sum() == min(n, target)
    kept = Counter(map(tuple, pts[mask]))
    source = Counter(map(tuple, cloud))
    assert all(source[k] >= v for k, v in kept.items())


# --- files -------------------------------------------------------------------

def test_ppm_and_cloud_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7, 3)).astype(np.uint8)
    write_ppm(tmp_path / "a.ppm", img)
    assert np.array_equal(read_ppm(tmp_path / "a.ppm"), img)
    cloud = np.random.default_rng(1).normal(size=(9, 3)).astype(np.float32)
    write_cloud(tmp_path / "a.bin", cloud)
    assert np.array_equal(read_cloud(tmp_path / "a.bin"), cloud)


def test_truncated_cloud_rejected(tmp_path):
    write_cloud(tmp_path / "a.bin", np.zeros((4, 3), np.float32))
    data = (tmp_path / "a.bin").read_bytes()
    (tmp_path / "a.bin").write_bytes(data[:-4])
    with pytest.raises(SchemaError):
        read_cloud(tmp_path / "a.bin")


def test_dataset_round_trip(tmp_path, small_ds):
    save_dataset(small_ds, tmp_path)
    loaded = load_index(tmp_path)
    assert loaded == small_ds
    assert loaded.time_monotonic
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["n_beams"] == 64


def test_saving_twice_gives_identical_files(tmp_path, small_ds):
    save_dataset(small_ds, tmp_path / "a")
    save_dataset(small_ds, tmp_path / "b")
    assert tree_checksums(tmp_path / "a") == tree_checksums(tmp_path / "b")


def test_short_power_row_rejected(tmp_path, small_ds):
    save_dataset(small_ds, tmp_path)
    _rewrite_index(tmp_path, lambda rows: rows[2].pop(10))
    with pytest.raises(SchemaError, match="row 2: 63 power values, expected 64"):
        load_index(tmp_path)


def test_missing_image_reported(tmp_path, small_ds):
    save_dataset(small_ds, tmp_path)
    (tmp_path / "images" / "000004.ppm").unlink()
    with pytest.raises(MissingArtifact) as err:
        load_index(tmp_path)
    assert "img_path" in str(err.value) and isinstance(err.value, FileNotFoundError)


def test_out_of_range_best_beam_rejected(tmp_path, small_ds):
    save_dataset(small_ds, tmp_path)

    def edit(rows):
        rows[1][-1] = "65"
    _rewrite_index(tmp_path, edit)
    with pytest.raises(SchemaError):
        load_index(tmp_path)


def test_unsorted_timestamps_warn(tmp_path, small_ds):
    save_dataset(small_ds, tmp_path)
    _rewrite_index(tmp_path, lambda rows: rows.__setitem__(slice(1, 3), [rows[2], rows[1]]))
    with pytest.warns(NonMonotonicTime):
        ds = load_index(tmp_path)
    assert not ds.time_monotonic


def test_index_without_manifest_gets_seeded_split(tmp_path, small_ds):
    save_dataset(small_ds, tmp_path)
    (tmp_path / "manifest.json").unlink()
    ds = load_index(tmp_path / "index.csv")
    assert ds.n_beams == 64
    assert sum(len(v) for v in ds.splits.values()) == 10


# --- splits to arrays --------------------------------------------------------

def test_preprocess_split_shapes(small_ds):
    stats = NormalizationStats.from_training(small_ds)
    cfg = PreprocessConfig(image_size=16, n_points=32)
    arrays = preprocess_split(small_ds, "train", stats, cfg)
    n = len(small_ds.splits["train"])
    assert arrays.inputs.pos.shape == (n, 2)
    assert arrays.inputs.vis.shape == (n, 3, 16, 16)
    assert arrays.inputs.cloud.shape == (n, 32, 3) and arrays.inputs.mask.shape == (n, 32)
    assert np.array_equal(arrays.labels, small_ds.labels("train") - 1)
    assert arrays.profiles.shape == (n, 64)


def test_preprocess_split_respects_modalities(small_ds):
    stats = NormalizationStats.from_training(small_ds)
    arrays = preprocess_split(small_ds, "val", stats, PreprocessConfig(image_size=16, n_points=8), ("pos",))
    assert arrays.inputs.vis is None and arrays.inputs.cloud is None
