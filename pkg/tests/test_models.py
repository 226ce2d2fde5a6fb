import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmbeam.channel import ArrayConfig, make_dft_codebook
from mmbeam.dataio import NormalizationStats, normalize_position
from mmbeam.errors import AllMasked, EmptyDataset, RangeError, ShapeError
from mmbeam.models import (
    BeamModelConfig,
    BeamPredictor,
    FusionHeadConfig,
    MBConv,
    ModelInputs,
    PointNetLite,
    PointNetLiteConfig,
    PositionNet,
    TrainConfig,
    VisualNet,
    VisualNetConfig,
    fit,
    predict,
    top_m,
    train,
)
from mmbeam.models.diagnostics import check_layers, check_reduced_model
from mmbeam.nn.layers import BatchNorm, recalibrate_batchnorm
from mmbeam.scenario import ScenarioSpec, generate_scenario

SMALL_POINTNET = PointNetLiteConfig(mlp1=(16, 16), mlp2=(16, 32, 64), tnet_widths=(16, 32))


# --- position branch -------------------------------------------------------

def test_position_net_zero_weights_give_zero_features():
    net = PositionNet(rng=None)
    out = net.forward(np.array([[0.3, 0.7], [1.0, 0.0]]), train=False)
    assert out.shape == (2, net.out_dim)
    assert np.all(out == 0)


def test_position_net_separates_positions():
    net = PositionNet(rng=np.random.default_rng(0))
    a, b = net.forward(np.array([[0.2, 0.4], [0.8, 0.1]]), train=False)
    assert not np.allclose(a, b)


def test_position_net_rejects_bad_shape():
    with pytest.raises(ShapeError):
        PositionNet(rng=np.random.default_rng(0)).forward(np.zeros((2, 3)))


# --- point cloud branch ----------------------------------------------------

def _cloud_batch(rng, n, p, n_pad=0):
    cloud = np.zeros((n, p + n_pad, 3))
    cloud[:, :p] = rng.normal(size=(n, p, 3)) * 5
    mask = np.zeros((n, p + n_pad), bool)
    mask[:, :p] = True
    return cloud, mask


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_pointnet_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    net = PointNetLite(SMALL_POINTNET, np.random.default_rng(1))
    for t in (net.tnet_in, net.tnet_feat):
        t.fc.weight.value[:] = rng.normal(size=t.fc.weight.shape) * 0.05
    cloud, mask = _cloud_batch(rng, 1, 30, n_pad=10)
    perm = rng.permutation(40)
    a = net.forward(cloud, mask, train=False)
    b = net.forward(cloud[:, perm], mask[:, perm], train=False)
    assert np.max(np.abs(a - b)) <= 1e-9


def test_pointnet_padding_is_exactly_neutral():
    rng = np.random.default_rng(3)
    net = PointNetLite(SMALL_POINTNET, rng)
    cloud, mask = _cloud_batch(rng, 2, 25)
    padded, pmask = _cloud_batch(np.random.default_rng(3), 2, 25, n_pad=100)
    padded[:, :25] = cloud
    assert np.array_equal(net.forward(cloud, mask), net.forward(padded, pmask))


def test_identity_tnets_match_plain_pipeline():
    rng = np.random.default_rng(4)
    with_t = PointNetLite(SMALL_POINTNET, rng)
    plain_cfg = PointNetLiteConfig(mlp1=(16, 16), mlp2=(16, 32, 64), input_tnet=False, feature_tnet=False)
    plain = PointNetLite(plain_cfg, np.random.default_rng(99))
    state = with_t.state_dict()
    plain.load_state_dict({k: v for k, v in state.items() if k.startswith(("mlp1.", "mlp2."))})
    cloud, mask = _cloud_batch(rng, 3, 20, n_pad=5)
    assert np.array_equal(with_t.forward(cloud, mask), plain.forward(cloud, mask))


def test_pointnet_rejects_fully_masked_cloud():
    net = PointNetLite(SMALL_POINTNET, np.random.default_rng(0))
    cloud, mask = _cloud_batch(np.random.default_rng(0), 2, 5)
    mask[1] = False
    with pytest.raises(AllMasked):
        net.forward(cloud, mask)


def test_pointnet_default_global_feature_is_1024():
    assert PointNetLite(rng=np.random.default_rng(0)).out_dim == 1024


# --- visual branch ---------------------------------------------------------

def test_constant_image_gives_spatially_constant_maps():
    # 1x1 kernels avoid zero-padding edge effects, which break constancy at borders
    cfg = VisualNetConfig(stem_channels=4, blocks=((1, 4, 1), (6, 6, 2)), head_channels=8, kernel=1)
    net = VisualNet(cfg, np.random.default_rng(0))
    img = np.full((1, 3, 12, 12), 0.7)
    maps = net.feature_maps(img, train=False)
    assert np.allclose(maps, maps[:, :, :1, :1], atol=1e-12)
    pooled = net.forward(img, train=False)
    assert np.allclose(pooled, maps[:, :, 2, 1], atol=1e-12)


def test_residual_block_with_zero_weights_is_identity():
    block = MBConv(8, 8, 6, 1, 3, np.random.default_rng(0))
    assert block.skip
    for name, p in block.named_parameters():
        if name.endswith("weight") and not name.startswith("se."):
            p.value[:] = 0.0
    x = np.random.default_rng(1).normal(size=(2, 8, 5, 5))
    assert np.array_equal(block.forward(x, train=False), x)
    assert np.array_equal(block.forward(x, train=True), x)


def test_visual_net_rejects_wrong_channels():
    with pytest.raises(ShapeError):
        VisualNet(rng=np.random.default_rng(0)).forward(np.zeros((1, 4, 16, 16)))


def test_visual_net_gradcheck_16x16():
    from mmbeam.nn.gradcheck import check_module

    rng = np.random.default_rng(5)
    cfg = VisualNetConfig(stem_channels=4, blocks=((1, 4, 1), (6, 6, 2), (6, 6, 1)), head_channels=8)
    net = VisualNet(cfg, rng)
    rep = check_module(net, rng.normal(size=(2, 3, 16, 16)), rng=rng, max_per_tensor=8)
    assert rep.max_rel_error < 1e-4, rep


# --- gradients -------------------------------------------------------------

def test_every_layer_passes_gradcheck():
    reports = check_layers(seed=11)
    bad = {k: r.max_rel_error for k, r in reports.items() if not r.passed(1e-4)}
    assert not bad


def test_reduced_multimodal_model_passes_gradcheck():
    rep = check_reduced_model(seed=2, max_per_tensor=6)
    assert rep.passed(1e-4), (rep.worst, rep.max_rel_error)


# --- prediction ------------------------------------------------------------

def _pos_model(seed=0, zero_head=True, n_beams=64):
    cfg = BeamModelConfig(n_beams=n_beams, modalities=("pos",), head=FusionHeadConfig(zero_init_output=zero_head))
    return BeamPredictor(cfg, seed=seed)


def test_zero_head_predicts_uniform():
    probs = predict(_pos_model(), ModelInputs(pos=np.random.default_rng(0).random((5, 2))))
    assert np.allclose(probs, 1 / 64, atol=1e-15)


def test_predict_is_a_distribution_and_keeps_argmax():
    model = _pos_model(zero_head=False)
    x = ModelInputs(pos=np.random.default_rng(1).random((1000, 2)))
    probs = predict(model, x)
    assert np.all(probs > 0)
    assert np.max(np.abs(probs.sum(axis=1) - 1)) < 1e-9
    logits = model.forward(x, train=False)
    assert np.array_equal(probs.argmax(axis=1), logits.argmax(axis=1))


def test_disabled_modalities_shrink_the_head():
    pos_only = _pos_model()
    assert pos_only.concat_dim == pos_only.pos_net.out_dim
    assert not hasattr(pos_only, "vis_net") and not hasattr(pos_only, "lid_net")


def test_missing_modality_input_is_rejected():
    cfg = BeamModelConfig(n_beams=8, modalities=("pos", "lid"), pointnet=SMALL_POINTNET)
    with pytest.raises(ShapeError):
        BeamPredictor(cfg).forward(ModelInputs(pos=np.zeros((1, 2))))


def test_config_requires_a_modality():
    with pytest.raises(ValueError):
        BeamModelConfig(modalities=())


def test_top_m_examples():
    assert top_m([0.1, 0.6, 0.3], 1) == [2]
    assert top_m(np.full(8, 1 / 8), 3) == [1, 2, 3]
    assert sorted(top_m(np.random.default_rng(0).random(64), 64)) == list(range(1, 65))
    with pytest.raises(RangeError):
        top_m([0.5, 0.5], 0)
    with pytest.raises(RangeError):
        top_m([0.5, 0.5], 3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=2, max_size=20))
def test_top_m_sets_are_nested(values):
    probs = np.array(values, float)
    for m in range(1, len(values)):
        assert set(top_m(probs, m)) <= set(top_m(probs, m + 1))


# --- training --------------------------------------------------------------

def _memorization_set(n=32, n_beams=64, seed=0):
    rng = np.random.default_rng(seed)
    pos = rng.random((n, 2))
    labels = rng.integers(0, n_beams, n)
    return ModelInputs(pos=pos), labels


def test_initial_loss_is_log_of_beam_count():
    x, y = _memorization_set()
    _, hist = train(x, y, BeamModelConfig(modalities=("pos",)), TrainConfig(epochs=1))
    assert abs(hist.initial_loss - math.log(64)) < 0.01


def _drive_positions(n=32):
    arr = ArrayConfig()
    ds = generate_scenario(ScenarioSpec(n_samples=n), arr, make_dft_codebook(arr, 64))
    ds.splits = {"train": np.arange(n), "val": np.arange(0), "test": np.arange(0)}
    stats = NormalizationStats.from_training(ds)
    pos = np.array([normalize_position(s.gps, stats) for s in ds.samples])
    return ModelInputs(pos=pos), ds.labels() - 1


def test_memorizes_32_drive_samples_position_only():
    # at lr 0.01 this set stalls at 31/32 for some seeds (one multipath-flipped label)
    x, y = _drive_positions()
    accs = []
    track = lambda rec, m: accs.append((m.forward(x, train=False).argmax(axis=1) == y).mean())  # noqa: E731
    train(x, y, BeamModelConfig(modalities=("pos",)), TrainConfig(epochs=40, learning_rate=3e-3), on_epoch=track)
    assert max(accs) == 1.0


def test_training_is_deterministic():
    x, y = _memorization_set(16)
    cfg = TrainConfig(epochs=3, seed=5)
    (m1, h1), (m2, h2) = (train(x, y, BeamModelConfig(modalities=("pos",)), cfg) for _ in range(2))
    assert h1.to_csv() == h2.to_csv()
    s1, s2 = m1.state_dict(), m2.state_dict()
    assert all(np.array_equal(s1[k], s2[k]) for k in s1)


def test_history_has_one_row_per_epoch():
    x, y = _memorization_set(8)
    _, hist = train(x, y, BeamModelConfig(modalities=("pos",)), TrainConfig(epochs=4), x, y)
    assert hist.to_csv().splitlines()[0] == "epoch,train_loss,train_acc,val_acc"
    assert len(hist.to_csv().splitlines()) == 5
    assert 1 <= hist.best_epoch <= 4


def test_empty_training_split_is_rejected():
    model = _pos_model()
    with pytest.raises(EmptyDataset):
        fit(model, ModelInputs(pos=np.zeros((0, 2))), np.zeros(0, int))


def test_batchnorm_running_stats_follow_momentum():
    bn = BatchNorm(2, momentum=0.1)
    x = np.random.default_rng(0).normal(3.0, 2.0, size=(50, 2, 4, 4))
    bn.forward(x, train=True)
    assert np.allclose(bn.running_mean, 0.1 * x.mean(axis=(0, 2, 3)))


def test_recalibrated_batchnorm_matches_population_stats():
    bn = BatchNorm(3)
    x = np.random.default_rng(1).normal(2.0, 3.0, size=(64, 3, 2, 2))
    bn.forward(x[:8], train=True)
    recalibrate_batchnorm(bn, (x[a:a + 16] for a in range(0, 64, 16)))
    assert np.allclose(bn.running_mean, x.mean(axis=(0, 2, 3)))
    assert bn.momentum == 0.1
