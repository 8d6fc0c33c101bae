import numpy as np
import pytest

from exceptions import CheckpointError, DegenerateError, PatchError
from models import networks
from models.networks import MultiScaleModel, SingleScaleModel
from services import autodiff as ad


def test_quaternion_rotations_are_proper(rng):
    q = rng.normal(size=(10000, 4))
    rot = networks.quat_to_rot(q).data
    identity = np.broadcast_to(np.eye(3), rot.shape)
    np.testing.assert_allclose(np.swapaxes(rot, -1, -2) @ rot, identity, atol=1e-9)
    np.testing.assert_allclose(np.linalg.det(rot), 1.0, atol=1e-9)
    np.testing.assert_allclose(networks.quat_to_rot(-q).data, rot, atol=1e-12)


def test_identity_quaternion():
    np.testing.assert_allclose(networks.quat_to_rot([[1.0, 0.0, 0.0, 0.0]]).data[0], np.eye(3))
    # 90 degrees about z
    half = np.sqrt(0.5)
    np.testing.assert_allclose(
        networks.quat_to_rot([[half, 0.0, 0.0, half]]).data[0] @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-12
    )


def test_quaternion_gradient(rng):
    q = ad.parameter(rng.normal(size=(3, 4)))
    weights = rng.normal(size=(3, 3, 3))

    def loss():
        return ad.reduce_sum(ad.mul(networks.quat_to_rot(q), weights))

    ad.backward(loss())
    for index in np.ndindex(q.shape):
        numeric = ad.finite_difference(lambda: loss().item(), q, index)
        assert abs(q.grad[index] - numeric) <= 1e-4 * max(abs(numeric), 1e-3)


def test_small_quaternion_is_degenerate():
    with pytest.raises(DegenerateError):
        networks.quat_to_rot(np.zeros((1, 4)))


def test_forward_shapes_and_ranges(tiny_config, patch_batch):
    out = SingleScaleModel(tiny_config, seed=1).forward(patch_batch)
    assert out.normal.shape == (3, 3)
    assert out.plane_probs.shape == (3, 24)
    np.testing.assert_allclose(np.linalg.norm(out.normal.data, axis=1), 1.0, atol=1e-9)
    assert ((out.plane_probs.data > 0) & (out.plane_probs.data < 1)).all()
    np.testing.assert_allclose(out.pool_weights.sum(axis=1), 1.0, atol=1e-9)
    assert (out.pool_weights >= 0).all()

    preds = out.predictions()
    assert len(preds) == 3
    np.testing.assert_allclose(np.linalg.norm(preds[0].quaternion), 1.0)


@pytest.mark.parametrize("pooling", ["weighted", "mean"])
def test_forward_is_permutation_invariant(tiny_config, patch_batch, rng, pooling):
    model = SingleScaleModel(tiny_config.model_copy(update={"pooling": pooling}), seed=2)
    order = rng.permutation(patch_batch.shape[1])
    base, permuted = model.forward(patch_batch), model.forward(patch_batch[:, order])
    np.testing.assert_allclose(permuted.normal.data, base.normal.data, atol=1e-5)
    np.testing.assert_allclose(permuted.plane_probs.data, base.plane_probs.data[:, order], atol=1e-5)


def test_mean_pooling_has_no_pool_weight(tiny_config):
    model = SingleScaleModel(tiny_config.model_copy(update={"pooling": "mean"}))
    assert not any(name.startswith("pool_weight") for name in model.parameters())


def test_weighted_pooling_has_no_bias(tiny_config):
    names = [name for name in SingleScaleModel(tiny_config).parameters() if name.startswith("pool_weight")]
    assert names == ["pool_weight.weight"]


def test_end_to_end_gradients_match_finite_differences(tiny_config, patch_batch):
    model = SingleScaleModel(tiny_config, seed=3)
    target = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.6, 0.8, 0.0]])
    labels = (patch_batch[..., 2] > 0).astype(float)

    def loss():
        out = model.forward(patch_batch)
        return networks.loss_total(networks.loss_normal(out.normal, target), networks.loss_plane(out.plane_probs, labels))

    params = model.parameters()
    ad.backward(loss())
    sampler = np.random.default_rng(0)
    for name, p in params.items():
        assert p.grad is not None, name
        for i in sampler.choice(p.data.size, size=min(3, p.data.size), replace=False):
            index = np.unravel_index(i, p.shape)
            numeric = ad.finite_difference(lambda: loss().item(), p, index)
            analytic = p.grad[index]
            assert abs(analytic - numeric) <= 1e-3 * max(abs(analytic), abs(numeric)) + 1e-6, (name, index)


def test_normal_loss_ignores_sign():
    target = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    assert networks.loss_normal(target, target).item() == 0.0
    assert networks.loss_normal(-target, target).item() == 0.0
    np.testing.assert_allclose(networks.loss_normal([[0.0, 1.0, 0.0]], [[0.0, 0.0, 1.0]]).item(), np.sqrt(2))


def test_plane_loss_is_clamped():
    loss = networks.loss_plane(np.array([[0.0, 1.0]]), np.array([[1.0, 0.0]])).item()
    np.testing.assert_allclose(loss, -np.log(1e-7), rtol=1e-6)
    assert networks.loss_plane(np.array([[0.5]]), np.array([[1.0]])).item() == pytest.approx(np.log(2))


def test_multi_loss_with_equal_scale_losses_is_constant():
    c = 0.37
    weights = ad.parameter(ad.softmax(np.random.default_rng(0).normal(size=(4, 3))).data)
    normal_losses = [ad.Tensor(np.full(4, c)) for _ in range(3)]
    plane_losses = [ad.Tensor(np.array(0.2)), ad.Tensor(np.array(0.5)), ad.Tensor(np.array(0.8))]
    loss = networks.loss_multi(normal_losses, plane_losses, weights)
    np.testing.assert_allclose(loss.item(), c + 0.5, atol=1e-12)


def test_multi_loss_gradient_wrt_weights():
    per_scale = np.array([[0.1, 0.4], [0.3, 0.2]])
    weights = ad.parameter(np.full((2, 2), 0.5))
    loss = networks.loss_multi(
        [ad.Tensor(per_scale[:, 0]), ad.Tensor(per_scale[:, 1])], [ad.Tensor(np.array(0.0))] * 2, weights
    )
    ad.backward(loss)
    np.testing.assert_allclose(weights.grad, per_scale / 2)

    with pytest.raises(PatchError):
        networks.loss_multi([ad.Tensor(np.zeros(2))], [ad.Tensor(np.array(0.0))] * 2, np.ones((2, 1)))


def test_multi_scale_selects_the_argmax_subnet(tiny_config, rng):
    model = MultiScaleModel([0.01, 0.03, 0.05], tiny_config, seed=4)
    coords = [rng.uniform(-0.5, 0.5, size=(5, 24, 3)) for _ in range(3)]
    out = model.forward(coords)
    np.testing.assert_allclose(out.scale_weights.data.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_array_equal(out.selected_scale, out.scale_weights.data.argmax(axis=1))
    for b, s in enumerate(out.selected_scale):
        np.testing.assert_array_equal(out.normal[b], out.scales[s].normal.data[b])
    assert [p.selected_scale for p in out.predictions()] == list(out.selected_scale)


def test_multi_scale_argument_checks(tiny_config):
    with pytest.raises(ValueError):
        MultiScaleModel([], tiny_config)
    with pytest.raises(ValueError):
        MultiScaleModel([0.05, 0.03], tiny_config)
    model = MultiScaleModel([0.03, 0.05], tiny_config)
    with pytest.raises(PatchError):
        model.forward([np.zeros((1, 24, 3))])
    with pytest.raises(PatchError):
        MultiScaleModel([0.03, 0.05], subnets=[SingleScaleModel(tiny_config)])


def test_single_scale_multi_model_always_selects_it(tiny_config, patch_batch):
    out = MultiScaleModel([0.05], tiny_config).forward([patch_batch])
    np.testing.assert_array_equal(out.scale_weights.data, 1.0)
    np.testing.assert_array_equal(out.selected_scale, 0)


def test_plane_accuracy():
    assert networks.plane_accuracy(np.array([0.9, 0.2, 0.6]), np.array([1, 0, 0])) == pytest.approx(2 / 3)


def test_checkpoint_round_trip(tmp_path, tiny_config, patch_batch):
    single = SingleScaleModel(tiny_config, seed=5)
    networks.save_model(str(tmp_path / "single.npz"), single, {"radius": 0.03})
    loaded, metadata = networks.load_model(str(tmp_path / "single.npz"))
    assert metadata["kind"] == "single" and metadata["radius"] == 0.03
    np.testing.assert_array_equal(loaded.forward(patch_batch).normal.data, single.forward(patch_batch).normal.data)

    multi = networks.multi_from_checkpoints([str(tmp_path / "single.npz")] * 2, [0.03, 0.05], seed=1)
    networks.save_model(str(tmp_path / "multi.npz"), multi)
    restored, metadata = networks.load_model(str(tmp_path / "multi.npz"))
    assert metadata["kind"] == "multi" and restored.radii == [0.03, 0.05]
    np.testing.assert_array_equal(
        restored.forward([patch_batch] * 2).scale_weights.data, multi.forward([patch_batch] * 2).scale_weights.data
    )

    with pytest.raises(CheckpointError):
        networks.multi_from_checkpoints([str(tmp_path / "multi.npz")], [0.03])


def test_copy_is_independent(tiny_config):
    model = SingleScaleModel(tiny_config, seed=6)
    clone = model.copy()
    name = next(iter(model.parameters()))
    clone.parameters()[name].data += 1.0
    assert not np.array_equal(clone.parameters()[name].data, model.parameters()[name].data)
