import numpy as np
import pytest

from seedembed.augment import (back_transform_and_average, compose, group_2d, group_3d, inverse,
                               transform_fieldstack, transform_scalar, tta_average, tta_predict)
from seedembed.embedding import embed_all, ideal_fieldstack
from seedembed.errors import ShapeMismatchError, ShapeNotInvariantError
from seedembed.grid import FieldStack


def random_stack(rng, shape):
    d = len(shape)
    return FieldStack(rng.normal(0, 3, (d,) + shape), rng.uniform(0.5, 4, (d,) + shape), rng.random(shape))


def embeddings_commute(fs, g):
    """embed(transform(fs)) against g applied to the original embeddings, as scalar fields."""
    e = np.moveaxis(embed_all(fs), 0, -1)
    ge = g.apply_to_coords(e, fs.shape)
    ref = np.stack([transform_scalar(ge[..., d], g) for d in range(fs.ndim)])
    return np.abs(embed_all(transform_fieldstack(fs, g)) - ref).max()


@pytest.mark.parametrize("make,size", [(group_2d, 8), (group_3d, 16)])
def test_group_laws(make, size):
    group = make()
    assert len(group) == size
    keys = [g.key() for g in group]
    assert len(set(keys)) == size
    ident = group[0]
    assert all(not f for f in ident.flips) and list(ident.permutation) == sorted(ident.permutation)
    for a in group:
        assert compose(a, inverse(a)).key() == ident.key()
        assert sum(compose(a, b).key() == ident.key() for b in group) == 1
        for b in group:
            assert compose(a, b).key() in keys


def test_rotation_order_four():
    rot = group_2d()[1]
    g = rot
    for _ in range(3):
        g = compose(rot, g)
    assert g.key() == group_2d()[0].key()
    f = np.arange(16).reshape(4, 4)
    assert np.array_equal(transform_scalar(f, rot), np.rot90(f))


def test_zflip_squared_is_identity():
    zflip = group_3d()[8]
    assert zflip.flips == (True, False, False)
    assert compose(zflip, zflip).key() == group_3d()[0].key()


def test_transform_scalar_identity_and_double_flip(rng):
    f = rng.random((5, 5))
    assert np.array_equal(transform_scalar(f, group_2d()[0]), f)
    flip = group_2d()[4]
    assert np.array_equal(transform_scalar(transform_scalar(f, flip), flip), f)


@pytest.mark.parametrize("make,shape", [(group_2d, (6, 6)), (group_3d, (3, 5, 5))])
def test_round_trips_bit_exact(rng, make, shape):
    fs = random_stack(rng, shape)
    for g in make():
        assert np.array_equal(transform_scalar(transform_scalar(fs.seeds, g), inverse(g)), fs.seeds)
        back = transform_fieldstack(transform_fieldstack(fs, g), inverse(g))
        assert np.array_equal(back.to_array(), fs.to_array())


def test_xflip_negates_x_offset():
    fs = FieldStack.constant((5, 5), seed=0.0)
    off = fs.offsets.copy()
    off[:, 1, 1] = (2.0, 3.0)  # (1,1) embeds at (3,4)
    fs = FieldStack(off, fs.sigmas, fs.seeds)
    xflip = group_2d()[4]
    assert xflip.permutation == (0, 1) and xflip.flips == (False, True)
    t = transform_fieldstack(fs, xflip)
    assert t.offsets[:, 1, 3].tolist() == [2.0, -3.0]
    # voxel (1,3) now embeds at (3,0), the mirror image of (3,4)
    assert (np.array([1, 3]) + t.offsets[:, 1, 3]).tolist() == [3.0, 0.0]


def test_rotation_commutes_with_embedding(rng):
    fs = random_stack(rng, (7, 7))
    rot = group_2d()[1]
    assert embeddings_commute(fs, rot) < 1e-12
    t = transform_fieldstack(fs, rot)
    # a 90 degree turn swaps offset components with one sign change
    assert np.allclose(t.offsets[0], -np.rot90(fs.offsets[1]))
    assert np.allclose(t.offsets[1], np.rot90(fs.offsets[0]))


def test_non_square_shape_errors():
    fs = FieldStack.constant((4, 6))
    with pytest.raises(ShapeNotInvariantError, match="shape not invariant"):
        transform_fieldstack(fs, group_2d()[1])
    # flips alone keep the shape
    assert transform_fieldstack(fs, group_2d()[4]).shape == (4, 6)
    with pytest.raises(ShapeMismatchError):
        transform_scalar(np.zeros((4, 4, 4)), group_2d()[0])


def test_tta_average_examples(rng):
    fs = random_stack(rng, (4, 4))
    assert np.allclose(tta_average([fs, fs, fs]).to_array(), fs.to_array())
    a = FieldStack.constant((3, 3), seed=0.0)
    b = FieldStack.constant((3, 3), seed=1.0)
    assert np.all(tta_average([a, b]).seeds == 0.5)
    with pytest.raises(ShapeMismatchError):
        tta_average([a, FieldStack.constant((3, 4))])


def d4_symmetric_labels():
    n = 21
    yy, xx = np.mgrid[:n, :n] - n // 2
    lab = np.zeros((n, n), int)
    lab[yy ** 2 + xx ** 2 <= 9] = 1
    for i, (cy, cx) in enumerate([(-7, -7), (-7, 7), (7, -7), (7, 7)], start=2):
        lab[(yy - cy) ** 2 + (xx - cx) ** 2 <= 2] = i
    return lab


def test_average_of_symmetric_ideal_stack_is_fixed_point():
    fs = ideal_fieldstack(d4_symmetric_labels(), "medoid", 1.0)
    group = group_2d()
    copies = [transform_fieldstack(fs, g) for g in group]
    avg = back_transform_and_average(copies, group)
    assert np.allclose(avg.to_array(), fs.to_array(), atol=1e-12)
    for g in group:
        assert np.allclose(transform_fieldstack(fs, g).to_array(), fs.to_array(), atol=1e-12)


def test_tta_predict_with_equivariant_model():
    lab = d4_symmetric_labels()
    ref = ideal_fieldstack(np.roll(lab, 1, axis=1), "centroid", 1.0)

    def model(image):
        return ideal_fieldstack(image, "centroid", 1.0)

    out = tta_predict(model, np.roll(lab, 1, axis=1))
    assert np.allclose(out.to_array(), ref.to_array(), atol=1e-9)
