"""Prototype computation and the inter/intra distance ratio."""

import numpy as np
import pytest

from conftest import make_image, make_pass, make_proposal
from das.errors import DimMismatch, EmptyPass, ImageWithoutProposals, SingleClass
from das.prototypes import (
    PDR_EPS,
    PrototypeSet,
    inter_distance,
    intra_distance,
    mean_offdiagonal,
    pairwise_distance_matrix,
    pdr,
    soft_prototypes,
)


def proto(matrix, domain="source"):
    return PrototypeSet(matrix=np.asarray(matrix, dtype=float), domain=domain)


ONE_D_SOURCE = proto([[0.0], [2.0]], "source")
ONE_D_TARGET = proto([[0.1], [1.9]], "target")


# --------------------------------------------------------------------------
# soft prototypes
# --------------------------------------------------------------------------

def test_soft_prototypes_hand_example():
    image = make_image("img", proposals=[
        make_proposal([1.0, 0.0], [0.6, 0.2, 0.2]),
        make_proposal([0.0, 1.0], [0.1, 0.7, 0.2]),
    ])
    ps = soft_prototypes(make_pass([image]), num_classes=2, feature_dim=2)
    np.testing.assert_allclose(ps.matrix, [[0.3, 0.05], [0.1, 0.35]], atol=1e-12)


def test_soft_prototypes_single_onehot_proposal():
    image = make_image("img", proposals=[
        make_proposal([3.0, -4.0, 5.0], [1.0, 0.0, 0.0])])
    ps = soft_prototypes(make_pass([image]), num_classes=2, feature_dim=3)
    np.testing.assert_array_equal(ps.matrix[0], [3.0, -4.0, 5.0])
    np.testing.assert_array_equal(ps.matrix[1], [0.0, 0.0, 0.0])


def test_soft_prototypes_zero_probability_class():
    image = make_image("img", proposals=[
        make_proposal([1.0, 2.0], [0.0, 0.8, 0.2]),
        make_proposal([5.0, 6.0], [0.0, 0.9, 0.1]),
    ])
    ps = soft_prototypes(make_pass([image]), num_classes=2, feature_dim=2)
    np.testing.assert_array_equal(ps.matrix[0], [0.0, 0.0])


def test_soft_prototypes_errors_and_warning():
    with pytest.raises(EmptyPass):
        soft_prototypes(make_pass([]), 2, 2)
    empty_images = [make_image("a"), make_image("b")]
    with pytest.raises(ImageWithoutProposals):
        soft_prototypes(make_pass(empty_images), 2, 2)
    mixed = [make_image("a", proposals=[make_proposal([1.0, 0.0], [0.5, 0.3, 0.2])]),
             make_image("b")]
    with pytest.warns(UserWarning, match="without proposals"):
        ps = soft_prototypes(make_pass(mixed), 2, 2)
    np.testing.assert_allclose(ps.matrix[0], [0.5, 0.0])


def test_soft_prototypes_top_n_keeps_strongest():
    image = make_image("img", proposals=[
        make_proposal([10.0], [0.1, 0.1, 0.8]),   # weak foreground
        make_proposal([2.0], [0.9, 0.05, 0.05]),  # strongest
    ])
    ps = soft_prototypes(make_pass([image]), 2, 1, top_n=1)
    np.testing.assert_allclose(ps.matrix, [[1.8], [0.1]])


def test_soft_prototypes_linear_in_features(tiny_run):
    dump = tiny_run.manifest.checkpoints[0].source_proposals
    m = tiny_run.manifest
    base = soft_prototypes(dump, m.num_classes, m.feature_dim).matrix
    scaled_images = [
        make_image(img.image_id, proposals=[
            make_proposal(2.0 * p.feature, p.probs) for p in img.proposals])
        for img in dump.images
    ]
    scaled = soft_prototypes(make_pass(scaled_images, domain="source"),
                             m.num_classes, m.feature_dim).matrix
    np.testing.assert_array_equal(scaled, 2.0 * base)  # exact for binary scale


# --------------------------------------------------------------------------
# distances
# --------------------------------------------------------------------------

def test_pairwise_distance_examples():
    m = pairwise_distance_matrix(ONE_D_SOURCE, ONE_D_TARGET)
    np.testing.assert_allclose(m, [[0.1, 1.9], [1.9, 0.1]], atol=1e-12)
    same = pairwise_distance_matrix(ONE_D_SOURCE, ONE_D_SOURCE)
    np.testing.assert_allclose(np.diag(same), [0.0, 0.0], atol=0)
    triangle = pairwise_distance_matrix(proto([[3.0, 4.0]]), proto([[0.0, 0.0]]))
    assert triangle[0, 0] == pytest.approx(5.0, abs=1e-12)
    with pytest.raises(DimMismatch):
        pairwise_distance_matrix(proto([[1.0]]), proto([[1.0, 2.0]]))


def test_intra_distance_examples():
    assert intra_distance(np.zeros((3, 3))) == 0.0
    m = pairwise_distance_matrix(ONE_D_SOURCE, ONE_D_TARGET)
    assert intra_distance(m) == pytest.approx(0.1, abs=1e-12)
    assert intra_distance(np.array([[4.2]])) == pytest.approx(4.2)


def test_mean_offdiagonal_examples():
    m = np.full((3, 3), 2.5)
    np.fill_diagonal(m, 0.0)
    assert mean_offdiagonal(m) == pytest.approx(2.5)
    assert mean_offdiagonal(np.array([[0.1, 1.9], [1.9, 0.1]])) == pytest.approx(1.9)
    with pytest.raises(SingleClass):
        mean_offdiagonal(np.array([[1.0]]))


def test_inter_distance_examples():
    assert inter_distance(ONE_D_SOURCE, ONE_D_TARGET) == pytest.approx(
        1.9 * 2.0 * 1.8, abs=1e-9)
    # identical domains: cube of the single off-diagonal mean
    assert inter_distance(ONE_D_SOURCE, ONE_D_SOURCE) == pytest.approx(8.0, abs=1e-12)
    collapsed = proto([[1.0], [1.0]])
    assert inter_distance(collapsed, ONE_D_TARGET) == 0.0


def test_pdr_examples():
    assert pdr(ONE_D_SOURCE, ONE_D_TARGET) == pytest.approx(68.4, abs=1e-9)
    # exact alignment hits the epsilon floor instead of dividing by zero
    aligned = pdr(ONE_D_SOURCE, proto(ONE_D_SOURCE.matrix.copy(), "target"))
    assert aligned == pytest.approx(8.0 / PDR_EPS)
    assert np.isfinite(aligned)
    collapsed = proto([[1.0], [1.0]])
    assert pdr(collapsed, ONE_D_TARGET) == 0.0
    with pytest.raises(SingleClass):
        pdr(proto([[1.0, 2.0]]), proto([[0.0, 1.0]], "target"))


# --------------------------------------------------------------------------
# invariance properties
# --------------------------------------------------------------------------

def _random_prototypes(rng, k, d):
    return rng.normal(0, 3, (k, d))


def test_pdr_orthogonal_invariance():
    rng = np.random.default_rng(9)
    for _ in range(30):
        k, d = int(rng.integers(2, 6)), int(rng.integers(2, 10))
        ps, pt = _random_prototypes(rng, k, d), _random_prototypes(rng, k, d)
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        base = pdr(proto(ps), proto(pt, "target"))
        rotated = pdr(proto(ps @ q), proto(pt @ q, "target"))
        assert rotated == pytest.approx(base, rel=1e-6)


def test_pdr_scale_covariance():
    rng = np.random.default_rng(10)
    for _ in range(30):
        k, d = int(rng.integers(2, 6)), int(rng.integers(2, 10))
        ps, pt = _random_prototypes(rng, k, d), _random_prototypes(rng, k, d)
        c = float(rng.uniform(0.1, 10.0))
        m = pairwise_distance_matrix(proto(ps), proto(pt, "target"))
        m_scaled = pairwise_distance_matrix(proto(c * ps), proto(c * pt, "target"))
        assert intra_distance(m_scaled) == pytest.approx(
            c * intra_distance(m), rel=1e-9)
        assert inter_distance(proto(c * ps), proto(c * pt, "target")) == pytest.approx(
            c ** 3 * inter_distance(proto(ps), proto(pt, "target")), rel=1e-9)
        assert pdr(proto(c * ps), proto(c * pt, "target")) == pytest.approx(
            c ** 2 * pdr(proto(ps), proto(pt, "target")), rel=1e-9)


def test_pdr_permutation_invariance(tiny_run):
    m = tiny_run.manifest
    ckpt = m.checkpoints[0]
    base_src = soft_prototypes(ckpt.source_proposals, m.num_classes, m.feature_dim)
    base_tgt = soft_prototypes(ckpt.target_proposals, m.num_classes, m.feature_dim)
    base = pdr(base_src, base_tgt)

    rng = np.random.default_rng(4)
    images = list(ckpt.source_proposals.images)
    rng.shuffle(images)
    shuffled = [make_image(img.image_id,
                           proposals=rng.permutation(np.array(img.proposals,
                                                              dtype=object)).tolist())
                for img in images]
    src2 = soft_prototypes(make_pass(shuffled, domain="source"),
                           m.num_classes, m.feature_dim)
    assert pdr(src2, base_tgt) == pytest.approx(base, rel=1e-12)
