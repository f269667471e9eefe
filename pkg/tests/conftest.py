import numpy as np
import pytest

from das.backend import available_backends, get_backend
from das.model import BoundingBox, Detection, ImageInference, PassDump, ProposalRecord
from das.synth import SyntheticConfig, generate_run


@pytest.fixture(params=available_backends())
def kernels(request):
    """Run kernel-dependent tests against every available backend."""
    return get_backend(request.param)


@pytest.fixture(scope="session")
def tiny_run():
    """Small but complete synthetic run shared by read-only tests."""
    return generate_run(SyntheticConfig(images_per_domain=12,
                                        trajectory_length=3, seed=11))


def make_detection(box, probs):
    return Detection(bbox=BoundingBox(*box), probs=np.asarray(probs, dtype=float))


def make_proposal(feature, probs):
    return ProposalRecord(feature=np.asarray(feature, dtype=float),
                          probs=np.asarray(probs, dtype=float))


def make_pass(images, domain="target", pass_kind="original", pass_index=0):
    return PassDump(domain=domain, pass_kind=pass_kind, pass_index=pass_index,
                    images=images)


def make_image(image_id, detections=(), proposals=()):
    return ImageInference(image_id=image_id, detections=list(detections),
                          proposals=list(proposals))


def assert_passes_equal(a: PassDump, b: PassDump, rel=1e-9):
    """Field-for-field dump comparison with a relative float tolerance."""
    assert a.image_ids() == b.image_ids()
    for img_a, img_b in zip(a.images, b.images):
        assert len(img_a.detections) == len(img_b.detections)
        assert len(img_a.proposals) == len(img_b.proposals)
        for da, db in zip(img_a.detections, img_b.detections):
            np.testing.assert_allclose(da.bbox.as_array(), db.bbox.as_array(),
                                       rtol=rel, atol=0)
            np.testing.assert_allclose(da.probs, db.probs, rtol=rel, atol=1e-12)
        for pa, pb in zip(img_a.proposals, img_b.proposals):
            np.testing.assert_allclose(pa.feature, pb.feature, rtol=rel, atol=0)
            np.testing.assert_allclose(pa.probs, pb.probs, rtol=rel, atol=1e-12)
