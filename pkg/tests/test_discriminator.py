import numpy as np
import pytest

from distilvad.discriminator import build_discriminator
from distilvad.exceptions import ShapeError
from distilvad.gradcheck import grad_check_params
from distilvad.tensor import Tensor, tsum


def random_maps(resolutions, batch, rng):
    return [Tensor(rng.random((batch, 1, h, w))) for h, w in resolutions]


@pytest.mark.parametrize("resolutions", [
    [(1, 1), (2, 2), (4, 4)],
    [(1, 1), (4, 4), (16, 16)],
    [(16, 16), (1, 1), (4, 4)],
    [(2, 2), (4, 4)],
    [(1, 1)],
])
def test_one_logit_per_sample(resolutions, rng):
    disc = build_discriminator(resolutions, 0)
    logits = disc(random_maps(resolutions, 3, rng))
    assert logits.shape == (3,)
    assert np.all(np.isfinite(logits.data))


def test_scalar_map_feeds_the_fusion(rng):
    disc = build_discriminator([(1, 1), (4, 4)], 0)
    assert disc.scalar_index == 0
    assert disc.fuse.w.shape[1] == 32 + 1
    maps = random_maps([(1, 1), (4, 4)], 2, rng)
    before = disc(maps).data.copy()
    maps[0] = Tensor(maps[0].data + 1.0)
    assert not np.allclose(disc(maps).data, before)


def test_map_count_and_shape_errors(rng):
    disc = build_discriminator([(1, 1), (2, 2)], 0)
    with pytest.raises(ShapeError):
        disc(random_maps([(1, 1)], 2, rng))
    with pytest.raises(ShapeError):
        disc(random_maps([(1, 1), (4, 4)], 2, rng))


def test_same_seed_same_discriminator():
    res = [(1, 1), (4, 4), (16, 16)]
    assert build_discriminator(res, 5).fingerprint() == build_discriminator(res, 5).fingerprint()


def test_discriminator_gradients(rng):
    res = [(1, 1), (2, 2), (4, 4)]
    disc = build_discriminator(res, 1)
    maps = random_maps(res, 2, rng)
    probe = Tensor(rng.normal(size=2))
    report = grad_check_params(lambda: tsum(disc(maps) * probe), disc.named_parameters(), rng,
                               samples_per_param=3)
    assert report.passed, report
