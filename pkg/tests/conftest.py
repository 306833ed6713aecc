import numpy as np
import pytest
from hypothesis import settings

from falcon import encoder, oracle
from falcon.image_crop import TileSet, write_ppm

settings.register_profile("suite", deadline=None, max_examples=60)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def tiny_cfg():
    return encoder.PRESETS["tiny"]


@pytest.fixture(scope="session")
def tiny_weights(tiny_cfg):
    return encoder.init_weights(tiny_cfg, seed=0)


@pytest.fixture(scope="session")
def tiny_weights_f64(tiny_cfg):
    return encoder.init_weights(tiny_cfg, seed=0, dtype=np.float64)


@pytest.fixture()
def tiny_tiles(tiny_cfg):
    return oracle.fixture_tiles(tiny_cfg, 2, seed=0)


def random_tiles(cfg, n_tiles, seed):
    rng = np.random.default_rng(seed)
    shape = (cfg.tile, cfg.tile, 3)
    tiles = [rng.random(shape, dtype=np.float32) for _ in range(n_tiles)]
    return TileSet(tiles=tiles, global_thumb=rng.random(shape, dtype=np.float32))


def make_ppm(path, h, w, seed=0):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    path.write_bytes(write_ppm(img))
    return img
