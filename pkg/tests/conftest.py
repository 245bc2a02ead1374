import numpy as np
import pytest

from rangeseg.head import DecoderConfig, HeadConfig
from rangeseg.kitti_io import PointCloud, load_class_config
from rangeseg.projection import SensorGeometry


@pytest.fixture(scope="session")
def classes():
    return load_class_config()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_cloud(rng, n, r_min=2.0, r_max=40.0, fov_up_deg=3.0, fov_down_deg=25.0):
    """Points uniform in azimuth and in elevation inside the sensor FOV."""
    az = rng.uniform(-np.pi, np.pi, n)
    el = rng.uniform(-np.radians(fov_down_deg), np.radians(fov_up_deg), n)
    r = rng.uniform(r_min, r_max, n)
    xyz = np.stack([r * np.cos(el) * np.cos(az), r * np.cos(el) * np.sin(az), r * np.sin(el)], axis=1)
    rem = rng.uniform(0, 1, n)
    return np.concatenate([xyz, rem[:, None]], axis=1).astype(np.float32)


def labeled_frame(rng, n, num_classes=19, thing_ids=range(1, 9), max_inst=4):
    pts = random_cloud(rng, n)
    sem = rng.integers(0, num_classes + 1, n)
    inst = np.where(np.isin(sem, list(thing_ids)), rng.integers(1, max_inst + 1, n), 0)
    return PointCloud(pts, sem, inst)


SMALL_GEOM = SensorGeometry.from_degrees(64, 16, 3.0, 25.0)


def small_head_config(num_classes=19, upsample="dupsampling", num_queries=6, num_layers=2):
    dec = DecoderConfig(num_layers=num_layers, num_queries=num_queries, embed_dim=16, num_heads=4, ffn_dim=32)
    return HeadConfig(
        num_classes=num_classes,
        feat_channels=8,
        embed_channels=16,
        pixel_channels=8,
        upsample=upsample,
        decoder=dec,
    )


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
