import json

import numpy as np
import pytest

from shadowgrid.cloud_io import (
    CloudFormatError,
    read_cloud,
    read_csv,
    read_ply,
    read_scene,
    write_cloud,
    write_csv,
    write_ply,
    write_scene,
)
from shadowgrid.sim import build_roadway_scene, scene_to_dict


@pytest.mark.parametrize("ext", [".ply", ".csv"])
def test_round_trip_is_exact(tmp_path, rng, ext):
    cloud = rng.normal(scale=40.0, size=(257, 3))
    path = write_cloud(tmp_path / f"c{ext}", cloud, seed="7/3/1")
    back, seed = read_cloud(path)
    assert np.array_equal(back, cloud)
    assert seed == "7/3/1"


@pytest.mark.parametrize("ext", [".ply", ".csv"])
def test_empty_cloud_and_missing_seed(tmp_path, ext):
    back, seed = read_cloud(write_cloud(tmp_path / f"e{ext}", np.empty((0, 3))))
    assert back.shape == (0, 3)
    assert seed is None


def test_csv_is_plain_text(tmp_path):
    path = write_csv(tmp_path / "c.csv", [[1.5, -2.0, 0.1]], seed=3)
    assert path.read_text().splitlines() == ["# seed: 3", "x,y,z", "1.5,-2.0,0.1"]


def test_ply_with_float32_and_extra_property(tmp_path):
    rec = np.array([(1.0, 2.0, 3.0, 9.0), (4.0, 5.0, 6.0, 9.0)],
                   dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("intensity", "<f4")])
    header = ("ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
              "property float z\nproperty float intensity\nend_header\n")
    path = tmp_path / "f.ply"
    path.write_bytes(header.encode() + rec.tobytes())
    cloud, seed = read_ply(path)
    assert np.array_equal(cloud, [[1, 2, 3], [4, 5, 6]])
    assert seed is None


def test_ply_errors(tmp_path):
    bad = tmp_path / "bad.ply"
    bad.write_bytes(b"not a ply")
    with pytest.raises(CloudFormatError, match="not a PLY"):
        read_ply(bad)
    ascii_ply = tmp_path / "ascii.ply"
    ascii_ply.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nproperty double x\nend_header\n")
    with pytest.raises(CloudFormatError, match="binary little-endian"):
        read_ply(ascii_ply)
    good = write_ply(tmp_path / "t.ply", np.ones((10, 3)))
    truncated = tmp_path / "trunc.ply"
    truncated.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(CloudFormatError, match="truncated"):
        read_ply(truncated)


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x,y,z\n1,2\n")
    with pytest.raises(CloudFormatError, match="3 columns"):
        read_csv(p)
    p.write_text("x,y,z\n1,two,3\n")
    with pytest.raises(CloudFormatError, match="bad row"):
        read_csv(p)


def test_unknown_extension(tmp_path):
    with pytest.raises(CloudFormatError):
        write_cloud(tmp_path / "c.xyz", np.zeros((1, 3)))
    with pytest.raises(CloudFormatError):
        read_cloud(tmp_path / "c.xyz")


def test_missing_file_is_os_error(tmp_path):
    with pytest.raises(OSError):
        read_cloud(tmp_path / "absent.ply")


def test_scene_round_trip(tmp_path):
    scene = build_roadway_scene(n_columns=4, closed_ends=True)
    path = write_scene(tmp_path / "scene.json", scene, seed=11)
    back, seed = read_scene(path)
    assert seed == 11
    assert scene_to_dict(back) == scene_to_dict(scene)
    assert json.loads(path.read_text())["seed"] == 11
