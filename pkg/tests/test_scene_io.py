import numpy as np
import pytest

from pdmvs.scene_io import (
    CameraModel,
    DepthMapBuffer,
    PointCloud,
    SceneParseError,
    load_cameras,
    load_gray_image,
    read_depth_map,
    read_normal_map,
    read_point_cloud,
    save_cameras,
    save_gray_image,
    write_depth_map,
    write_normal_map,
    write_point_cloud,
)


def _camera(width=64, height=48):
    K = np.array([[70.0, 0, 31.5], [0, 70.0, 23.5], [0, 0, 1]])
    th = 0.1
    R = np.array(
        [[np.cos(th), 0, np.sin(th)], [0, 1, 0], [-np.sin(th), 0, np.cos(th)]]
    )
    T = np.array([0.3, -0.1, 0.7])
    return CameraModel(K, R, T, width, height)


def test_depth_pfm_round_trip_bit_exact(tmp_path, rng):
    vals = rng.uniform(0.5, 20.0, size=(31, 17)).astype(np.float32)
    valid = rng.random((31, 17)) > 0.3
    buf = DepthMapBuffer(vals, valid)
    path = tmp_path / "d.pfm"
    write_depth_map(buf, path)
    back = read_depth_map(path)
    assert np.array_equal(back.valid, valid)
    assert np.array_equal(back.values[valid], vals[valid])
    assert np.all(back.values[~valid] == -1.0)


def test_depth_pfm_is_little_endian_bottom_up(tmp_path):
    vals = np.arange(6, dtype=np.float32).reshape(2, 3) + 1
    write_depth_map(DepthMapBuffer.from_values(vals), tmp_path / "d.pfm")
    raw = (tmp_path / "d.pfm").read_bytes()
    assert raw.startswith(b"Pf\n3 2\n-1.0\n")
    payload = np.frombuffer(raw.split(b"-1.0\n", 1)[1], dtype="<f4")
    # bottom row stored first
    assert payload.tolist() == [4, 5, 6, 1, 2, 3]


def test_normal_pfm_round_trip(tmp_path, rng):
    nm = rng.normal(size=(9, 7, 3)).astype(np.float32)
    write_normal_map(nm, tmp_path / "n.pfm")
    back = read_normal_map(tmp_path / "n.pfm")
    assert np.array_equal(back, nm)


def test_pfm_error_cases(tmp_path):
    p = tmp_path / "bad.pfm"
    p.write_bytes(b"P5\n3 2\n-1.0\n" + b"\0" * 24)
    with pytest.raises(SceneParseError, match="magic"):
        read_depth_map(p)
    p.write_bytes(b"Pf\n3\n-1.0\n")
    with pytest.raises(SceneParseError, match="dimension"):
        read_depth_map(p)
    p.write_bytes(b"Pf\n3 2\n-1.0\n" + b"\0" * 10)
    with pytest.raises(SceneParseError, match="truncated"):
        read_depth_map(p)
    p.write_bytes(b"Pf\n100000 100000\n-1.0\n")
    with pytest.raises(SceneParseError, match="out of range"):
        read_depth_map(p)
    with pytest.raises(SceneParseError, match="not found"):
        read_depth_map(tmp_path / "missing.pfm")


def test_camera_round_trip_exact(tmp_path):
    cams = [_camera(), _camera(128, 96)]
    names = ["a.png", "b.png"]
    path = tmp_path / "cameras.txt"
    save_cameras(cams, names, path)
    back, back_names = load_cameras(path)
    assert back_names == names
    for c0, c1 in zip(cams, back):
        assert np.array_equal(c0.K, c1.K)
        assert np.array_equal(c0.R, c1.R)
        assert np.array_equal(c0.T, c1.T)
        assert (c0.width, c0.height) == (c1.width, c1.height)


def test_camera_errors_name_the_camera(tmp_path):
    cams = [_camera(), _camera()]
    path = tmp_path / "cameras.txt"
    save_cameras(cams, ["a.png", "b.png"], path)
    text = path.read_text().strip().split("\n")
    # truncate the second block
    (tmp_path / "trunc.txt").write_text("\n".join(text[:-1]))
    with pytest.raises(SceneParseError, match="camera 1"):
        load_cameras(tmp_path / "trunc.txt")
    bad = _camera()
    bad.R = np.eye(3) * 1.5
    save_cameras([_camera(), bad], ["a.png", "b.png"], path)
    with pytest.raises(SceneParseError, match="camera 1.*orthonormal"):
        load_cameras(path)


def test_camera_center():
    cam = _camera()
    assert np.allclose(cam.R @ cam.center + cam.T, 0, atol=1e-12)


def test_point_cloud_round_trip(tmp_path, rng):
    pos = rng.normal(size=(100, 3)).astype(np.float32)
    nrm = rng.normal(size=(100, 3)).astype(np.float32)
    col = rng.integers(0, 256, size=(100, 3)).astype(np.uint8)
    path = tmp_path / "c.ply"
    write_point_cloud(PointCloud(pos, nrm, col), path)
    back = read_point_cloud(path)
    assert np.array_equal(back.positions, pos)
    assert np.array_equal(back.normals, nrm)
    assert np.array_equal(back.colors, col)
    # colorless variant
    write_point_cloud(PointCloud(pos, nrm), path)
    back = read_point_cloud(path)
    assert np.array_equal(back.positions, pos)
    assert back.colors is None


def test_ply_header_is_binary_little_endian(tmp_path):
    write_point_cloud(PointCloud(np.zeros((1, 3)), np.zeros((1, 3))), tmp_path / "c.ply")
    head = (tmp_path / "c.ply").read_bytes()[:200]
    assert b"format binary_little_endian 1.0" in head


def test_gray_image_round_trip(tmp_path):
    img = np.linspace(0, 1, 48 * 64, dtype=np.float32).reshape(48, 64)
    save_gray_image(img, tmp_path / "g.png")
    back = load_gray_image(tmp_path / "g.png")
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 1.0 / 255.0 + 1e-6


def test_luminance_weights(tmp_path):
    from PIL import Image

    rgb = np.zeros((4, 4, 3), dtype=np.uint8)
    rgb[..., 1] = 200
    Image.fromarray(rgb).save(tmp_path / "c.png")
    g = load_gray_image(tmp_path / "c.png")
    assert np.allclose(g, 0.587 * 200 / 255.0, atol=1e-6)


def test_depth_buffer_from_values_marks_invalid():
    vals = np.array([[1.0, -1.0], [0.0, np.nan]], dtype=np.float32)
    buf = DepthMapBuffer.from_values(vals)
    assert buf.valid.tolist() == [[True, False], [False, False]]
