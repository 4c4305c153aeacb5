import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from emberpipe import io as eio
from emberpipe.arena import ArenaModel, Wall
from emberpipe.geometry import PointCloud, Pose
from emberpipe.localization import map_from_arena
from emberpipe.thermal import CalibrationObservation


@settings(max_examples=30)
@given(arrays(float, st.tuples(st.integers(1, 40), st.just(3)), elements=st.floats(-50, 50)))
def test_cloud_round_trip(tmp_path_factory, pts):
    path = tmp_path_factory.mktemp("c") / "cloud.txt"
    inten = np.arange(len(pts), dtype=float)
    eio.write_cloud(path, PointCloud(pts, inten, "lidar"))
    back = eio.read_cloud(path)
    assert back.frame_id == "lidar"
    assert np.allclose(back.points, pts, atol=1e-6)
    assert np.allclose(back.intensity, inten)


def test_cloud_three_columns_and_errors(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# frame_id: field\n1 2 3\n4 5 6\n")
    c = eio.read_cloud(p)
    assert c.frame_id == "field" and c.points.shape == (2, 3) and np.all(c.intensity == 0)
    p.write_text("1 2\n")
    with pytest.raises(eio.FormatError, match=":1:"):
        eio.read_cloud(p)
    p.write_text("1 2 3\n1 2 x\n")
    with pytest.raises(eio.FormatError, match=":2:"):
        eio.read_cloud(p)


def test_map_round_trip(tmp_path):
    walls = (Wall("a", (0, 0, 0), (0, 3, 0), (0, 0, 2)), Wall("b", (0, 3, 0), (3, 0, 0), (0, 0, 2)))
    ref = map_from_arena(ArenaModel(walls, floor=False), "indoor", 0.2, (-1, -1, -1), (5, 5, 4), 2)
    eio.write_map(tmp_path / "m.txt", ref)
    back = eio.read_map(tmp_path / "m.txt")
    assert back.name == "indoor" and back.priority == 2
    assert np.allclose(back.points, ref.points, atol=1e-6)
    assert np.allclose(np.abs(np.sum(back.normals * ref.normals, axis=1)), 1.0, atol=1e-5)
    assert np.allclose(back.box_min, ref.box_min) and np.allclose(back.box_max, ref.box_max)


def test_map_normals_from_pca(tmp_path):
    g = np.stack(np.meshgrid(np.arange(10) * 0.1, np.arange(10) * 0.1), -1).reshape(-1, 2)
    pts = np.column_stack([g, np.full(len(g), 1.0)])
    (tmp_path / "m.txt").write_text("\n".join(" ".join(map(str, p)) for p in pts) + "\n")
    ref = eio.read_map(tmp_path / "m.txt")
    assert ref.name == "m"
    assert np.allclose(np.abs(ref.normals[:, 2]), 1.0)


@settings(max_examples=20)
@given(arrays(float, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.integers(0, 65535).map(float)))
def test_pgm_round_trip(tmp_path_factory, img):
    path = tmp_path_factory.mktemp("p") / "img.pgm"
    eio.write_pgm(path, img)
    assert np.array_equal(eio.read_pgm(path).intensities, img)


def test_pgm_with_comment_and_errors(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n# lepton\n2 1\n255\n\x01\x02")
    assert eio.read_pgm(p).intensities.tolist() == [[1.0, 2.0]]
    p.write_bytes(b"P2\n2 1\n255\n1 2\n")
    with pytest.raises(eio.FormatError):
        eio.read_pgm(p)
    p.write_bytes(b"P5\n4 4\n255\n\x01")
    with pytest.raises(eio.FormatError):
        eio.read_pgm(p)


def test_stream_round_trip_and_order(tmp_path):
    ev = [eio.StreamEvent(0.0, "robot", np.array([0.0, 0.0, 2.0])),
          eio.StreamEvent(0.1, "thermal", np.array([2.0, 0, 2]), np.array([-1.0, 0, 0])),
          eio.StreamEvent(0.2, "hole", np.array([2.0, 0.1, 2]), np.array([-1.0, 0, 0]))]
    eio.write_stream(tmp_path / "s.txt", ev)
    back = eio.read_stream(tmp_path / "s.txt")
    assert [e.kind for e in back] == ["robot", "thermal", "hole"]
    assert np.allclose(back[2].position, [2.0, 0.1, 2])
    (tmp_path / "bad.txt").write_text("0.2 hole 0 0 0 1 0 0\n0.1 hole 0 0 0 1 0 0\n")
    with pytest.raises(eio.FormatError, match="non-decreasing"):
        eio.read_stream(tmp_path / "bad.txt")
    (tmp_path / "bad.txt").write_text("0.1 hole 0 0 0\n")
    with pytest.raises(eio.FormatError, match=":1:"):
        eio.read_stream(tmp_path / "bad.txt")


def test_observations_round_trip(tmp_path):
    obs = [CalibrationObservation(np.array([2.0, 0.1 * i, 0.0]), (80.0 + i, 60.0 - i)) for i in range(4)]
    eio.write_observations(tmp_path / "o.txt", obs)
    back = eio.read_observations(tmp_path / "o.txt")
    assert len(back) == 4
    assert np.allclose(back[3].point_lidar, [2.0, 0.3, 0.0]) and back[3].pixel == (83.0, 57.0)


def test_parse_pose():
    assert np.allclose(eio.parse_pose("1,2,3").translation, [1, 2, 3])
    assert eio.parse_pose("0 0 0 90").yaw == pytest.approx(np.pi / 2)
    p = eio.parse_pose("0,0,0,0,0,45")
    assert p.angle_to(Pose.from_xyz_yaw([0, 0, 0], np.pi / 4)) < 1e-12
    with pytest.raises(eio.FormatError):
        eio.parse_pose("1,2")
