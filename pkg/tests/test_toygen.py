import math

import numpy as np
import pytest

from egoexo import data, toygen
from egoexo.errors import DegenerateCamera, InvalidScript


def flat_scene(**kw):
    defaults = dict(
        bounds=(-8.0, 8.0, -8.0, 8.0),
        ground_color=(100, 110, 90),
        sky_color=(170, 200, 230),
        obstacles=(),
        rng_seed=0,
    )
    defaults.update(kw)
    return toygen.SceneSpec(**defaults)


def line_script(action="walking", duration=10, speed=None, heading=0.0, start=(0.0, 0.0)):
    return toygen.ActionScript(
        action=action,
        duration=duration,
        speed=speed,
        trajectory=toygen.Trajectory(start=start, heading=heading, kind="line"),
    )


# ---------------------------------------------------------------------------
# kinematics

def test_zero_speed_keeps_position():
    state = toygen.simulate_actor(line_script(speed=0.0), flat_scene())
    assert np.allclose(state.positions, state.positions[0])
    assert (state.heights == state.heights[0]).all()


def test_straight_walk_displacement():
    state = toygen.simulate_actor(line_script(speed=0.1, duration=10), flat_scene())
    disp = np.linalg.norm(state.positions[-1] - state.positions[0])
    assert disp == pytest.approx(0.9, abs=1e-9)


def test_jump_profile_returns_to_baseline():
    state = toygen.simulate_actor(line_script(action="jumping", duration=30), flat_scene())
    h = state.heights
    base = toygen.BASE_HEIGHT
    assert h[0] == pytest.approx(base, abs=1e-12)
    assert h[29] == pytest.approx(base, abs=1e-12)
    assert h.max() > base + 0.1
    assert (h >= base - 1e-12).all()


def test_crouch_lowers_camera_height():
    state = toygen.simulate_actor(line_script(action="crouching", duration=20), flat_scene())
    assert (state.heights < toygen.BASE_HEIGHT).all()


def test_walking_slower_than_running():
    assert toygen.DEFAULT_SPEEDS["walking"] < toygen.DEFAULT_SPEEDS["running"]


def test_positions_stay_in_bounds():
    scene = flat_scene(bounds=(-1.0, 1.0, -1.0, 1.0))
    state = toygen.simulate_actor(
        line_script(action="running", duration=300, heading=0.7), scene
    )
    xmin, xmax, ymin, ymax = scene.bounds
    assert (state.positions[:, 0] >= xmin - 1e-9).all()
    assert (state.positions[:, 0] <= xmax + 1e-9).all()
    assert (state.positions[:, 1] >= ymin - 1e-9).all()
    assert (state.positions[:, 1] <= ymax + 1e-9).all()


def test_action_label_constant():
    state = toygen.simulate_actor(line_script(action="strafing"), flat_scene())
    assert state.action == "strafing"


def test_invalid_scripts():
    with pytest.raises(InvalidScript):
        toygen.simulate_actor(line_script(duration=0), flat_scene())
    with pytest.raises(InvalidScript):
        toygen.simulate_actor(line_script(speed=-0.1), flat_scene())
    with pytest.raises(InvalidScript):
        toygen.ActionScript("flying", 10, toygen.Trajectory((0, 0), 0.0)).validate()


def test_simulate_deterministic():
    scene = flat_scene()
    script = toygen.random_script("walking", 20, scene, seed=5)
    s1 = toygen.simulate_actor(script, scene)
    s2 = toygen.simulate_actor(script, scene)
    np.testing.assert_array_equal(s1.positions, s2.positions)
    np.testing.assert_array_equal(s1.headings, s2.headings)


# ---------------------------------------------------------------------------
# rendering

def test_on_axis_box_projects_to_principal_point():
    scene = flat_scene(
        ground_color=None,
        sky_color=(0, 0, 0),
        obstacles=(toygen.Box((0.0, 6.0, 0.0), (1.0, 1.0, 1.0), (255, 255, 255)),),
    )
    cam = toygen.look_at((0.0, 0.0, 0.0), (0.0, 1.0, 0.0))
    intr = toygen.Intrinsics(focal=200.0, width=128, height=128)
    img = toygen.render_view(scene, cam, intr)
    ys, xs = np.nonzero(img.sum(axis=2) > 30)
    cx, cy = intr.principal_point()
    assert abs(xs.mean() - cx) < 1.0
    assert abs(ys.mean() - cy) < 1.0


def test_pinhole_similar_triangles_width():
    # 2 m wide box whose visible face sits at 10 m depth, focal 500 px
    scene = flat_scene(
        ground_color=None,
        sky_color=(0, 0, 0),
        obstacles=(toygen.Box((0.0, 11.0, 0.0), (2.0, 2.0, 2.0), (255, 255, 255)),),
    )
    cam = toygen.look_at((0.0, 0.0, 0.0), (0.0, 1.0, 0.0))
    intr = toygen.Intrinsics(focal=500.0, width=256, height=256)
    img = toygen.render_view(scene, cam, intr)
    cols = np.nonzero((img.sum(axis=2) > 30).any(axis=0))[0]
    width = cols.max() - cols.min()
    assert abs(width - 500.0 * 2.0 / 10.0) <= 1.0


def test_empty_scene_uniform_background():
    scene = flat_scene(ground_color=None, sky_color=(12, 34, 56))
    cam = toygen.look_at((0.0, 0.0, 1.0), (1.0, 0.0, 1.0))
    img = toygen.render_view(scene, cam, toygen.Intrinsics(80.0, 64, 64))
    assert (img == np.array([12, 34, 56])).all()


def test_degenerate_camera():
    cam = toygen.look_at((0.0, 0.0, 1.0), (1.0, 0.0, 1.0))
    with pytest.raises(DegenerateCamera):
        toygen.render_view(flat_scene(), cam, toygen.Intrinsics(0.0, 64, 64))


def test_projection_monotone_for_straight_walk():
    # actor walks along +x; a side camera placed at -y sees the projected
    # centroid move monotonically across the image
    scene = flat_scene()
    rig = toygen.make_rig(scene, "side")
    state = toygen.simulate_actor(
        line_script(action="walking", duration=30, speed=0.2, heading=0.0, start=(-3.0, 0.0)),
        scene,
    )
    us = []
    for t in range(len(state)):
        centroid = np.array([state.positions[t, 0], state.positions[t, 1],
                             0.55 * state.heights[t]])
        uv = toygen.project_points(centroid, rig.exo, rig.intrinsics)[0]
        us.append(uv[0])
    diffs = np.diff(us)
    assert (diffs > 0).all() or (diffs < 0).all()


def test_render_deterministic():
    scene = toygen.random_scene(11, style="a")
    rig = toygen.make_rig(scene, "side")
    a = toygen.render_view(scene, rig.exo, rig.intrinsics, actor=(0.0, 0.5, 0.2, 1.7))
    b = toygen.render_view(scene, rig.exo, rig.intrinsics, actor=(0.0, 0.5, 0.2, 1.7))
    np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------------------
# sequence + dataset generation

def test_generate_pair_sequence_contracts(tmp_path):
    scene = toygen.random_scene(3, style="a")
    script = toygen.random_script("walking", 50, scene, seed=4)
    seq = toygen.generate_pair_sequence(
        scene, script, "side", tmp_path / "ego", tmp_path / "exo",
        seq_id="s", image_size=48, seed=9,
    )
    assert seq.length == 50
    assert len(seq.ego_frames) == len(seq.exo_frames) == 50
    assert set(seq.labels) == {"walking"}
    assert seq.poses_ego is not None and len(seq.poses_ego) == 50
    seq.validate()
    frame = data.load_frame(seq.frame_path("ego", 0))
    assert frame.shape == (48, 48, 3)


def test_zero_jitter_pose_matches_heading(tmp_path):
    scene = flat_scene()
    script = line_script(duration=3, heading=0.4)
    seq = toygen.generate_pair_sequence(
        scene, script, "side", tmp_path / "e", tmp_path / "x",
        seq_id="s", image_size=32, jitter_max_deg=0.0, seed=1,
    )
    state = toygen.simulate_actor(script, scene)
    for t, pose in enumerate(seq.poses_ego):
        expected = toygen.ego_camera(
            state.positions[t], state.headings[t], state.heights[t], 0.0
        ).to_camera_pose()
        np.testing.assert_allclose(pose.position, expected.position, atol=1e-12)
        np.testing.assert_allclose(pose.quaternion, expected.quaternion, atol=1e-12)


def test_sequence_determinism(tmp_path):
    scene = toygen.random_scene(8, style="b")
    script = toygen.random_script("running", 4, scene, seed=2)
    kw = dict(scene=scene, script=script, exo_kind="top", seq_id="s",
              image_size=40, seed=77)
    toygen.generate_pair_sequence(ego_dir=tmp_path / "a/e", exo_dir=tmp_path / "a/x", **kw)
    toygen.generate_pair_sequence(ego_dir=tmp_path / "b/e", exo_dir=tmp_path / "b/x", **kw)
    for t in range(4):
        for view in ("e", "x"):
            b1 = (tmp_path / "a" / view / f"{t:06d}.png").read_bytes()
            b2 = (tmp_path / "b" / view / f"{t:06d}.png").read_bytes()
            assert b1 == b2


def test_generated_dataset_valid(tiny_dataset):
    counts = tiny_dataset.counts()
    assert counts["train"]["videos"] == 2
    assert counts["val"]["videos"] == 2
    assert counts["test"]["videos"] == 2
    assert counts["train"]["frames"] == 2 * 12
    pairs = list(data.iterate_aligned_pairs(tiny_dataset, "train", "side"))
    assert len(pairs) == 24
    for ego, exo in pairs:
        assert ego.time_index == exo.time_index
        assert ego.action_label == exo.action_label
    # manifest on disk reloads cleanly, media included
    reloaded = data.load_manifest(tiny_dataset.root / "manifest.json")
    assert reloaded.counts() == counts


def test_scene_validation_catches_out_of_bounds():
    bad = flat_scene(obstacles=(toygen.Box((7.9, 7.9, 0.5), (1.0, 1.0, 1.0), (1, 2, 3)),))
    with pytest.raises(Exception):
        bad.validate()


def test_styles_have_distinct_palettes():
    a = toygen.random_scene(0, style="a")
    b = toygen.random_scene(0, style="b")
    assert a.ground_color != b.ground_color
    assert b.pixel_noise > 0 == a.pixel_noise
