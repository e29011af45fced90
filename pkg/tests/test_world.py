import math

import numpy as np
import pytest
from scipy import ndimage

from antnav import world
from conftest import box_room

CAM64 = world.CameraIntrinsics(64, 64, 90.0)


def march_color(scene, origin, direction, step=0.01, tmax=20.0):
    """Brute-force ray march at a tenth of the voxel size; (colour, t) of the first hit."""
    d = direction / np.linalg.norm(direction)
    shape = np.array(scene.occupancy.shape)
    for t in np.arange(0.0, tmax, step):
        g = np.floor(scene.to_grid(origin + t * d)).astype(int)
        if np.any(g < 0) or np.any(g >= shape):
            return None, None
        if scene.occupancy[tuple(g)]:
            return tuple(int(c) for c in scene.voxel_color[tuple(g)]), t
    return None, None


def pixel_ray(pose, cam, r, c):
    fwd, right, up = world.camera_basis(pose)
    xn = (c + 0.5 - cam.width / 2) / cam.focal
    yn = (r + 0.5 - cam.height / 2) / cam.focal
    return fwd + xn * right - yn * up


# generation ----------------------------------------------------------------


def test_seed42_two_rooms_connected(scene42):
    assert len(scene42.rooms) == 2
    assert world.reachability_audit(scene42)
    # independent check: free voxels one metre above the floor form one
    # component containing both room centres
    k = int(np.floor(scene42.to_grid((0, 0, 1.0))[2]))
    labels, _ = ndimage.label(~scene42.occupancy[:, :, k])
    ids = {labels[tuple(np.floor(scene42.to_grid(r.center)[:2]).astype(int))]
           for r in scene42.rooms}
    assert len(ids) == 1 and 0 not in ids


def test_generation_is_deterministic(scene42):
    again = world.generate_scene(42, world.SceneSpec(rooms=2, floors=1))
    assert np.array_equal(again.occupancy, scene42.occupancy)
    assert np.array_equal(again.voxel_color, scene42.voxel_color)
    assert again.to_json() == scene42.to_json()


def test_two_floor_scene_has_one_ramp(scene7):
    assert scene7.stairs is not None
    assert len(scene7.floors) == 2
    assert world.reachability_audit(scene7)


def test_scene_json_round_trip(tmp_path, scene42):
    scene42.save(tmp_path / "scene.json")
    back = world.Scene.load(tmp_path / "scene.json")
    assert np.array_equal(back.occupancy, scene42.occupancy)


@pytest.mark.parametrize("spec", [dict(rooms=1), dict(rooms=7), dict(floors=3),
                                  dict(min_room=4.0, max_room=3.0)])
def test_invalid_specs_rejected(spec):
    with pytest.raises(ValueError):
        world.generate_scene(1, world.SceneSpec(**spec))


# depth and colour ------------------------------------------------------------


def test_depth_to_wall_two_metres():
    scene = box_room()
    pose = world.Pose(2.0, 3.0, 1.2, math.pi)
    depth = world.raycast_depth(scene, pose, CAM64)
    assert abs(depth.depth[32, 32] - 2.0) <= scene.voxel_size


def test_open_sky_is_sentinel():
    scene = world.scene_from_boxes([((0, 0, -0.1), (4, 4, 0), "white")],
                                   ((-1, -1, -1), (5, 5, 3)))
    pose = world.Pose(2.0, 2.0, 1.2, 0.0, math.radians(60))
    depth = world.raycast_depth(scene, pose, CAM64)
    assert depth.depth[32, 32] == world.SENTINEL


def test_full_turn_gives_identical_depth():
    scene = box_room()
    a = world.raycast_depth(scene, world.Pose(2.0, 3.0, 1.2, 0.3), CAM64)
    b = world.raycast_depth(scene, world.Pose(2.0, 3.0, 1.2, 0.3 + 2 * math.pi), CAM64)
    assert np.array_equal(a.depth, b.depth)


def test_single_red_wall_all_hits_red():
    scene = world.scene_from_boxes([((3, -2, 0), (3.1, 2, 2.6), "red")],
                                   ((-1, -3, -1), (4, 3, 3)))
    img, depth = world.render(scene, world.Pose(0.0, 0.0, 1.2, 0.0), CAM64)
    hits = depth.valid
    assert hits.any()
    assert np.all(img.pixels[hits] == world.PALETTE["red"])
    assert np.all(img.pixels[~hits] == world.BACKGROUND)


def test_render_is_deterministic(scene42):
    pose = world.Pose(1.5, 2.0, 1.2, 0.2)
    a = world.render_rgb(scene42, pose, CAM64)
    b = world.render_rgb(scene42, pose, CAM64)
    assert np.array_equal(a.pixels, b.pixels)


def test_view_through_door_matches_fine_march(scene42):
    door = np.array(scene42.doors[0])
    far_room = scene42.rooms[1]
    pose = world.Pose(door[0] - 1.5, door[1], 1.2, 0.0, math.radians(-20))
    cam = world.CameraIntrinsics(48, 48, 90.0)
    img, depth = world.render(scene42, pose, cam)
    agree = total = far_floor = 0
    for r in range(0, 48, 2):
        for c in range(0, 48, 2):
            color, t = march_color(scene42, pose.position, pixel_ray(pose, cam, r, c))
            if color is None:
                continue
            total += 1
            agree += tuple(img.pixels[r, c]) == color
            hit = pose.position + t * pixel_ray(pose, cam, r, c) / np.linalg.norm(
                pixel_ray(pose, cam, r, c))
            if hit[0] > far_room.min_corner[0] + 0.2 and hit[2] < 0.05:
                far_floor += 1
                assert tuple(img.pixels[r, c]) == world.PALETTE[far_room.floor_color]
    assert far_floor > 0
    # voxel-boundary grazing rays may legitimately differ at the finer step
    assert agree / total >= 0.97


# noise oracle ---------------------------------------------------------------


def test_zero_noise_oracle_is_raycast(scene42):
    pose = world.Pose(1.5, 2.0, 1.2, 0.5)
    a = world.metric_depth_oracle(scene42, pose, CAM64, 0.0, seed=3)
    b = world.raycast_depth(scene42, pose, CAM64)
    assert np.array_equal(a.depth, b.depth)


def test_lognormal_noise_mean_bound():
    scene = box_room()
    cam = world.CameraIntrinsics(100, 100, 20.0)
    pose = world.Pose(2.0, 3.0, 1.2, math.pi)
    clean = world.raycast_depth(scene, pose, cam)
    noisy = world.metric_depth_oracle(scene, pose, cam, 0.05, seed=11)
    ratio = noisy.depth[clean.valid] / clean.depth[clean.valid]
    assert ratio.size == 10_000
    assert 1.98 <= float(np.mean(2.0 * ratio)) <= 2.02


def test_noise_keeps_sentinels():
    scene = world.scene_from_boxes([((0, 0, -0.1), (4, 4, 0), "white")],
                                   ((-1, -1, -1), (5, 5, 3)))
    pose = world.Pose(2.0, 2.0, 1.2, 0.0, math.radians(10))
    clean = world.raycast_depth(scene, pose, CAM64)
    noisy = world.metric_depth_oracle(scene, pose, CAM64, 0.1, seed=2)
    assert (~clean.valid).any()
    assert np.array_equal(clean.valid, noisy.valid)
    assert np.all(noisy.depth[~noisy.valid] == world.SENTINEL)


def test_noise_sigma_range_checked(scene42):
    with pytest.raises(ValueError):
        world.metric_depth_oracle(scene42, world.Pose(1.5, 2, 1.2), CAM64, 0.5)


# traversability --------------------------------------------------------------


def test_room_centre_traversable():
    scene = box_room()
    assert world.is_traversable(scene, (3.0, 3.0, 0.0), 0.25)


def test_near_wall_not_traversable():
    scene = box_room()
    assert not world.is_traversable(scene, (0.1, 3.0, 0.0), 0.25)


def test_ramp_surface_traversable(scene7):
    st = scene7.stairs
    x = (st.start[0] + st.end[0]) / 2
    y = st.start[1]
    z = world.floor_height(scene7, x, y, (st.start[2] + st.end[2]) / 2)
    assert z is not None and st.start[2] < z < st.end[2]
    assert world.is_traversable(scene7, (x, y, z))
    # hovering well above the ramp has no support within reach
    assert not world.is_traversable(scene7, (x, y, z + 0.6))


def test_pose_and_images_round_trip(tmp_path):
    p = world.Pose(1.0, 2.0, 0.5, 7.0, 0.25)
    assert world.Pose.from_dict(p.to_dict()) == p
    assert -math.pi <= p.yaw < math.pi
    img = world.Image.filled(5, 4, (1, 2, 3))
    assert np.array_equal(world.Image.from_ppm(img.to_ppm()).pixels, img.pixels)
    d = world.DepthMap(np.array([[1.5, -1.0], [2.0, 3.25]]))
    assert np.array_equal(world.DepthMap.from_raw(d.to_raw()).depth, d.depth)
    assert np.array_equal(world.DepthMap.from_json(d.to_json()).depth, d.depth)
