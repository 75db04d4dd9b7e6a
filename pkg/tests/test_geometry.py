import math

import numpy as np
import pytest

from pano3d import geometry as G


def desk_cfg(**kw):
    return G.TrajectoryConfig(**kw)


class TestBuildRays:
    def test_circle_tangents_perpendicular_to_radius(self):
        cfg = desk_cfg(trajectory_axes=(10.0, 10.0))
        rays = G.build_rays(cfg)[: cfg.image_dims[1]]
        cx, cy = cfg.center
        for ray in rays:
            radial = np.array([ray.origin[1] - cx, ray.origin[2] - cy])
            tangent = np.array([ray.direction[1], ray.direction[2]])
            assert abs(radial @ tangent) < 1e-9

    def test_two_columns_hit_sweep_endpoints(self):
        cfg = desk_cfg(image_dims=(1, 2), sweep=math.pi)
        rays = G.build_rays(cfg)
        at, bt = cfg.trajectory_axes
        cx, cy = cfg.center
        np.testing.assert_allclose(rays[0].origin[1:], [cx + at, cy], atol=1e-12)
        np.testing.assert_allclose(rays[1].origin[1:], [cx - at, cy], atol=1e-12)

    def test_all_directions_unit_norm(self):
        rays = G.build_rays(desk_cfg())
        for ray in rays:
            assert abs(np.linalg.norm(ray.direction) - 1.0) < 1e-6

    def test_ray_count_is_h_times_w(self):
        cfg = desk_cfg(image_dims=(4, 16))
        assert len(G.build_rays(cfg)) == 64

    def test_rows_map_linearly_to_z(self):
        cfg = desk_cfg(image_dims=(4, 2), z_range=(10.0, 16.0))
        rays = G.build_rays(cfg)
        zs = [rays[i * 2].origin[0] for i in range(4)]
        np.testing.assert_allclose(zs, [10.0, 12.0, 14.0, 16.0])

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError, match="semi-axes"):
            desk_cfg(trajectory_axes=(20.0, 9.0))
        with pytest.raises(ValueError, match="sweep"):
            desk_cfg(sweep=0.0)

    def test_deterministic(self):
        a = G.build_rays(desk_cfg())
        b = G.build_rays(desk_cfg())
        for ra, rb in zip(a, b):
            assert np.array_equal(ra.origin, rb.origin)
            assert ra.t_min == rb.t_min and ra.t_max == rb.t_max


class TestFocalInterval:
    def test_symmetry_axis_chord_is_analytic(self):
        cfg = desk_cfg()
        at, bt = cfg.trajectory_axes
        ai, bi = cfg.inner_axes
        ao, bo = cfg.outer_axes
        # phi = 0: vertical ray x = x0 + a_t entering the right arm.
        ray = G.build_rays(desk_cfg(image_dims=(1, 2)))[0]
        t0, t1 = G.focal_interval(ray, cfg)
        expected_in = bi * math.sqrt(1.0 - (at / ai) ** 2)
        expected_out = bo * math.sqrt(1.0 - (at / ao) ** 2)
        assert t0 == pytest.approx(expected_in, abs=1e-9)
        assert t1 == pytest.approx(expected_out, abs=1e-9)

    def test_interval_matches_dense_scan(self):
        cfg = desk_cfg()
        rays = [r for r in G.build_rays(desk_cfg(image_dims=(1, 33))) if not r.empty]
        for ray in rays[::4]:
            ts = np.linspace(0.0, 80.0, 200001)
            pts = ray.origin[None, :] + ts[:, None] * ray.direction[None, :]
            inside = G.horseshoe_contains(cfg, pts, tol=0.0)
            first = np.argmax(inside)
            assert inside[first], "scan should find the interval"
            last = first
            while last + 1 < len(ts) and inside[last + 1]:
                last += 1
            assert ray.t_min == pytest.approx(ts[first], abs=1e-3)
            assert ray.t_max == pytest.approx(ts[last], abs=1e-3)

    def test_ray_outside_outer_is_empty(self):
        cfg = desk_cfg()
        ray = G.Ray(
            origin=np.array([0.0, 200.0, 200.0]),
            direction=np.array([0.0, 0.0, 1.0]),
        )
        t0, t1 = G.focal_interval(ray, cfg)
        assert not t0 < t1

    def test_shrinking_outer_shrinks_interval(self):
        lengths = []
        for eps in (6.0, 3.0, 1.0, 0.25):
            cfg = desk_cfg(outer_axes=(17.0 + eps, 13.0 + eps))
            ray = G.build_rays(desk_cfg(image_dims=(1, 2)))[0]
            t0, t1 = G.focal_interval(ray, cfg)
            lengths.append(t1 - t0)
        assert all(a > b for a, b in zip(lengths, lengths[1:]))
        assert lengths[-1] < 0.6


class TestSamplePoints:
    def test_unit_spacing_case(self):
        ray = G.Ray(
            origin=np.zeros(3), direction=np.array([0.0, 1.0, 0.0]), t_min=0.0, t_max=95.0
        )
        pts = G.sample_points(ray, 96)
        deltas = np.diff(pts[:, 1])
        np.testing.assert_allclose(deltas, 1.0, atol=1e-12)

    def test_two_samples_are_endpoints(self):
        ray = G.Ray(
            origin=np.zeros(3), direction=np.array([0.0, 0.0, 1.0]), t_min=2.0, t_max=5.0
        )
        pts = G.sample_points(ray, 2)
        np.testing.assert_allclose(pts[:, 2], [2.0, 5.0])

    def test_fewer_than_two_rejected(self):
        ray = G.Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]), 0.0, 1.0)
        with pytest.raises(ValueError, match="samples"):
            G.sample_points(ray, 1)

    def test_sample_reduction_is_exactly_52_percent(self):
        assert G.sample_reduction_vs_baseline(96, 200) == 0.52


class TestSampleTensor:
    def test_shapes_and_pixel_map(self):
        cfg = desk_cfg(image_dims=(3, 8))
        bundle = G.build_sample_tensor(cfg)
        assert bundle.points.shape == (24, 96, 3)
        assert bundle.pixel_index.shape == (24, 2)
        np.testing.assert_array_equal(bundle.pixel_index[0], [0, 0])
        np.testing.assert_array_equal(bundle.pixel_index[9], [1, 1])

    def test_spacing_constant_within_ray(self):
        bundle = G.build_sample_tensor(desk_cfg())
        pts = bundle.points[bundle.valid]
        deltas = np.linalg.norm(np.diff(pts, axis=1), axis=-1)
        spread = np.abs(deltas - bundle.spacing[bundle.valid][:, None])
        assert spread.max() < 1e-6

    def test_all_valid_samples_inside_horseshoe(self):
        cfg = desk_cfg()
        bundle = G.build_sample_tensor(cfg)
        inside = G.horseshoe_contains(cfg, bundle.points[bundle.valid], tol=1e-6)
        assert inside.all()

    def test_some_rays_valid(self):
        bundle = G.build_sample_tensor(desk_cfg())
        assert bundle.valid.sum() > bundle.n_rays * 0.5


class TestNoIntersection:
    def test_default_config_passes(self):
        report = G.validate_no_intersection(desk_cfg())
        assert report.passed, str(report)
        assert report.pairs_checked > 0

    def test_full_scale_config_passes(self):
        cfg = G.TrajectoryConfig(
            image_dims=(1, 256),
            trajectory_axes=(52.0, 36.0),
            inner_axes=(68.0, 52.0),
            outer_axes=(104.0, 88.0),
            center=(127.5, 127.5),
            z_range=(0.0, 127.0),
        )
        report = G.validate_no_intersection(cfg)
        assert report.passed, str(report)

    def test_identical_rays_fail(self):
        ray = G.Ray(
            origin=np.array([0.0, 1.0, 2.0]),
            direction=np.array([0.0, 0.0, 1.0]),
            t_min=1.0,
            t_max=4.0,
        )
        twin = G.Ray(ray.origin.copy(), ray.direction.copy(), 1.0, 4.0)
        report = G.check_rays_pairwise([ray, twin])
        assert not report.passed

    def test_parallel_distinct_rays_pass(self):
        a = G.Ray(np.array([0.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]), 0.0, 5.0)
        b = G.Ray(np.array([0.0, 3.0, 0.0]), np.array([0.0, 0.0, 1.0]), 0.0, 5.0)
        report = G.check_rays_pairwise([a, b])
        assert report.passed

    def test_crossing_rays_detected(self):
        a = G.Ray(np.array([0.0, -5.0, 0.0]), np.array([0.0, 1.0, 0.0]), 0.0, 10.0)
        b = G.Ray(np.array([0.0, 0.0, -5.0]), np.array([0.0, 0.0, 1.0]), 0.0, 10.0)
        report = G.check_rays_pairwise([a, b])
        assert not report.passed
