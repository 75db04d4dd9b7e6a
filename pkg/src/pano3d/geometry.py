"""Tangent-ray bundle along an elliptical trajectory with horseshoe sampling.

Coordinates: the jaw cross-section lives in the volume's (W, D) plane,
written (x, y) here; the image row axis maps linearly to the volume's H
axis (z). 3-D points are (z, x, y) in (h, w, d) voxel order.

Each image column j gets the tangency parameter phi_j, uniform over the
sweep with endpoints included. The ray passes through the trajectory point
(x0 + a_t*cos(phi), y0 + b_t*sin(phi)) with unit direction along the
ellipse tangent (-a_t*sin(phi), b_t*cos(phi)). The focal interval is the
first maximal stretch of the forward ray (t >= 0) lying inside the
horseshoe (between inner and outer ellipses, restricted to the y >= y0
half-plane for sweeps up to pi). Sampling that stretch keeps every sample
inside the horseshoe, and the tangent-envelope property then guarantees
that two tangent lines only ever cross behind the later ray's interval,
which is what validate_no_intersection checks by brute force.

Rays whose forward path never enters the horseshoe (tangency parameters
near the end of the sweep point out of the half-plane) carry an empty
interval and render as background.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

BASELINE_SAMPLES_PER_RAY = 200  # prior work's uniform per-ray sample count


@dataclass
class TrajectoryConfig:
    image_dims: tuple = (32, 64)  # (H, W)
    trajectory_axes: tuple = (13.0, 9.0)  # (a_t, b_t)
    inner_axes: tuple = (17.0, 13.0)
    outer_axes: tuple = (26.0, 22.0)
    center: tuple = (31.5, 31.5)  # (x0, y0) in (w, d) voxel coords
    sweep: float = math.pi
    z_range: tuple = (0.0, 31.0)
    samples_per_ray: int = 96

    def __post_init__(self):
        at, bt = self.trajectory_axes
        ai, bi = self.inner_axes
        ao, bo = self.outer_axes
        if not (at < ai < ao):
            raise ValueError(
                f"need trajectory < inner < outer x semi-axes, got {at}, {ai}, {ao}"
            )
        if not (bt < bi < bo):
            raise ValueError(
                f"need trajectory < inner < outer y semi-axes, got {bt}, {bi}, {bo}"
            )
        if self.samples_per_ray < 2:
            raise ValueError(f"samples_per_ray must be >= 2, got {self.samples_per_ray}")
        if not 0.0 < self.sweep <= 2.0 * math.pi:
            raise ValueError(f"sweep must lie in (0, 2*pi], got {self.sweep}")
        if any(d <= 0 for d in self.image_dims):
            raise ValueError(f"image dims must be positive, got {self.image_dims}")

    @property
    def half_plane(self) -> bool:
        return self.sweep <= math.pi + 1e-12


@dataclass
class Ray:
    origin: np.ndarray  # (z, x, y)
    direction: np.ndarray  # unit, zero z component
    t_min: float = 0.0
    t_max: float = 0.0

    @property
    def empty(self) -> bool:
        return not (self.t_min < self.t_max)


@dataclass
class SampleTensor:
    """All sample points of a ray bundle plus per-ray bookkeeping."""

    points: np.ndarray  # (|R|, S, 3) in (h, w, d) voxel coords
    pixel_index: np.ndarray  # (|R|, 2) image (i, j) per ray, row-major order
    valid: np.ndarray  # (|R|,) bool, False for empty focal intervals
    spacing: np.ndarray  # (|R|,) sample spacing (t_max - t_min) / (S - 1)
    image_dims: tuple

    @property
    def n_rays(self) -> int:
        return self.points.shape[0]

    @property
    def samples_per_ray(self) -> int:
        return self.points.shape[1]


def tangency_parameters(cfg: TrajectoryConfig) -> np.ndarray:
    w = cfg.image_dims[1]
    if w == 1:
        return np.array([0.0])
    return np.linspace(0.0, cfg.sweep, w)


def row_heights(cfg: TrajectoryConfig) -> np.ndarray:
    h = cfg.image_dims[0]
    z0, z1 = cfg.z_range
    if h == 1:
        return np.array([(z0 + z1) / 2.0])
    return np.linspace(z0, z1, h)


def _ellipse_crossings(ox, oy, dx, dy, axes, center):
    """Real non-negative ray parameters where the line meets the ellipse."""
    a_ax, b_ax = axes
    x0 = (ox - center[0]) / a_ax
    y0 = (oy - center[1]) / b_ax
    du = dx / a_ax
    dv = dy / b_ax
    a = du * du + dv * dv
    b = 2.0 * (x0 * du + y0 * dv)
    c = x0 * x0 + y0 * y0 - 1.0
    disc = b * b - 4.0 * a * c
    if disc < 0.0 or a == 0.0:
        return []
    s = math.sqrt(disc)
    return [(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)]


def _inside_horseshoe(x, y, cfg: TrajectoryConfig, tol=0.0) -> bool:
    cx, cy = cfg.center
    ai, bi = cfg.inner_axes
    ao, bo = cfg.outer_axes
    xo = ((x - cx) / ao) ** 2 + ((y - cy) / bo) ** 2
    xi = ((x - cx) / ai) ** 2 + ((y - cy) / bi) ** 2
    ok = xo <= 1.0 + tol and xi >= 1.0 - tol
    if cfg.half_plane:
        ok = ok and (y - cy) >= -tol * max(bo, 1.0)
    return ok


def focal_interval(ray: Ray, cfg: TrajectoryConfig):
    """First maximal horseshoe stretch of the forward ray; ((0, 0) if it misses)."""
    ox, oy = float(ray.origin[1]), float(ray.origin[2])
    dx, dy = float(ray.direction[1]), float(ray.direction[2])
    return _interval_2d(ox, oy, dx, dy, cfg)


def _interval_2d(ox, oy, dx, dy, cfg: TrajectoryConfig):
    cuts = [0.0]
    cuts += _ellipse_crossings(ox, oy, dx, dy, cfg.inner_axes, cfg.center)
    cuts += _ellipse_crossings(ox, oy, dx, dy, cfg.outer_axes, cfg.center)
    if cfg.half_plane and abs(dy) > 1e-15:
        cuts.append((cfg.center[1] - oy) / dy)
    cuts = sorted(t for t in cuts if t >= 0.0)
    for ta, tb in zip(cuts, cuts[1:]):
        if tb - ta <= 1e-12:
            continue
        tm = 0.5 * (ta + tb)
        if _inside_horseshoe(ox + tm * dx, oy + tm * dy, cfg):
            return ta, tb
    return 0.0, 0.0


def build_rays(cfg: TrajectoryConfig) -> list:
    """One ray per pixel, row-major; length H*W."""
    h, w = cfg.image_dims
    phis = tangency_parameters(cfg)
    zs = row_heights(cfg)
    at, bt = cfg.trajectory_axes
    cx, cy = cfg.center

    columns = []
    for phi in phis:
        ox = cx + at * math.cos(phi)
        oy = cy + bt * math.sin(phi)
        dx = -at * math.sin(phi)
        dy = bt * math.cos(phi)
        norm = math.hypot(dx, dy)
        dx, dy = dx / norm, dy / norm
        t0, t1 = _interval_2d(ox, oy, dx, dy, cfg)
        columns.append((ox, oy, dx, dy, t0, t1))

    rays = []
    for z in zs:
        for ox, oy, dx, dy, t0, t1 in columns:
            rays.append(
                Ray(
                    origin=np.array([z, ox, oy]),
                    direction=np.array([0.0, dx, dy]),
                    t_min=t0,
                    t_max=t1,
                )
            )
    return rays


def sample_points(ray: Ray, s: int) -> np.ndarray:
    """S uniform points t_s = t_min + (s-1)(t_max-t_min)/(S-1), endpoints included."""
    if s < 2:
        raise ValueError(f"need at least 2 samples per ray, got {s}")
    if ray.empty:
        raise ValueError("sample_points on an empty focal interval")
    ts = ray.t_min + (ray.t_max - ray.t_min) * np.arange(s) / (s - 1)
    return ray.origin[None, :] + ts[:, None] * ray.direction[None, :]


def build_sample_tensor(cfg: TrajectoryConfig) -> SampleTensor:
    """Rays plus their sample points as one (|R|, S, 3) tensor.

    Empty rays keep zero rows and are excluded via the valid mask.
    """
    h, w = cfg.image_dims
    s = cfg.samples_per_ray
    rays = build_rays(cfg)
    n = len(rays)
    points = np.zeros((n, s, 3))
    valid = np.zeros(n, dtype=bool)
    spacing = np.zeros(n)
    frac = np.arange(s) / (s - 1)
    for k, ray in enumerate(rays):
        if ray.empty:
            continue
        valid[k] = True
        spacing[k] = (ray.t_max - ray.t_min) / (s - 1)
        ts = ray.t_min + (ray.t_max - ray.t_min) * frac
        points[k] = ray.origin[None, :] + ts[:, None] * ray.direction[None, :]
    ij = np.stack(np.meshgrid(np.arange(h), np.arange(w), indexing="ij"), axis=-1)
    return SampleTensor(
        points=points,
        pixel_index=ij.reshape(n, 2),
        valid=valid,
        spacing=spacing,
        image_dims=(h, w),
    )


def horseshoe_contains(cfg: TrajectoryConfig, pts: np.ndarray, tol=1e-6) -> np.ndarray:
    """Membership test for (..., 3) points via the two ellipse implicit equations."""
    x = pts[..., 1] - cfg.center[0]
    y = pts[..., 2] - cfg.center[1]
    ai, bi = cfg.inner_axes
    ao, bo = cfg.outer_axes
    inside_outer = (x / ao) ** 2 + (y / bo) ** 2 <= 1.0 + tol
    outside_inner = (x / ai) ** 2 + (y / bi) ** 2 >= 1.0 - tol
    ok = inside_outer & outside_inner
    if cfg.half_plane:
        ok &= y >= -tol * max(bo, 1.0)
    return ok


@dataclass
class IntersectionReport:
    passed: bool
    pairs_checked: int
    offending: tuple | None = None  # (j1, j2, t1, t2)

    def __str__(self):
        if self.passed:
            return f"no-intersection check passed ({self.pairs_checked} ray pairs)"
        j1, j2, t1, t2 = self.offending
        return (
            f"no-intersection check FAILED: rays {j1} and {j2} cross at "
            f"t1={t1:.4f}, t2={t2:.4f} inside both focal intervals "
            f"({self.pairs_checked} pairs checked)"
        )


def check_rays_pairwise(rays: list) -> IntersectionReport:
    """Brute-force pairwise line-intersection test within focal intervals."""
    pairs = 0
    for a in range(len(rays)):
        ra = rays[a]
        if ra.empty:
            continue
        ox1, oy1 = ra.origin[1], ra.origin[2]
        dx1, dy1 = ra.direction[1], ra.direction[2]
        for b in range(a + 1, len(rays)):
            rb = rays[b]
            if rb.empty:
                continue
            pairs += 1
            ox2, oy2 = rb.origin[1], rb.origin[2]
            dx2, dy2 = rb.direction[1], rb.direction[2]
            cross = dx1 * dy2 - dy1 * dx2
            rx, ry = ox2 - ox1, oy2 - oy1
            if abs(cross) < 1e-12:
                # Parallel: only coincident lines with overlapping intervals collide.
                if abs(rx * dy1 - ry * dx1) > 1e-9:
                    continue
                s0 = rx * dx1 + ry * dy1  # rb's origin in ra's parameter
                lo = s0 + min(rb.t_min, rb.t_max)
                hi = s0 + max(rb.t_min, rb.t_max)
                if hi >= ra.t_min and lo <= ra.t_max:
                    return IntersectionReport(False, pairs, (a, b, ra.t_min, rb.t_min))
                continue
            t1 = (rx * dy2 - ry * dx2) / cross
            t2 = (rx * dy1 - ry * dx1) / cross
            if ra.t_min <= t1 <= ra.t_max and rb.t_min <= t2 <= rb.t_max:
                return IntersectionReport(False, pairs, (a, b, t1, t2))
    return IntersectionReport(True, pairs)


def validate_no_intersection(cfg: TrajectoryConfig) -> IntersectionReport:
    """Same-row pairwise check; rows share the planar geometry, so one row suffices."""
    row_cfg = TrajectoryConfig(
        image_dims=(1, cfg.image_dims[1]),
        trajectory_axes=cfg.trajectory_axes,
        inner_axes=cfg.inner_axes,
        outer_axes=cfg.outer_axes,
        center=cfg.center,
        sweep=cfg.sweep,
        z_range=cfg.z_range,
        samples_per_ray=cfg.samples_per_ray,
    )
    return check_rays_pairwise(build_rays(row_cfg))


def sample_reduction_vs_baseline(s: int = 96, baseline: int = BASELINE_SAMPLES_PER_RAY) -> float:
    """Fractional reduction in per-ray samples relative to the uniform baseline."""
    return (baseline - s) / baseline
