"""Volume data type, preprocessing, procedural phantoms, and file I/O.

Volumes are dense (C, H, W, D) float32 grids, C = 1. The H axis is the
head-height (z) axis; the (W, D) plane carries the jaw cross-section that
the ray geometry lives in. The on-disk format is a fixed 16-byte magic,
four little-endian uint32 dims, then raw little-endian float32 voxels in
row-major (c, h, w, d) order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"VNBLAVOL1\x00" + b"\x00" * 6  # 16 bytes
MASK_MAGIC = b"VNBLAMSK1\x00" + b"\x00" * 6

FULL_DIMS = (1, 128, 256, 256)
DESK_DIMS = (1, 32, 64, 64)

# Refuse absurd headers before allocating (also catches corrupt dim fields).
_MAX_VOXELS = 1 << 31


@dataclass
class Volume:
    """Scalar density grid with informational voxel spacing (mm)."""

    voxels: np.ndarray  # (C, H, W, D) float32
    spacing: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.voxels, dtype=np.float32)
        if v.ndim != 4:
            raise ValueError(f"volume must be 4-D (C,H,W,D), got shape {v.shape}")
        if v.shape[0] != 1:
            raise ValueError(f"only single-channel volumes supported, got C={v.shape[0]}")
        if any(d <= 0 for d in v.shape):
            raise ValueError(f"volume dims must be positive, got {v.shape}")
        self.voxels = v

    @property
    def dims(self):
        return tuple(self.voxels.shape)

    def grid(self) -> np.ndarray:
        """The (H, W, D) array without the channel axis."""
        return self.voxels[0]


def preprocess(raw: Volume, log_compress: bool = False, clip_low: float = 1.0,
               clip_high: float = 99.9) -> Volume:
    """Clip to empirical percentiles, z-score, and rescale to [0, 255].

    Percentiles are computed per volume. With ``log_compress`` a log1p is
    inserted after clipping (alternative reading of the preprocessing
    summary; default off). Raises on volumes that are constant after the
    clip (zero variance).
    """
    v = raw.voxels.astype(np.float64)
    lo, hi = np.percentile(v, [clip_low, clip_high])
    v = np.clip(v, lo, hi)
    if log_compress:
        v = np.log1p(v - v.min())
    std = v.std()
    if std == 0.0:
        raise ValueError("preprocess: volume is constant after percentile clipping")
    v = (v - v.mean()) / std
    vmin, vmax = v.min(), v.max()
    v = (v - vmin) / (vmax - vmin) * 255.0
    return Volume(v.astype(np.float32), spacing=raw.spacing)


@dataclass
class PhantomSpec:
    """Procedural horseshoe phantom: half-annulus jaw with spherical teeth.

    Ellipse semi-axes are in voxel units in the (W, D) plane; the annulus is
    restricted to the half-plane d >= center_d and extruded over
    ``z_band`` (fractions of H). All densities are in [0, 255].
    """

    seed: int = 0
    dims: tuple = DESK_DIMS
    inner_axes: tuple = (17.0, 13.0)
    outer_axes: tuple = (26.0, 22.0)
    center: tuple | None = None  # (w, d); defaults to the grid centre
    tooth_count: int = 10
    tooth_radius: tuple = (2.0, 3.2)
    bone_density: float = 170.0
    tooth_density: float = 255.0
    background_density: float = 0.0
    z_band: tuple = (0.15, 0.85)

    def __post_init__(self):
        ai, bi = self.inner_axes
        ao, bo = self.outer_axes
        if not (ao > ai and bo > bi):
            raise ValueError(
                f"outer semi-axes {self.outer_axes} must exceed inner {self.inner_axes}"
            )
        for d in (self.bone_density, self.tooth_density, self.background_density):
            if not 0.0 <= d <= 255.0:
                raise ValueError(f"densities must lie in [0, 255], got {d}")
        thickness = min(ao - ai, bo - bi)
        if self.tooth_count > 0 and max(self.tooth_radius) > thickness:
            raise ValueError(
                f"tooth radius up to {max(self.tooth_radius)} exceeds annulus "
                f"thickness {thickness}"
            )

    def resolved_center(self):
        _, _, w, d = self.dims
        return self.center if self.center is not None else ((w - 1) / 2.0, (d - 1) / 2.0)


def horseshoe_mask(dims, inner_axes, outer_axes, center) -> np.ndarray:
    """(H, W, D) bool mask of the half-annulus (d >= center_d side)."""
    _, h, w, d = dims
    cw, cd = center
    wg = np.arange(w, dtype=np.float64)[:, None] - cw
    dg = np.arange(d, dtype=np.float64)[None, :] - cd
    ai, bi = inner_axes
    ao, bo = outer_axes
    inside_outer = (wg / ao) ** 2 + (dg / bo) ** 2 <= 1.0
    outside_inner = (wg / ai) ** 2 + (dg / bi) ** 2 >= 1.0
    half = dg >= 0.0
    plane = inside_outer & outside_inner & half
    return np.broadcast_to(plane[None, :, :], (h, w, d))


def make_phantom(spec: PhantomSpec) -> Volume:
    """Deterministic horseshoe phantom; teeth are clipped to the annulus."""
    c, h, w, d = spec.dims
    rng = np.random.default_rng(spec.seed)
    cw, cd = spec.resolved_center()

    shoe = horseshoe_mask(spec.dims, spec.inner_axes, spec.outer_axes, (cw, cd)).copy()
    z0 = int(round(spec.z_band[0] * (h - 1)))
    z1 = int(round(spec.z_band[1] * (h - 1)))
    band = np.zeros(h, dtype=bool)
    band[z0 : z1 + 1] = True
    shoe &= band[:, None, None]

    vox = np.full((h, w, d), spec.background_density, dtype=np.float32)
    vox[shoe] = spec.bone_density

    if spec.tooth_count > 0:
        am = (spec.inner_axes[0] + spec.outer_axes[0]) / 2.0
        bm = (spec.inner_axes[1] + spec.outer_axes[1]) / 2.0
        base = np.linspace(0.0, np.pi, spec.tooth_count, endpoint=True)
        jitter = rng.uniform(-0.5, 0.5, spec.tooth_count) * (np.pi / max(spec.tooth_count, 1))
        angles = np.clip(base + jitter, 0.0, np.pi)
        radii = rng.uniform(spec.tooth_radius[0], spec.tooth_radius[1], spec.tooth_count)
        zc = (z0 + z1) / 2.0 + rng.uniform(-1.0, 1.0, spec.tooth_count)
        hg = np.arange(h, dtype=np.float64)[:, None, None]
        wg = np.arange(w, dtype=np.float64)[None, :, None]
        dg = np.arange(d, dtype=np.float64)[None, None, :]
        for ang, r, z in zip(angles, radii, zc):
            tw = cw + am * np.cos(ang)
            td = cd + bm * np.sin(ang)
            sphere = (hg - z) ** 2 + (wg - tw) ** 2 + (dg - td) ** 2 <= r * r
            vox[sphere & shoe] = spec.tooth_density

    return Volume(vox[None, :, :, :])


def save_volume(vol: Volume, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4I", *vol.dims))
        fh.write(np.ascontiguousarray(vol.voxels, dtype="<f4").tobytes())


def load_volume(path) -> Volume:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 16 or blob[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a volume file (bad magic)")
    dims = struct.unpack_from("<4I", blob, len(MAGIC))
    count = int(np.prod([int(x) for x in dims], dtype=np.int64))
    if count <= 0 or count > _MAX_VOXELS:
        raise ValueError(f"{path}: dim overflow, header claims dims {dims}")
    payload = blob[len(MAGIC) + 16 :]
    if len(payload) != 4 * count:
        raise ValueError(
            f"{path}: truncated payload, expected {4 * count} bytes, got {len(payload)}"
        )
    vox = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return Volume(vox.copy())


def save_mask(mask: np.ndarray, path) -> None:
    """One-byte-per-voxel sidecar for coarse-volume provenance masks."""
    m = np.asarray(mask)
    if m.ndim == 3:
        m = m[None]
    with open(path, "wb") as fh:
        fh.write(MASK_MAGIC)
        fh.write(struct.pack("<4I", *m.shape))
        fh.write(m.astype(np.uint8).tobytes())


def load_mask(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MASK_MAGIC) + 16 or blob[: len(MASK_MAGIC)] != MASK_MAGIC:
        raise ValueError(f"{path}: not a mask file (bad magic)")
    dims = struct.unpack_from("<4I", blob, len(MASK_MAGIC))
    count = int(np.prod([int(x) for x in dims], dtype=np.int64))
    payload = blob[len(MASK_MAGIC) + 16 :]
    if count <= 0 or count > _MAX_VOXELS or len(payload) != count:
        raise ValueError(f"{path}: corrupt mask payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims).astype(bool)


def write_pgm(image: np.ndarray, path) -> None:
    """Binary PGM (P5, maxval 255); values are rounded and clipped."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"PGM export needs a 2-D image, got shape {img.shape}")
    data = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(t) for t in parts[1].split())
    if parts[2] != b"255":
        raise ValueError(f"{path}: unsupported maxval")
    return np.frombuffer(parts[3][: w * h], dtype=np.uint8).reshape(h, w).astype(np.float32)


def export_pgm_stack(vol: Volume, out_dir, prefix="slice") -> list:
    """Write one PGM per axial (H) slice for visual inspection."""
    import os

    paths = []
    for i in range(vol.dims[1]):
        p = os.path.join(out_dir, f"{prefix}{i:04d}.pgm")
        write_pgm(vol.voxels[0, i], p)
        paths.append(p)
    return paths
