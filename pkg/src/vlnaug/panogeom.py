"""Equirectangular panorama geometry.

Pinhole projection-inverse and rotation matrices, perspective view
extraction, the 36-view discretization grid, and ground-truth view
indexing from graph geometry.

Conventions: the world frame has y up, heading 0 along +z, heading 90
along +x. A panorama column maps to longitude via u = (lambda/2pi + 0.5)*W
(so heading 0 sits at the center column) and the row to latitude via
v = (0.5 - beta/pi)*H.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import remap_bilinear
from .corpus import ConnectivityGraph, Panorama, ViewSet
from .errors import ValidationError

VIEW_HEADINGS_DEG = tuple(float(h) for h in range(0, 360, 30))
VIEW_ELEVATIONS_DEG = (-30.0, 0.0, 30.0)
NUM_VIEWS = 36

DEFAULT_VIEW_FOV_DEG = 60.0
DEFAULT_VIEW_SIZE = 224


@dataclass(frozen=True)
class CameraParams:
    fov_deg: float
    heading_deg: float
    elevation_deg: float
    out_width: int
    out_height: int

    def __post_init__(self) -> None:
        if not 0.0 < self.fov_deg < 180.0:
            raise ValidationError(f"fov_deg {self.fov_deg} outside (0, 180)")
        if self.out_width <= 0 or self.out_height <= 0:
            raise ValidationError("output dimensions must be positive")


@dataclass(frozen=True)
class ProjectionMatrices:
    j_inv: np.ndarray
    r: np.ndarray

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.j_inv)):
            raise ValidationError("j_inv contains non-finite entries")
        err = np.abs(self.r.T @ self.r - np.eye(3)).max()
        if err > 1e-9:
            raise ValidationError(f"rotation not orthonormal (max residual {err:.2e})")
        if abs(np.linalg.det(self.r) - 1.0) > 1e-9:
            raise ValidationError("rotation determinant differs from 1")


def projection_inverse(params: CameraParams) -> np.ndarray:
    """Inverse pinhole intrinsic K^-1 with f = (out_width/2)/tan(fov/2)
    and the principal point at the image center."""
    f = (params.out_width / 2.0) / math.tan(math.radians(params.fov_deg) / 2.0)
    cx = params.out_width / 2.0
    cy = params.out_height / 2.0
    k = np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])
    return np.linalg.inv(k)


def rotation_matrix(heading_deg: float, elevation_deg: float) -> np.ndarray:
    """Rotation taking camera rays into the world frame.

    The camera first tilts by the elevation about its x axis, then pans by
    the heading about the world vertical: R = R_y(heading) @ R_x(elevation).
    Panning last keeps heading changes equivalent to panorama column
    shifts. The tilt's sense is chosen so a positive elevation points the
    view toward positive latitude (upper panorama rows).
    """
    th = math.radians(heading_deg % 360.0)
    ph = math.radians(elevation_deg)
    r_y = np.array(
        [
            [math.cos(th), 0.0, math.sin(th)],
            [0.0, 1.0, 0.0],
            [-math.sin(th), 0.0, math.cos(th)],
        ]
    )
    r_x = np.array(
        [
            [1.0, 0.0, 0.0],
            [0.0, math.cos(ph), math.sin(ph)],
            [0.0, -math.sin(ph), math.cos(ph)],
        ]
    )
    return r_y @ r_x


def projection_matrices(params: CameraParams) -> ProjectionMatrices:
    return ProjectionMatrices(
        j_inv=projection_inverse(params),
        r=rotation_matrix(params.heading_deg, params.elevation_deg),
    )


def _uv_maps(pano_w: int, pano_h: int, params: CameraParams) -> tuple[np.ndarray, np.ndarray]:
    mats = projection_matrices(params)
    h, w = params.out_height, params.out_width
    jj, ii = np.meshgrid(
        np.arange(w, dtype=np.float64) + 0.5,
        np.arange(h, dtype=np.float64) + 0.5,
    )
    pix = np.stack([jj, ii, np.ones_like(jj)], axis=-1)
    rays = pix @ (mats.r @ mats.j_inv).T
    rays /= np.linalg.norm(rays, axis=-1, keepdims=True)
    lon = np.arctan2(rays[..., 0], rays[..., 2])
    lat = np.arcsin(np.clip(rays[..., 1], -1.0, 1.0))
    u = (lon / (2.0 * math.pi) + 0.5) * pano_w
    v = (0.5 - lat / math.pi) * pano_h
    return u, v


def equirec_to_perspective(pano: Panorama, params: CameraParams) -> np.ndarray:
    """Extract one perspective view from an equirectangular panorama.

    Each output pixel casts the ray R @ J_inv @ (j+0.5, i+0.5, 1)^T and
    samples the panorama bilinearly at the ray's longitude/latitude, with
    horizontal wrap-around and vertical clamp.
    """
    u, v = _uv_maps(pano.width, pano.height, params)
    return remap_bilinear(pano.pixels, u, v)


def discretize_panorama(
    pano: Panorama,
    fov_deg: float = DEFAULT_VIEW_FOV_DEG,
    out_size: int = DEFAULT_VIEW_SIZE,
) -> ViewSet:
    """Cut a panorama into the 36-view grid: headings 0,30,..330 crossed
    with elevations -30,0,+30, ordered elevation-major then heading
    (flat index = elevation_index*12 + heading_index)."""
    views = np.empty((NUM_VIEWS, out_size, out_size, 3), dtype=np.uint8)
    for ei, elev in enumerate(VIEW_ELEVATIONS_DEG):
        for hi, head in enumerate(VIEW_HEADINGS_DEG):
            params = CameraParams(
                fov_deg=fov_deg,
                heading_deg=head,
                elevation_deg=elev,
                out_width=out_size,
                out_height=out_size,
            )
            views[ei * 12 + hi] = equirec_to_perspective(pano, params)
    return ViewSet(views=views)


def view_params(
    heading_index: int,
    elevation_index: int,
    fov_deg: float = DEFAULT_VIEW_FOV_DEG,
    out_size: int = DEFAULT_VIEW_SIZE,
) -> CameraParams:
    """Camera parameters of one grid cell of the 36-view discretization."""
    return CameraParams(
        fov_deg=fov_deg,
        heading_deg=VIEW_HEADINGS_DEG[heading_index],
        elevation_deg=VIEW_ELEVATIONS_DEG[elevation_index],
        out_width=out_size,
        out_height=out_size,
    )


def bearing_elevation_deg(
    graph: ConnectivityGraph, current: str, next_vp: str
) -> tuple[float, float]:
    """World-frame bearing (from +z toward +x) and elevation of next_vp
    as seen from current."""
    cx, cy, cz = graph.nodes[current]
    nx_, ny, nz = graph.nodes[next_vp]
    dx, dy, dz = nx_ - cx, ny - cy, nz - cz
    bearing = math.degrees(math.atan2(dx, dz)) % 360.0
    horiz = math.hypot(dx, dz)
    elevation = math.degrees(math.atan2(dy, horiz))
    return bearing, elevation


def gt_view_index(
    graph: ConnectivityGraph,
    current: str,
    next_vp: str,
    pano_heading_deg: float = 0.0,
) -> int:
    """Grid index (0..35) of the view pointing at the next viewpoint.

    Heading snaps to the nearest 30-degree cell with half-way ties going
    to the larger heading angle; elevation snaps to {-30, 0, +30} with
    ties rounding away from zero.
    """
    if current == next_vp or not graph.adjacent(current, next_vp):
        raise ValidationError(
            f"scan {graph.scan_id}: {current!r} -> {next_vp!r} is not a graph edge"
        )
    bearing, elevation = bearing_elevation_deg(graph, current, next_vp)
    rel = (bearing - pano_heading_deg) % 360.0
    heading_index = int(math.floor(rel / 30.0 + 0.5)) % 12
    if elevation >= 15.0:
        elevation_index = 2
    elif elevation <= -15.0:
        elevation_index = 0
    else:
        elevation_index = 1
    return elevation_index * 12 + heading_index
