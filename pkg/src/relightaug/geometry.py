"""Depth triangulation, mask segmentation and background re-rendering.

Mesh vertices live in the camera frame (x right, y down, z forward), one per
pixel at ``K^-1 [x+0.5, y+0.5, 1] * depth``. Faces wind counter-clockwise as
seen from the camera, i.e. their geometric normal points toward -z.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import distance_transform_edt

from .envmap import EnvironmentMap, sample_radiance
from .errors import DimensionMismatchError, ImageIOError, MalformedFileError, MissingFileError, ValidationError
from .imagery import GBuffer, camera_rays, image_to_normal_frame
from .relight import RenderSettings, relight_frame, shade_points

MIN_FACE_AREA = 1e-12
FEATHER_PX = 2
_BARY_EPS = 1e-9
_T_MIN = 1e-9


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray                  # (V, 3) float64, camera frame
    faces: np.ndarray                     # (F, 3) int64
    vertex_uv: np.ndarray                 # (V, 2) int64 source pixel (x, y)
    vertex_labels: np.ndarray | None = None
    image_shape: tuple[int, int] | None = None   # (H, W) of the source depth map

    def __post_init__(self):
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValidationError("face index out of range")

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_labels(self) -> np.ndarray:
        """Segment id per face, -1 where the three vertices disagree or labels are absent."""
        if self.vertex_labels is None:
            return np.full(len(self.faces), -1, dtype=np.int64)
        lab = self.vertex_labels[self.faces]
        same = (lab[:, 0] == lab[:, 1]) & (lab[:, 1] == lab[:, 2])
        return np.where(same, lab[:, 0], -1)


def _check_K(K) -> np.ndarray:
    K = np.asarray(K, dtype=np.float64)
    if K.shape != (3, 3):
        raise ValidationError("intrinsics: expected a 3x3 matrix")
    if abs(np.linalg.det(K)) < 1e-12:
        raise ValidationError("intrinsics: matrix is singular")
    return K


def face_areas(vertices, faces) -> np.ndarray:
    a, b, c = (vertices[faces[:, i]] for i in range(3))
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def depth_to_mesh(depth, K, discontinuity_ratio: float = 1.1) -> TriMesh:
    """Back-project every pixel and join neighbours into two triangles per quad.

    A triangle is dropped when the ratio of its largest to smallest vertex
    depth exceeds ``discontinuity_ratio``, or when its area is below 1e-12.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValidationError("depth must be a single-channel map")
    if not np.all(np.isfinite(depth)) or np.any(depth <= 0):
        raise ValidationError("depth must be finite and strictly positive")
    if not discontinuity_ratio >= 1.0:
        raise ValidationError("discontinuity_ratio must be >= 1")
    K = _check_K(K)
    h, w = depth.shape
    verts = (camera_rays(K, h, w) * depth[..., None]).reshape(-1, 3)
    ys, xs = np.mgrid[0:h, 0:w]
    uv = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.int64)

    idx = np.arange(h * w).reshape(h, w)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, :-1].ravel()
    d = idx[1:, 1:].ravel()
    # interleave so each quad's pair stays adjacent: (a, c, b), (b, c, d)
    faces = np.stack([np.stack([a, c, b], 1), np.stack([b, c, d], 1)], axis=1).reshape(-1, 3)
    if len(faces):
        zf = depth.ravel()[faces]
        keep = zf.max(axis=1) <= discontinuity_ratio * zf.min(axis=1)
        keep &= face_areas(verts, faces) >= MIN_FACE_AREA
        faces = faces[keep]
    return TriMesh(verts, faces.astype(np.int64), uv, None, (h, w))


def project_mask(mesh: TriMesh, mask) -> TriMesh:
    """Attach per-vertex labels read from the mask at each vertex's source pixel."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValidationError("mask must be a single-channel label image")
    if mesh.image_shape is not None and mask.shape != tuple(mesh.image_shape):
        h, w = mesh.image_shape
        raise DimensionMismatchError(f"mask is {mask.shape[1]}x{mask.shape[0]} but mesh source is {w}x{h}")
    x, y = mesh.vertex_uv[:, 0], mesh.vertex_uv[:, 1]
    if x.max(initial=0) >= mask.shape[1] or y.max(initial=0) >= mask.shape[0]:
        raise DimensionMismatchError("mask is smaller than the mesh source image")
    labels = mask[y, x].astype(np.int64)
    return TriMesh(mesh.vertices, mesh.faces, mesh.vertex_uv, labels, mesh.image_shape)


# ---------------------------------------------------------------------------
# ray casting


def _moller_trumbore(orig, dirs, v0, v1, v2):
    """Elementwise ray/triangle test for paired rows. Returns ``(hit, t, b1, b2)``.

    Written with explicit products so every pair is evaluated with the same
    arithmetic regardless of how pairs are batched.
    """
    e1 = v1 - v0
    e2 = v2 - v0
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    px = dy * e2[:, 2] - dz * e2[:, 1]
    py = dz * e2[:, 0] - dx * e2[:, 2]
    pz = dx * e2[:, 1] - dy * e2[:, 0]
    det = e1[:, 0] * px + e1[:, 1] * py + e1[:, 2] * pz
    ok = np.abs(det) > 1e-300
    inv = np.where(ok, 1.0, 0.0) / np.where(ok, det, 1.0)
    s = orig - v0
    b1 = (s[:, 0] * px + s[:, 1] * py + s[:, 2] * pz) * inv
    qx = s[:, 1] * e1[:, 2] - s[:, 2] * e1[:, 1]
    qy = s[:, 2] * e1[:, 0] - s[:, 0] * e1[:, 2]
    qz = s[:, 0] * e1[:, 1] - s[:, 1] * e1[:, 0]
    b2 = (dx * qx + dy * qy + dz * qz) * inv
    t = (e2[:, 0] * qx + e2[:, 1] * qy + e2[:, 2] * qz) * inv
    hit = ok & (b1 >= -_BARY_EPS) & (b2 >= -_BARY_EPS) & (b1 + b2 <= 1.0 + _BARY_EPS) & (t > _T_MIN)
    return hit, t, b1, b2


@dataclass
class RayHits:
    face: np.ndarray     # (R,) int64, -1 on miss
    t: np.ndarray        # (R,)
    bary: np.ndarray     # (R, 3) weights of the face's three vertices


def _resolve_pairs(n_rays, ray_idx, face_idx, orig, dirs, mesh: TriMesh) -> RayHits:
    face = np.full(n_rays, -1, dtype=np.int64)
    t_out = np.full(n_rays, np.inf)
    bary = np.zeros((n_rays, 3))
    if len(ray_idx) == 0:
        return RayHits(face, t_out, bary)
    tri = mesh.faces[face_idx]
    v = mesh.vertices
    hit, t, b1, b2 = _moller_trumbore(orig[ray_idx], dirs[ray_idx], v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]])
    r, f, t, b1, b2 = ray_idx[hit], face_idx[hit], t[hit], b1[hit], b2[hit]
    if len(r) == 0:
        return RayHits(face, t_out, bary)
    # nearest hit per ray, ties broken by the lower face index
    order = np.lexsort((f, t, r))
    first = np.ones(len(order), dtype=bool)
    first[1:] = r[order][1:] != r[order][:-1]
    sel = order[first]
    face[r[sel]] = f[sel]
    t_out[r[sel]] = t[sel]
    bary[r[sel]] = np.stack([1.0 - b1[sel] - b2[sel], b1[sel], b2[sel]], axis=1)
    return RayHits(face, t_out, bary)


def intersect_brute_force(mesh: TriMesh, orig, dirs, chunk: int = 1 << 20) -> RayHits:
    """Test every ray against every face."""
    orig = np.asarray(orig, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n_rays, n_faces = len(dirs), len(mesh.faces)
    hits = RayHits(np.full(n_rays, -1, dtype=np.int64), np.full(n_rays, np.inf), np.zeros((n_rays, 3)))
    if n_faces == 0 or n_rays == 0:
        return hits
    rays_per = max(1, chunk // n_faces)
    for s in range(0, n_rays, rays_per):
        e = min(s + rays_per, n_rays)
        r = np.repeat(np.arange(s, e), n_faces)
        f = np.tile(np.arange(n_faces), e - s)
        part = _resolve_pairs(n_rays, r, f, orig, dirs, mesh)
        sl = slice(s, e)
        hits.face[sl], hits.t[sl], hits.bary[sl] = part.face[sl], part.t[sl], part.bary[sl]
    return hits


def intersect_grid(mesh: TriMesh, K, pixels, cell: int = 8) -> RayHits:
    """Camera rays through pixel centres ``pixels`` (``(R, 2)`` x, y) against a screen-space bin grid.

    Each face is binned by the padded bounding box of its projection, so a
    ray only meets faces whose image footprint covers its pixel.
    """
    K = _check_K(K)
    pixels = np.asarray(pixels, dtype=np.int64)
    n_rays = len(pixels)
    dirs = camera_rays_at(K, pixels)
    orig = np.zeros_like(dirs)
    if len(mesh.faces) == 0 or n_rays == 0:
        return _resolve_pairs(n_rays, np.zeros(0, np.int64), np.zeros(0, np.int64), orig, dirs, mesh)
    proj = mesh.vertices @ K.T
    pxy = proj[:, :2] / proj[:, 2:3]
    fx = pxy[mesh.faces, 0]
    fy = pxy[mesh.faces, 1]
    # pad by a pixel so rays grazing an edge or vertex are never lost
    x0 = np.floor((fx.min(1) - 1.0) / cell).astype(np.int64)
    x1 = np.floor((fx.max(1) + 1.0) / cell).astype(np.int64)
    y0 = np.floor((fy.min(1) - 1.0) / cell).astype(np.int64)
    y1 = np.floor((fy.max(1) + 1.0) / cell).astype(np.int64)
    rx = (pixels[:, 0] + 0.5) // cell
    ry = (pixels[:, 1] + 0.5) // cell
    gx0, gy0 = int(rx.min()), int(ry.min())
    gw, gh = int(rx.max()) - gx0 + 1, int(ry.max()) - gy0 + 1
    x0, x1 = np.clip(x0 - gx0, 0, gw), np.clip(x1 - gx0, -1, gw - 1)
    y0, y1 = np.clip(y0 - gy0, 0, gh), np.clip(y1 - gy0, -1, gh - 1)
    nx = np.maximum(x1 - x0 + 1, 0)
    ny = np.maximum(y1 - y0 + 1, 0)
    counts = nx * ny
    f_ids = np.repeat(np.arange(len(mesh.faces)), counts)
    k = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    cx = x0[f_ids] + k % np.repeat(np.maximum(nx, 1), counts)
    cy = y0[f_ids] + k // np.repeat(np.maximum(nx, 1), counts)
    face_cell = cy * gw + cx
    order = np.argsort(face_cell, kind="stable")
    face_cell, f_ids = face_cell[order], f_ids[order]
    starts = np.searchsorted(face_cell, np.arange(gw * gh), side="left")
    ends = np.searchsorted(face_cell, np.arange(gw * gh), side="right")
    ray_cell = ((ry - gy0) * gw + (rx - gx0)).astype(np.int64)
    n_per = ends[ray_cell] - starts[ray_cell]
    r_ids = np.repeat(np.arange(n_rays), n_per)
    j = np.arange(n_per.sum()) - np.repeat(np.cumsum(n_per) - n_per, n_per)
    cand = f_ids[np.repeat(starts[ray_cell], n_per) + j]
    return _resolve_pairs(n_rays, r_ids, cand, orig, dirs, mesh)


def camera_rays_at(K, pixels) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float64)
    pix = np.stack([pixels[:, 0] + 0.5, pixels[:, 1] + 0.5, np.ones(len(pixels))], axis=1)
    return pix @ np.linalg.inv(_check_K(K)).T


# ---------------------------------------------------------------------------
# background rendering


def feather_weights(keep_mask, feather: int = FEATHER_PX) -> np.ndarray:
    """Foreground blend weight: 1 on kept pixels, falling linearly to 0 over ``feather`` pixels outside."""
    keep = np.asarray(keep_mask, dtype=bool)
    if keep.all():
        return np.ones(keep.shape)
    if not keep.any():
        return np.zeros(keep.shape)
    dist = distance_transform_edt(~keep)
    return np.clip(1.0 - dist / (feather + 1.0), 0.0, 1.0)


def render_background(mesh: TriMesh, gbuf: GBuffer, keep_mask, new_env: EnvironmentMap,
                      settings: RenderSettings | None = None, threads: int | None = None,
                      foreground=None, accelerated: bool = True) -> np.ndarray:
    """Replace background pixels with the scene mesh re-lit under ``new_env``.

    Background rays take the material and normal of the hit face's vertex with
    the largest barycentric weight; misses see the environment directly.
    ``foreground`` defaults to :func:`relight_frame` under ``new_env``.
    """
    settings = settings or RenderSettings()
    keep = np.asarray(keep_mask)
    if keep.shape != gbuf.shape:
        raise DimensionMismatchError(f"mask is {keep.shape[1]}x{keep.shape[0]} but G-buffer is {gbuf.width}x{gbuf.height}")
    keep = keep.astype(bool)
    if mesh.image_shape is not None and tuple(mesh.image_shape) != gbuf.shape:
        h, w = mesh.image_shape
        raise DimensionMismatchError(f"mesh source is {w}x{h} but G-buffer is {gbuf.width}x{gbuf.height}")
    if len(mesh.vertex_uv) != gbuf.height * gbuf.width:
        raise DimensionMismatchError("mesh vertex count does not match the G-buffer pixel count")

    if foreground is None:
        fg = relight_frame(gbuf, new_env, settings, threads)
    else:
        fg = np.asarray(foreground, dtype=np.float64)
        if fg.shape != gbuf.shape + (3,):
            raise DimensionMismatchError("foreground image does not match the G-buffer")
    if keep.all():
        return fg

    h, w = gbuf.shape
    ys, xs = np.nonzero(~keep)
    pixels = np.stack([xs, ys], axis=1)
    if accelerated:
        hits = intersect_grid(mesh, gbuf.intrinsics, pixels)
    else:
        dirs = camera_rays_at(gbuf.intrinsics, pixels)
        hits = intersect_brute_force(mesh, np.zeros_like(dirs), dirs)

    rays = camera_rays_at(gbuf.intrinsics, pixels)
    rays_n = image_to_normal_frame(rays / np.linalg.norm(rays, axis=1, keepdims=True))
    bg = np.zeros((len(pixels), 3))
    hit = hits.face >= 0
    if np.any(~hit):
        bg[~hit] = sample_radiance(new_env, rays_n[~hit]) * settings.exposure
    if np.any(hit):
        corner = np.argmax(hits.bary[hit], axis=1)
        vid = mesh.faces[hits.face[hit], corner]
        sx, sy = mesh.vertex_uv[vid, 0], mesh.vertex_uv[vid, 1]
        bg[hit] = shade_points(
            gbuf.albedo[sy, sx], gbuf.roughness[sy, sx], gbuf.metallic[sy, sx], gbuf.normal[sy, sx],
            -rays_n[hit], xs[hit], ys[hit], new_env, settings, threads,
        )
    back = fg.copy()
    back[ys, xs] = bg
    alpha = feather_weights(keep)[..., None]
    out = alpha * fg + (1.0 - alpha) * back
    out[keep] = fg[keep]
    return out


# ---------------------------------------------------------------------------
# OBJ


def save_mesh_obj(mesh: TriMesh, path) -> None:
    path = Path(path)
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text("\n".join(lines) + "\n")
        os.replace(tmp, path)
    except OSError as e:
        raise ImageIOError(path, f"cannot write mesh: {e}") from e


def load_mesh_obj(path) -> tuple[np.ndarray, np.ndarray]:
    """Vertices and 0-based faces of an OBJ with plain ``v`` and ``f`` records."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path, "mesh file not found")
    verts, faces = [], []
    for line in path.read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
        except ValueError:
            raise MalformedFileError(path, f"bad record {line!r}") from None
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)
