"""Contour geometry for the LV indices: areas, cavity dimensions, regional
wall thicknesses, and phase labelling from the cavity-area curve.

Polygons are (N, 2) arrays of (x, y) pixel coordinates with pixel centers at
integer positions (x = column, y = row). Angles follow ``atan2(dy, dx)`` in
those coordinates, so increasing angle turns clockwise on screen.
"""
from __future__ import annotations

import numpy as np

from ..errors import AmbiguousPhaseError, DegenerateGeometryError, InvalidContourError

RWT_SEGMENTS = ("IS", "I", "IL", "AL", "A", "AS")
DIM_ANGLES = np.deg2rad([0.0, 60.0, 120.0])


def shoelace(poly) -> float:
    p = np.asarray(poly, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def centroid(poly) -> np.ndarray:
    p = np.asarray(poly, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2.0
    if abs(a) < 1e-12:
        raise DegenerateGeometryError("polygon has zero area; centroid undefined")
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)


def _segment_distance(points, poly):
    """Distance from each point to the closest polygon edge."""
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a
    ap = points[:, None, :] - a[None, :, :]
    denom = np.maximum((ab * ab).sum(axis=1), 1e-300)
    t = np.clip((ap * ab[None]).sum(axis=2) / denom, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.sqrt(((points[:, None, :] - closest) ** 2).sum(axis=2)).min(axis=1)


def points_in_polygon(points, poly, boundary_tol=1e-9) -> np.ndarray:
    """Even-odd test; points within ``boundary_tol`` of an edge count as inside."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    poly = np.asarray(poly, dtype=np.float64)
    x, y = pts[:, 0:1], pts[:, 1:2]
    x1, y1 = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    straddle = (y1 > y) != (y2 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
    inside = (straddle & (x < xcross)).sum(axis=1) % 2 == 1
    out = ~inside
    if out.any():
        inside[out] = _segment_distance(pts[out], poly) <= boundary_tol
    return inside


def ray_hits(poly, origin, angle) -> np.ndarray:
    """Signed parameters t where origin + t*(cos, sin) crosses polygon edges.

    A ray through a vertex touches two edges; such near-duplicate hits are
    merged so it counts once.
    """
    p = np.asarray(poly, dtype=np.float64)
    q = np.roll(p, -1, axis=0)
    d = np.array([np.cos(angle), np.sin(angle)])
    e = q - p
    denom = d[0] * e[:, 1] - d[1] * e[:, 0]
    w = p - np.asarray(origin, dtype=np.float64)
    ok = np.abs(denom) > 1e-14
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[:, 0] * e[:, 1] - w[:, 1] * e[:, 0]) / denom
        u = (w[:, 0] * d[1] - w[:, 1] * d[0]) / denom
    tol = 1e-9
    hit = ok & (u >= -tol) & (u <= 1.0 + tol)
    t = np.sort(t[hit])
    if len(t) > 1:
        t = t[np.concatenate([[True], np.diff(t) > 1e-7 * max(1.0, np.abs(t).max())])]
    return t


def compute_areas(inner, outer, spacing: float) -> tuple[float, float]:
    """Cavity and myocardium areas in mm^2 from the two contours."""
    inner = np.asarray(inner, dtype=np.float64)
    outer = np.asarray(outer, dtype=np.float64)
    a_in = abs(shoelace(inner))
    a_out = abs(shoelace(outer))
    if a_in > a_out * (1 + 1e-12) or not points_in_polygon(inner, outer).all():
        raise InvalidContourError("inner contour is not contained in the outer contour")
    s2 = spacing * spacing
    return a_in * s2, (a_out - a_in) * s2


def landmark_angle(inner, landmarks) -> float:
    """Orientation of the first landmark as seen from the cavity centroid."""
    c = centroid(inner)
    lm = np.asarray(landmarks, dtype=np.float64)[0]
    return float(np.arctan2(lm[1] - c[1], lm[0] - c[0]))


def compute_dimensions(inner, spacing: float, orientation: float = 0.0) -> np.ndarray:
    """Cavity chord lengths (mm) through the centroid at 0/60/120 degrees
    from ``orientation``."""
    inner = np.asarray(inner, dtype=np.float64)
    c = centroid(inner)
    dims = np.empty(3)
    for k, ang in enumerate(DIM_ANGLES + orientation):
        t = ray_hits(inner, c, ang)
        pos, neg = t[t > 0], t[t < 0]
        if len(pos) != 1 or len(neg) != 1:
            raise DegenerateGeometryError(
                f"chord at {np.rad2deg(ang):.1f} deg meets the cavity in {len(t)} points, expected 2")
        dims[k] = (pos[0] - neg[0]) * spacing
    return dims


def compute_rwt(inner, outer, landmarks, spacing: float, rays_per_segment: int = 9) -> np.ndarray:
    """Mean wall thickness (mm) in six 60-degree sectors, ordered
    IS, I, IL, AL, A, AS, starting at the first landmark's angle."""
    if rays_per_segment < 1:
        raise ValueError("rays_per_segment must be positive")
    inner = np.asarray(inner, dtype=np.float64)
    outer = np.asarray(outer, dtype=np.float64)
    c = centroid(inner)
    anchor = landmark_angle(inner, landmarks)
    sector = np.pi / 3
    offsets = (np.arange(rays_per_segment) + 0.5) / rays_per_segment * sector
    angles = ((anchor + np.arange(6) * sector)[:, None] + offsets[None, :]).ravel()
    t_in = _first_exit(inner, c, angles)
    t_out = _first_exit(outer, c, angles)
    for t, which in ((t_in, "inner"), (t_out, "outer")):
        if not np.isfinite(t).all():
            ang = angles[~np.isfinite(t)][0]
            raise DegenerateGeometryError(f"ray at {np.rad2deg(ang):.1f} deg misses the {which} contour")
    return (t_out - t_in).reshape(6, rays_per_segment).mean(axis=1) * spacing


def _first_exit(poly, origin, angles) -> np.ndarray:
    """Nearest positive crossing along each ray (inf where there is none);
    the same arithmetic as :func:`ray_hits`, batched over angles."""
    p = np.asarray(poly, dtype=np.float64)
    e = np.roll(p, -1, axis=0) - p
    w = p - np.asarray(origin, dtype=np.float64)
    d0, d1 = np.cos(angles)[:, None], np.sin(angles)[:, None]
    denom = d0 * e[:, 1] - d1 * e[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[:, 0] * e[:, 1] - w[:, 1] * e[:, 0]) / denom
        u = (w[:, 0] * d1 - w[:, 1] * d0) / denom
    tol = 1e-9
    hit = (np.abs(denom) > 1e-14) & (u >= -tol) & (u <= 1.0 + tol) & (t > 0)
    return np.where(hit, t, np.inf).min(axis=1)


def label_phases(cavity_series) -> np.ndarray:
    """Systole (1) from just after the max-cavity frame through the
    min-cavity frame, cyclically; Diastole (0) elsewhere."""
    s = np.asarray(cavity_series, dtype=np.float64)
    if s.ndim != 1 or len(s) < 2:
        raise ValueError("label_phases needs a 1-D series of at least 2 frames")
    if np.all(s == s[0]):
        raise AmbiguousPhaseError("cavity series is constant; ED/ES frames undefined")
    n = len(s)
    ed = int(np.argmax(s))
    es = int(np.argmin(s))
    phase = np.zeros(n, dtype=np.int64)
    f = (ed + 1) % n
    while True:
        phase[f] = 1
        if f == es:
            break
        f = (f + 1) % n
    return phase
