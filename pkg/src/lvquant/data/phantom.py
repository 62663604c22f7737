"""Synthetic beating-LV phantoms with exactly known indices.

A phantom is an elliptical annulus: the cavity ellipse has a mean radius that
moves between its end-diastolic and end-systolic values along a cosine
schedule, and the outer contour is the same ellipse scaled out by the current
wall thickness. The myocardium renders bright, cavity and background dark.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..errors import GeometryError
from .geometry import (
    compute_areas,
    compute_dimensions,
    compute_rwt,
    label_phases,
    landmark_angle,
)

CANVAS = 80
MARGIN = 4
N_VERTICES = 360
SEPTAL_ANGLE = np.pi
SUPERSAMPLE = 4

BACKGROUND, CAVITY, MYOCARDIUM = 0.15, 0.35, 1.0


@dataclass(frozen=True)
class PhantomParams:
    center: tuple[float, float] = (39.5, 39.5)
    inner_radius_ed: float = 22.0
    inner_radius_es: float = 14.0
    wall_thickness_ed: float = 6.5
    wall_thickness_es: float = 11.5
    ed_frame_index: int = 0
    es_frame_index: int = 8
    eccentricity: float = 0.0
    rotation: float = 0.0
    noise_sigma: float = 0.05
    texture_seed: int = 0
    pixel_spacing: float = 1.5625
    frames_per_cycle: int = 20

    def validate(self, canvas: int = CANVAS) -> None:
        F = self.frames_per_cycle
        if F < 2:
            raise GeometryError(f"frames_per_cycle must be >= 2, got {F}")
        for name in ("inner_radius_ed", "inner_radius_es", "wall_thickness_ed", "wall_thickness_es",
                     "pixel_spacing"):
            if not getattr(self, name) > 0:
                raise GeometryError(f"{name} must be strictly positive, got {getattr(self, name)}")
        if not self.inner_radius_es < self.inner_radius_ed:
            raise GeometryError("inner_radius_es must be smaller than inner_radius_ed")
        if not self.wall_thickness_es > self.wall_thickness_ed:
            raise GeometryError("wall_thickness_es must exceed wall_thickness_ed")
        for name in ("ed_frame_index", "es_frame_index"):
            if not 0 <= getattr(self, name) < F:
                raise GeometryError(f"{name} must lie in [0, {F})")
        if self.ed_frame_index == self.es_frame_index:
            raise GeometryError("ed_frame_index and es_frame_index must differ")
        if not 0.0 <= self.eccentricity <= 0.3:
            raise GeometryError(f"eccentricity must lie in [0, 0.3], got {self.eccentricity}")
        # myocardial area pi*((r+w)^2 - r^2) must grow monotonically through systole;
        # the margin is tightest at end systole
        dr = self.inner_radius_ed - self.inner_radius_es
        dw = self.wall_thickness_es - self.wall_thickness_ed
        if not dw * (self.inner_radius_es + self.wall_thickness_es) > dr * self.wall_thickness_es:
            raise GeometryError("wall thickening too weak: myocardial area would shrink during systole")
        reach = self.max_outer_extent_px()
        cx, cy = self.center
        lo, hi = MARGIN, canvas - 1 - MARGIN
        if cx - reach < lo or cx + reach > hi or cy - reach < lo or cy + reach > hi:
            raise GeometryError(
                f"phantom extends to x in [{cx - reach:.1f}, {cx + reach:.1f}], y in [{cy - reach:.1f}, "
                f"{cy + reach:.1f}] px; allowed [{lo}, {hi}] on a {canvas}x{canvas} canvas")

    def axis_scale(self) -> tuple[float, float]:
        # area-preserving: a*b == r^2, and b/a == sqrt(1 - e^2)
        q = (1.0 - self.eccentricity ** 2) ** 0.25
        return 1.0 / q, q

    def max_outer_extent_px(self) -> float:
        s = self.schedule()
        r = self.inner_radius_ed + s * (self.inner_radius_es - self.inner_radius_ed)
        w = self.wall_thickness_ed + s * (self.wall_thickness_es - self.wall_thickness_ed)
        return float(np.max(r + w)) * self.axis_scale()[0] / self.pixel_spacing

    def schedule(self) -> np.ndarray:
        """Fraction of the ED->ES excursion at each frame (0 at ED, 1 at ES)."""
        F = self.frames_per_cycle
        ed, es = self.ed_frame_index, self.es_frame_index
        n_sys = (es - ed) % F
        n_dia = F - n_sys
        s = np.empty(F)
        for k in range(F):
            f = (ed + k) % F
            if k <= n_sys:
                s[f] = 0.5 * (1.0 - np.cos(np.pi * k / n_sys))
            else:
                s[f] = 0.5 * (1.0 + np.cos(np.pi * (k - n_sys) / n_dia))
        return s

    def radii_mm(self) -> tuple[np.ndarray, np.ndarray]:
        s = self.schedule()
        r = self.inner_radius_ed + s * (self.inner_radius_es - self.inner_radius_ed)
        w = self.wall_thickness_ed + s * (self.wall_thickness_es - self.wall_thickness_ed)
        return r, w


@dataclass
class IndexLabels:
    cavity_area: float
    myo_area: float
    dims: tuple[float, float, float]
    rwt: tuple[float, float, float, float, float, float]
    phase: int

    def as_row(self) -> np.ndarray:
        return np.array([self.cavity_area, self.myo_area, *self.dims, *self.rwt, self.phase], dtype=np.float64)

    @classmethod
    def from_row(cls, row) -> "IndexLabels":
        row = [float(v) for v in row]
        return cls(row[0], row[1], tuple(row[2:5]), tuple(row[5:11]), int(round(row[11])))


@dataclass
class CardiacSequence:
    subject_id: str
    frames: np.ndarray  # (F, H, W) float32
    landmarks: np.ndarray  # (2, 2) pixel (x, y)
    pixel_spacing: float
    labels: list[IndexLabels]
    contours: list[tuple[np.ndarray, np.ndarray]] | None = None
    roi_center: tuple[float, float] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.frames) != len(self.labels):
            raise ValueError(f"{len(self.frames)} frames but {len(self.labels)} label rows")
        if not self.pixel_spacing > 0:
            raise ValueError("pixel_spacing must be positive")

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def label_matrix(self) -> np.ndarray:
        """(F, 12) array: cavity, myo, dim1-3, rwt IS..AS, phase."""
        return np.stack([lab.as_row() for lab in self.labels])


def ellipse_polygon(center, mean_radius_px, axis_scale, rotation, n=N_VERTICES) -> np.ndarray:
    t = 2 * np.pi * np.arange(n) / n
    a, b = mean_radius_px * axis_scale[0], mean_radius_px * axis_scale[1]
    x, y = a * np.cos(t), b * np.sin(t)
    c, s = np.cos(rotation), np.sin(rotation)
    return np.stack([center[0] + c * x - s * y, center[1] + s * x + c * y], axis=1)


def ellipse_radius(angle, mean_radius, axis_scale, rotation):
    """Distance from the center to the ellipse along ``angle``."""
    a, b = mean_radius * axis_scale[0], mean_radius * axis_scale[1]
    u = np.asarray(angle) - rotation
    return 1.0 / np.sqrt((np.cos(u) / a) ** 2 + (np.sin(u) / b) ** 2)


def _texture(seed, shape):
    rng = np.random.default_rng(seed)
    field_ = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=6.0, mode="wrap")
    return 0.05 * field_ / (field_.std() + 1e-12)


def _render(params: PhantomParams, r_px, w_px, canvas):
    """Anti-aliased annulus: tissue coverage fractions per pixel."""
    k = SUPERSAMPLE
    sub = (np.arange(k) + 0.5) / k - 0.5
    yy = (np.arange(canvas)[:, None] + sub[None, :]).reshape(-1)
    xs, ys = np.meshgrid(yy, yy)
    dx, dy = xs - params.center[0], ys - params.center[1]
    c, s = np.cos(params.rotation), np.sin(params.rotation)
    u, v = c * dx + s * dy, -s * dx + c * dy
    sa, sb = params.axis_scale()
    rho = np.sqrt((u / sa) ** 2 + (v / sb) ** 2)  # equals the mean radius on the contour
    cavity = (rho < r_px).reshape(canvas, k, canvas, k).mean(axis=(1, 3))
    inside_outer = (rho < r_px + w_px).reshape(canvas, k, canvas, k).mean(axis=(1, 3))
    return cavity, inside_outer - cavity


def generate_phantom_sequence(params: PhantomParams, seed: int = 0, subject_id: str = "phantom",
                              canvas: int = CANVAS) -> CardiacSequence:
    """Render one cardiac cycle and attach contours, landmarks and labels."""
    params.validate(canvas)
    r_mm, w_mm = params.radii_mm()
    sp = params.pixel_spacing
    scale = params.axis_scale()
    background = BACKGROUND + _texture(params.texture_seed, (canvas, canvas))
    rng = np.random.default_rng(seed)

    ed = params.ed_frame_index
    anchor = SEPTAL_ANGLE + params.rotation
    lm_angles = np.array([anchor, anchor + np.pi / 3])
    lm_r = ellipse_radius(lm_angles, (r_mm[ed] + w_mm[ed]) / sp, scale, params.rotation)
    landmarks = np.stack([params.center[0] + lm_r * np.cos(lm_angles),
                          params.center[1] + lm_r * np.sin(lm_angles)], axis=1)

    frames, contours, rows = [], [], []
    for f in range(params.frames_per_cycle):
        rp, wp = r_mm[f] / sp, w_mm[f] / sp
        cav, myo = _render(params, rp, wp, canvas)
        img = background * (1.0 - cav - myo) + CAVITY * cav + MYOCARDIUM * myo
        if params.noise_sigma > 0:
            img = img + rng.normal(0.0, params.noise_sigma, img.shape)
        frames.append(img)
        inner = ellipse_polygon(params.center, rp, scale, params.rotation)
        outer = ellipse_polygon(params.center, rp + wp, scale, params.rotation)
        contours.append((inner, outer))
        cavity_area, myo_area = compute_areas(inner, outer, sp)
        orient = landmark_angle(inner, landmarks)
        dims = compute_dimensions(inner, sp, orient)
        rwt = compute_rwt(inner, outer, landmarks, sp)
        rows.append([cavity_area, myo_area, *dims, *rwt])

    phases = label_phases([r[0] for r in rows])
    labels = [IndexLabels(r[0], r[1], tuple(r[2:5]), tuple(r[5:11]), int(p)) for r, p in zip(rows, phases)]
    return CardiacSequence(
        subject_id=subject_id,
        frames=np.asarray(frames, dtype=np.float32),
        landmarks=landmarks,
        pixel_spacing=sp,
        labels=labels,
        contours=contours,
        roi_center=tuple(float(c) for c in params.center),
        meta={"seed": seed},
    )


def sample_phantom_params(rng: np.random.Generator, frames_per_cycle: int = 20,
                          noise_sigma: float = 0.05, max_tries: int = 1000) -> PhantomParams:
    """Draw a valid random phantom (rejection sampling over plausible ranges, mm)."""
    for _ in range(max_tries):
        r_ed = rng.uniform(19.0, 27.0)
        r_es = r_ed * rng.uniform(0.55, 0.75)
        w_ed = rng.uniform(5.0, 8.0)
        w_es = w_ed * rng.uniform(1.5, 2.0)
        ed = int(rng.integers(frames_per_cycle))
        n_sys = int(rng.integers(max(1, frames_per_cycle * 3 // 10), max(2, frames_per_cycle // 2) + 1))
        p = PhantomParams(
            center=(39.5 + rng.uniform(-3, 3), 39.5 + rng.uniform(-3, 3)),
            inner_radius_ed=r_ed,
            inner_radius_es=r_es,
            wall_thickness_ed=w_ed,
            wall_thickness_es=w_es,
            ed_frame_index=ed,
            es_frame_index=(ed + n_sys) % frames_per_cycle,
            eccentricity=rng.uniform(0.0, 0.3),
            rotation=rng.uniform(-np.pi / 12, np.pi / 12),
            noise_sigma=noise_sigma,
            texture_seed=int(rng.integers(2**31)),
            pixel_spacing=rng.uniform(1.3, 1.8),
            frames_per_cycle=frames_per_cycle,
        )
        try:
            p.validate()
        except GeometryError:
            continue
        return p
    raise GeometryError("could not sample a valid phantom within the retry budget")


def generate_dataset(count: int, seed: int = 0, frames_per_cycle: int = 20,
                     noise_sigma: float = 0.05) -> list[CardiacSequence]:
    rng = np.random.default_rng(seed)
    seqs = []
    for i in range(count):
        p = sample_phantom_params(rng, frames_per_cycle, noise_sigma)
        seqs.append(generate_phantom_sequence(p, seed=int(rng.integers(2**31)), subject_id=f"s{i:03d}"))
    return seqs
