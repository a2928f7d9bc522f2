"""Image-method ray tracer for 2D indoor scenes with vertical walls.

Rays are traced in plan view; the BS/UE height difference is folded into
each path afterwards by replacing the in-plane length L with
sqrt(L^2 + dz^2). Specular reflections up to order 2 are found by
mirroring the BS across wall lines and intersecting the unfolded segment
with the finite wall segments, then checking every leg for occlusion.
Reflection losses use the Fresnel TE coefficient of the wall material;
optional single knife-edge diffraction at interior wall endpoints uses
the standard ITU-style loss curve.

All outputs are deterministic functions of the scene and UE position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import Scene

C_LIGHT = 299792458.0
EPS0 = 8.8541878128e-12

_BLOCK_TOL = 1e-9   # meters of clearance below which a crossing is ignored


@dataclass(frozen=True)
class TraceConfig:
    """Tracer controls; gains need the carrier frequency for wavelength."""

    center_freq: float = 5.8e9
    max_reflections: int = 2
    max_diffractions: int = 1
    diffraction: bool = False
    min_gain_db: float = 60.0      # keep paths within this range of the strongest
    outer_walls: bool = True       # drop to trace pure free space in tests

    def validate(self) -> None:
        if not 0 <= self.max_reflections <= 2:
            raise ValueError("max_reflections must be 0..2")
        if not 0 <= self.max_diffractions <= 1:
            raise ValueError("max_diffractions must be 0..1")
        if self.center_freq <= 0:
            raise ValueError("center_freq must be positive")


@dataclass(frozen=True)
class PathComponent:
    """One multipath component at the BS array reference point."""

    delay: float
    complex_gain: complex
    aod_azimuth: float
    n_reflections: int
    n_diffractions: int
    is_los: bool

    def validate(self) -> None:
        if not self.delay > 0:
            raise ValueError("path delay must be positive")
        if not np.isfinite(self.complex_gain):
            raise ValueError("path gain must be finite")
        if self.n_reflections > 2 or self.n_diffractions > 1:
            raise ValueError("interaction orders out of range")
        if not self.is_los and self.n_reflections + self.n_diffractions < 1:
            raise ValueError("non-LOS path needs at least one interaction")


class _Walls:
    """Wall segments of a scene as flat arrays (internal first, then outer)."""

    def __init__(self, scene: Scene, include_outer: bool):
        segs = [(w.p0, w.p1, w.rel_permittivity, w.conductivity) for w in scene.walls]
        self.n_internal = len(segs)
        if include_outer:
            wd, dp = scene.width, scene.depth
            er, sg = scene.outer_rel_permittivity, scene.outer_conductivity
            segs += [
                ((0.0, 0.0), (wd, 0.0), er, sg),
                ((wd, 0.0), (wd, dp), er, sg),
                ((wd, dp), (0.0, dp), er, sg),
                ((0.0, dp), (0.0, 0.0), er, sg),
            ]
        self.count = len(segs)
        self.a = np.array([s[0] for s in segs], dtype=np.float64).reshape(self.count, 2)
        self.b = np.array([s[1] for s in segs], dtype=np.float64).reshape(self.count, 2)
        self.eps_r = np.array([s[2] for s in segs], dtype=np.float64)
        self.sigma = np.array([s[3] for s in segs], dtype=np.float64)
        edge = self.b - self.a
        self.length = np.linalg.norm(edge, axis=1) if self.count else np.zeros(0)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.tangent = edge / self.length[:, None] if self.count else edge
        self.normal = np.stack([-self.tangent[:, 1], self.tangent[:, 0]], axis=1) \
            if self.count else np.zeros((0, 2))

    def blocked(self, p: np.ndarray, q: np.ndarray) -> bool:
        """True when the open segment p-q properly crosses any wall.

        Touches within _BLOCK_TOL of a wall line or of the segment line do
        not count, so legs starting/ending on their own reflection points
        pass automatically.
        """
        if self.count == 0:
            return False
        d = q - p
        dlen = np.hypot(d[0], d[1])
        if dlen <= _BLOCK_TOL:
            return False
        rp = p - self.a
        rq = q - self.a
        e = self.b - self.a
        s1 = (e[:, 0] * rp[:, 1] - e[:, 1] * rp[:, 0]) / self.length
        s2 = (e[:, 0] * rq[:, 1] - e[:, 1] * rq[:, 0]) / self.length
        ap = self.a - p
        bp = self.b - p
        u1 = (d[0] * ap[:, 1] - d[1] * ap[:, 0]) / dlen
        u2 = (d[0] * bp[:, 1] - d[1] * bp[:, 0]) / dlen
        wall_cut = (s1 * s2 < 0) & (np.abs(s1) > _BLOCK_TOL) & (np.abs(s2) > _BLOCK_TOL)
        leg_cut = (u1 * u2 < 0) & (np.abs(u1) > _BLOCK_TOL) & (np.abs(u2) > _BLOCK_TOL)
        return bool(np.any(wall_cut & leg_cut))

    def mirror(self, p: np.ndarray, i: int) -> np.ndarray:
        n = self.normal[i]
        return p - 2.0 * np.dot(p - self.a[i], n) * n

    def segment_hit(self, p: np.ndarray, q: np.ndarray, i: int):
        """Intersection of segment p-q with wall i, or None.

        Requires the crossing to be strictly interior to p-q and within
        the wall's extent (endpoints included).
        """
        n = self.normal[i]
        d = q - p
        denom = float(np.dot(d, n))
        if abs(denom) < 1e-15:
            return None
        t = float(np.dot(self.a[i] - p, n)) / denom
        if not 1e-12 < t < 1.0 - 1e-12:
            return None
        pt = p + t * d
        u = float(np.dot(pt - self.a[i], self.tangent[i])) / self.length[i]
        if not -1e-12 <= u <= 1.0 + 1e-12:
            return None
        return pt


def fresnel_te(cos_incidence: float, eps_complex: complex) -> complex:
    """TE (perpendicular) reflection coefficient against a dielectric."""
    cos_i = min(max(cos_incidence, 0.0), 1.0)
    sin2 = 1.0 - cos_i * cos_i
    root = np.sqrt(eps_complex - sin2)
    return complex((cos_i - root) / (cos_i + root))


def knife_edge_coeff(deflection: float, d1: float, d2: float, lam: float) -> complex:
    """Single knife-edge diffraction coefficient (amplitude + pi/4 lag).

    Uses the classical loss approximation J(v) = 6.9 + 20 log10(
    sqrt((v-0.1)^2 + 1) + v - 0.1) dB with v from the small-angle
    diffraction parameter.
    """
    v = deflection * np.sqrt(2.0 * d1 * d2 / (lam * (d1 + d2)))
    j_db = 6.9 + 20.0 * np.log10(np.sqrt((v - 0.1) ** 2 + 1.0) + v - 0.1)
    return complex(10.0 ** (-j_db / 20.0) * np.exp(-1j * np.pi / 4.0))


def _path_from_legs(points, n_refl, n_diff, is_los, dz, lam, coeff):
    """Fold heights into the in-plane polyline and build the component."""
    legs = [points[k + 1] - points[k] for k in range(len(points) - 1)]
    l2d = sum(float(np.hypot(v[0], v[1])) for v in legs)
    d3 = float(np.hypot(l2d, dz))
    delay = d3 / C_LIGHT
    amp = lam / (4.0 * np.pi * d3)
    gain = amp * coeff * np.exp(-2j * np.pi * d3 / lam)
    first = legs[0] / np.hypot(legs[0][0], legs[0][1])
    aod = float(np.arcsin(np.clip(first[0], -1.0, 1.0)))
    return PathComponent(delay=delay, complex_gain=complex(gain), aod_azimuth=aod,
                         n_reflections=n_refl, n_diffractions=n_diff, is_los=is_los), points


def trace_paths(scene: Scene, ue, config: TraceConfig,
                return_polylines: bool = False):
    """All multipath components between the scene's BS and a UE position.

    Returns components sorted by delay. With ``return_polylines`` the
    in-plane vertex list of every path is returned alongside (used by the
    occlusion property checks).
    """
    config.validate()
    ue = tuple(ue)
    ue_z = ue[2] if len(ue) == 3 else scene.ue_height
    if not scene.contains_ue(ue[0], ue[1]):
        raise ValueError(f"UE position {ue[:2]} outside the scene's UE region")

    walls = _Walls(scene, config.outer_walls)
    bs = np.array(scene.bs_position[:2])
    ue2 = np.array(ue[:2], dtype=np.float64)
    dz = scene.bs_position[2] - ue_z
    lam = C_LIGHT / config.center_freq

    found: list[tuple[PathComponent, list]] = []

    if not walls.blocked(bs, ue2):
        found.append(_path_from_legs([bs, ue2], 0, 0, True, dz, lam, 1.0 + 0j))

    eps_c = walls.eps_r - 1j * walls.sigma / (2.0 * np.pi * config.center_freq * EPS0)

    def leg_cos(v, wall_idx):
        vn = v / np.hypot(v[0], v[1])
        return abs(float(np.dot(vn, walls.normal[wall_idx])))

    if config.max_reflections >= 1:
        images1 = [walls.mirror(bs, i) for i in range(walls.count)]
        for i in range(walls.count):
            pt = walls.segment_hit(images1[i], ue2, i)
            if pt is None:
                continue
            if walls.blocked(bs, pt) or walls.blocked(pt, ue2):
                continue
            coeff = fresnel_te(leg_cos(pt - bs, i), eps_c[i])
            found.append(_path_from_legs([bs, pt, ue2], 1, 0, False, dz, lam, coeff))

        if config.max_reflections >= 2:
            for i in range(walls.count):
                for j in range(walls.count):
                    if i == j:
                        continue
                    img2 = walls.mirror(images1[i], j)
                    p2 = walls.segment_hit(img2, ue2, j)
                    if p2 is None:
                        continue
                    p1 = walls.segment_hit(images1[i], p2, i)
                    if p1 is None:
                        continue
                    if walls.blocked(bs, p1) or walls.blocked(p1, p2) or walls.blocked(p2, ue2):
                        continue
                    coeff = fresnel_te(leg_cos(p1 - bs, i), eps_c[i]) \
                        * fresnel_te(leg_cos(p2 - p1, j), eps_c[j])
                    found.append(_path_from_legs([bs, p1, p2, ue2], 2, 0, False, dz, lam, coeff))

    if config.diffraction and config.max_diffractions >= 1:
        for k in range(walls.n_internal):
            for tip in (walls.a[k], walls.b[k]):
                if not (0.0 < tip[0] < scene.width and 0.0 < tip[1] < scene.depth):
                    continue  # anchored ends form T-junctions, not edges
                if walls.blocked(bs, tip) or walls.blocked(tip, ue2):
                    continue
                v_in = tip - bs
                v_out = ue2 - tip
                d1 = float(np.hypot(v_in[0], v_in[1]))
                d2 = float(np.hypot(v_out[0], v_out[1]))
                if d1 < 1e-9 or d2 < 1e-9:
                    continue
                cosd = float(np.dot(v_in, v_out)) / (d1 * d2)
                deflection = float(np.arccos(np.clip(cosd, -1.0, 1.0)))
                if deflection < 1e-6:
                    continue  # straight-through, no edge interaction
                coeff = knife_edge_coeff(deflection, d1, d2, lam)
                found.append(_path_from_legs([bs, tip, ue2], 0, 1, False, dz, lam, coeff))

    if not found:
        return ([], []) if return_polylines else []

    strongest = max(abs(pc.complex_gain) for pc, _ in found)
    floor = strongest * 10.0 ** (-config.min_gain_db / 20.0)
    kept = [(pc, pts) for pc, pts in found if abs(pc.complex_gain) >= floor]
    kept.sort(key=lambda item: (item[0].delay, item[0].n_reflections,
                                item[0].n_diffractions, item[0].aod_azimuth))
    for pc, _ in kept:
        pc.validate()
    if return_polylines:
        return [pc for pc, _ in kept], [pts for _, pts in kept]
    return [pc for pc, _ in kept]


def los_visible(scene: Scene, ue_xy) -> bool:
    """LOS labeler: True when no internal wall cuts the BS-UE segment."""
    walls = _Walls(scene, include_outer=False)
    bs = np.array(scene.bs_position[:2])
    return not walls.blocked(bs, np.array(ue_xy, dtype=np.float64))
