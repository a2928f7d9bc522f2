"""Randomized indoor scenes and their discrete scene-graph rasters.

A scene is a rectangular room with 1-3 axis-aligned internal wall
segments snapped to a 0.5 m lattice, a fixed base-station position and a
UE region. The UE region is the connected free-space component that does
not contain the BS when the walls cut one off, otherwise the whole free
space. Free-space connectivity is computed exactly on the lattice cell
graph, where a wall covering a shared cell edge removes that adjacency.

The raster ("scene graph") is a G x G integer grid: 1 marks cells
touched by an internal wall, 2 marks cells on the UE-region boundary,
walls win on overlap, everything else is 0.
"""

from __future__ import annotations

import json
import struct
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

WOOD_REL_PERMITTIVITY = 1.99
WOOD_CONDUCTIVITY = 0.012  # S/m

SCENEGRAPH_MAGIC = b"ACNSG"
SCENEGRAPH_VERSION = 1

_EPS = 1e-9


class SceneGenerationError(RuntimeError):
    """Rejection sampling failed to produce a valid scene."""

    def __init__(self, seed: int, attempts: int):
        super().__init__(f"scene generation failed for seed {seed} after {attempts} attempts")
        self.seed = seed
        self.attempts = attempts


@dataclass(frozen=True)
class WallSegment:
    """Axis-aligned vertical wall panel, full room height."""

    p0: tuple[float, float]
    p1: tuple[float, float]
    material: str = "wood"
    rel_permittivity: float = WOOD_REL_PERMITTIVITY
    conductivity: float = WOOD_CONDUCTIVITY

    def validate(self) -> None:
        if self.p0 == self.p1:
            raise ValueError("wall endpoints must be distinct")
        if self.rel_permittivity < 1.0:
            raise ValueError("rel_permittivity must be >= 1")
        if self.conductivity < 0.0:
            raise ValueError("conductivity must be >= 0")

    @property
    def length(self) -> float:
        return float(np.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1]))


@dataclass(frozen=True)
class SceneParams:
    """Knobs for the random scene generator."""

    width: float = 10.0
    depth: float = 10.0
    height: float = 3.0
    bs_xy: tuple[float, float] = (0.75, 0.75)
    bs_height: float = 2.9
    ue_height: float = 0.8
    n_walls_range: tuple[int, int] = (1, 3)
    wall_len_range: tuple[float, float] = (3.0, 8.0)
    lattice: float = 0.5
    min_ue_area: float = 4.0
    anchor_prob: float = 0.7
    max_attempts: int = 200
    bs_standoff: float = 1.0         # UE cells this close to the BS are excluded
    reach_probes: int = 12           # region cells probed for ray reachability
    min_reachable_frac: float = 0.75
    wall_material: str = "wood"
    rel_permittivity: float = WOOD_REL_PERMITTIVITY
    conductivity: float = WOOD_CONDUCTIVITY

    def validate(self) -> None:
        if self.width <= 0 or self.depth <= 0 or self.height <= 0:
            raise ValueError("room dimensions must be positive")
        if abs(self.width / self.lattice - round(self.width / self.lattice)) > _EPS \
                or abs(self.depth / self.lattice - round(self.depth / self.lattice)) > _EPS:
            raise ValueError("room dimensions must be multiples of the lattice spacing")
        if not (0.0 < self.bs_xy[0] < self.width and 0.0 < self.bs_xy[1] < self.depth):
            raise ValueError("bs_xy must lie inside the room")
        if self.n_walls_range[0] < 0 or self.n_walls_range[1] < self.n_walls_range[0]:
            raise ValueError("bad n_walls_range")
        if not (0.0 < self.bs_height < self.height and 0.0 < self.ue_height < self.height):
            raise ValueError("heights must lie inside the room height")


@dataclass(frozen=True)
class Scene:
    """Immutable generated scene; geometry in meters."""

    width: float
    depth: float
    height: float
    walls: tuple[WallSegment, ...]
    bs_position: tuple[float, float, float]
    ue_region: tuple[tuple[float, float], ...]
    ue_cells: tuple[tuple[int, int], ...]
    lattice: float
    ue_height: float
    scene_id: int
    rng_seed: int
    outer_rel_permittivity: float = WOOD_REL_PERMITTIVITY
    outer_conductivity: float = WOOD_CONDUCTIVITY

    @property
    def ue_area(self) -> float:
        return len(self.ue_cells) * self.lattice * self.lattice

    def contains_ue(self, x: float, y: float) -> bool:
        i = int(np.floor(x / self.lattice + _EPS))
        j = int(np.floor(y / self.lattice + _EPS))
        return (i, j) in set(self.ue_cells)

    def sample_ue_xy(self, rng: np.random.Generator) -> tuple[float, float]:
        """Uniform position over the UE region (cells are equal-area)."""
        i, j = self.ue_cells[int(rng.integers(len(self.ue_cells)))]
        x = (i + rng.random()) * self.lattice
        y = (j + rng.random()) * self.lattice
        return float(x), float(y)

    def validate(self) -> None:
        for w in self.walls:
            w.validate()
            for x, y in (w.p0, w.p1):
                if not (-_EPS <= x <= self.width + _EPS and -_EPS <= y <= self.depth + _EPS):
                    raise ValueError(f"wall endpoint ({x}, {y}) outside room")
        bx, by, bz = self.bs_position
        if not (0 < bx < self.width and 0 < by < self.depth and 0 < bz < self.height):
            raise ValueError("bs_position outside room")
        if len(self.ue_cells) == 0:
            raise ValueError("ue_region is empty")
        bs_cell = (int(np.floor(bx / self.lattice + _EPS)), int(np.floor(by / self.lattice + _EPS)))
        if bs_cell in set(self.ue_cells):
            raise ValueError("bs_position lies inside the UE region's cell set")


@dataclass
class SceneGraphMatrix:
    """Discrete G x G scene raster with codes {0 free, 1 wall, 2 UE boundary}."""

    grid: np.ndarray
    cell_size: float
    scene_id: int

    def validate(self) -> None:
        if self.grid.ndim != 2 or self.grid.shape[0] != self.grid.shape[1]:
            raise ValueError("scene graph grid must be square")
        if not np.isin(self.grid, (0, 1, 2)).all():
            raise ValueError("scene graph codes must be in {0, 1, 2}")


# ---------------------------------------------------------------------------
# lattice connectivity
# ---------------------------------------------------------------------------

def _snap(v: float, lattice: float) -> float:
    return round(v / lattice) * lattice


def _blocked_edges(walls, k_w: int, k_d: int, lattice: float):
    """Cell-edge occlusion masks for lattice-aligned walls.

    vb[i, j] is True when the vertical lattice line x = i*lattice blocks
    passage between cells (i-1, j) and (i, j); hb[i, j] likewise for the
    horizontal line y = j*lattice between cells (i, j-1) and (i, j).
    """
    vb = np.zeros((k_w + 1, k_d), dtype=bool)
    hb = np.zeros((k_w, k_d + 1), dtype=bool)
    for w in walls:
        (x0, y0), (x1, y1) = w.p0, w.p1
        if abs(x0 - x1) <= _EPS:  # vertical wall
            i = int(round(x0 / lattice))
            j0, j1 = sorted((int(round(y0 / lattice)), int(round(y1 / lattice))))
            if 0 <= i <= k_w:
                vb[i, max(j0, 0):min(j1, k_d)] = True
        elif abs(y0 - y1) <= _EPS:  # horizontal wall
            j = int(round(y0 / lattice))
            i0, i1 = sorted((int(round(x0 / lattice)), int(round(x1 / lattice))))
            if 0 <= j <= k_d:
                hb[max(i0, 0):min(i1, k_w), j] = True
        else:
            raise ValueError("walls must be axis-aligned")
    return vb, hb


def _components(vb, hb, k_w: int, k_d: int) -> np.ndarray:
    """Label connected free-space components on the cell graph."""
    labels = -np.ones((k_w, k_d), dtype=np.int32)
    current = 0
    for si in range(k_w):
        for sj in range(k_d):
            if labels[si, sj] >= 0:
                continue
            labels[si, sj] = current
            queue = deque([(si, sj)])
            while queue:
                i, j = queue.popleft()
                if i + 1 < k_w and labels[i + 1, j] < 0 and not vb[i + 1, j]:
                    labels[i + 1, j] = current
                    queue.append((i + 1, j))
                if i > 0 and labels[i - 1, j] < 0 and not vb[i, j]:
                    labels[i - 1, j] = current
                    queue.append((i - 1, j))
                if j + 1 < k_d and labels[i, j + 1] < 0 and not hb[i, j + 1]:
                    labels[i, j + 1] = current
                    queue.append((i, j + 1))
                if j > 0 and labels[i, j - 1] < 0 and not hb[i, j]:
                    labels[i, j - 1] = current
                    queue.append((i, j - 1))
            current += 1
    return labels


def _choose_region(labels: np.ndarray, bs_cell: tuple[int, int]) -> np.ndarray:
    """Pick UE-region cells: largest component without the BS, else the BS one."""
    bs_label = labels[bs_cell]
    ids, counts = np.unique(labels, return_counts=True)
    others = [(c, l) for l, c in zip(ids, counts) if l != bs_label]
    if others:
        count, label = max(others, key=lambda t: (t[0], -t[1]))
        return labels == label
    return labels == bs_label


def _is_boundary_cell(cell, region: set) -> bool:
    i, j = cell
    return ((i + 1, j) not in region or (i - 1, j) not in region
            or (i, j + 1) not in region or (i, j - 1) not in region)


def _region_boundary_edges(region_cells: set, lattice: float):
    """Axis-aligned unit segments (meters) bounding the UE region.

    An edge is boundary when its outward neighbour cell is not part of
    the region (room edges included). Wall-blocked edges between two
    region cells are interior structure, not boundary.
    """
    edges = []
    for (i, j) in region_cells:
        if (i - 1, j) not in region_cells:
            edges.append(((i * lattice, j * lattice), (i * lattice, (j + 1) * lattice)))
        if (i + 1, j) not in region_cells:
            edges.append((((i + 1) * lattice, j * lattice), ((i + 1) * lattice, (j + 1) * lattice)))
        if (i, j - 1) not in region_cells:
            edges.append(((i * lattice, j * lattice), ((i + 1) * lattice, j * lattice)))
        if (i, j + 1) not in region_cells:
            edges.append(((i * lattice, (j + 1) * lattice), ((i + 1) * lattice, (j + 1) * lattice)))
    return edges


def _region_polygon(region_cells: set, lattice: float):
    """Trace the outer boundary loop of the region as a rectilinear polygon."""
    # directed edges keep the region on the left (counter-clockwise outer loop)
    out_edges: dict[tuple[int, int], list[tuple[int, int]]] = {}

    def _add(a, b):
        out_edges.setdefault(a, []).append(b)

    for (i, j) in region_cells:
        if (i, j - 1) not in region_cells:
            _add((i, j), (i + 1, j))            # bottom, heading +x
        if (i, j + 1) not in region_cells:
            _add((i + 1, j + 1), (i, j + 1))    # top, heading -x
        if (i - 1, j) not in region_cells:
            _add((i, j + 1), (i, j))            # left, heading -y
        if (i + 1, j) not in region_cells:
            _add((i + 1, j), (i + 1, j + 1))    # right, heading +y

    start = min(out_edges)
    loop = [start]
    prev_dir = None
    node = start
    while True:
        candidates = out_edges[node]
        if len(candidates) == 1 or prev_dir is None:
            nxt = candidates[0]
        else:
            # pinch vertex: take the most clockwise turn to stay on the outer loop
            def turn(c):
                d = (c[0] - node[0], c[1] - node[1])
                return prev_dir[0] * d[1] - prev_dir[1] * d[0]
            nxt = min(candidates, key=turn)
        candidates.remove(nxt)
        prev_dir = (nxt[0] - node[0], nxt[1] - node[1])
        node = nxt
        if node == start:
            break
        loop.append(node)

    # merge collinear runs
    poly = []
    n = len(loop)
    for k in range(n):
        a, b, c = loop[(k - 1) % n], loop[k], loop[(k + 1) % n]
        if (b[0] - a[0]) * (c[1] - b[1]) != (b[1] - a[1]) * (c[0] - b[0]):
            poly.append((b[0] * lattice, b[1] * lattice))
    return tuple(poly)


def _largest_connected_subset(cells: set, vb, hb) -> set:
    """Largest connected component within an arbitrary cell subset."""
    remaining = set(cells)
    best: set = set()
    while remaining:
        start = min(remaining)
        comp = {start}
        queue = deque([start])
        remaining.discard(start)
        while queue:
            i, j = queue.popleft()
            for nb, open_ in (((i + 1, j), not vb[i + 1, j]),
                              ((i - 1, j), not vb[i, j]),
                              ((i, j + 1), not hb[i, j + 1]),
                              ((i, j - 1), not hb[i, j])):
                if open_ and nb in remaining:
                    remaining.discard(nb)
                    comp.add(nb)
                    queue.append(nb)
        if len(comp) > len(best) or (len(comp) == len(best) and comp and min(comp) < min(best)):
            best = comp
    return best


def _standoff_filter(cells: set, bs_xy, lattice: float, standoff: float, vb, hb) -> set:
    """Drop cells whose center falls inside the BS standoff band."""
    kept = {(i, j) for (i, j) in cells
            if np.hypot((i + 0.5) * lattice - bs_xy[0],
                        (j + 0.5) * lattice - bs_xy[1]) > standoff}
    if not kept:
        return kept
    return _largest_connected_subset(kept, vb, hb)


def _build_region(walls, params: SceneParams):
    """UE-region cells: the largest free-space component away from the BS.

    When the only component is the one holding the BS, a standoff band
    around the BS is carved out so UEs never sample on top of the array.
    """
    k_w = int(round(params.width / params.lattice))
    k_d = int(round(params.depth / params.lattice))
    vb, hb = _blocked_edges(walls, k_w, k_d, params.lattice)
    labels = _components(vb, hb, k_w, k_d)
    bs_cell = (int(np.floor(params.bs_xy[0] / params.lattice + _EPS)),
               int(np.floor(params.bs_xy[1] / params.lattice + _EPS)))
    mask = _choose_region(labels, bs_cell)
    region = set((int(i), int(j)) for i, j in np.argwhere(mask))
    if bs_cell in region:
        region = _standoff_filter(region, params.bs_xy, params.lattice,
                                  params.bs_standoff, vb, hb)
    cells = tuple(sorted(region))
    return cells, bs_cell


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _sample_walls(rng: np.random.Generator, p: SceneParams) -> list[WallSegment]:
    n = int(rng.integers(p.n_walls_range[0], p.n_walls_range[1] + 1))
    walls = []
    for _ in range(n):
        lo, hi = p.wall_len_range
        length = _snap(float(rng.uniform(lo, hi)), p.lattice)
        length = float(np.clip(length, p.lattice, min(p.width, p.depth)))
        horizontal = bool(rng.integers(2))
        anchored = bool(rng.random() < p.anchor_prob)
        if horizontal:
            y = _snap(float(rng.uniform(p.lattice, p.depth - p.lattice)), p.lattice)
            if anchored:
                x0 = 0.0 if rng.integers(2) else p.width - length
            else:
                x0 = _snap(float(rng.uniform(0.0, p.width - length)), p.lattice)
            seg = ((x0, y), (x0 + length, y))
        else:
            x = _snap(float(rng.uniform(p.lattice, p.width - p.lattice)), p.lattice)
            if anchored:
                y0 = 0.0 if rng.integers(2) else p.depth - length
            else:
                y0 = _snap(float(rng.uniform(0.0, p.depth - length)), p.lattice)
            seg = ((x, y0), (x, y0 + length))
        walls.append(WallSegment(seg[0], seg[1], p.wall_material,
                                 p.rel_permittivity, p.conductivity))
    return walls


def _region_reachable_frac(scene: Scene, params: SceneParams) -> float:
    """Fraction of probed region cells with at least one traced path."""
    # local import: the tracer depends on this module
    from .raytrace import TraceConfig, trace_paths

    cfg = TraceConfig()   # path existence is purely geometric
    cells = scene.ue_cells
    n_probe = min(params.reach_probes, len(cells))
    idx = np.unique(np.linspace(0, len(cells) - 1, n_probe).astype(int))
    hits = 0
    for k in idx:
        i, j = cells[k]
        xy = ((i + 0.5) * params.lattice, (j + 0.5) * params.lattice)
        if trace_paths(scene, (xy[0], xy[1], scene.ue_height), cfg):
            hits += 1
    return hits / len(idx)


def generate_scene(seed: int, params: SceneParams, scene_id: int | None = None) -> Scene:
    """Rejection-sample a scene satisfying all invariants; deterministic in seed."""
    params.validate()
    rng = np.random.default_rng(seed)
    for attempt in range(params.max_attempts):
        walls = _sample_walls(rng, params)
        cells, bs_cell = _build_region(walls, params)
        area = len(cells) * params.lattice ** 2
        if area < params.min_ue_area:
            continue
        poly = _region_polygon(set(cells), params.lattice)
        scene = Scene(
            width=params.width, depth=params.depth, height=params.height,
            walls=tuple(walls),
            bs_position=(params.bs_xy[0], params.bs_xy[1], params.bs_height),
            ue_region=poly, ue_cells=cells, lattice=params.lattice,
            ue_height=params.ue_height,
            scene_id=scene_id if scene_id is not None else seed,
            rng_seed=seed,
            outer_rel_permittivity=params.rel_permittivity,
            outer_conductivity=params.conductivity,
        )
        if _region_reachable_frac(scene, params) < params.min_reachable_frac:
            continue
        scene.validate()
        return scene
    raise SceneGenerationError(seed, params.max_attempts)


def make_empty_scene(width: float = 10.0, depth: float = 10.0,
                     bs_xy: tuple[float, float] = (0.75, 0.75),
                     bs_height: float = 2.9, ue_height: float = 0.8,
                     height: float = 3.0, lattice: float = 0.5,
                     bs_standoff: float = 1.0, scene_id: int = 0) -> Scene:
    """Room with no internal walls; the UE region is the full rectangle
    minus the standoff band around the BS."""
    params = SceneParams(width=width, depth=depth, height=height, bs_xy=bs_xy,
                         bs_height=bs_height, ue_height=ue_height, lattice=lattice,
                         n_walls_range=(0, 0), bs_standoff=bs_standoff)
    cells, _ = _build_region((), params)
    poly = _region_polygon(set(cells), lattice)
    return Scene(width=width, depth=depth, height=height, walls=(),
                 bs_position=(bs_xy[0], bs_xy[1], bs_height),
                 ue_region=poly, ue_cells=cells, lattice=lattice,
                 ue_height=ue_height, scene_id=scene_id, rng_seed=0)


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------

def _mark_segment(grid: np.ndarray, code: int, p0, p1, cell: float) -> None:
    """Mark every half-open grid cell the segment overlaps with positive length.

    A segment lying exactly on a cell boundary marks only the cell on the
    positive side (clamped at the far room edge), which keeps marking
    consistent across resolutions.
    """
    g = grid.shape[0]
    (x0, y0), (x1, y1) = p0, p1
    if abs(x0 - x1) <= _EPS:  # vertical
        ix = min(int(np.floor(x0 / cell + _EPS)), g - 1)
        lo, hi = sorted((y0, y1))
        j0 = max(int(np.floor(lo / cell + _EPS)), 0)
        j1 = min(int(np.ceil(hi / cell - _EPS)) - 1, g - 1)
        if j1 >= j0:
            grid[ix, j0:j1 + 1] = code
    elif abs(y0 - y1) <= _EPS:  # horizontal
        jy = min(int(np.floor(y0 / cell + _EPS)), g - 1)
        lo, hi = sorted((x0, x1))
        i0 = max(int(np.floor(lo / cell + _EPS)), 0)
        i1 = min(int(np.ceil(hi / cell - _EPS)) - 1, g - 1)
        if i1 >= i0:
            grid[i0:i1 + 1, jy] = code
    else:
        raise ValueError("only axis-aligned segments can be rasterized")


def rasterize(scene: Scene, g: int) -> SceneGraphMatrix:
    """Rasterize walls (code 1) and the UE-region boundary (code 2).

    Wall code wins on overlap. Requires a square room so cells are square.
    """
    if g < 8:
        raise ValueError("grid size must be >= 8")
    if abs(scene.width - scene.depth) > _EPS:
        raise ValueError("rasterize requires a square room")
    cell = scene.width / g
    grid = np.zeros((g, g), dtype=np.uint8)
    for e0, e1 in _region_boundary_edges(set(scene.ue_cells), scene.lattice):
        _mark_segment(grid, 2, e0, e1, cell)
    for w in scene.walls:
        _mark_segment(grid, 1, w.p0, w.p1, cell)
    m = SceneGraphMatrix(grid=grid, cell_size=cell, scene_id=scene.scene_id)
    m.validate()
    return m


def scene_graph_to_model_input(m: SceneGraphMatrix) -> np.ndarray:
    """Map codes {0,1,2} to {0.0, 0.5, 1.0} for the parameter generator."""
    return m.grid.astype(np.float64) / 2.0


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_scene_graph(path, m: SceneGraphMatrix) -> None:
    g = m.grid.shape[0]
    with open(path, "wb") as fh:
        fh.write(SCENEGRAPH_MAGIC)
        fh.write(struct.pack("<H", SCENEGRAPH_VERSION))
        fh.write(struct.pack("<I", g))
        fh.write(struct.pack("<d", m.cell_size))
        fh.write(np.ascontiguousarray(m.grid, dtype=np.uint8).tobytes())


def load_scene_graph(path, scene_id: int) -> SceneGraphMatrix:
    with open(path, "rb") as fh:
        if fh.read(5) != SCENEGRAPH_MAGIC:
            raise ValueError(f"{path}: not a scene-graph file")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != SCENEGRAPH_VERSION:
            raise ValueError(f"{path}: unsupported scene-graph version {version}")
        (g,) = struct.unpack("<I", fh.read(4))
        (cell_size,) = struct.unpack("<d", fh.read(8))
        grid = np.frombuffer(fh.read(g * g), dtype=np.uint8).reshape(g, g).copy()
    m = SceneGraphMatrix(grid=grid, cell_size=cell_size, scene_id=scene_id)
    m.validate()
    return m


def _scene_graph_filename(scene_id: int) -> str:
    return f"scene_{scene_id:04d}.sg"


def save_scene_dir(directory, scenes: list[Scene], g: int, params: SceneParams) -> list[Path]:
    """Write one raster file per scene plus a JSON manifest of the set."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    entries = []
    for sc in scenes:
        m = rasterize(sc, g)
        path = directory / _scene_graph_filename(sc.scene_id)
        save_scene_graph(path, m)
        written.append(path)
        entries.append({
            "scene_id": sc.scene_id,
            "seed": sc.rng_seed,
            "bs_position": list(sc.bs_position),
            "ue_region": [list(v) for v in sc.ue_region],
            "walls": [{"p0": list(w.p0), "p1": list(w.p1), "material": w.material,
                       "rel_permittivity": w.rel_permittivity,
                       "conductivity": w.conductivity} for w in sc.walls],
        })
    manifest = {
        "grid_size": g,
        "room": {"width": params.width, "depth": params.depth, "height": params.height,
                 "lattice": params.lattice, "ue_height": params.ue_height},
        "material": {"rel_permittivity": params.rel_permittivity,
                     "conductivity": params.conductivity},
        "scenes": entries,
    }
    mpath = directory / "scenes.json"
    mpath.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    written.append(mpath)
    return written


def load_scene_dir(directory) -> tuple[list[Scene], dict[int, SceneGraphMatrix]]:
    """Rebuild Scene objects and load their rasters from a scene directory."""
    directory = Path(directory)
    manifest = json.loads((directory / "scenes.json").read_text())
    room = manifest["room"]
    scenes = []
    graphs = {}
    for entry in manifest["scenes"]:
        walls = tuple(WallSegment((w["p0"][0], w["p0"][1]), (w["p1"][0], w["p1"][1]),
                                  w["material"], w["rel_permittivity"], w["conductivity"])
                      for w in entry["walls"])
        params = SceneParams(width=room["width"], depth=room["depth"], height=room["height"],
                             bs_xy=(entry["bs_position"][0], entry["bs_position"][1]),
                             bs_height=entry["bs_position"][2], ue_height=room["ue_height"],
                             lattice=room["lattice"])
        cells, _ = _build_region(walls, params)
        poly = _region_polygon(set(cells), room["lattice"])
        sc = Scene(width=room["width"], depth=room["depth"], height=room["height"],
                   walls=walls, bs_position=tuple(entry["bs_position"]),
                   ue_region=poly, ue_cells=cells, lattice=room["lattice"],
                   ue_height=room["ue_height"], scene_id=entry["scene_id"],
                   rng_seed=entry["seed"],
                   outer_rel_permittivity=manifest["material"]["rel_permittivity"],
                   outer_conductivity=manifest["material"]["conductivity"])
        scenes.append(sc)
        graphs[sc.scene_id] = load_scene_graph(
            directory / _scene_graph_filename(sc.scene_id), sc.scene_id)
    scenes.sort(key=lambda s: s.scene_id)
    return scenes, graphs
