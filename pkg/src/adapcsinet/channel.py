"""OFDM / uniform-linear-array channel assembly and dataset files.

Each traced multipath component contributes, on subcarrier n and antenna
t, the term  gain * exp(-j 2 pi f_n tau) * exp(-j 2 pi spacing t sin(aod))
with f_n swept across the band. The per-subcarrier row vectors are
stacked conjugated, matching the spatial-frequency CSI convention used
throughout (delay/angle energy then lands in the leading DFT bins).

Dataset files ("ACNDS") store one record per UE drop: scene id, UE
position and the complex CSI matrix as interleaved float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .raytrace import PathComponent, TraceConfig, trace_paths
from .scene import Scene

DATASET_MAGIC = b"ACNDS"
DATASET_VERSION = 1


class NoPathsError(RuntimeError):
    """Channel assembly was asked to run on an empty path list."""


class DatasetGenerationError(RuntimeError):
    """A scene kept yielding UE positions with zero traced paths."""

    def __init__(self, scene_id: int):
        super().__init__(f"dataset generation exhausted resampling for scene {scene_id}")
        self.scene_id = scene_id


@dataclass(frozen=True)
class UlaConfig:
    n_antennas: int = 8
    spacing_wavelengths: float = 0.5


@dataclass(frozen=True)
class OfdmConfig:
    n_subcarriers: int = 64
    center_freq: float = 5.8e9
    bandwidth: float = 20e6


@dataclass
class ChannelMatrix:
    """Spatial-frequency CSI for one UE drop: (subcarriers x antennas)."""

    h_tilde: np.ndarray
    center_freq: float
    bandwidth: float
    ue_position: tuple[float, float, float]
    scene_id: int

    @property
    def n_subcarriers(self) -> int:
        return self.h_tilde.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.h_tilde.shape[1]

    def validate(self) -> None:
        if not np.all(np.isfinite(self.h_tilde)):
            raise ValueError("channel matrix contains non-finite entries")


def assemble_channel(paths: list[PathComponent], array: UlaConfig, ofdm: OfdmConfig,
                     ue_position=(0.0, 0.0, 0.0), scene_id: int = 0) -> ChannelMatrix:
    """Superpose path contributions over the subcarrier grid and array."""
    if not paths:
        raise NoPathsError("cannot assemble a channel from zero paths")
    gains = np.array([p.complex_gain for p in paths])
    delays = np.array([p.delay for p in paths])
    sin_aod = np.sin(np.array([p.aod_azimuth for p in paths]))

    n_sc = ofdm.n_subcarriers
    freqs = ofdm.center_freq - ofdm.bandwidth / 2.0 \
        + np.arange(n_sc) * (ofdm.bandwidth / n_sc)
    sub_phase = np.exp(-2j * np.pi * freqs[:, None] * delays[None, :])      # (N'c, P)
    ant_idx = np.arange(array.n_antennas)
    ant_phase = np.exp(-2j * np.pi * array.spacing_wavelengths
                       * ant_idx[:, None] * sin_aod[None, :])               # (Nt, P)
    h_rows = np.einsum("np,tp,p->nt", sub_phase, ant_phase, gains, optimize=True)
    ch = ChannelMatrix(h_tilde=np.conj(h_rows), center_freq=ofdm.center_freq,
                       bandwidth=ofdm.bandwidth,
                       ue_position=tuple(ue_position), scene_id=scene_id)
    ch.validate()
    return ch


# ---------------------------------------------------------------------------
# dataset file
# ---------------------------------------------------------------------------

def write_dataset(path, records: list[ChannelMatrix]) -> None:
    if not records:
        raise ValueError("refusing to write an empty dataset")
    n_sc = records[0].n_subcarriers
    n_t = records[0].n_antennas
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<H", DATASET_VERSION))
        fh.write(struct.pack("<Q", len(records)))
        fh.write(struct.pack("<II", n_sc, n_t))
        fh.write(struct.pack("<dd", records[0].center_freq, records[0].bandwidth))
        for rec in records:
            if rec.h_tilde.shape != (n_sc, n_t):
                raise ValueError("inconsistent record shapes in dataset")
            fh.write(struct.pack("<I", rec.scene_id))
            fh.write(struct.pack("<3d", *rec.ue_position))
            inter = np.empty(n_sc * n_t * 2, dtype="<f4")
            inter[0::2] = rec.h_tilde.real.ravel()
            inter[1::2] = rec.h_tilde.imag.ravel()
            fh.write(inter.tobytes())


@dataclass
class ChannelDataset:
    """In-memory view of an ACNDS file."""

    scene_ids: np.ndarray        # (R,) int
    ue_positions: np.ndarray     # (R, 3)
    h: np.ndarray                # (R, N'c, Nt) complex128
    center_freq: float
    bandwidth: float


def read_dataset(path) -> ChannelDataset:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(5) != DATASET_MAGIC:
            raise ValueError(f"{path}: not a channel dataset file")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != DATASET_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {version}")
        (count,) = struct.unpack("<Q", fh.read(8))
        n_sc, n_t = struct.unpack("<II", fh.read(8))
        center_freq, bandwidth = struct.unpack("<dd", fh.read(16))
        scene_ids = np.empty(count, dtype=np.int64)
        ue_positions = np.empty((count, 3))
        h = np.empty((count, n_sc, n_t), dtype=np.complex128)
        for r in range(count):
            (scene_ids[r],) = struct.unpack("<I", fh.read(4))
            ue_positions[r] = struct.unpack("<3d", fh.read(24))
            inter = np.frombuffer(fh.read(n_sc * n_t * 8), dtype="<f4")
            h[r] = (inter[0::2] + 1j * inter[1::2]).reshape(n_sc, n_t)
    return ChannelDataset(scene_ids=scene_ids, ue_positions=ue_positions, h=h,
                          center_freq=center_freq, bandwidth=bandwidth)


def generate_dataset(scenes: list[Scene], samples_per_scene: int, seed: int,
                     trace_cfg: TraceConfig, array: UlaConfig, ofdm: OfdmConfig,
                     out_path) -> int:
    """Ray trace ``samples_per_scene`` uniform UE drops per scene to a file.

    Per-sample RNG streams are derived from (seed, scene_id, index), so
    regeneration with identical inputs is byte-identical and samples are
    independent of iteration order. Positions with zero traced paths are
    resampled up to 100 times before giving up on the scene.
    """
    if samples_per_scene < 1:
        raise ValueError("samples_per_scene must be >= 1")
    records = []
    for sc in scenes:
        for k in range(samples_per_scene):
            rng = np.random.default_rng([seed, sc.scene_id, k])
            for _attempt in range(100):
                x, y = sc.sample_ue_xy(rng)
                paths = trace_paths(sc, (x, y, sc.ue_height), trace_cfg)
                if paths:
                    records.append(assemble_channel(
                        paths, array, ofdm,
                        ue_position=(x, y, sc.ue_height), scene_id=sc.scene_id))
                    break
            else:
                raise DatasetGenerationError(sc.scene_id)
    write_dataset(out_path, records)
    return len(records)
