"""Angular-delay transform, normalization and random-projection compression.

Spatial-frequency CSI is rotated into the angular-delay domain with
unitary DFT matrices (delay over subcarriers, angle over antennas), where
indoor multipath concentrates in the leading delay rows; those rows are
kept and split into real/imaginary planes, giving the real tensor
(2, Nc, Nt) the networks operate on.

The UE-side code is a fixed Gaussian matrix A with N(0, 1/M) entries,
reconstructable bit-exactly from its seed on either side of the link:
s = A vec(h) with vectorization order plane -> delay row -> antenna.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

PREPROCESSED_MAGIC = b"ACNPP"
PREPROCESSED_VERSION = 1


class NormalizationError(RuntimeError):
    """Degenerate batch: max equals min, nothing to scale."""


def dft_matrix(n: int) -> np.ndarray:
    """Unitary forward DFT matrix of size n."""
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def to_angular_delay(h_tilde: np.ndarray, nc: int) -> np.ndarray:
    """Angular-delay planes of spatial-frequency CSI, truncated to nc rows.

    Accepts (N'c, Nt) or a batch (..., N'c, Nt); returns (..., 2, nc, Nt)
    float64 with plane 0 the real part and plane 1 the imaginary part.
    """
    h_tilde = np.asarray(h_tilde)
    n_sc, n_t = h_tilde.shape[-2], h_tilde.shape[-1]
    if nc > n_sc:
        raise ValueError(f"truncation length {nc} exceeds subcarrier count {n_sc}")
    f_d = dft_matrix(n_sc)
    f_a = dft_matrix(n_t)
    h_ad = np.einsum("dn,...nt,ta->...da", f_d, h_tilde, f_a.conj().T, optimize=True)
    h_ad = h_ad[..., :nc, :]
    return np.stack([h_ad.real, h_ad.imag], axis=-3).astype(np.float64)


def angular_delay_full(h_tilde: np.ndarray) -> np.ndarray:
    """Untruncated complex angular-delay matrix (used by round-trip checks)."""
    n_sc, n_t = h_tilde.shape[-2], h_tilde.shape[-1]
    return np.einsum("dn,...nt,ta->...da", dft_matrix(n_sc), h_tilde,
                     dft_matrix(n_t).conj().T, optimize=True)


def from_angular_delay(h_ad: np.ndarray) -> np.ndarray:
    """Inverse of ``angular_delay_full`` (only valid without truncation)."""
    n_sc, n_t = h_ad.shape[-2], h_ad.shape[-1]
    f_d = dft_matrix(n_sc)
    f_a = dft_matrix(n_t)
    return np.einsum("dn,...nt,ta->...da", f_d.conj().T, h_ad, f_a, optimize=True)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormParams:
    """Global min-max bounds, fitted on the training split only."""

    lo: float
    hi: float

    @property
    def scale(self) -> float:
        return self.hi - self.lo


def fit_normalization(batch: np.ndarray) -> NormParams:
    if batch.size == 0:
        raise NormalizationError("empty batch")
    lo = float(batch.min())
    hi = float(batch.max())
    if hi - lo < 1e-300:
        raise NormalizationError("constant batch (max == min)")
    return NormParams(lo=lo, hi=hi)


def normalize(batch: np.ndarray, params: NormParams | None = None):
    """Map values into [0, 1]; returns (normalized, params)."""
    if params is None:
        params = fit_normalization(batch)
    return (batch - params.lo) / params.scale, params


def denormalize(batch: np.ndarray, params: NormParams) -> np.ndarray:
    return batch * params.scale + params.lo


# ---------------------------------------------------------------------------
# compression
# ---------------------------------------------------------------------------

def codeword_length(n: int, cr: Fraction) -> int:
    """M = round(N * cr); the effective ratio M/N is reported alongside."""
    m = int(round(n * cr.numerator / cr.denominator))
    if not 1 <= m:
        raise ValueError(f"compression ratio {cr} yields empty codeword for N={n}")
    if m >= n:
        raise ValueError(f"compression ratio {cr} does not compress N={n}")
    return m


@dataclass(frozen=True)
class ProjectionMatrix:
    """Fixed Gaussian projection; both link ends rebuild it from the seed."""

    a: np.ndarray
    seed: int
    cr: Fraction

    @classmethod
    def create(cls, n: int, cr: Fraction, seed: int) -> "ProjectionMatrix":
        m = codeword_length(n, cr)
        rng = np.random.default_rng(seed)
        a = rng.normal(0.0, 1.0 / np.sqrt(m), size=(m, n))
        return cls(a=a, seed=seed, cr=cr)

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def n(self) -> int:
        return self.a.shape[1]

    @property
    def effective_cr(self) -> float:
        return self.m / self.n


@dataclass
class Codeword:
    s: np.ndarray
    cr: Fraction
    scene_id: int


def vectorize_csi(h: np.ndarray) -> np.ndarray:
    """Flatten (…, 2, Nc, Nt) in plane -> row -> column order."""
    return np.ascontiguousarray(h).reshape(*h.shape[:-3], -1)


def compress(h: np.ndarray, proj: ProjectionMatrix, scene_id: int = 0) -> Codeword:
    vec = vectorize_csi(h)
    if vec.shape[-1] != proj.n:
        raise ValueError(f"vectorized length {vec.shape[-1]} != projection columns {proj.n}")
    return Codeword(s=vec @ proj.a.T, cr=proj.cr, scene_id=scene_id)


def compress_batch(h: np.ndarray, proj: ProjectionMatrix) -> np.ndarray:
    """(B, 2, Nc, Nt) -> (B, M) codewords."""
    vec = vectorize_csi(h)
    if vec.shape[-1] != proj.n:
        raise ValueError(f"vectorized length {vec.shape[-1]} != projection columns {proj.n}")
    return vec @ proj.a.T


# ---------------------------------------------------------------------------
# preprocessed dataset file
# ---------------------------------------------------------------------------

@dataclass
class PreprocessedData:
    """Normalized angular-delay CSI with codewords, ready for training."""

    h: np.ndarray                # (R, 2, Nc, Nt) normalized
    s: np.ndarray                # (R, M)
    scene_ids: np.ndarray        # (R,)
    norm: NormParams
    cr: Fraction
    projection_seed: int

    @property
    def nc(self) -> int:
        return self.h.shape[2]

    @property
    def nt(self) -> int:
        return self.h.shape[3]

    @property
    def n(self) -> int:
        return 2 * self.nc * self.nt

    @property
    def m(self) -> int:
        return self.s.shape[1]

    def subset(self, mask: np.ndarray) -> "PreprocessedData":
        return PreprocessedData(h=self.h[mask], s=self.s[mask],
                                scene_ids=self.scene_ids[mask], norm=self.norm,
                                cr=self.cr, projection_seed=self.projection_seed)


def build_preprocessed(h_tilde: np.ndarray, scene_ids: np.ndarray, nc: int,
                       cr: Fraction, projection_seed: int,
                       train_mask: np.ndarray) -> PreprocessedData:
    """Full UE-side pipeline: transform, normalize on train split, compress."""
    h_ad = to_angular_delay(h_tilde, nc)
    norm = fit_normalization(h_ad[train_mask])
    h_norm, _ = normalize(h_ad, norm)
    n = 2 * nc * h_tilde.shape[-1]
    proj = ProjectionMatrix.create(n, cr, projection_seed)
    s = compress_batch(h_norm, proj)
    return PreprocessedData(h=h_norm, s=s, scene_ids=np.asarray(scene_ids, dtype=np.int64),
                            norm=norm, cr=cr, projection_seed=projection_seed)


def write_preprocessed(path, data: PreprocessedData) -> None:
    path = Path(path)
    count, _, nc, nt = data.h.shape
    with open(path, "wb") as fh:
        fh.write(PREPROCESSED_MAGIC)
        fh.write(struct.pack("<H", PREPROCESSED_VERSION))
        fh.write(struct.pack("<Q", count))
        fh.write(struct.pack("<III", nc, nt, data.m))
        fh.write(struct.pack("<II", data.cr.numerator, data.cr.denominator))
        fh.write(struct.pack("<q", data.projection_seed))
        fh.write(struct.pack("<dd", data.norm.lo, data.norm.hi))
        for r in range(count):
            fh.write(struct.pack("<I", int(data.scene_ids[r])))
            fh.write(np.ascontiguousarray(data.h[r], dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(data.s[r], dtype="<f8").tobytes())


def read_preprocessed(path) -> PreprocessedData:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(5) != PREPROCESSED_MAGIC:
            raise ValueError(f"{path}: not a preprocessed dataset file")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != PREPROCESSED_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        (count,) = struct.unpack("<Q", fh.read(8))
        nc, nt, m = struct.unpack("<III", fh.read(12))
        cr_num, cr_den = struct.unpack("<II", fh.read(8))
        (proj_seed,) = struct.unpack("<q", fh.read(8))
        lo, hi = struct.unpack("<dd", fh.read(16))
        h = np.empty((count, 2, nc, nt))
        s = np.empty((count, m))
        scene_ids = np.empty(count, dtype=np.int64)
        for r in range(count):
            (scene_ids[r],) = struct.unpack("<I", fh.read(4))
            h[r] = np.frombuffer(fh.read(2 * nc * nt * 8), dtype="<f8").reshape(2, nc, nt)
            s[r] = np.frombuffer(fh.read(m * 8), dtype="<f8")
    return PreprocessedData(h=h, s=s, scene_ids=scene_ids,
                            norm=NormParams(lo=lo, hi=hi),
                            cr=Fraction(cr_num, cr_den), projection_seed=proj_seed)
