"""Reconstruction network, scene-conditioned parameter generator, forwards.

The baseline reconstruction is a dense initial estimate reshaped to
(2, Nc, Nt), refined by a residual block of three 3x3 convolutions
(8, 16, 2 channels; tanh on the hidden two) and finished by a linear
2-channel output convolution.

The parameter generator maps a G x G scene raster through a dense layer,
five 3x3 convolutions and a final dense layer onto a length N*(M+1)
vector, split row-major into a weight matrix W (N x M) and bias b (N).
The adaptive forward blends the generated estimate into the baseline:
h_input = h1 + alpha * tanh(W s + b). The generator's output layer is
zero-initialized so the blend starts exactly at the baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

HYPER_CONV_CHANNELS = (16, 16, 16, 8, 8, 4)   # channel plan across the five convs


@dataclass(frozen=True)
class ModelDims:
    nc: int
    nt: int
    m: int
    g: int

    @property
    def n(self) -> int:
        return 2 * self.nc * self.nt

    def validate(self) -> None:
        if self.m >= self.n:
            raise ValueError(f"codeword length {self.m} must be < N={self.n}")
        if self.g % 4 != 0 or self.g < 8:
            raise ValueError("scene grid size must be a multiple of 4 and >= 8")


@dataclass
class ReconNet:
    """Baseline one-sided reconstruction network."""

    dims: ModelDims
    alpha: float
    params: dict[str, Tensor]

    @classmethod
    def init(cls, dims: ModelDims, alpha: float, seed: int) -> "ReconNet":
        dims.validate()
        if not 0.0 <= alpha < 1.0:
            raise ValueError("alpha must satisfy 0 <= alpha < 1")
        rng = np.random.default_rng([seed, 0x5EC0])
        p = {
            "dense_w": (dims.m, dims.n),
            "dense_b": (dims.n,),
            "conv1_w": (8, 2, 3, 3), "conv1_b": (8,),
            "conv2_w": (16, 8, 3, 3), "conv2_b": (16,),
            "conv3_w": (2, 16, 3, 3), "conv3_b": (2,),
            "out_w": (2, 2, 3, 3), "out_b": (2,),
        }
        params = {}
        for name, shape in p.items():
            if name.endswith("_b"):
                params[name] = Tensor(np.zeros(shape), requires_grad=True)
            else:
                params[name] = Tensor(ad.glorot_uniform(shape, rng), requires_grad=True)
        return cls(dims=dims, alpha=alpha, params=params)

    def copy(self) -> "ReconNet":
        return ReconNet(dims=self.dims,
                        alpha=self.alpha,
                        params={k: Tensor(t.data.copy(), requires_grad=True)
                                for k, t in self.params.items()})

    def set_trainable(self, flag: bool) -> None:
        for t in self.params.values():
            t.requires_grad = flag


@dataclass
class HyperNet:
    """Scene-graph conditioned generator of reconstruction-layer parameters."""

    dims: ModelDims
    params: dict[str, Tensor]

    @classmethod
    def init(cls, dims: ModelDims, seed: int) -> "HyperNet":
        dims.validate()
        rng = np.random.default_rng([seed, 0xA1FA])
        gq = dims.g // 4
        chans = HYPER_CONV_CHANNELS
        params = {
            "in_w": Tensor(ad.glorot_uniform((dims.g * dims.g, chans[0] * gq * gq), rng),
                           requires_grad=True),
            "in_b": Tensor(np.zeros(chans[0] * gq * gq), requires_grad=True),
        }
        for k in range(5):
            params[f"conv{k + 1}_w"] = Tensor(
                ad.glorot_uniform((chans[k + 1], chans[k], 3, 3), rng), requires_grad=True)
            params[f"conv{k + 1}_b"] = Tensor(np.zeros(chans[k + 1]), requires_grad=True)
        out_dim = dims.n * (dims.m + 1)
        # zero output layer: the adaptive forward starts exactly at the baseline
        params["out_w"] = Tensor(np.zeros((chans[-1] * gq * gq, out_dim)), requires_grad=True)
        params["out_b"] = Tensor(np.zeros(out_dim), requires_grad=True)
        return cls(dims=dims, params=params)

    def set_trainable(self, flag: bool) -> None:
        for t in self.params.values():
            t.requires_grad = flag


@dataclass
class GeneratedParams:
    """Environment-specific dense-layer parameters emitted by the generator."""

    w_h: np.ndarray      # (N, M)
    b_h: np.ndarray      # (N,)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.w_h.reshape(-1), self.b_h])

    @classmethod
    def from_flat(cls, flat: np.ndarray, n: int, m: int) -> "GeneratedParams":
        if flat.shape != (n * (m + 1),):
            raise ValueError(f"flat parameter vector has shape {flat.shape}, want ({n * (m + 1)},)")
        return cls(w_h=flat[: n * m].reshape(n, m), b_h=flat[n * m:])


# ---------------------------------------------------------------------------
# forwards
# ---------------------------------------------------------------------------

def _recon_tail(x: Tensor, net: ReconNet) -> Tensor:
    p = net.params
    c = ad.tanh(ad.conv2d(x, p["conv1_w"], p["conv1_b"]))
    c = ad.tanh(ad.conv2d(c, p["conv2_w"], p["conv2_b"]))
    c = ad.conv2d(c, p["conv3_w"], p["conv3_b"])
    residual = ad.add(x, c)
    return ad.conv2d(residual, p["out_w"], p["out_b"])


def forward_baseline(s, net: ReconNet) -> Tensor:
    """Reconstruct (B, 2, Nc, Nt) CSI from codewords (B, M), no scene input."""
    s = ad.as_tensor(s)
    d = net.dims
    h1 = ad.dense(s, net.params["dense_w"], net.params["dense_b"])
    x = ad.reshape(h1, (s.shape[0], 2, d.nc, d.nt))
    return _recon_tail(x, net)


def hyper_forward(graphs, hyper: HyperNet) -> Tensor:
    """(U, G*G) normalized scene rasters -> (U, N*(M+1)) parameter vectors."""
    g = ad.as_tensor(graphs)
    d = hyper.dims
    gq = d.g // 4
    p = hyper.params
    x = ad.tanh(ad.dense(g, p["in_w"], p["in_b"]))
    x = ad.reshape(x, (g.shape[0], HYPER_CONV_CHANNELS[0], gq, gq))
    for k in range(5):
        x = ad.tanh(ad.conv2d(x, p[f"conv{k + 1}_w"], p[f"conv{k + 1}_b"]))
    x = ad.reshape(x, (g.shape[0], HYPER_CONV_CHANNELS[-1] * gq * gq))
    return ad.dense(x, p["out_w"], p["out_b"])


def generate_params(graph: np.ndarray, hyper: HyperNet) -> GeneratedParams:
    """Parameters for a single scene raster (G x G or flattened)."""
    flat_in = np.asarray(graph, dtype=np.float64).reshape(1, -1)
    if flat_in.shape[1] != hyper.dims.g * hyper.dims.g:
        raise ValueError(f"scene raster has {flat_in.shape[1]} cells, "
                         f"model expects {hyper.dims.g * hyper.dims.g}")
    theta = hyper_forward(flat_in, hyper)
    return GeneratedParams.from_flat(theta.data[0], hyper.dims.n, hyper.dims.m)


def forward_adaptive(s, graphs, slots: np.ndarray, net: ReconNet,
                     hyper: HyperNet) -> Tensor:
    """Scene-aware reconstruction.

    ``graphs`` holds one normalized raster per environment, flattened to
    (U, G*G); ``slots[b]`` indexes the raster of sample b. Generated
    parameters are gathered per sample, so environments appearing many
    times in a batch run the generator once.
    """
    s = ad.as_tensor(s)
    d = net.dims
    bsz = s.shape[0]
    theta = hyper_forward(graphs, hyper)
    theta_b = ad.gather(theta, slots)
    w_flat = ad.slice_cols(theta_b, 0, d.n * d.m)
    w = ad.reshape(w_flat, (bsz, d.n, d.m))
    b_h = ad.slice_cols(theta_b, d.n * d.m, d.n * (d.m + 1))
    h2 = ad.tanh(ad.add(ad.bmatvec(w, s), b_h))

    h1 = ad.dense(s, net.params["dense_w"], net.params["dense_b"])
    h_in = ad.add(h1, ad.scale(h2, net.alpha))
    x = ad.reshape(h_in, (bsz, 2, d.nc, d.nt))
    return _recon_tail(x, net)


# ---------------------------------------------------------------------------
# checkpoint config embedding
# ---------------------------------------------------------------------------

def model_config_dict(dims: ModelDims, alpha: float, cr, seed: int, kind: str) -> dict:
    return {"kind": kind, "nc": dims.nc, "nt": dims.nt, "m": dims.m, "g": dims.g,
            "alpha": alpha, "cr_num": cr.numerator, "cr_den": cr.denominator,
            "seed": seed}


def dims_from_config(config: dict) -> ModelDims:
    return ModelDims(nc=config["nc"], nt=config["nt"], m=config["m"], g=config["g"])
