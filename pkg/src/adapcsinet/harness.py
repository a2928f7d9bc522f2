"""Experiment orchestration: CR sweep, online-budget sweep, LOS switch.

All headline numbers are NMSE on denormalized CSI, reported per
(method, compression ratio, seed, split) and reduced across seeds by the
median in the figure-data emitters. Trained cells are cached by
(cr, seed) so the three experiments share baseline and adaptive models
when run in one session.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import manifest as mf
from .channel import ChannelDataset, UlaConfig, OfdmConfig, assemble_channel
from .checkpoint import save_checkpoint
from .config import ExperimentConfig, SplitSpec
from .csi import (NormParams, PreprocessedData, ProjectionMatrix, build_preprocessed,
                  compress_batch, denormalize, normalize, to_angular_delay)
from .model import HyperNet, ReconNet, model_config_dict
from .raytrace import los_visible, trace_paths
from .scene import Scene
from .training import (TrainResult, TrainSettings, fine_tune_online, make_slots,
                       predict_adaptive, predict_baseline, stack_graphs, train_step1,
                       train_step2)

logger = logging.getLogger(__name__)

NEG_INF_DB = float("-inf")


class DataInsufficiencyError(RuntimeError):
    """Not enough samples of the required kind to run an experiment."""


@dataclass
class MetricsRecord:
    method: str
    cr_nominal: Fraction
    cr_effective: float
    seed: int
    split: str            # "val" or "test"
    nmse_linear: float
    nmse_db: float
    train_time_s: float

    def row(self, with_time: bool = True) -> list[str]:
        cells = [self.method, str(self.cr_nominal), repr(self.cr_effective),
                 str(self.seed), self.split, repr(self.nmse_linear), repr(self.nmse_db)]
        if with_time:
            cells.append(f"{self.train_time_s:.3f}")
        return cells


def nmse(recon: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    """Mean over samples of per-sample squared-error / squared-norm ratios."""
    if recon.shape != truth.shape:
        raise ValueError(f"shape mismatch: {recon.shape} vs {truth.shape}")
    axes = tuple(range(1, truth.ndim))
    power = (truth * truth).sum(axis=axes)
    if np.any(power <= 0):
        raise ValueError("zero-norm truth sample in NMSE")
    err = ((recon - truth) ** 2).sum(axis=axes)
    linear = float((err / power).mean())
    db = 10.0 * np.log10(linear) if linear > 0 else NEG_INF_DB
    return linear, db


def los_labels(scenes_by_id: dict[int, Scene], scene_ids: np.ndarray,
               ue_positions: np.ndarray) -> np.ndarray:
    """Per-sample LOS flags from the stored scene walls and UE drops."""
    flags = np.empty(len(scene_ids), dtype=bool)
    for r in range(len(scene_ids)):
        flags[r] = los_visible(scenes_by_id[int(scene_ids[r])], ue_positions[r, :2])
    return flags


# ---------------------------------------------------------------------------
# trained cells
# ---------------------------------------------------------------------------

@dataclass
class TrainedCell:
    cr: Fraction
    seed: int
    recon: ReconNet
    hyper: HyperNet
    step1: TrainResult
    step2: TrainResult


def _preprocess_for_cr(channel: ChannelDataset, cfg: ExperimentConfig,
                       cr: Fraction) -> PreprocessedData:
    split = cfg.split_spec()
    train_mask = np.isin(channel.scene_ids, list(split.train_env_ids))
    return build_preprocessed(channel.h, channel.scene_ids, cfg["preprocess.nc"],
                              cr, cfg["preprocess.projection_seed"], train_mask)


def train_cell(cfg: ExperimentConfig, pp: PreprocessedData,
               graph_inputs: dict[int, np.ndarray], cr: Fraction,
               seed: int) -> TrainedCell:
    split = cfg.split_spec()
    dims = cfg.model_dims(cr)
    recon, res1 = train_step1(pp, split.train_env_ids, split.val_env_ids, dims,
                              cfg["model.alpha"], cfg.train_settings(1, seed))
    hyper, res2 = train_step2(pp, graph_inputs, recon, split.train_env_ids,
                              split.val_env_ids, cfg.train_settings(2, seed))
    return TrainedCell(cr=cr, seed=seed, recon=recon, hyper=hyper,
                       step1=res1, step2=res2)


def _eval_cell(cell: TrainedCell, pp: PreprocessedData,
               graph_inputs: dict[int, np.ndarray], env_ids,
               split_name: str) -> list[MetricsRecord]:
    sub = pp.subset(np.isin(pp.scene_ids, list(env_ids)))
    truth = denormalize(sub.h, pp.norm)
    eff = cell.recon.dims.m / cell.recon.dims.n

    base_lin, base_db = nmse(denormalize(predict_baseline(cell.recon, sub.s), pp.norm), truth)
    slots, _ = make_slots(sub.scene_ids, env_ids)
    graphs = stack_graphs(graph_inputs, env_ids)
    ad_pred = predict_adaptive(cell.recon, cell.hyper, sub.s, graphs, slots)
    ad_lin, ad_db = nmse(denormalize(ad_pred, pp.norm), truth)

    return [
        MetricsRecord("general", cell.cr, eff, cell.seed, split_name, base_lin,
                      base_db, cell.step1.train_time_s),
        MetricsRecord("adapcsinet", cell.cr, eff, cell.seed, split_name, ad_lin,
                      ad_db, cell.step1.train_time_s + cell.step2.train_time_s),
    ]


def _persist_cell(out_dir: Path, cfg: ExperimentConfig, cell: TrainedCell) -> list[Path]:
    tag = f"cr{cell.cr.numerator}-{cell.cr.denominator}_s{cell.seed}"
    dims = cell.recon.dims
    gpath = out_dir / f"general_{tag}.ckpt"
    save_checkpoint(gpath, cell.recon.params,
                    model_config_dict(dims, cell.recon.alpha, cell.cr, cell.seed, "recon"))
    apath = out_dir / f"adaptive_{tag}.ckpt"
    both = {f"recon.{k}": v for k, v in cell.recon.params.items()}
    both.update({f"hyper.{k}": v for k, v in cell.hyper.params.items()})
    save_checkpoint(apath, both,
                    model_config_dict(dims, cell.recon.alpha, cell.cr, cell.seed, "adaptive"))
    return [gpath, apath]


def _cell_manifest(out_dir: Path, cfg: ExperimentConfig, name: str,
                   cell: TrainedCell, outputs: list[Path]) -> None:
    split = cfg.split_spec()
    mf.write_run_manifest(
        out_dir, name, cfg, inputs={}, outputs=outputs,
        seed=cell.seed, wall_clock_s=cell.step1.train_time_s + cell.step2.train_time_s,
        extra={
            "gradient_scene_ids": sorted(set(cell.step1.seen_scene_ids)
                                         | set(cell.step2.seen_scene_ids)),
            "test_env_ids": sorted(split.test_env_ids),
        })


def _get_cell(cells: dict, cfg: ExperimentConfig, pp_cache: dict,
              channel: ChannelDataset, graph_inputs, cr: Fraction, seed: int,
              out_dir: Path | None, experiment: str) -> TrainedCell:
    if cr not in pp_cache:
        pp_cache[cr] = _preprocess_for_cr(channel, cfg, cr)
    key = (cr, seed)
    if key not in cells:
        logger.info("training cell cr=%s seed=%d", cr, seed)
        cells[key] = train_cell(cfg, pp_cache[cr], graph_inputs, cr, seed)
        if out_dir is not None:
            paths = _persist_cell(out_dir, cfg, cells[key])
            tag = f"{experiment}_cr{cr.numerator}-{cr.denominator}_s{seed}"
            _cell_manifest(out_dir, cfg, tag, cells[key], paths)
    return cells[key]


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def run_cr_sweep(cfg: ExperimentConfig, channel: ChannelDataset,
                 graph_inputs: dict[int, np.ndarray], out_dir=None,
                 cells: dict | None = None, pp_cache: dict | None = None):
    """Baseline vs adaptive NMSE across compression ratios on unseen scenes."""
    out_dir = Path(out_dir) if out_dir is not None else None
    cells = {} if cells is None else cells
    pp_cache = {} if pp_cache is None else pp_cache
    split = cfg.split_spec()
    records: list[MetricsRecord] = []
    for cr in cfg["preprocess.crs"]:
        for seed in cfg["train.seeds"]:
            cell = _get_cell(cells, cfg, pp_cache, channel, graph_inputs, cr, seed,
                             out_dir, "crsweep")
            pp = pp_cache[cr]
            records += _eval_cell(cell, pp, graph_inputs, split.val_env_ids, "val")
            records += _eval_cell(cell, pp, graph_inputs, split.test_env_ids, "test")
    return records, cells, pp_cache


def _fresh_env_samples(scene: Scene, count: int, seed: int, cfg: ExperimentConfig,
                       pp: PreprocessedData) -> tuple[np.ndarray, np.ndarray]:
    """Extra UE drops in one environment, preprocessed with the frozen params."""
    trace_cfg = cfg.trace_config()
    array = cfg.ula_config()
    ofdm = cfg.ofdm_config()
    h_tilde = np.empty((count, ofdm.n_subcarriers, array.n_antennas), dtype=np.complex128)
    for k in range(count):
        rng = np.random.default_rng([seed, scene.scene_id, k])
        for _ in range(100):
            x, y = scene.sample_ue_xy(rng)
            paths = trace_paths(scene, (x, y, scene.ue_height), trace_cfg)
            if paths:
                h_tilde[k] = assemble_channel(paths, array, ofdm).h_tilde
                break
        else:
            raise DataInsufficiencyError(
                f"could not draw {count} valid samples in environment {scene.scene_id}")
    h_ad = to_angular_delay(h_tilde, pp.nc)
    h_norm, _ = normalize(h_ad, pp.norm)
    proj = ProjectionMatrix.create(pp.n, pp.cr, pp.projection_seed)
    return h_norm, compress_batch(h_norm, proj)


def run_online_sweep(cfg: ExperimentConfig, scenes_by_id: dict[int, Scene],
                     channel: ChannelDataset, graph_inputs: dict[int, np.ndarray],
                     out_dir=None, cells: dict | None = None,
                     pp_cache: dict | None = None):
    """Fine-tuning budget sweep in one held-out environment.

    Fresh UE drops are generated for the designated test environment and
    split into a fine-tuning pool and an evaluation subset; budgets are
    prefixes of the pool, so no evaluated sample ever enters a gradient
    step.
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    cells = {} if cells is None else cells
    pp_cache = {} if pp_cache is None else pp_cache
    cr = cfg["online.cr"]
    env = cfg.online_env()
    budgets = list(cfg["online.budgets"])
    eval_count = cfg["online.eval_count"]

    records: list[MetricsRecord] = []
    for seed in cfg["train.seeds"]:
        cell = _get_cell(cells, cfg, pp_cache, channel, graph_inputs, cr, seed,
                         out_dir, "online")
        pp = pp_cache[cr]
        pool_h, pool_s = None, None
        h_norm, s = _fresh_env_samples(scenes_by_id[env], max(budgets) + eval_count,
                                       cfg["online.seed"], cfg, pp)
        pool_h, pool_s = h_norm[:max(budgets)], s[:max(budgets)]
        ev_h, ev_s = h_norm[max(budgets):], s[max(budgets):]
        truth = denormalize(ev_h, pp.norm)
        eff = cell.recon.dims.m / cell.recon.dims.n

        base_lin, base_db = nmse(
            denormalize(predict_baseline(cell.recon, ev_s), pp.norm), truth)
        records.append(MetricsRecord("general", cr, eff, seed, "test", base_lin,
                                     base_db, cell.step1.train_time_s))
        slots = np.zeros(len(ev_s), dtype=np.intp)
        graphs = stack_graphs(graph_inputs, [env])
        ad_pred = predict_adaptive(cell.recon, cell.hyper, ev_s, graphs, slots)
        ad_lin, ad_db = nmse(denormalize(ad_pred, pp.norm), truth)
        records.append(MetricsRecord("adapcsinet", cr, eff, seed, "test", ad_lin,
                                     ad_db, cell.step1.train_time_s + cell.step2.train_time_s))

        # budget 0 is the untouched baseline copy
        zero_lin, zero_db = nmse(
            denormalize(predict_baseline(cell.recon.copy(), ev_s), pp.norm), truth)
        records.append(MetricsRecord("online(0)", cr, eff, seed, "test", zero_lin,
                                     zero_db, 0.0))
        for k in budgets:
            tuned, res = fine_tune_online(cell.recon, pool_h[:k], pool_s[:k], env,
                                          cfg.online_settings(seed))
            lin, db = nmse(denormalize(predict_baseline(tuned, ev_s), pp.norm), truth)
            records.append(MetricsRecord(f"online({k})", cr, eff, seed, "test",
                                         lin, db, res.train_time_s))
            if out_dir is not None:
                mf.write_run_manifest(
                    out_dir, f"online_k{k}_s{seed}", cfg, inputs={}, outputs=[],
                    seed=seed, wall_clock_s=res.train_time_s,
                    extra={"exception": "online-finetune", "env_id": env,
                           "budget": k, "pool_size": int(max(budgets)),
                           "eval_size": int(eval_count),
                           "gradient_scene_ids": sorted(res.seen_scene_ids)})
    return records, cells, pp_cache


def run_switch_comparison(cfg: ExperimentConfig, scenes_by_id: dict[int, Scene],
                          channel: ChannelDataset, graph_inputs: dict[int, np.ndarray],
                          out_dir=None, cells: dict | None = None,
                          pp_cache: dict | None = None):
    """LOS-specialist baseline vs adaptive model on LOS-only unseen samples."""
    out_dir = Path(out_dir) if out_dir is not None else None
    cells = {} if cells is None else cells
    pp_cache = {} if pp_cache is None else pp_cache
    split = cfg.split_spec()
    flags = los_labels(scenes_by_id, channel.scene_ids, channel.ue_positions)

    records: list[MetricsRecord] = []
    for cr in cfg["switch.crs"]:
        if cr not in pp_cache:
            pp_cache[cr] = _preprocess_for_cr(channel, cfg, cr)
        pp = pp_cache[cr]
        dims = cfg.model_dims(cr)
        eff = dims.m / dims.n

        train_mask = np.isin(pp.scene_ids, list(split.train_env_ids)) & flags
        val_mask = np.isin(pp.scene_ids, list(split.val_env_ids)) & flags
        test_mask = np.isin(pp.scene_ids, list(split.test_env_ids)) & flags
        if train_mask.sum() < cfg["switch.min_los_train"]:
            raise DataInsufficiencyError(
                f"only {int(train_mask.sum())} LOS training samples, "
                f"need {cfg['switch.min_los_train']}")
        if test_mask.sum() < cfg["switch.min_los_eval"] or val_mask.sum() < 1:
            raise DataInsufficiencyError("too few LOS validation/test samples")

        los_pp = pp.subset(train_mask | val_mask)
        test_sub = pp.subset(test_mask)
        truth = denormalize(test_sub.h, pp.norm)
        for seed in cfg["train.seeds"]:
            switch_net, res = train_step1(los_pp, split.train_env_ids,
                                          split.val_env_ids, dims, cfg["model.alpha"],
                                          cfg.train_settings(1, seed))
            lin, db = nmse(denormalize(predict_baseline(switch_net, test_sub.s), pp.norm),
                           truth)
            records.append(MetricsRecord("switch-los", cr, eff, seed, "test", lin,
                                         db, res.train_time_s))
            if out_dir is not None:
                mf.write_run_manifest(
                    out_dir, f"switch_cr{cr.numerator}-{cr.denominator}_s{seed}", cfg,
                    inputs={}, outputs=[], seed=seed, wall_clock_s=res.train_time_s,
                    extra={"gradient_scene_ids": sorted(res.seen_scene_ids),
                           "test_env_ids": sorted(split.test_env_ids)})

            cell = _get_cell(cells, cfg, pp_cache, channel, graph_inputs, cr, seed,
                             out_dir, "switch")
            slots, _ = make_slots(test_sub.scene_ids, split.test_env_ids)
            graphs = stack_graphs(graph_inputs, split.test_env_ids)
            ad_pred = predict_adaptive(cell.recon, cell.hyper, test_sub.s, graphs, slots)
            lin, db = nmse(denormalize(ad_pred, pp.norm), truth)
            records.append(MetricsRecord("adapcsinet", cr, eff, seed, "test", lin, db,
                                         cell.step1.train_time_s + cell.step2.train_time_s))
    return records, cells, pp_cache


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

RESULTS_HEADER = ["method", "cr_nominal", "cr_effective", "seed", "split",
                  "nmse_linear", "nmse_db", "train_time_s"]


def write_records_csv(path, records: list[MetricsRecord], with_time: bool = True) -> Path:
    path = Path(path)
    header = RESULTS_HEADER if with_time else RESULTS_HEADER[:-1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in records:
            writer.writerow(rec.row(with_time=with_time))
    return path


def read_records_csv(path) -> list[MetricsRecord]:
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(MetricsRecord(
                method=row["method"], cr_nominal=Fraction(row["cr_nominal"]),
                cr_effective=float(row["cr_effective"]), seed=int(row["seed"]),
                split=row["split"], nmse_linear=float(row["nmse_linear"]),
                nmse_db=float(row["nmse_db"]),
                train_time_s=float(row.get("train_time_s", 0.0) or 0.0)))
    return records


def median_db(records: list[MetricsRecord], method: str, cr: Fraction | None = None,
              split: str = "test") -> float:
    vals = [r.nmse_db for r in records
            if r.method == method and r.split == split
            and (cr is None or r.cr_nominal == cr)]
    if not vals:
        raise ValueError(f"no records for method={method} cr={cr} split={split}")
    return float(np.median(vals))


def _budget_of(method: str) -> int | None:
    if method.startswith("online(") and method.endswith(")"):
        return int(method[len("online("):-1])
    return None


def write_fig_csvs(out_dir, cr_records, online_records, switch_records) -> list[Path]:
    """One deterministic plot-data CSV per experiment (no timing columns)."""
    out_dir = Path(out_dir)
    paths = []

    p5 = out_dir / "fig5.csv"
    with open(p5, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cr_nominal", "cr_effective", "method", "seed", "nmse_linear", "nmse_db"])
        for r in sorted(cr_records, key=lambda r: (r.cr_nominal, r.method, r.seed)):
            if r.split == "test":
                w.writerow([str(r.cr_nominal), repr(r.cr_effective), r.method,
                            r.seed, repr(r.nmse_linear), repr(r.nmse_db)])
    paths.append(p5)

    p6 = out_dir / "fig6.csv"
    with open(p6, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "budget", "seed", "nmse_linear", "nmse_db"])
        for r in sorted(online_records,
                        key=lambda r: (r.method, r.seed)):
            b = _budget_of(r.method)
            w.writerow([r.method, "" if b is None else b, r.seed,
                        repr(r.nmse_linear), repr(r.nmse_db)])
    paths.append(p6)

    p7 = out_dir / "fig7.csv"
    with open(p7, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cr_nominal", "method", "seed", "nmse_linear", "nmse_db"])
        for r in sorted(switch_records, key=lambda r: (r.cr_nominal, r.method, r.seed)):
            w.writerow([str(r.cr_nominal), r.method, r.seed,
                        repr(r.nmse_linear), repr(r.nmse_db)])
    paths.append(p7)
    return paths
