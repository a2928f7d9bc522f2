"""Command-line entry point.

Stages map one-to-one onto the pipeline: gen-scenes, gen-csi, preprocess,
train-step1, train-step2, train-online, train-switch, eval, report. Every
stage resolves the same layered config (file, ACN_* environment variables,
--set overrides), writes its outputs under ``out_dir`` and records a
manifest beside them.

Exit codes: 0 success, 2 config/validation error, 3 data error,
4 training divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import channel as ch
from . import csi as csimod
from . import harness as hn
from . import manifest as mf
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, parse_and_validate
from .csi import read_preprocessed, write_preprocessed
from .harness import DataInsufficiencyError, MetricsRecord
from .model import HyperNet, ReconNet, dims_from_config, model_config_dict
from .scene import (SceneGenerationError, generate_scene, load_scene_dir,
                    save_scene_dir, scene_graph_to_model_input)
from .training import TrainingDivergenceError, SplitHygieneError, train_step1, train_step2

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _cr_tag(cr: Fraction) -> str:
    return f"cr{cr.numerator}-{cr.denominator}"


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pp_path(out: Path, cr: Fraction) -> Path:
    return out / f"pp_{_cr_tag(cr)}.acnpp"


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing artifact {path}; run '{produced_by}' first")
    return path


def _load_graph_inputs(scenes_dir: Path):
    scenes, graphs = load_scene_dir(scenes_dir)
    inputs = {sid: scene_graph_to_model_input(g).reshape(-1) for sid, g in graphs.items()}
    return scenes, {s.scene_id: s for s in scenes}, inputs


def _write_history(path: Path, history) -> Path:
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss,lr\n")
        for epoch, tr, va, lr in history:
            fh.write(f"{epoch},{repr(tr)},{repr(va)},{repr(lr)}\n")
    return path


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def cmd_gen_scenes(cfg: ExperimentConfig, args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(cfg)
    params = cfg.scene_params()
    scenes = []
    for sid in range(cfg["scene.count"]):
        seed = int(np.random.SeedSequence((cfg["scene.seed"], sid)).generate_state(1)[0])
        scenes.append(generate_scene(seed, params, scene_id=sid))
    written = save_scene_dir(out / "scenes", scenes, cfg["scene.grid_size"], params)
    mf.write_run_manifest(out, "gen-scenes", cfg, inputs={}, outputs=written,
                          seed=cfg["scene.seed"], wall_clock_s=time.perf_counter() - t0)
    print(f"gen-scenes: wrote {len(scenes)} scenes to {out / 'scenes'}")
    return EXIT_OK


def cmd_gen_csi(cfg: ExperimentConfig, args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(cfg)
    scenes_dir = Path(args.scenes) if args.scenes else _require(out / "scenes", "gen-scenes")
    _require(scenes_dir / "scenes.json", "gen-scenes")
    scenes, _, _ = _load_graph_inputs(scenes_dir)
    out_file = Path(args.out) if args.out else out / "csi.acnds"
    samples = args.samples if args.samples else cfg["channel.samples_per_scene"]
    seed = args.seed if args.seed is not None else cfg["channel.seed"]
    trace_cfg = cfg.trace_config()
    if args.diffraction:
        trace_cfg = type(trace_cfg)(**{**trace_cfg.__dict__, "diffraction": True})
    count = ch.generate_dataset(scenes, samples, seed, trace_cfg, cfg.ula_config(),
                                cfg.ofdm_config(), out_file)
    mf.write_run_manifest(out, "gen-csi", cfg,
                          inputs={"scenes": scenes_dir / "scenes.json"},
                          outputs=[out_file], seed=seed,
                          wall_clock_s=time.perf_counter() - t0)
    print(f"gen-csi: wrote {count} records to {out_file}")
    return EXIT_OK


def cmd_preprocess(cfg: ExperimentConfig, args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(cfg)
    in_file = Path(args.infile) if args.infile else _require(out / "csi.acnds", "gen-csi")
    dataset = ch.read_dataset(in_file)
    nc = args.nc if args.nc else cfg["preprocess.nc"]
    seed = args.seed if args.seed is not None else cfg["preprocess.projection_seed"]
    crs = [Fraction(args.cr)] if args.cr else list(cfg["preprocess.crs"])
    split = cfg.split_spec()
    train_mask = np.isin(dataset.scene_ids, list(split.train_env_ids))
    written = []
    for cr in crs:
        data = csimod.build_preprocessed(dataset.h, dataset.scene_ids, nc, cr, seed,
                                         train_mask)
        out_file = Path(args.out) if args.out and len(crs) == 1 else _pp_path(out, cr)
        write_preprocessed(out_file, data)
        written.append(out_file)
    mf.write_run_manifest(out, "preprocess", cfg, inputs={"csi": in_file},
                          outputs=written, seed=seed,
                          wall_clock_s=time.perf_counter() - t0)
    print(f"preprocess: wrote {', '.join(str(p) for p in written)}")
    return EXIT_OK


def cmd_train_step1(cfg: ExperimentConfig, args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(cfg)
    cr = Fraction(args.cr)
    seed = args.seed
    data = read_preprocessed(_require(_pp_path(out, cr), "preprocess"))
    split = cfg.split_spec()
    dims = cfg.model_dims(cr)
    net, res = train_step1(data, split.train_env_ids, split.val_env_ids, dims,
                           cfg["model.alpha"], cfg.train_settings(1, seed))
    ckpt = out / f"general_{_cr_tag(cr)}_s{seed}.ckpt"
    save_checkpoint(ckpt, net.params, model_config_dict(dims, net.alpha, cr, seed, "recon"))
    hist = _write_history(out / f"hist_step1_{_cr_tag(cr)}_s{seed}.csv", res.history)
    mf.write_run_manifest(out, f"train-step1_{_cr_tag(cr)}_s{seed}", cfg,
                          inputs={"data": _pp_path(out, cr)}, outputs=[ckpt, hist],
                          seed=seed, wall_clock_s=time.perf_counter() - t0,
                          extra={"gradient_scene_ids": sorted(res.seen_scene_ids),
                                 "test_env_ids": sorted(split.test_env_ids),
                                 "best_val": res.best_val, "best_epoch": res.best_epoch})
    print(f"train-step1: best val {res.best_val:.6f} (epoch {res.best_epoch}) -> {ckpt}")
    return EXIT_OK


def cmd_train_step2(cfg: ExperimentConfig, args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(cfg)
    cr = Fraction(args.cr)
    seed = args.seed
    data = read_preprocessed(_require(_pp_path(out, cr), "preprocess"))
    base_path = Path(args.base) if args.base else \
        _require(out / f"general_{_cr_tag(cr)}_s{seed}.ckpt", "train-step1")
    params, conf, _ = load_checkpoint(base_path)
    dims = dims_from_config(conf)
    _check_dims(dims, data, cfg)
    recon = ReconNet(dims=dims, alpha=conf["alpha"], params=params)
    _, _, graph_inputs = _load_graph_inputs(_require(out / "scenes", "gen-scenes"))
    split = cfg.split_spec()
    hyper, res = train_step2(data, graph_inputs, recon, split.train_env_ids,
                             split.val_env_ids, cfg.train_settings(2, seed))
    ckpt = out / f"adaptive_{_cr_tag(cr)}_s{seed}.ckpt"
    both = {f"recon.{k}": v for k, v in recon.params.items()}
    both.update({f"hyper.{k}": v for k, v in hyper.params.items()})
    save_checkpoint(ckpt, both, model_config_dict(dims, recon.alpha, cr, seed, "adaptive"))
    hist = _write_history(out / f"hist_step2_{_cr_tag(cr)}_s{seed}.csv", res.history)
    mf.write_run_manifest(out, f"train-step2_{_cr_tag(cr)}_s{seed}", cfg,
                          inputs={"data": _pp_path(out, cr), "base": base_path},
                          outputs=[ckpt, hist], seed=seed,
                          wall_clock_s=time.perf_counter() - t0,
                          extra={"gradient_scene_ids": sorted(res.seen_scene_ids),
                                 "test_env_ids": sorted(split.test_env_ids),
                                 "best_val": res.best_val, "best_epoch": res.best_epoch})
    print(f"train-step2: best val {res.best_val:.6f} (epoch {res.best_epoch}) -> {ckpt}")
    return EXIT_OK


def _check_dims(dims, data, cfg) -> None:
    if dims.nc != data.nc or dims.nt != data.nt or dims.m != data.m:
        raise ConfigError(
            f"checkpoint dims (nc={dims.nc}, nt={dims.nt}, m={dims.m}) do not match "
            f"dataset (nc={data.nc}, nt={data.nt}, m={data.m})")
    if dims.g != cfg["scene.grid_size"]:
        raise ConfigError(f"checkpoint grid size {dims.g} != configured "
                          f"{cfg['scene.grid_size']}")


def cmd_train_online(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    _require(out / "csi.acnds", "gen-csi")
    dataset = ch.read_dataset(out / "csi.acnds")
    _, scenes_by_id, graph_inputs = _load_graph_inputs(_require(out / "scenes", "gen-scenes"))
    records, _, _ = hn.run_online_sweep(cfg, scenes_by_id, dataset, graph_inputs,
                                        out_dir=out)
    path = hn.write_records_csv(out / "online_records.csv", records)
    mf.write_run_manifest(out, "train-online", cfg, inputs={"csi": out / "csi.acnds"},
                          outputs=[path], seed=cfg["online.seed"], wall_clock_s=0.0)
    print(f"train-online: {len(records)} records -> {path}")
    return EXIT_OK


def cmd_train_switch(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    dataset = ch.read_dataset(_require(out / "csi.acnds", "gen-csi"))
    _, scenes_by_id, graph_inputs = _load_graph_inputs(_require(out / "scenes", "gen-scenes"))
    records, _, _ = hn.run_switch_comparison(cfg, scenes_by_id, dataset, graph_inputs,
                                             out_dir=out)
    path = hn.write_records_csv(out / "switch_records.csv", records)
    mf.write_run_manifest(out, "train-switch", cfg, inputs={"csi": out / "csi.acnds"},
                          outputs=[path], seed=cfg["scene.seed"], wall_clock_s=0.0)
    print(f"train-switch: {len(records)} records -> {path}")
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(cfg)
    ckpt_path = Path(args.ckpt)
    params, conf, _ = load_checkpoint(_require(ckpt_path, "train-step1/train-step2"))
    cr = Fraction(conf["cr_num"], conf["cr_den"])
    data = read_preprocessed(_require(_pp_path(out, cr), "preprocess"))
    dims = dims_from_config(conf)
    _check_dims(dims, data, cfg)
    split = cfg.split_spec()
    env_ids = split.test_env_ids if args.split == "test" else split.val_env_ids

    from .training import make_slots, predict_adaptive, predict_baseline, stack_graphs
    from .csi import denormalize

    sub = data.subset(np.isin(data.scene_ids, list(env_ids)))
    truth = denormalize(sub.h, data.norm)
    eff = dims.m / dims.n
    if conf["kind"] == "recon":
        net = ReconNet(dims=dims, alpha=conf["alpha"], params=params)
        pred = predict_baseline(net, sub.s)
        method = "general"
    elif conf["kind"] == "adaptive":
        recon = ReconNet(dims=dims, alpha=conf["alpha"],
                         params={k[len("recon."):]: v for k, v in params.items()
                                 if k.startswith("recon.")})
        hyper = HyperNet(dims=dims,
                         params={k[len("hyper."):]: v for k, v in params.items()
                                 if k.startswith("hyper.")})
        _, _, graph_inputs = _load_graph_inputs(_require(out / "scenes", "gen-scenes"))
        slots, _ = make_slots(sub.scene_ids, env_ids)
        pred = predict_adaptive(recon, hyper, sub.s, stack_graphs(graph_inputs, env_ids),
                                slots)
        method = "adapcsinet"
    else:
        raise ConfigError(f"unknown checkpoint kind {conf['kind']!r}")

    lin, db = hn.nmse(denormalize(pred, data.norm), truth)
    rec = MetricsRecord(method, cr, eff, conf["seed"], args.split, lin, db, 0.0)
    path = hn.write_records_csv(out / f"eval_{ckpt_path.stem}_{args.split}.csv", [rec])
    mf.write_run_manifest(out, f"eval_{ckpt_path.stem}_{args.split}", cfg,
                          inputs={"ckpt": ckpt_path, "data": _pp_path(out, cr)},
                          outputs=[path], seed=conf["seed"],
                          wall_clock_s=time.perf_counter() - t0)
    print(f"eval: {method} {cr} {args.split} NMSE {db:.3f} dB -> {path}")
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig, args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(cfg)
    cr_records = []
    for p in sorted(out.glob("eval_*.csv")):
        cr_records += hn.read_records_csv(p)
    online_records = hn.read_records_csv(out / "online_records.csv") \
        if (out / "online_records.csv").exists() else []
    switch_records = hn.read_records_csv(out / "switch_records.csv") \
        if (out / "switch_records.csv").exists() else []
    all_records = cr_records + online_records + switch_records
    if not all_records:
        raise FileNotFoundError("no records found; run eval/train-online/train-switch first")
    results = hn.write_records_csv(out / "results.csv", all_records)
    figs = hn.write_fig_csvs(out, cr_records, online_records, switch_records)
    mf.write_run_manifest(out, "report", cfg, inputs={}, outputs=[results, *figs],
                          seed=0, wall_clock_s=time.perf_counter() - t0)
    print(f"report: wrote {results} and {', '.join(str(p) for p in figs)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adapcsinet",
        description="Environment-adaptive CSI feedback testbed")
    parser.add_argument("-c", "--config", help="config file (key = value lines)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    parser.add_argument("--profile", choices=["desk", "paper"],
                        help="shortcut for --set profile=...")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-scenes", help="generate the scene set and rasters")

    p = sub.add_parser("gen-csi", help="ray trace CSI samples for every scene")
    p.add_argument("--scenes", help="scene directory (default: <out_dir>/scenes)")
    p.add_argument("--out", help="output dataset file")
    p.add_argument("--samples", type=int, help="samples per scene")
    p.add_argument("--seed", type=int)
    p.add_argument("--diffraction", action="store_true",
                   help="enable knife-edge diffraction paths")

    p = sub.add_parser("preprocess", help="angular-delay transform + compression")
    p.add_argument("--in", dest="infile", help="input dataset file")
    p.add_argument("--out", help="output file (single --cr only)")
    p.add_argument("--nc", type=int, help="delay rows kept")
    p.add_argument("--cr", help="single compression ratio, e.g. 1/16")
    p.add_argument("--seed", type=int, help="projection seed")

    for name in ("train-step1", "train-step2"):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} for one (cr, seed) cell")
        p.add_argument("--cr", required=True, help="compression ratio, e.g. 1/16")
        p.add_argument("--seed", type=int, required=True)
        if name == "train-step2":
            p.add_argument("--base", help="baseline checkpoint (default by convention)")

    sub.add_parser("train-online", help="online fine-tuning budget sweep")
    sub.add_parser("train-switch", help="LOS-specialist comparison")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=["val", "test"], default="test")

    sub.add_parser("report", help="merge records and emit figure CSVs")
    return parser


_COMMANDS = {
    "gen-scenes": cmd_gen_scenes,
    "gen-csi": cmd_gen_csi,
    "preprocess": cmd_preprocess,
    "train-step1": cmd_train_step1,
    "train-step2": cmd_train_step2,
    "train-online": cmd_train_online,
    "train-switch": cmd_train_switch,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    for item in args.set:
        if "=" not in item:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return EXIT_CONFIG
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.profile:
        overrides["profile"] = args.profile

    try:
        cfg = parse_and_validate(args.config, overrides)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergenceError as err:
        print(f"training diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FileNotFoundError, ValueError, SceneGenerationError, SplitHygieneError,
            DataInsufficiencyError, ch.NoPathsError, ch.DatasetGenerationError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
