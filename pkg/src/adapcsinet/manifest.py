"""Run manifests tying artifacts to the config, inputs and seeds behind them.

Every pipeline stage writes ``manifests/<name>.json`` next to its outputs
with the resolved-config hash, sha256 of each input and output file, the
seed and wall-clock time. Chasing inputs through manifests leads any
artifact back to raw seeds; the split-hygiene audit also reads the
per-training-run environment ids recorded here.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(out_dir, name: str, cfg, inputs: dict, outputs: list,
                       seed: int, wall_clock_s: float, extra: dict | None = None) -> Path:
    """inputs: {label: path}; outputs: list of paths (hashed)."""
    out_dir = Path(out_dir)
    mdir = out_dir / "manifests"
    mdir.mkdir(parents=True, exist_ok=True)
    doc = {
        "name": name,
        "config_hash": cfg.config_hash(),
        "inputs": {label: {"path": str(p), "sha256": sha256_file(p)}
                   for label, p in inputs.items()},
        "outputs": [{"path": str(p), "sha256": sha256_file(p)} for p in outputs],
        "seed": seed,
        "wall_clock_s": wall_clock_s,
    }
    if extra:
        doc.update(extra)
    path = mdir / f"{name}.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


def load_manifests(out_dir) -> list[dict]:
    mdir = Path(out_dir) / "manifests"
    if not mdir.is_dir():
        return []
    return [json.loads(p.read_text()) for p in sorted(mdir.glob("*.json"))]


def audit_split_hygiene(out_dir, test_env_ids) -> list[str]:
    """Check that no recorded gradient step saw a test environment.

    The single allowed exception is online fine-tuning, which must be
    flagged as such, confined to one designated environment, and backed
    by a pool disjoint from the evaluation subset.
    """
    test = set(int(i) for i in test_env_ids)
    violations = []
    for doc in load_manifests(out_dir):
        seen = set(int(i) for i in doc.get("gradient_scene_ids", []))
        leaked = seen & test
        if not leaked:
            continue
        if doc.get("exception") == "online-finetune":
            if seen != {int(doc["env_id"])}:
                violations.append(f"{doc['name']}: fine-tuned outside its environment")
            if doc.get("pool_size", 0) <= 0 or doc.get("eval_size", 0) <= 0:
                violations.append(f"{doc['name']}: missing pool/eval accounting")
        else:
            violations.append(f"{doc['name']}: test environments {sorted(leaked)} "
                              "entered gradient updates")
    return violations


def audit_manifest_chain(out_dir) -> list[str]:
    """Every data artifact must appear as an output of some manifest."""
    out_dir = Path(out_dir)
    produced = set()
    for doc in load_manifests(out_dir):
        for out in doc.get("outputs", []):
            produced.add(Path(out["path"]).name)
    missing = []
    for p in sorted(out_dir.iterdir()):
        if p.is_dir() or p.suffix == ".json":
            continue
        if p.name not in produced:
            missing.append(p.name)
    return missing
