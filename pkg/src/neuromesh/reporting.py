"""CSV and run-manifest emission.

Every CSV starts with a versioned header comment line carrying the schema
name and a generation timestamp; everything after that first line is a
deterministic function of the run's config and seeds.
"""

from __future__ import annotations

import csv
import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

CSV_FORMAT_VERSION = 1


def write_csv(path, schema: str, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    with open(path, "w", newline="") as fh:
        fh.write(f"# neuromesh-csv schema={schema}/{CSV_FORMAT_VERSION} generated={stamp}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(row)
    return path


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_manifest(path, cfg: dict, outputs) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config_sha256": config_hash(cfg),
        "seed": cfg.get("seed"),
        "network_seed": cfg.get("network", {}).get("seed"),
        "task": cfg.get("task"),
        "outputs": [str(o) for o in outputs],
        "generated": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path
