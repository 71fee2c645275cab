"""Pseudo-trainer child process.

Stands in for a real training job inside mock workspaces. Sleeps through a
configurable epoch schedule, emits one JSON metric record per line on stdout,
and writes prediction artifacts whose quality is fully determined by the
config (so identical configs yield byte-identical artifacts).

Record protocol, one JSON object per stdout line:

    {"event": "metric", "split": "train"|"val", "name": str,
     "value": finite float, "step": int}

Anything else on stdout is noise the harness counts and ignores. A run with
no val record of the primary metric is treated as crashed regardless of exit
status, so ``fail_mode`` settings exercise exactly that contract:

* ``crash``   - emit a truncated line, exit 3 before any valid record
* ``silent``  - run the schedule but emit nothing, exit 0
* ``noisy``   - interleave malformed lines with valid ones
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .. import artifacts as art
from . import SimConfig, primary_metric_value, simulate_classifier_predictions, \
    simulate_detection_set

# Sleep headroom reserved for artifact writes so the budget SIGTERM does not
# land mid-write.
def _write_margin(period: float) -> float:
    return max(0.25, 0.5 * period)


def _emit(record: dict, allow_nan: bool = False) -> None:
    sys.stdout.write(json.dumps(record, allow_nan=allow_nan) + "\n")
    sys.stdout.flush()


def _read_case_list(path: Path) -> tuple[str, ...]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if rows and rows[0] and rows[0][0].strip().lower() == "case_id":
        rows = rows[1:]
    return tuple(row[0].strip() for row in rows if row[0].strip())


def _primary_name(cfg: SimConfig) -> str:
    return "map50" if cfg.task_kind == "detection" else "auc"


def _write_artifacts(cfg: SimConfig, out_dir: Path, split: str,
                     case_ids) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = art.split_paths(out_dir, split)
    if cfg.task_kind == "detection":
        det = simulate_detection_set(cfg, image_ids=case_ids, stream=split)
        art.write_detection_ndjson(paths["detection"], det)
        return
    preds, p_conf = simulate_classifier_predictions(cfg, case_ids=case_ids,
                                                    stream=split)
    class_names = cfg.class_names if cfg.task_kind == "multiclass_classification" else None
    art.write_classification_csv(paths["classification"], preds,
                                 class_names=class_names)
    if p_conf is not None:
        art.write_confounder_csv(paths["confounder"], preds.case_ids, p_conf)


def _training_schedule(cfg: SimConfig, budget: float, run_index: int) -> None:
    q_final = primary_metric_value(cfg)
    name = _primary_name(cfg)
    period = cfg.epoch_period_seconds
    usable = budget - _write_margin(period) - cfg.startup_allowance_seconds
    epochs = min(cfg.epochs, max(0, int(math.floor(usable / period))))
    noisy = cfg.fail_mode == "noisy"
    silent = cfg.fail_mode == "silent"
    for e in range(1, epochs + 1):
        time.sleep(period)
        rng = np.random.default_rng((cfg.seed, 1000 + run_index, e))
        noise = float(rng.uniform(-cfg.noise_band, cfg.noise_band))
        value = q_final - cfg.curve_start_delta * math.exp(-(e - 1) / cfg.curve_tau)
        value = min(0.999, max(0.001, value + noise))
        loss = math.exp(-(e - 1) / cfg.curve_tau) + abs(noise)
        if silent:
            continue
        if noisy:
            sys.stdout.write(f"epoch {e}/{epochs} starting\n")
            _emit({"event": "metric", "split": "val", "name": name,
                   "value": float("nan"), "step": e}, allow_nan=True)
        _emit({"event": "metric", "split": "train", "name": "loss",
               "value": loss, "step": e})
        _emit({"event": "metric", "split": "val", "name": name,
               "value": value, "step": e})


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="simlab-trainer")
    parser.add_argument("--config", required=True)
    parser.add_argument("--budget-secs", type=float, required=True)
    parser.add_argument("--run-index", type=int, default=0)
    parser.add_argument("--split", choices=("val", "test"), default="val")
    parser.add_argument("--out", default="artifacts")
    parser.add_argument("--val-list", default=None,
                        help="case list for val artifacts")
    parser.add_argument("--case-list", default=None,
                        help="case list for test artifacts (test split only)")
    args = parser.parse_args(argv)

    cfg = SimConfig.from_json_file(Path(args.config))
    if cfg.fail_mode == "crash":
        sys.stdout.write('{"event": "metric", "split": "val"')
        sys.stdout.flush()
        print("simulated failure injected by config", file=sys.stderr)
        return 3

    out_dir = Path(args.out)
    val_ids = _read_case_list(Path(args.val_list)) if args.val_list else None

    if args.split == "test":
        if not args.case_list:
            print("--case-list is required for the test split", file=sys.stderr)
            return 2
        test_ids = _read_case_list(Path(args.case_list))
        # Val artifacts first: the harness freezes operating points on them.
        _write_artifacts(cfg, out_dir, "val", val_ids)
        _write_artifacts(cfg, out_dir, "test", test_ids)
        _emit({"event": "metric", "split": "val", "name": _primary_name(cfg),
               "value": primary_metric_value(cfg), "step": 0})
        return 0

    _training_schedule(cfg, args.budget_secs, args.run_index)
    if cfg.fail_mode != "silent":
        _write_artifacts(cfg, out_dir, "val", val_ids)
    return 0


if __name__ == "__main__":
    sys.exit(main())
