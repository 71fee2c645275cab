"""Shared fixtures: scripted agents, stub runners, tiny real workspaces."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from intentloop.artifacts import (
    split_paths,
    write_classification_csv,
    write_confounder_csv,
    write_detection_ndjson,
)
from intentloop.gateway import AgentGateway, MockProvider
from intentloop.metrics.classification import ClassificationPredictions
from intentloop.metrics.detection import DetectionPredictions, ImageDetections
from intentloop.task_model import (
    MetricGuard,
    PrimaryMetric,
    TaskSpec,
)
from intentloop.workspace import MetricRecord, RunOutcome, Workspace


def proposal_json(summary: str, config_updates: dict | None = None,
                  edits: list[tuple[str, str]] | None = None,
                  rationale: str = "scripted") -> str:
    """Serialize one developer reply in the patch schema the gateway parses."""
    return json.dumps({
        "summary": summary,
        "rationale": rationale,
        "edits": [{"path": p, "content": c} for p, c in (edits or [])],
        "config_updates": config_updates or {},
    })


def scripted_gateway(responses: list[str], role: str = "*") -> AgentGateway:
    return AgentGateway(MockProvider.from_responses(responses, role=role))


def binary_spec(guards: tuple[MetricGuard, ...] = (),
                secondary: tuple[str, ...] = (),
                confounders=()) -> TaskSpec:
    return TaskSpec(task_kind="binary_classification",
                    classes=("melanoma", "nevus"),
                    primary_metric=PrimaryMetric(metric="auc"),
                    secondary_metrics=tuple(secondary),
                    guards=tuple(guards),
                    confounders=tuple(confounders))


def detection_spec() -> TaskSpec:
    return TaskSpec(task_kind="detection", classes=("fracture",),
                    primary_metric=PrimaryMetric(metric="map50"),
                    secondary_metrics=("map50_95", "precision@50",
                                       "recall@50", "f1@50"))


@pytest.fixture
def tiny_workspace(tmp_path) -> Workspace:
    """Real on-disk workspace with a config file and one source file at v0."""
    ws = Workspace.create(tmp_path / "ws", task_id="t0")
    (ws.current_dir / "config.json").write_text('{"lr": 0.1}\n', encoding="utf-8")
    (ws.current_dir / "train.py").write_text("print('stub')\n", encoding="utf-8")
    ws.snapshot_initial()
    return ws


def completed_outcome(run_index: int, values: list[float],
                      metric: str = "auc",
                      artifacts_dir: Path | None = None) -> RunOutcome:
    records = tuple(MetricRecord(split="val", name=metric, value=v, step=i)
                    for i, v in enumerate(values))
    return RunOutcome(run_index=run_index, kind="train_val", status="completed",
                      exit_code=0, timed_out=True, wall_time_seconds=1.0,
                      records=records, malformed_lines=0,
                      artifacts_dir=artifacts_dir)


def crashed_outcome(run_index: int) -> RunOutcome:
    return RunOutcome(run_index=run_index, kind="train_val", status="crashed",
                      exit_code=3, timed_out=False, wall_time_seconds=0.2,
                      records=(), malformed_lines=1, artifacts_dir=None,
                      stderr_tail="boom")


def make_stub_runner(outcomes: dict[int, RunOutcome]):
    """Runner keyed by run_index; raises if the loop asks for an unplanned run."""
    def run(kind: str, run_index: int) -> RunOutcome:
        assert kind == "train_val"
        return outcomes[run_index]
    return run


def write_binary_artifacts(artifacts_dir: Path, split: str, labels, scores,
                           case_ids=None, confounder=None) -> Path:
    """Drop a scoreable binary-classification artifact set for one split."""
    artifacts_dir.mkdir(parents=True, exist_ok=True)
    labels = np.asarray(labels, dtype=int)
    scores = np.asarray(scores, dtype=float)
    if case_ids is None:
        case_ids = tuple(f"c{i:04d}" for i in range(len(labels)))
    preds = ClassificationPredictions(case_ids=tuple(case_ids), labels=labels,
                                      scores=scores)
    paths = split_paths(artifacts_dir, split)
    write_classification_csv(paths["classification"], preds)
    if confounder is not None:
        write_confounder_csv(paths["confounder"], tuple(case_ids),
                             np.asarray(confounder, dtype=float))
    return artifacts_dir


def write_detection_artifacts(artifacts_dir: Path, split: str,
                              images: list[tuple[list, list]]) -> Path:
    """Images are (gt_boxes, preds) pairs; preds carry a trailing confidence."""
    artifacts_dir.mkdir(parents=True, exist_ok=True)
    packed = []
    for i, (gt, preds) in enumerate(images):
        packed.append(ImageDetections(
            image_id=f"im{i:04d}",
            gt=np.asarray(gt, dtype=float).reshape(-1, 4),
            pred=np.asarray(preds, dtype=float).reshape(-1, 5)))
    det = DetectionPredictions(images=tuple(packed))
    write_detection_ndjson(split_paths(artifacts_dir, split)["detection"], det)
    return artifacts_dir
