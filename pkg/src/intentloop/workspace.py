"""Versioned working directory plus child-process execution.

A workspace owns one task's mutable state:

* ``current/`` is the live tree a run executes in (config, entrypoints,
  case lists). Every accepted or attempted change produces a full snapshot
  under ``versions/v%04d`` so any state can be restored exactly.
* ``runs/run_%04d/`` holds per-run evidence: raw child stdout/stderr, a
  metadata record, and the prediction artifacts the child wrote.
* The test-split case list is sealed at creation: encrypted with a key the
  tuning loop never hands to children, so no training-phase process can read
  which cases are in the test set, let alone their contents.

Patches are applied stage-and-swap: the new tree is built next to the old
one and renamed into place, so a crash mid-patch never leaves ``current/``
half-edited.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from cryptography.fernet import Fernet, InvalidToken

from .errors import (
    PatchConflict,
    PathEscape,
    ScaffoldInvalid,
    UnknownVersion,
)
from .gateway import validate_edit_path
from .task_model import ManifestRef, TaskSpec

SNAPSHOT_EXCLUDE = ("artifacts", "__pycache__")

WORKSPACE_FILE = "workspace.json"
KEY_FILE = "quarantine.key"
TEST_LIST_ENC = "test_list.enc"

DEFAULT_GRACE_SECONDS = 10.0


@dataclass(frozen=True)
class MetricRecord:
    split: str
    name: str
    value: float
    step: int

    def to_dict(self) -> dict:
        return {"split": self.split, "name": self.name,
                "value": self.value, "step": self.step}


def ingest_record(obj) -> MetricRecord | None:
    """Validate one parsed stdout object against the child protocol.

    Returns None for anything malformed: wrong event, unknown split, missing
    fields, non-finite or boolean values. Callers count Nones, never raise.
    """
    if not isinstance(obj, dict) or obj.get("event") != "metric":
        return None
    split = obj.get("split")
    name = obj.get("name")
    value = obj.get("value")
    step = obj.get("step")
    if split not in ("train", "val"):
        return None
    if not isinstance(name, str) or not name:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return None
    value = float(value)
    if value != value or value in (float("inf"), float("-inf")):
        return None
    if isinstance(step, bool) or not isinstance(step, int) or step < 0:
        return None
    return MetricRecord(split=split, name=name, value=value, step=step)


@dataclass
class RunOutcome:
    run_index: int
    kind: str  # "train_val" | "test" | "probe"
    status: str  # "completed" | "crashed"
    exit_code: int | None
    timed_out: bool
    wall_time_seconds: float
    records: tuple[MetricRecord, ...]
    malformed_lines: int
    artifacts_dir: Path | None
    stderr_tail: str = ""

    def val_trace(self, metric_name: str) -> list[float]:
        return [r.value for r in self.records
                if r.split == "val" and r.name == metric_name]

    def best_val(self, metric_name: str, maximize: bool = True) -> float | None:
        trace = self.val_trace(metric_name)
        if not trace:
            return None
        return max(trace) if maximize else min(trace)


# --- tree hashing ------------------------------------------------------------

def _iter_tree(root: Path):
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = sorted(d for d in dirnames if d not in SNAPSHOT_EXCLUDE)
        for fn in sorted(filenames):
            if fn.endswith(".pyc"):
                continue
            full = Path(dirpath) / fn
            yield full.relative_to(root), full


def tree_hash(root: Path) -> str:
    h = hashlib.sha256()
    for rel, full in _iter_tree(root):
        h.update(str(rel).encode())
        h.update(b"\x00")
        h.update(hashlib.sha256(full.read_bytes()).digest())
        h.update(b"\x01")
    return h.hexdigest()


def _copy_tree(src: Path, dst: Path) -> None:
    shutil.copytree(src, dst,
                    ignore=shutil.ignore_patterns(*SNAPSHOT_EXCLUDE, "*.pyc"))


# --- quarantine --------------------------------------------------------------

def seal_test_list(root: Path, plaintext: str) -> Path:
    """Encrypt the test case list at rest; returns the ciphertext path."""
    key = Fernet.generate_key()
    key_path = root / KEY_FILE
    key_path.write_bytes(key)
    os.chmod(key_path, 0o400)
    enc_path = root / TEST_LIST_ENC
    enc_path.write_bytes(Fernet(key).encrypt(plaintext.encode("utf-8")))
    return enc_path

def unseal_test_list(root: Path) -> str:
    key = (root / KEY_FILE).read_bytes()
    token = (root / TEST_LIST_ENC).read_bytes()
    try:
        return Fernet(key).decrypt(token).decode("utf-8")
    except InvalidToken as exc:
        raise ScaffoldInvalid("sealed test list failed integrity check") from exc


def quarantine_leak_check(root: Path, case_ids) -> bool:
    """True when no test case id is recoverable from the tuning-visible tree.

    Scans ``current/`` and the ciphertext itself for the literal ids. A hit
    means quarantine is broken.
    """
    needles = [cid.encode("utf-8") for cid in case_ids]
    blobs = [(root / TEST_LIST_ENC).read_bytes()]
    current = root / "current"
    if current.exists():
        blobs.extend(full.read_bytes() for _, full in _iter_tree(current))
    return not any(n in blob for blob in blobs for n in needles)


# --- the workspace -----------------------------------------------------------

@dataclass
class Workspace:
    root: Path
    task_id: str
    next_version: int = 0
    history: list = field(default_factory=list)  # {"version", "tree_hash", "note"}

    # paths
    @property
    def current_dir(self) -> Path:
        return self.root / "current"

    @property
    def versions_dir(self) -> Path:
        return self.root / "versions"

    @property
    def runs_dir(self) -> Path:
        return self.root / "runs"

    def version_dir(self, version: int) -> Path:
        return self.versions_dir / f"v{version:04d}"

    def run_dir(self, run_index: int) -> Path:
        return self.runs_dir / f"run_{run_index:04d}"

    # -- persistence ----------------------------------------------------------

    def _save(self) -> None:
        payload = {"task_id": self.task_id, "next_version": self.next_version,
                   "history": self.history}
        (self.root / WORKSPACE_FILE).write_text(
            json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def open(cls, root: Path) -> "Workspace":
        root = Path(root)
        payload = json.loads((root / WORKSPACE_FILE).read_text(encoding="utf-8"))
        return cls(root=root, task_id=payload["task_id"],
                   next_version=payload["next_version"],
                   history=payload["history"])

    @classmethod
    def create(cls, root: Path, task_id: str) -> "Workspace":
        root = Path(root)
        (root / "current").mkdir(parents=True)
        (root / "versions").mkdir()
        (root / "runs").mkdir()
        ws = cls(root=root, task_id=task_id)
        ws._save()
        return ws

    # -- versioning -----------------------------------------------------------

    def current_tree_hash(self) -> str:
        return tree_hash(self.current_dir)

    def _snapshot_current(self, note: str) -> int:
        version = self.next_version
        _copy_tree(self.current_dir, self.version_dir(version))
        self.next_version = version + 1
        self.history.append({"version": version,
                             "tree_hash": self.current_tree_hash(),
                             "note": note})
        self._save()
        return version

    def snapshot_initial(self) -> int:
        return self._snapshot_current("initial scaffold")

    def apply_patch(self, edits, config_updates=None, note: str = "",
                    expected_tree_hash: str | None = None) -> int:
        """Stage a modified tree, swap it in, snapshot it as a new version.

        ``expected_tree_hash`` pins the state the change was computed
        against; a mismatch raises PatchConflict before anything is touched.
        """
        if expected_tree_hash is not None:
            actual = self.current_tree_hash()
            if actual != expected_tree_hash:
                raise PatchConflict(
                    f"workspace moved: expected {expected_tree_hash[:12]}, "
                    f"found {actual[:12]}")
        stage = self.root / f".stage-{uuid.uuid4().hex[:8]}"
        old = self.root / f".old-{uuid.uuid4().hex[:8]}"
        moved = False
        try:
            _copy_tree(self.current_dir, stage)
            for edit in edits:
                rel = validate_edit_path(edit.path)
                target = stage / rel
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_text(edit.content, encoding="utf-8")
            if config_updates:
                self._apply_config_updates(stage / "config.json", config_updates)
            os.rename(self.current_dir, old)
            moved = True
            os.rename(stage, self.current_dir)
            shutil.rmtree(old)
        except Exception:
            if moved and not self.current_dir.exists():
                os.rename(old, self.current_dir)
            shutil.rmtree(stage, ignore_errors=True)
            raise
        return self._snapshot_current(note or "patch")

    @staticmethod
    def _apply_config_updates(config_path: Path, updates: dict) -> None:
        doc = json.loads(config_path.read_text(encoding="utf-8"))
        for dotted, value in updates.items():
            parts = [p for p in str(dotted).split(".") if p]
            if not parts:
                raise PathEscape(f"empty config path {dotted!r}")
            node = doc
            for part in parts[:-1]:
                nxt = node.get(part)
                if not isinstance(nxt, dict):
                    nxt = {}
                    node[part] = nxt
                node = nxt
            node[parts[-1]] = value
        config_path.write_text(json.dumps(doc, indent=2) + "\n",
                               encoding="utf-8")

    def revert_to(self, version: int, note: str = "") -> int:
        """Restore an old snapshot as a brand-new version (history is append-only)."""
        src = self.version_dir(version)
        if not src.exists():
            raise UnknownVersion(f"no snapshot v{version:04d}")
        stage = self.root / f".stage-{uuid.uuid4().hex[:8]}"
        old = self.root / f".old-{uuid.uuid4().hex[:8]}"
        _copy_tree(src, stage)
        os.rename(self.current_dir, old)
        os.rename(stage, self.current_dir)
        shutil.rmtree(old)
        return self._snapshot_current(note or f"revert to v{version:04d}")

    # -- execution --------------------------------------------------------------

    def _entrypoint_argv(self, kind: str, budget: float, run_index: int,
                         case_list: str = "") -> list[str]:
        doc = json.loads((self.current_dir / "entrypoints.json")
                         .read_text(encoding="utf-8"))
        if kind not in doc:
            raise ScaffoldInvalid(f"entrypoints.json has no {kind!r} command")
        argv = [str(a) for a in doc[kind]]
        subs = {"{budget}": repr(float(budget)),
                "{run_index}": str(int(run_index)),
                "{case_list}": case_list}
        out = []
        for arg in argv:
            for token, rep in subs.items():
                arg = arg.replace(token, rep)
            out.append(arg)
        return out

    def execute_run(self, kind: str, run_index: int, budget_seconds: float,
                    required_metric: str, grace_seconds: float = DEFAULT_GRACE_SECONDS,
                    case_list: str = "", early_exit: bool = False) -> RunOutcome:
        """Run one child under the wall-clock budget and collect its records.

        SIGTERM lands on the whole process group at budget expiry; SIGKILL
        after the grace window. ``completed`` requires at least one
        well-formed val record of ``required_metric``; exit status alone
        never rescues a run. ``early_exit`` stops the child on the first such
        record (scaffold probing).
        """
        argv = self._entrypoint_argv(kind, budget_seconds, run_index, case_list)
        run_dir = self.run_dir(run_index)
        run_dir.mkdir(parents=True, exist_ok=True)
        stdout_log = open(run_dir / "stdout.log", "w", encoding="utf-8")
        stderr_log = open(run_dir / "stderr.log", "w+", encoding="utf-8")

        records: list[MetricRecord] = []
        malformed = 0
        satisfied = threading.Event()

        start = time.monotonic()
        proc = subprocess.Popen(
            argv, cwd=self.current_dir, stdout=subprocess.PIPE,
            stderr=stderr_log, text=True, start_new_session=True)

        def _reader():
            nonlocal malformed
            assert proc.stdout is not None
            for line in proc.stdout:
                stdout_log.write(line)
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except ValueError:
                    obj = None
                rec = ingest_record(obj)
                if rec is None:
                    malformed += 1
                    continue
                records.append(rec)
                if rec.split == "val" and rec.name == required_metric:
                    satisfied.set()

        reader = threading.Thread(target=_reader, daemon=True)
        reader.start()

        timed_out = False
        deadline = start + budget_seconds
        while True:
            if early_exit and satisfied.is_set():
                self._kill_group(proc, signal.SIGTERM)
                break
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                timed_out = proc.poll() is None
                break
            try:
                proc.wait(timeout=min(0.05, remaining) if early_exit else remaining)
                break
            except subprocess.TimeoutExpired:
                continue

        if proc.poll() is None:
            self._kill_group(proc, signal.SIGTERM)
            try:
                proc.wait(timeout=grace_seconds)
            except subprocess.TimeoutExpired:
                self._kill_group(proc, signal.SIGKILL)
                proc.wait()
        reader.join(timeout=5.0)
        wall = time.monotonic() - start
        stdout_log.close()

        stderr_log.seek(0)
        tail = stderr_log.read()[-2000:]
        stderr_log.close()

        artifacts_src = self.current_dir / "artifacts"
        artifacts_dst = None
        if artifacts_src.exists():
            artifacts_dst = run_dir / "artifacts"
            if artifacts_dst.exists():
                shutil.rmtree(artifacts_dst)
            shutil.move(str(artifacts_src), str(artifacts_dst))

        status = "completed" if satisfied.is_set() else "crashed"
        outcome = RunOutcome(
            run_index=run_index, kind=kind, status=status,
            exit_code=proc.returncode, timed_out=timed_out,
            wall_time_seconds=wall, records=tuple(records),
            malformed_lines=malformed, artifacts_dir=artifacts_dst,
            stderr_tail=tail)
        meta = {"run_index": run_index, "kind": kind, "status": status,
                "exit_code": proc.returncode, "timed_out": timed_out,
                "wall_time_seconds": wall, "malformed_lines": malformed,
                "unix_time": time.time(),
                "records": [r.to_dict() for r in records]}
        (run_dir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n",
                                           encoding="utf-8")
        return outcome

    @staticmethod
    def _kill_group(proc: subprocess.Popen, sig: int) -> None:
        try:
            os.killpg(os.getpgid(proc.pid), sig)
        except (ProcessLookupError, PermissionError):
            pass

    def run_test_split(self, run_index: int, budget_seconds: float,
                       required_metric: str,
                       grace_seconds: float = DEFAULT_GRACE_SECONDS) -> RunOutcome:
        """Unseal the test list into a throwaway file and run the test entrypoint."""
        plaintext = unseal_test_list(self.root)
        fd, tmp = tempfile.mkstemp(prefix="cases-", suffix=".csv")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(plaintext)
            return self.execute_run("test", run_index, budget_seconds,
                                    required_metric, grace_seconds,
                                    case_list=tmp)
        finally:
            os.unlink(tmp)


# --- scaffold creation --------------------------------------------------------

def _case_list_csv(ids, annotations) -> str:
    lines = ["case_id,annotation"]
    lines.extend(f"{cid},{ann}" for cid, ann in zip(ids, annotations))
    return "\n".join(lines) + "\n"


def generate_manifest(spec: TaskSpec, root: Path, seed: int,
                      n_train: int = 600, n_val: int = 400,
                      n_test: int = 400) -> ManifestRef:
    """Write split case lists; the test list is sealed, never stored in clear.

    Mixed supervision marks a 5% slice of the train split as box-annotated
    and the rest image-level; full supervision keeps one kind throughout.
    """
    import numpy as np

    lists_dir = root / "current" / "lists"
    lists_dir.mkdir(parents=True, exist_ok=True)
    splits = {"train": [f"train_{i:06d}" for i in range(n_train)],
              "val": [f"val_{i:06d}" for i in range(n_val)],
              "test": [f"test_{i:06d}" for i in range(n_test)]}

    full_kind = "boxes" if spec.task_kind == "detection" else "image_level"
    annotations = {name: [full_kind] * len(ids) for name, ids in splits.items()}
    if spec.supervision == "mixed":
        rng = np.random.default_rng((seed, 7))
        n_boxed = max(1, int(round(0.05 * n_train)))
        boxed = set(rng.choice(n_train, size=n_boxed, replace=False).tolist())
        annotations["train"] = ["boxes" if i in boxed else "image_level"
                                for i in range(n_train)]

    train_path = lists_dir / "train.csv"
    val_path = lists_dir / "val.csv"
    train_path.write_text(_case_list_csv(splits["train"], annotations["train"]),
                          encoding="utf-8")
    val_path.write_text(_case_list_csv(splits["val"], annotations["val"]),
                        encoding="utf-8")
    enc_path = seal_test_list(root, _case_list_csv(splits["test"],
                                                   annotations["test"]))
    return ManifestRef(train_list=str(train_path.relative_to(root)),
                       val_list=str(val_path.relative_to(root)),
                       test_list=str(enc_path.relative_to(root)),
                       quarantined=True)


def _mock_entrypoints() -> dict:
    base = [sys.executable, "-m", "intentloop.simlab.trainer",
            "--config", "config.json", "--budget-secs", "{budget}",
            "--run-index", "{run_index}", "--out", "artifacts",
            "--val-list", "lists/val.csv"]
    return {"train_val": base + ["--split", "val"],
            "test": base + ["--split", "test", "--case-list", "{case_list}"]}


def initialize_workspace(spec: TaskSpec, root: Path, seed: int,
                         mode: str = "mock", gateway=None,
                         task_id: str = "task",
                         sim_overrides: dict | None = None,
                         n_train: int = 600, n_val: int = 400,
                         n_test: int = 400, probe: bool = True,
                         probe_budget: float = 20.0) -> tuple[Workspace, ManifestRef]:
    """Build a runnable scaffold for a confirmed task spec.

    Mock mode synthesizes a simulator-backed project; agent mode asks the
    scaffolding agent for files and entrypoints. Either way the result must
    survive a dry-run probe (first valid val record of the primary metric,
    then early exit) or ScaffoldInvalid is raised.
    """
    from .metrics.registry import parse_metric_id
    from .simlab import default_sim_config

    root = Path(root)
    ws = Workspace.create(root, task_id=task_id)
    manifest = generate_manifest(spec, root, seed, n_train, n_val, n_test)

    if mode == "mock":
        cfg = default_sim_config(spec, seed=seed, n_cases=n_val)
        doc = cfg.to_dict()
        if sim_overrides:
            doc.update(sim_overrides)
        (ws.current_dir / "config.json").write_text(
            json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        (ws.current_dir / "entrypoints.json").write_text(
            json.dumps(_mock_entrypoints(), indent=2) + "\n", encoding="utf-8")
    elif mode == "agent":
        if gateway is None:
            raise ScaffoldInvalid("agent mode needs a gateway")
        _agent_scaffold(ws, spec, gateway)
    else:
        raise ScaffoldInvalid(f"unknown workspace mode {mode!r}")

    ws.snapshot_initial()

    if probe:
        base, _ = parse_metric_id(spec.primary_metric.metric)
        outcome = ws.execute_run("train_val", run_index=0,
                                 budget_seconds=probe_budget,
                                 required_metric=base, early_exit=True)
        probe_dir = ws.run_dir(0)
        if probe_dir.exists():
            shutil.rmtree(probe_dir)
        if outcome.status != "completed":
            raise ScaffoldInvalid(
                "scaffold dry run produced no valid val record of "
                f"{base!r}: {outcome.stderr_tail[-500:]}")
    return ws, manifest


def _agent_scaffold(ws: Workspace, spec: TaskSpec, gateway) -> None:
    from .gateway import AgentRole, render_template
    from .task_model import _extract_json_object, spec_to_json

    manifest_summary = json.dumps({
        "train_list": "lists/train.csv", "val_list": "lists/val.csv",
        "test_list": "sealed until evaluation"})
    prompt = render_template("task_initializer",
                             spec_json=spec_to_json(spec),
                             manifest_summary=manifest_summary)
    response = gateway.complete(AgentRole.TASK_INITIALIZER, prompt)
    payload = _extract_json_object(response)
    files = payload.get("files")
    entrypoints = payload.get("entrypoints")
    if not isinstance(files, dict) or not isinstance(entrypoints, dict) \
            or "train_val" not in entrypoints or "test" not in entrypoints:
        raise ScaffoldInvalid("scaffolding agent returned no usable project")
    for rel, content in files.items():
        target = ws.current_dir / validate_edit_path(str(rel))
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(str(content), encoding="utf-8")
    (ws.current_dir / "entrypoints.json").write_text(
        json.dumps(entrypoints, indent=2) + "\n", encoding="utf-8")
