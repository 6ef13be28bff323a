"""Run configuration, build id, metrics CSV and the per-chair worker pool."""
from __future__ import annotations

import csv
import io
import json
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from partforge.errors import ConfigError

METRIC_FIELDS = ("method", "split", "success_rate", "plan_steps")
METHODS = ("ours_oc", "ours_full", "baseline_oc")
SPLITS = ("easy_train", "hard_train", "test")
RL_METHODS = ("ours_oc", "ours_full")


def build_id() -> str:
    """Short git hash of the source tree, or ``"unknown"`` outside a checkout."""
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).resolve().parent,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def parse_caps(text: str) -> tuple[int, int, int]:
    try:
        caps = tuple(int(x) for x in str(text).split(","))
    except ValueError:
        caps = ()
    if len(caps) != 3 or min(caps) < 1:
        raise ConfigError(f"--caps expects P,K,W positive integers, got {text!r}")
    return caps


def parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def pool_size() -> int:
    raw = os.environ.get("PARTFORGE_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"PARTFORGE_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("PARTFORGE_THREADS must be >= 1")
    return n


def run_pool(fn, items) -> list:
    """``[fn(x) for x in items]``, spread over a process pool when more than one worker is allowed."""
    items = list(items)
    n = min(pool_size(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(n) as ex:
        return list(ex.map(fn, items))


@dataclass(frozen=True, order=True)
class MetricsRow:
    method: str
    split: str
    success_rate: float
    plan_steps: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if not 0.0 <= self.success_rate <= 100.0:
            raise ValueError("success_rate must be a percentage")

    def cells(self) -> list[str]:
        steps = "" if self.plan_steps is None else f"{self.plan_steps:.1f}"
        return [self.method, self.split, f"{self.success_rate:.1f}", steps]

    def sort_key(self):
        return (self.method, self.split)


def format_metrics(rows, config: dict) -> str:
    buf = io.StringIO()
    buf.write(f"# build: {build_id()}\n")
    buf.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for row in sorted(rows, key=MetricsRow.sort_key):
        w.writerow(row.cells())
    return buf.getvalue()


def write_metrics(rows, path, config: dict) -> None:
    Path(path).write_text(format_metrics(rows, config))


def read_metrics(path) -> list[MetricsRow]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != METRIC_FIELDS:
        raise ConfigError(f"{path}: unexpected metrics columns {reader.fieldnames}")
    return [MetricsRow(r["method"], r["split"], float(r["success_rate"]),
                       float(r["plan_steps"]) if r["plan_steps"] else None) for r in reader]


def rows_equal(a, b) -> bool:
    """Equality at the CSV's one-decimal precision."""
    return [r.cells() for r in sorted(a, key=MetricsRow.sort_key)] == \
        [r.cells() for r in sorted(b, key=MetricsRow.sort_key)]


__all__ = ["METRIC_FIELDS", "MetricsRow", "build_id", "format_metrics", "parse_bool", "parse_caps",
           "pool_size", "read_config_file", "read_metrics", "rows_equal", "run_pool", "write_metrics"]
