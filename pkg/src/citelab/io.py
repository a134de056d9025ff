"""Readers and writers for histories, trajectories, ensembles and reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
import sys
from collections import defaultdict
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from . import __version__
from .errors import HistoryFormatError, HistoryValidationError
from .meanfield import Trajectory
from .model import CitationHistory
from .stochastic import ArbitrationVerdict, EnsembleStats

HISTORY_HEADER = ["paper_id", "pub_time", "event_time"]


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def artifact_meta(command: str, config: dict) -> dict:
    return {
        "tool": "citelab",
        "version": __version__,
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seed": config.get("seed"),
    }


def dumps_json(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _comment_lines(meta: dict | None) -> str:
    if not meta:
        return ""
    return "".join(f"# {k}={json.dumps(meta[k], sort_keys=True)}\n" for k in sorted(meta))


# ---------------------------------------------------------------------------
# histories


def _parse_csv(text: str, source: str) -> list[CitationHistory]:
    lines = text.splitlines()
    body = [(i + 1, line) for i, line in enumerate(lines) if line.strip() and not line.lstrip().startswith("#")]
    if not body:
        raise HistoryFormatError(f"{source}: empty history file")
    header_no, header = body[0]
    if [h.strip() for h in next(csv.reader([header]))] != HISTORY_HEADER:
        raise HistoryFormatError(f"{source}:{header_no}: expected header {','.join(HISTORY_HEADER)}")

    pubs: dict[str, float] = {}
    events: dict[str, list[float]] = defaultdict(list)
    for line_no, line in body[1:]:
        row = next(csv.reader([line]))
        if len(row) != 3:
            raise HistoryFormatError(f"{source}:{line_no}: expected 3 fields, got {len(row)}")
        pid, pub_s, ev_s = (c.strip() for c in row)
        if not pid:
            raise HistoryFormatError(f"{source}:{line_no}: empty paper_id")
        try:
            pub = float(pub_s)
            ev = float(ev_s) if ev_s else None
        except ValueError:
            raise HistoryFormatError(f"{source}:{line_no}: non-numeric time in {line!r}") from None
        if not math.isfinite(pub) or (ev is not None and not math.isfinite(ev)):
            raise HistoryFormatError(f"{source}:{line_no}: non-finite time")
        if pid in pubs and pubs[pid] != pub:
            raise HistoryFormatError(f"{source}:{line_no}: paper {pid!r} has conflicting pub_time")
        pubs[pid] = pub
        if ev is not None:
            if not ev > pub:
                raise HistoryValidationError(
                    f"{source}:{line_no}: paper {pid!r} has event_time {ev} not after pub_time {pub}"
                )
            events[pid].append(ev)
    return [CitationHistory(pid, pubs[pid], tuple(sorted(events[pid]))) for pid in sorted(pubs)]


def _parse_json(text: str, source: str) -> list[CitationHistory]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise HistoryFormatError(f"{source}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    items = doc.get("histories") if isinstance(doc, dict) else doc
    if not isinstance(items, list):
        raise HistoryFormatError(f"{source}: expected a JSON array of histories")
    seen = {}
    for k, item in enumerate(items):
        try:
            pid = str(item["paper_id"])
            pub = float(item["pub_time"])
            evs = [float(e) for e in item.get("event_times", [])]
        except (KeyError, TypeError, ValueError):
            raise HistoryFormatError(f"{source}: malformed history at index {k}") from None
        if pid in seen:
            raise HistoryFormatError(f"{source}: duplicate paper_id {pid!r}")
        for e in evs:
            if not e > pub:
                raise HistoryValidationError(f"{source}: paper {pid!r} has event_time {e} not after pub_time {pub}")
        seen[pid] = CitationHistory(pid, pub, tuple(sorted(evs)))
    return [seen[p] for p in sorted(seen)]


def parse_history(path) -> list[CitationHistory]:
    """Read histories from CSV (``paper_id,pub_time,event_time``) or JSON.

    CSV has one row per citation; a paper without citations appears once
    with an empty ``event_time``.  Lines starting with ``#`` are skipped.
    Histories come back sorted by paper_id with sorted events.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json" or text.lstrip().startswith(("[", "{")):
        return _parse_json(text, str(path))
    return _parse_csv(text, str(path))


def histories_to_csv(histories: Iterable[CitationHistory], meta: dict | None = None) -> str:
    buf = io.StringIO()
    buf.write(_comment_lines(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_HEADER)
    for h in histories:
        if not h.event_times:
            w.writerow([h.paper_id, repr(h.pub_time), ""])
        for t in h.event_times:
            w.writerow([h.paper_id, repr(h.pub_time), repr(t)])
    return buf.getvalue()


def histories_to_json(histories: Iterable[CitationHistory], meta: dict | None = None) -> str:
    items = [{"paper_id": h.paper_id, "pub_time": h.pub_time, "event_times": list(h.event_times)} for h in histories]
    return dumps_json({"meta": meta, "histories": items} if meta else items)


# ---------------------------------------------------------------------------
# numeric tables


def trajectory_to_csv(traj: Trajectory, m: int, meta: dict | None = None) -> str:
    buf = io.StringIO()
    buf.write(_comment_lines(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dt", "f", "c_implied"])
    for dt, f, c in zip(traj.times, traj.values, traj.implied_citations(m)):
        w.writerow([repr(float(dt)), repr(float(f)), repr(float(c))])
    return buf.getvalue()


def ensemble_to_csv(stats: EnsembleStats, meta: dict | None = None) -> str:
    buf = io.StringIO()
    buf.write(_comment_lines(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dt", "mean_c", "stderr_c", "n"])
    for dt, mu, se in stats.rows():
        w.writerow([repr(dt), repr(mu), repr(se), stats.n])
    return buf.getvalue()


def read_table(text: str) -> tuple[list[str], np.ndarray]:
    """Header and float rows of a CSV produced by the emitters above."""
    rows = [r for r in csv.reader(line for line in text.splitlines() if line and not line.startswith("#"))]
    return rows[0], np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)


# ---------------------------------------------------------------------------
# arbitration report


def runtime_info() -> dict:
    import scipy

    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def arbitration_report(verdict: ArbitrationVerdict) -> dict:
    meta = artifact_meta("arbitrate", verdict.config)
    meta["runtime"] = runtime_info()
    rows = []
    for r in verdict.rows:
        rows.append(
            {
                "variant": r.variant,
                "lambda": r.lam,
                "m": r.m,
                "kernel": r.kernel,
                "n_replicas": r.n_replicas,
                "sim_mean": r.sim_mean,
                "sim_stderr": r.sim_stderr,
                "pred_C4": r.pred_C4,
                "pred_S14": r.pred_S14,
                "within_3se_of_C4": r.within_3se_of_C4,
                "within_3se_of_S14": r.within_3se_of_S14,
                "exact_C4": r.exact_C4,
                "z_C4": r.z_C4,
                "z_S14": r.z_S14,
                "verdict": r.verdict,
            }
        )
    return {"meta": meta, "rows": rows}


def _sig6(x) -> str:
    if x is None:
        return "n/a"
    if isinstance(x, bool):
        return "yes" if x else "no"
    if isinstance(x, int):
        return str(x)
    return f"{x:.6g}"


MARKDOWN_COLUMNS = [
    "variant",
    "lambda",
    "m",
    "kernel",
    "n_replicas",
    "sim_mean",
    "sim_stderr",
    "pred_C4",
    "pred_S14",
    "within_3se_of_C4",
    "within_3se_of_S14",
    "z_C4",
    "z_S14",
    "verdict",
]


def report_to_markdown(report: dict) -> str:
    meta = report["meta"]
    out = [
        "# Citation-model arbitration",
        "",
        f"seed `{meta['seed']}` | config `{meta['config_hash']}` | citelab {meta['version']}",
        "",
        "| " + " | ".join(MARKDOWN_COLUMNS) + " |",
        "|" + "---|" * len(MARKDOWN_COLUMNS),
    ]
    for row in report["rows"]:
        out.append("| " + " | ".join(_sig6(row[c]) if not isinstance(row[c], str) else row[c] for c in MARKDOWN_COLUMNS) + " |")
    out += [
        "",
        "C4 predicts zero ultimate citations; S14 predicts m(e^lambda - 1).",
        "Each row is judged on its own kernel reading; no overall winner is declared.",
        "",
    ]
    return "\n".join(out)


def write_text(text: str, path, stream: TextIO | None = None) -> None:
    if path in (None, "-"):
        (stream or sys.stdout).write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")
