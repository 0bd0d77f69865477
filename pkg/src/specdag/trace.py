"""Trace files: deterministic JSONL records, graph dumps, timing sidecar.

The main trace contains only seed-determined content, so two runs with the
same inputs produce byte-identical files; wall-clock timings stream to a
separate sidecar. All files are written to a temporary name and renamed into
place on close.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterator

from .errors import TraceFormatError
from .session import SessionResult, StageRecord

TRACE_VERSION = 1


def _dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class TraceWriter:
    """Streams one run: trace.jsonl, graphs.txt, timings.jsonl."""

    def __init__(self, out_dir: str | Path, header: dict):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._trace: list[str] = []
        self._graphs: list[str] = []
        self._timings: list[str] = []
        self._sessions = 0
        head = {"type": "header", "version": TRACE_VERSION, **header}
        self._trace.append(_dumps(head))

    def add_session(self, index: int, result: SessionResult) -> None:
        self._trace.append(_dumps({
            "type": "session_start",
            "session": index,
            "prompt_len": result.prompt_len,
        }))
        for record in result.stages:
            self._trace.append(_dumps(self._stage_dict(index, record)))
            self._graphs.append(f"# session={index} stage={record.stage}")
            self._graphs.extend(record.graph_lines)
            self._timings.append(_dumps({
                "type": "stage_timing",
                "session": index,
                "stage": record.stage,
                "draft_s": record.draft_s,
                "verify_s": record.verify_s,
                "others_s": record.others_s,
            }))
        self._trace.append(_dumps({
            "type": "session_end",
            "session": index,
            "output_len": len(result.output),
            "output": result.output,
            "ended_by_eos": result.ended_by_eos,
        }))
        self._sessions += 1

    @staticmethod
    def _stage_dict(session: int, record: StageRecord) -> dict:
        return {
            "type": "stage",
            "session": session,
            "stage": record.stage,
            "drafted": record.drafted,
            "verified_nodes": record.verified_nodes,
            "forwards": [[e.role, e.l_new, e.l_ctx] for e in record.forwards],
            "accepted": record.accepted,
            "accept_ranks": record.accept_ranks,
            "rejected_step": record.rejected_step,
            "path": record.path,
            "bonus": record.bonus,
            "merged_accept": record.merged_accept,
            "committed": record.committed,
        }

    def close(self) -> None:
        self._trace.append(_dumps({"type": "end", "sessions": self._sessions}))
        atomic_write_text(self.out_dir / "trace.jsonl", "\n".join(self._trace) + "\n")
        atomic_write_text(self.out_dir / "graphs.txt", "\n".join(self._graphs) + "\n")
        atomic_write_text(self.out_dir / "timings.jsonl", "\n".join(self._timings) + "\n")


def read_trace(path: str | Path) -> tuple[dict, list[dict]]:
    """Parse and validate one trace file; returns (header, records).

    Raises TraceFormatError for missing headers, version mismatches, or a
    truncated stream (no end record, or a session without its end record).
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise TraceFormatError(f"{path}: empty trace")
    try:
        records = [json.loads(line) for line in lines if line]
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"{path}: malformed JSON ({exc})") from exc
    header = records[0]
    if header.get("type") != "header":
        raise TraceFormatError(f"{path}: first record is not a header")
    if header.get("version") != TRACE_VERSION:
        raise TraceFormatError(
            f"{path}: trace version {header.get('version')} unsupported "
            f"(expected {TRACE_VERSION})"
        )
    body = records[1:]
    if not body or body[-1].get("type") != "end":
        raise TraceFormatError(f"{path}: truncated trace (missing end record)")
    open_session: int | None = None
    sessions_seen = 0
    for rec in body[:-1]:
        kind = rec.get("type")
        if kind == "session_start":
            if open_session is not None:
                raise TraceFormatError(f"{path}: nested session_start")
            open_session = rec["session"]
        elif kind == "session_end":
            if open_session != rec["session"]:
                raise TraceFormatError(f"{path}: session_end without matching start")
            open_session = None
            sessions_seen += 1
        elif kind == "stage":
            if open_session != rec["session"]:
                raise TraceFormatError(f"{path}: stage outside its session")
    if open_session is not None:
        raise TraceFormatError(f"{path}: truncated trace (session {open_session} still open)")
    if body[-1].get("sessions") != sessions_seen:
        raise TraceFormatError(f"{path}: session count mismatch")
    return header, body[:-1]


def iter_stages(records: list[dict]) -> Iterator[dict]:
    for rec in records:
        if rec.get("type") == "stage":
            yield rec


def iter_sessions(records: list[dict]) -> Iterator[tuple[dict, list[dict], dict]]:
    """Yield (session_start, stages, session_end) triples."""
    start: dict | None = None
    stages: list[dict] = []
    for rec in records:
        kind = rec.get("type")
        if kind == "session_start":
            start = rec
            stages = []
        elif kind == "stage":
            stages.append(rec)
        elif kind == "session_end":
            assert start is not None
            yield start, stages, rec
            start = None


def read_graphs(path: str | Path):
    """Parse graphs.txt into per-stage node-line lists.

    Yields (session, stage, lines) in file order.
    """
    current_key: tuple[int, int] | None = None
    lines: list[str] = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if raw.startswith("#"):
            if current_key is not None:
                yield current_key[0], current_key[1], lines
            fields = dict(part.split("=") for part in raw[1:].split())
            current_key = (int(fields["session"]), int(fields["stage"]))
            lines = []
        elif raw.strip():
            lines.append(raw)
    if current_key is not None:
        yield current_key[0], current_key[1], lines
