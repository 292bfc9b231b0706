"""HTTP suggestion service: sheet CRUD, span suggestions with endless
alternatives, and the implicit-feedback log (append-only JSONL, replayable
into aggregate stats)."""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse

from . import engine as eng
from .anticipate import Capability
from .engine import GenerationRequest, Suggestion
from .leadsheet import (
    LeadSheet,
    LeadSheetError,
    parse,
    serialize,
    sheet_from_json,
    sheet_to_json,
)
from .model import Policy, checkpoint_load

LOG_FORMAT_VERSION = 1
SESSION_TIMEOUT_S = 30 * 60

OUTCOMES = ("pending", "accepted", "ignored", "rejected")


@dataclass
class ServiceConfig:
    port: int = 8643
    model_path: str | None = None
    log_dir: str = "."
    workers: int = 2

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ServiceConfig":
        """Config file (JSON) with env-var overrides (COWRITER_PORT,
        COWRITER_MODEL_PATH, COWRITER_LOG_DIR, COWRITER_WORKERS)."""
        data: dict = {}
        if path is not None:
            with open(path) as f:
                data = json.load(f)
        cfg = cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})
        if os.environ.get("COWRITER_PORT"):
            cfg.port = int(os.environ["COWRITER_PORT"])
        if os.environ.get("COWRITER_MODEL_PATH"):
            cfg.model_path = os.environ["COWRITER_MODEL_PATH"]
        if os.environ.get("COWRITER_LOG_DIR"):
            cfg.log_dir = os.environ["COWRITER_LOG_DIR"]
        if os.environ.get("COWRITER_WORKERS"):
            cfg.workers = int(os.environ["COWRITER_WORKERS"])
        return cfg


class FeedbackLog:
    """Append-only JSONL with a monotonic sequence number. Appends are
    serialized by a lock and fsynced before being acknowledged; records are
    never rewritten — outcome changes are new transition records."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._seq = 0
        if self.path.exists():
            with open(self.path) as f:
                for line in f:
                    if line.strip():
                        self._seq = json.loads(line)["seq"]

    def append(self, record: dict) -> dict:
        with self._lock:
            self._seq += 1
            record = {"seq": self._seq, "format_version": LOG_FORMAT_VERSION, **record}
            with open(self.path, "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")
                f.flush()
                os.fsync(f.fileno())
        return record

    def records(self) -> list[dict]:
        if not self.path.exists():
            return []
        out = []
        with open(self.path) as f:
            for line in f:
                if line.strip():
                    out.append(json.loads(line))
        return out


def replay_stats(records: list[dict]) -> dict:
    """Aggregate flywheel stats from the raw log. The first terminal
    transition for a suggestion wins; later ones are ignored."""
    suggestions: dict[str, dict] = {}
    order: list[str] = []
    for rec in records:
        if rec["type"] == "suggestion":
            if rec.get("stalled"):
                continue  # diagnostic record, not a suggestion anyone saw
            sid = rec["suggestion_id"]
            if sid not in suggestions:
                suggestions[sid] = {
                    "capability": rec["capability"],
                    "user_id": rec["user_id"],
                    "outcome": "pending",
                }
                order.append(sid)
        elif rec["type"] == "outcome":
            entry = suggestions.get(rec["suggestion_id"])
            if entry is not None and entry["outcome"] == "pending":
                entry["outcome"] = rec["outcome"]
    by_cap = {
        c.value: {"suggestions": 0, "accepted": 0, "rejected": 0, "ignored": 0, "pending": 0}
        for c in Capability
    }
    totals = {o: 0 for o in OUTCOMES}
    users = set()
    for sid in order:
        entry = suggestions[sid]
        users.add(entry["user_id"])
        totals[entry["outcome"]] += 1
        hist = by_cap[entry["capability"]]
        hist["suggestions"] += 1
        hist[entry["outcome"]] += 1
    return {
        "format_version": LOG_FORMAT_VERSION,
        "total_suggestions": len(order),
        "unique_users": len(users),
        "total_accepted": totals["accepted"],
        "total_rejected": totals["rejected"],
        "total_ignored": totals["ignored"],
        "total_pending": totals["pending"],
        "by_capability": by_cap,
    }


@dataclass
class _SheetEntry:
    sheet: LeadSheet
    version: int


@dataclass
class _SuggestionEntry:
    suggestion: Suggestion
    sheet_id: str
    sheet_version: int
    session_seed: int
    outcome: str = "pending"
    logged: bool = False
    user_id: str = "anonymous"
    created_ts_ms: int = 0


def _policy_from(body: dict) -> Policy:
    raw = body.get("policy") or {}
    return Policy(
        temperature=float(raw.get("temperature", 1.0)),
        top_p=float(raw.get("top_p", 0.95)),
    )


def _suggestion_json(entry: _SuggestionEntry) -> dict:
    s = entry.suggestion
    return {
        "suggestion_id": s.id,
        "sheet_id": entry.sheet_id,
        "sheet_version": entry.sheet_version,
        "capability": s.request.capability.value,
        "span_beats": list(s.request.span_beats),
        "alternative_index": s.request.alternative_index,
        "model_version": s.model_version,
        "melody": [
            {
                "onset": n.onset_beats,
                "duration": n.duration_beats,
                "degree": n.scale_degree,
                "octave": n.octave,
                "alteration": n.alteration,
            }
            for n in s.generated_melody
        ],
        "harmony": [
            {
                "onset": c.onset_beats,
                "duration": c.duration_beats,
                "root": c.root_degree,
                "quality": c.quality.value,
                "inversion": c.inversion,
            }
            for c in s.generated_harmony
        ],
    }


def create_app(
    config: ServiceConfig | None = None,
    model=None,
    clock: Callable[[], float] | None = None,
) -> FastAPI:
    """App factory. `model` and `clock` are injectable for tests; without a
    model the service answers 503 on generation endpoints."""
    config = config or ServiceConfig()
    clock = clock or time.time
    if model is None and config.model_path:
        model = checkpoint_load(config.model_path)

    log_dir = Path(config.log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    log = FeedbackLog(log_dir / "feedback.jsonl")

    app = FastAPI(title="cowriter", docs_url=None, redoc_url=None)
    sheets: dict[str, _SheetEntry] = {}
    registry: dict[str, _SuggestionEntry] = {}
    state_lock = threading.Lock()
    gen_slots = threading.Semaphore(max(1, config.workers))

    def now_ms() -> int:
        return int(clock() * 1000)

    def log_suggestion(entry: _SuggestionEntry) -> None:
        if not entry.logged:
            return
        s = entry.suggestion
        log.append(
            {
                "type": "suggestion",
                "suggestion_id": s.id,
                "user_id": entry.user_id,
                "ts_ms": entry.created_ts_ms,
                "capability": s.request.capability.value,
                "span_beats": list(s.request.span_beats),
                "model_version": s.model_version,
                "outcome": "pending",
                "sheet_id": entry.sheet_id,
                "alternative_index": s.request.alternative_index,
            }
        )

    def transition(entry: _SuggestionEntry, outcome: str) -> None:
        entry.outcome = outcome
        if entry.logged:
            log.append(
                {
                    "type": "outcome",
                    "suggestion_id": entry.suggestion.id,
                    "ts_ms": now_ms(),
                    "outcome": outcome,
                }
            )

    def sweep_timeouts() -> None:
        cutoff = now_ms() - SESSION_TIMEOUT_S * 1000
        with state_lock:
            for entry in registry.values():
                if entry.outcome == "pending" and entry.created_ts_ms <= cutoff:
                    transition(entry, "ignored")

    def opt_in(request: Request) -> tuple[str, bool]:
        user = request.headers.get("X-User-Id", "anonymous")
        flag = request.headers.get("X-Data-Opt-In", "").lower() in ("1", "true", "yes")
        return user, flag and user != "anonymous"

    def error(status: int, message: str) -> JSONResponse:
        return JSONResponse({"error": message}, status_code=status)

    # -- sheets --

    @app.post("/sheets")
    async def create_sheet(request: Request):
        try:
            sheet = await _sheet_from_request(request)
        except (LeadSheetError, ValueError, KeyError, TypeError) as e:
            return error(400, str(e))
        sheet_id = uuid.uuid4().hex[:12]
        with state_lock:
            sheets[sheet_id] = _SheetEntry(sheet, 1)
        return JSONResponse(
            {"id": sheet_id, "version": 1, "sheet": sheet_to_json(sheet)}, status_code=201
        )

    @app.get("/sheets/{sheet_id}")
    def get_sheet(sheet_id: str, format: str = "json"):
        with state_lock:
            entry = sheets.get(sheet_id)
        if entry is None:
            return error(404, f"no sheet {sheet_id}")
        if format == "text":
            return PlainTextResponse(
                serialize(entry.sheet), headers={"X-Sheet-Version": str(entry.version)}
            )
        return {
            "id": sheet_id,
            "version": entry.version,
            "sheet": sheet_to_json(entry.sheet),
            "document": serialize(entry.sheet),
        }

    @app.put("/sheets/{sheet_id}")
    async def put_sheet(sheet_id: str, request: Request):
        with state_lock:
            entry = sheets.get(sheet_id)
        if entry is None:
            return error(404, f"no sheet {sheet_id}")
        body = await request.json()
        expected = body.get("version")
        try:
            if "document" in body:
                sheet = parse(body["document"])
            else:
                sheet = sheet_from_json(body["sheet"])
        except (LeadSheetError, KeyError, TypeError) as e:
            return error(400, str(e))
        with state_lock:
            entry = sheets[sheet_id]
            if expected is not None and expected != entry.version:
                return error(409, f"version {expected} is stale (current {entry.version})")
            entry.sheet = sheet
            entry.version += 1
            return {"id": sheet_id, "version": entry.version, "sheet": sheet_to_json(sheet)}

    # -- suggestions --

    @app.post("/sheets/{sheet_id}/suggest")
    async def suggest(sheet_id: str, request: Request):
        if model is None:
            return error(503, "no model loaded")
        with state_lock:
            entry = sheets.get(sheet_id)
        if entry is None:
            return error(404, f"no sheet {sheet_id}")
        body = await request.json()
        user_id, logged = opt_in(request)
        try:
            capability = Capability(body["capability"])
            span = body["span_beats"]
            policy = _policy_from(body)
            session_seed = int(body.get("session_seed", 0))
            req = GenerationRequest(
                sheet=entry.sheet,
                span_beats=(float(span[0]), float(span[1])),
                capability=capability,
                policy=policy,
            )
        except (KeyError, IndexError, TypeError, ValueError, eng.SpanOutOfRange) as e:
            return error(422, f"bad request: {e}")
        try:
            with gen_slots:
                suggestion = eng.generate(req, model, session_seed)
        except eng.GenerationStalled as e:
            _log_stall(sheet_id, user_id, logged, str(e))
            return {"suggestion": None, "stalled": True, "detail": str(e)}
        with state_lock:
            existing = registry.get(suggestion.id)
            if existing is not None:
                # identical request re-served; the log already has its record
                return {"suggestion": _suggestion_json(existing), "stalled": False}
        sug_entry = _SuggestionEntry(
            suggestion=suggestion,
            sheet_id=sheet_id,
            sheet_version=entry.version,
            session_seed=session_seed,
            logged=logged,
            user_id=user_id,
            created_ts_ms=now_ms(),
        )
        with state_lock:
            registry[suggestion.id] = sug_entry
        log_suggestion(sug_entry)
        return {"suggestion": _suggestion_json(sug_entry), "stalled": False}

    def _log_stall(sheet_id, user_id, logged, detail) -> None:
        if logged:
            log.append(
                {
                    "type": "suggestion",
                    "suggestion_id": f"stalled-{uuid.uuid4().hex[:8]}",
                    "user_id": user_id,
                    "ts_ms": now_ms(),
                    "capability": "stalled",
                    "span_beats": [],
                    "model_version": getattr(model, "version", "none"),
                    "outcome": "pending",
                    "sheet_id": sheet_id,
                    "alternative_index": 0,
                    "stalled": True,
                    "detail": detail,
                }
            )

    @app.post("/suggestions/{suggestion_id}/next")
    def next_alternative(suggestion_id: str):
        if model is None:
            return error(503, "no model loaded")
        with state_lock:
            prior = registry.get(suggestion_id)
        if prior is None:
            return error(404, f"no suggestion {suggestion_id}")
        if prior.outcome not in ("pending", "ignored"):
            return error(409, f"suggestion already {prior.outcome}")
        try:
            with gen_slots:
                suggestion = eng.next_alternative(
                    prior.suggestion.request, model, prior.session_seed
                )
        except eng.GenerationStalled as e:
            return {"suggestion": None, "stalled": True, "detail": str(e)}
        with state_lock:
            existing = registry.get(suggestion.id)
            if existing is not None:
                # repeat call regenerated the same alternative; re-serve it
                return {"suggestion": _suggestion_json(existing), "stalled": False}
            # The first suggestion for a span stays pending until explicit
            # feedback or timeout; only superseded *alternatives* are
            # auto-ignored when the user asks for another.
            if prior.outcome == "pending" and prior.suggestion.request.alternative_index > 0:
                transition(prior, "ignored")
            sug_entry = _SuggestionEntry(
                suggestion=suggestion,
                sheet_id=prior.sheet_id,
                sheet_version=prior.sheet_version,
                session_seed=prior.session_seed,
                logged=prior.logged,
                user_id=prior.user_id,
                created_ts_ms=now_ms(),
            )
            registry[suggestion.id] = sug_entry
        log_suggestion(sug_entry)
        return {"suggestion": _suggestion_json(sug_entry), "stalled": False}

    @app.post("/suggestions/{suggestion_id}/feedback")
    async def feedback(suggestion_id: str, request: Request):
        body = await request.json()
        outcome = body.get("outcome")
        if outcome not in ("accepted", "rejected"):
            return error(422, f"outcome must be accepted or rejected, got {outcome!r}")
        with state_lock:
            entry = registry.get(suggestion_id)
            if entry is None:
                return error(404, f"no suggestion {suggestion_id}")
            if entry.outcome != "pending":
                return error(409, f"suggestion already {entry.outcome}")
            if outcome == "rejected":
                transition(entry, "rejected")
                return {"outcome": "rejected"}
            sheet_entry = sheets.get(entry.sheet_id)
            if sheet_entry is None:
                return error(409, "sheet no longer exists")
            if sheet_entry.version != entry.sheet_version:
                return error(
                    409,
                    f"sheet version {sheet_entry.version} != {entry.sheet_version} at "
                    "suggestion time",
                )
            try:
                updated = eng.accept(sheet_entry.sheet, entry.suggestion)
            except eng.ConflictError as e:
                return error(409, str(e))
            sheet_entry.sheet = updated
            sheet_entry.version += 1
            transition(entry, "accepted")
            return {
                "outcome": "accepted",
                "sheet_id": entry.sheet_id,
                "version": sheet_entry.version,
                "sheet": sheet_to_json(updated),
            }

    # -- stats --

    @app.get("/stats")
    def stats():
        sweep_timeouts()
        return replay_stats(log.records())

    @app.get("/healthz")
    def healthz():
        return {"ok": True, "model": getattr(model, "version", None)}

    return app


async def _sheet_from_request(request: Request) -> LeadSheet:
    content_type = request.headers.get("content-type", "")
    raw = await request.body()
    if content_type.startswith("application/json"):
        data = json.loads(raw)
        if isinstance(data, dict) and "document" in data:
            return parse(data["document"])
        return sheet_from_json(data)
    return parse(raw.decode())


def main(config: ServiceConfig | None = None) -> None:
    import uvicorn

    config = config or ServiceConfig.load()
    app = create_app(config)
    uvicorn.run(app, host="127.0.0.1", port=config.port, log_level="warning")
