"""HTTP session service: the sequential query loop with a human oracle.

The service adds no decision logic of its own. Each session wraps an
:class:`~uuaudit.search.InteractiveSearch` engine; the pending query comes
from the engine's argmax and the posted label is fed straight back into it,
so a finished interactive session is step-for-step identical to the offline
search run with the same answer sequence.

Sessions are event-sourced: every session appends created/queried/labeled
events to its own JSONL log and is replayed from that log on restart.

Endpoints:

* ``POST /sessions`` ``{dataset, config}`` -> session + first pending query
* ``GET /sessions`` -> session list
* ``GET /sessions/{id}/next`` -> pending query view (idempotent)
* ``POST /sessions/{id}/label`` ``{point_id, label}`` -> updated metrics
* ``GET /sessions/{id}/summary`` -> trace so far, SDR, discoveries, phi model
* ``GET /sessions/{id}/trace`` -> canonical trace JSONL (text/plain)
* ``GET /datasets`` -> datasets the server can start sessions on
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse

from .dataset import TestSet, load_testset
from .errors import SdrUndefinedError, UUAuditError
from .evaluation import replay_utility_series, sdr
from .search import InteractiveSearch, PendingQuery, SearchConfig

CONFIG_KEYS = {
    "budget", "tau", "seed", "strategy", "estimator", "clusters",
    "exploration", "restrict_candidates", "allow_below_tau", "include_intercept",
}


def _parse_config(raw: dict) -> tuple[SearchConfig, str, dict[str, str]]:
    errors: dict[str, str] = {}
    unknown = set(raw) - CONFIG_KEYS
    for key in sorted(unknown):
        errors[key] = "unknown config field"
    strategy = raw.get("strategy", "fl")
    if strategy not in ("fl", "mu", "cov", "bandit"):
        errors["strategy"] = f"unknown strategy {strategy!r}"
    budget = raw.get("budget")
    if not isinstance(budget, int) or isinstance(budget, bool) or budget < 1:
        errors["budget"] = "budget must be a positive integer"
    cfg = None
    if not errors:
        try:
            cfg = SearchConfig(
                budget=budget,
                tau=float(raw.get("tau", 0.65)),
                seed=int(raw.get("seed", 0)),
                estimator=raw.get("estimator"),
                clusters=int(raw.get("clusters", 10)),
                exploration=float(raw.get("exploration", 1.0)),
                restrict_candidates=bool(raw.get("restrict_candidates", False)),
                allow_below_tau=bool(raw.get("allow_below_tau", False)),
                include_intercept=bool(raw.get("include_intercept", False)),
            )
        except (TypeError, ValueError) as exc:
            errors["config"] = str(exc)
    return cfg, strategy, errors


@dataclass
class Session:
    id: str
    dataset: str
    strategy: str
    engine: InteractiveSearch
    log_path: Path | None
    aborted_replay: bool = False
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def status(self) -> str:
        if self.aborted_replay:
            return "aborted"
        return "complete" if self.engine.finished else "awaiting_label"

    def append_event(self, event: dict) -> None:
        if self.log_path is None:
            return
        with self.log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, separators=(",", ":")) + "\n")
            fh.flush()

    def running_metrics(self) -> dict:
        trace = self.engine.trace
        try:
            ratio = sdr(trace) if trace.steps else None
        except (SdrUndefinedError, UUAuditError):
            ratio = None
        from .utility import facility_utility

        return {
            "steps_taken": len(trace.steps),
            "uu_count": trace.uu_count(),
            "sdr": ratio,
            "utility": facility_utility(self.engine.ts, self.engine.state).total,
        }

    def pending_view(self, pending: PendingQuery) -> dict:
        pt = self.engine.ts.point(pending.point_id)
        if pt.display_uri is not None:
            display = {"kind": "uri", "uri": pt.display_uri}
        else:
            display = {"kind": "features", "features": pt.features.tolist()}
        return {
            "point_id": pending.point_id,
            "display": display,
            "confidence": pt.confidence,
            "predicted_class": pt.predicted_class,
            "step": pending.b,
            "budget": self.engine.cfg.budget,
            "classes": self.engine.ts.classes,
            "metrics": self.running_metrics(),
        }

    def view(self) -> dict:
        return {
            "id": self.id,
            "dataset": self.dataset,
            "strategy": self.strategy,
            "status": self.status,
            "budget": self.engine.cfg.budget,
            "steps_taken": len(self.engine.trace.steps),
            "early_stopped": self.engine.trace.early_stopped,
        }


class SessionStore:
    """Datasets plus live sessions, with JSONL event-log persistence."""

    def __init__(self, data_dir: Path | None, log_dir: Path | None):
        self.data_dir = Path(data_dir) if data_dir else None
        self.log_dir = Path(log_dir) if log_dir else None
        if self.log_dir is not None:
            self.log_dir.mkdir(parents=True, exist_ok=True)
        self._datasets: dict[str, TestSet] = {}
        self.sessions: dict[str, Session] = {}
        if self.log_dir is not None:
            self._replay_all()

    def register_dataset(self, name: str, ts: TestSet) -> None:
        self._datasets[name] = ts

    def dataset_names(self) -> list[str]:
        names = set(self._datasets)
        if self.data_dir is not None and self.data_dir.is_dir():
            for path in self.data_dir.iterdir():
                if path.suffix.lower() in (".csv", ".jsonl"):
                    names.add(path.name)
        return sorted(names)

    def get_dataset(self, name: str) -> TestSet | None:
        if name in self._datasets:
            return self._datasets[name]
        if self.data_dir is not None:
            path = self.data_dir / name
            if path.is_file():
                ts = load_testset(path)
                self._datasets[name] = ts
                return ts
        return None

    def create_session(
        self, dataset: str, cfg: SearchConfig, strategy: str,
        session_id: str | None = None,
    ) -> Session:
        ts = self.get_dataset(dataset)
        if ts is None:
            raise KeyError(dataset)
        engine = InteractiveSearch(ts, cfg, strategy)
        sid = session_id or uuid.uuid4().hex[:12]
        log_path = self.log_dir / f"{sid}.jsonl" if self.log_dir else None
        session = Session(
            id=sid, dataset=dataset, strategy=strategy, engine=engine,
            log_path=log_path,
        )
        session.append_event(
            {
                "event": "created",
                "session_id": sid,
                "dataset": dataset,
                "strategy": strategy,
                "config": cfg.to_dict(),
            }
        )
        pending = engine.propose()
        if pending is not None:
            session.append_event(
                {"event": "queried", "b": pending.b, "point_id": pending.point_id}
            )
        self.sessions[sid] = session
        return session

    def label(self, session: Session, point_id: str, label: str) -> dict:
        engine = session.engine
        step = engine.answer(label)
        session.append_event(
            {"event": "labeled", "point_id": point_id, "label": label}
        )
        pending = engine.propose()
        if pending is not None:
            session.append_event(
                {"event": "queried", "b": pending.b, "point_id": pending.point_id}
            )
        return {
            "is_uu": step.is_uu,
            "utility": step.utility,
            "metrics": session.running_metrics(),
            "done": engine.finished,
            "next_available": pending is not None,
        }

    def _replay_all(self) -> None:
        for path in sorted(self.log_dir.glob("*.jsonl")):
            try:
                self._replay_one(path)
            except (UUAuditError, KeyError, ValueError, json.JSONDecodeError):
                continue  # corrupt logs are skipped, never fatal

    def _replay_one(self, path: Path) -> None:
        events = [
            json.loads(line)
            for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        if not events or events[0].get("event") != "created":
            return
        head = events[0]
        cfg_raw = dict(head["config"])
        cfg = SearchConfig(**cfg_raw)
        ts = self.get_dataset(head["dataset"])
        if ts is None:
            return
        engine = InteractiveSearch(ts, cfg, head["strategy"])
        session = Session(
            id=head["session_id"],
            dataset=head["dataset"],
            strategy=head["strategy"],
            engine=engine,
            log_path=path,
        )
        for ev in events[1:]:
            if ev["event"] == "queried":
                pending = engine.propose()
                if pending is None or pending.point_id != ev["point_id"]:
                    session.aborted_replay = True
                    break
            elif ev["event"] == "labeled":
                engine.answer(ev["label"])
        else:
            engine.propose()  # restore the pending query, if any
        self.sessions[session.id] = session


def create_app(
    data_dir: str | Path | None = None,
    log_dir: str | Path | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="uuaudit labeling service")
    store = SessionStore(
        Path(data_dir) if data_dir else None,
        Path(log_dir) if log_dir else None,
    )
    app.state.store = store

    @app.exception_handler(RequestValidationError)
    async def invalid_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"errors": exc.errors()})

    def _error(status: int, message: str, **extra):
        return JSONResponse(status_code=status, content={"error": message, **extra})

    @app.get("/datasets")
    def list_datasets():
        out = []
        for name in store.dataset_names():
            ts = store.get_dataset(name)
            if ts is None:
                continue
            out.append(
                {
                    "name": name,
                    "n": ts.n,
                    "p": ts.p,
                    "classes": ts.classes,
                    "has_true_labels": ts.has_true_labels(),
                }
            )
        return out

    @app.get("/sessions")
    def list_sessions():
        return [s.view() for s in store.sessions.values()]

    @app.post("/sessions", status_code=201)
    def create_session(body: dict):
        dataset = body.get("dataset")
        if not isinstance(dataset, str):
            return _error(400, "config invalid", errors={"dataset": "required string"})
        cfg, strategy, errors = _parse_config(body.get("config") or {})
        if errors:
            return _error(400, "config invalid", errors=errors)
        ts = store.get_dataset(dataset)
        if ts is None:
            return _error(404, f"unknown dataset {dataset!r}")
        try:
            session = store.create_session(dataset, cfg, strategy)
        except UUAuditError as exc:
            return _error(400, "config invalid", errors={"config": str(exc)})
        pending = session.engine.propose()
        return {
            "session": session.view(),
            "pending": session.pending_view(pending) if pending else None,
        }

    def _get_session(session_id: str) -> Session | None:
        return store.sessions.get(session_id)

    @app.get("/sessions/{session_id}/next")
    def next_query(session_id: str):
        session = _get_session(session_id)
        if session is None:
            return _error(404, f"unknown session {session_id!r}")
        with session.lock:
            if session.status != "awaiting_label":
                return _error(409, f"session is {session.status}")
            pending = session.engine.propose()
            if pending is None:
                return _error(409, "session is complete")
            return session.pending_view(pending)

    @app.post("/sessions/{session_id}/label")
    def post_label(session_id: str, body: dict):
        session = _get_session(session_id)
        if session is None:
            return _error(404, f"unknown session {session_id!r}")
        point_id = body.get("point_id")
        label = body.get("label")
        if not isinstance(point_id, str) or not isinstance(label, str):
            return _error(400, "point_id and label are required strings")
        with session.lock:
            if session.status != "awaiting_label":
                return _error(409, f"session is {session.status}")
            pending = session.engine.propose()
            if pending is None:
                return _error(409, "session is complete")
            if point_id != pending.point_id:
                return _error(
                    409,
                    f"stale point id {point_id!r}; pending is {pending.point_id!r}",
                )
            if label not in session.engine.ts.classes:
                return _error(400, f"unknown class {label!r}",
                              classes=session.engine.ts.classes)
            return store.label(session, point_id, label)

    @app.get("/sessions/{session_id}/summary")
    def summary(session_id: str):
        session = _get_session(session_id)
        if session is None:
            return _error(404, f"unknown session {session_id!r}")
        with session.lock:
            engine = session.engine
            trace = engine.trace
            fac, _cov = replay_utility_series(engine.ts, trace)
            uus = sorted(
                (
                    {"id": s.point_id, "confidence": s.confidence, "label": s.label}
                    for s in trace.steps
                    if s.is_uu
                ),
                key=lambda u: -u["confidence"],
            )
            return {
                "session": session.view(),
                "metrics": session.running_metrics(),
                "steps": [s.to_obj() for s in trace.steps],
                "uus": uus,
                "utility_trajectory": fac.tolist(),
                "phi_model": engine.phi_snapshot().to_json_dict(),
            }

    @app.get("/sessions/{session_id}/trace", response_class=PlainTextResponse)
    def trace_jsonl(session_id: str):
        session = _get_session(session_id)
        if session is None:
            return PlainTextResponse(
                json.dumps({"error": f"unknown session {session_id!r}"}),
                status_code=404,
            )
        return session.engine.trace.to_jsonl()

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
