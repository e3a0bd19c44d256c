"""HTTP service exposing live interactive betting sessions.

The server is the information barrier: treatment assignments live only in
server memory and the append-only event log, and every client-visible
payload masks the assignment of any subject that has not been revealed
through the commit-then-reveal protocol. Suggestions (treatment
posteriors) are always recomputed from the current filtration, so no model
ever sees a masked assignment.

Per session the server keeps an append-only JSON-lines event log plus a
snapshot document; replaying the log reconstructs the exact session state,
wealth path included. Mutating calls on one session are serialized by a
lock; reads are always allowed. A WebSocket stream pushes a state delta
after every mutation.
"""

from __future__ import annotations

import asyncio
import json
import math
import queue
import secrets
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import Depends, FastAPI, HTTPException, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse, JSONResponse
from pydantic import BaseModel

from . import betting
from .betting import BettingSession, SessionStatus
from .data import Dataset, load_unpaired_csv
from .errors import (
    BetRangeError,
    ProtocolViolationError,
    RankbetError,
)
from .models import DesignSpec
from .policies import posterior_suggestions
from .rng import stream_rng

__all__ = ["create_app", "SessionStore"]


class CreateSessionRequest(BaseModel):
    csv: str
    alpha: float = 0.05
    gamma: float = 0.1
    model: dict | None = None
    seed: int | None = None
    fixed_sum_m: int | None = None


class CommitBetRequest(BaseModel):
    subject_id: int
    w: float


class ModelRequest(BaseModel):
    model: dict


class ExtendRequest(BaseModel):
    csv: str


@dataclass
class LiveSession:
    """Server-side state of one betting session."""

    session_id: str
    session: BettingSession
    design: DesignSpec
    seed: int
    suggestions: dict[int, float] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)
    listeners: list[queue.SimpleQueue] = field(default_factory=list)
    event_count: int = 0


class SessionStore:
    """All live sessions plus their persistence directory."""

    def __init__(self, state_dir: Path | None):
        self.state_dir = Path(state_dir) if state_dir is not None else None
        if self.state_dir is not None:
            self.state_dir.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, LiveSession] = {}

    # -- persistence -----------------------------------------------------------

    def _log_path(self, session_id: str) -> Path:
        return self.state_dir / f"{session_id}.events.jsonl"

    def append_event(self, live: LiveSession, event: dict) -> None:
        live.event_count += 1
        if self.state_dir is None:
            return
        event = {"ts": time.time(), **event}
        with open(self._log_path(live.session_id), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event) + "\n")
        snapshot = self.state_dir / f"{live.session_id}.snapshot.json"
        doc = betting.session_to_json(live.session)
        doc["design"] = live.design.to_dict()
        doc["seed"] = live.seed
        snapshot.write_text(json.dumps(doc), encoding="utf-8")

    def load_all(self) -> None:
        """Rebuild every session by replaying its event log."""
        if self.state_dir is None:
            return
        for log in sorted(self.state_dir.glob("*.events.jsonl")):
            session_id = log.name.removesuffix(".events.jsonl")
            events = [
                json.loads(line)
                for line in log.read_text(encoding="utf-8").splitlines()
                if line.strip()
            ]
            if events:
                self.sessions[session_id] = replay_events(session_id, events)

    def get(self, session_id: str) -> LiveSession:
        live = self.sessions.get(session_id)
        if live is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return live


def replay_events(session_id: str, events: list[dict]) -> LiveSession:
    """Reconstruct a live session from its append-only event log."""
    head = events[0]
    if head["type"] != "create":
        raise ValueError("event log must start with a create event")
    live = _build_session(
        session_id=session_id,
        csv_text=head["csv"],
        alpha=head["alpha"],
        gamma=head["gamma"],
        design=DesignSpec.from_dict(head["model"] or {}),
        seed=head["seed"],
        fixed_sum_m=head.get("fixed_sum_m"),
    )
    for event in events[1:]:
        kind = event["type"]
        if kind == "commit":
            live.session = betting.commit_bet(live.session, event["subject_id"], event["w"])
        elif kind == "reveal":
            live.session = betting.reveal(live.session, timestamp=event.get("ts"))
        elif kind == "model":
            live.design = DesignSpec.from_dict(event["model"])
        elif kind == "extend":
            extension = load_unpaired_csv(event["csv"])
            offset = max(live.session.dataset.ids) + 1
            renumbered = [
                type(s)(id=offset + i, y=s.y, a=s.a, x=s.x, mu=s.mu)
                for i, s in enumerate(extension.subjects)
            ]
            live.session = betting.continue_session(live.session, renumbered)
        else:
            raise ValueError(f"unknown event type {kind!r}")
    live.suggestions = _suggestions_for(live)
    live.event_count = len(events)
    return live


def _build_session(
    session_id: str,
    csv_text: str,
    alpha: float,
    gamma: float,
    design: DesignSpec,
    seed: int,
    fixed_sum_m: int | None,
) -> LiveSession:
    dataset = load_unpaired_csv(csv_text)
    if not (0.0 < alpha < 1.0):
        raise RankbetError(f"alpha={alpha} must lie strictly inside (0, 1)")
    if not (0.0 <= gamma < 1.0):
        raise RankbetError(f"gamma={gamma} must lie in [0, 1)")
    session = betting.new_session(dataset, alpha, fixed_sum_m=fixed_sum_m)
    holdout_size = int(gamma * len(dataset))
    rng = stream_rng(seed, 0)
    holdout = tuple(int(i) for i in rng.choice(dataset.ids, size=holdout_size, replace=False))
    session = betting.reveal_holdout(session, holdout, timestamp=time.time())
    live = LiveSession(session_id=session_id, session=session, design=design, seed=seed)
    live.suggestions = _suggestions_for(live)
    return live


def _suggestions_for(live: LiveSession) -> dict[int, float]:
    session = live.session
    if not session.unrevealed_ids:
        return {}
    return posterior_suggestions(
        session.dataset, session.revealed_ids, live.design, posterior_model="em"
    )


def _running_p(log_wealth) -> list[float]:
    best, out = 0.0, []
    for v in log_wealth:
        best = max(best, v)
        out.append(min(1.0, math.exp(-best)))
    return out


def masked_view(live: LiveSession) -> dict:
    """Client-visible session state: unrevealed assignments are null."""
    session = live.session
    revealed = session.revealed_ids
    subjects = []
    for s in session.dataset:
        is_revealed = s.id in revealed
        entry = {
            "id": s.id,
            "y": s.y,
            "x": list(s.x),
            "revealed": is_revealed,
            "a": s.a if is_revealed else None,
            "q": None if is_revealed else live.suggestions.get(s.id),
        }
        if not is_revealed and session.status in (
            SessionStatus.BETTING,
            SessionStatus.BET_COMMITTED,
        ):
            lo, hi = session.bounds_for(s.id)
            entry["bounds"] = [lo, hi]
        subjects.append(entry)
    return {
        "session_id": live.session_id,
        "status": session.status.value,
        "alpha": session.alpha,
        "step": session.step,
        "log_wealth": session.log_wealth[-1],
        "wealth": session.wealth,
        "anytime_p": betting.anytime_p(session),
        "rejected": session.status is SessionStatus.REJECTED,
        "randomization_mode": session.randomization_mode,
        "pending_bet": None
        if session.pending is None
        else {"subject_id": session.pending.subject_id, "w": session.pending.w},
        "model": live.design.to_dict(),
        "subjects": subjects,
    }


def _broadcast(live: LiveSession, delta: dict) -> None:
    for q in list(live.listeners):
        q.put(json.dumps(delta))


def _delta(live: LiveSession, event: str, extra: dict | None = None) -> dict:
    session = live.session
    delta = {
        "event": event,
        "session_id": live.session_id,
        "status": session.status.value,
        "step": session.step,
        "log_wealth": session.log_wealth[-1],
        "anytime_p": betting.anytime_p(session),
        "rejected": session.status is SessionStatus.REJECTED,
    }
    if extra:
        delta.update(extra)
    return delta


def create_app(
    state_dir: Path | str | None = None,
    token: str | None = None,
    ui_dir: Path | str | None = None,
) -> FastAPI:
    """Build the session service.

    ``state_dir`` enables event-log persistence (sessions are replayed from
    it at startup). ``token``, when set, makes every call require
    ``Authorization: Bearer <token>``. ``ui_dir`` mounts a built betting
    console (static files) under ``/ui``.
    """
    app = FastAPI(title="rankbet session service")
    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    store = SessionStore(Path(state_dir) if state_dir is not None else None)
    store.load_all()
    app.state.store = store

    async def require_auth(request: Request) -> None:
        if token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    guarded = [Depends(require_auth)]

    @app.exception_handler(RankbetError)
    async def _rankbet_error(_request, exc: RankbetError):
        status = 409 if isinstance(exc, ProtocolViolationError) else 400
        if isinstance(exc, BetRangeError):
            status = 400
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    @app.exception_handler(KeyError)
    async def _key_error(_request, exc: KeyError):
        return JSONResponse(status_code=400, content={"detail": f"unknown subject {exc}"})

    @app.post("/sessions", dependencies=guarded)
    def create_session(req: CreateSessionRequest):
        seed = req.seed if req.seed is not None else secrets.randbits(63)
        session_id = uuid.uuid4().hex[:12]
        design = DesignSpec.from_dict(req.model or {})
        live = _build_session(
            session_id=session_id,
            csv_text=req.csv,
            alpha=req.alpha,
            gamma=req.gamma,
            design=design,
            seed=seed,
            fixed_sum_m=req.fixed_sum_m,
        )
        store.sessions[session_id] = live
        store.append_event(
            live,
            {
                "type": "create",
                "csv": req.csv,
                "alpha": req.alpha,
                "gamma": req.gamma,
                "model": design.to_dict(),
                "seed": seed,
                "fixed_sum_m": req.fixed_sum_m,
            },
        )
        return masked_view(live)

    @app.get("/sessions/{session_id}", dependencies=guarded)
    def get_session(session_id: str):
        return masked_view(store.get(session_id))

    @app.post("/sessions/{session_id}/bets", dependencies=guarded)
    def commit_bet(session_id: str, req: CommitBetRequest):
        live = store.get(session_id)
        with live.lock:
            live.session = betting.commit_bet(live.session, req.subject_id, req.w)
            store.append_event(
                live, {"type": "commit", "subject_id": req.subject_id, "w": req.w}
            )
            receipt = {
                "session_id": session_id,
                "subject_id": req.subject_id,
                "w": req.w,
                "step": live.session.pending.step,
                "status": live.session.status.value,
            }
            _broadcast(live, _delta(live, "commit", {"subject_id": req.subject_id}))
        return receipt

    @app.post("/sessions/{session_id}/reveal", dependencies=guarded)
    def reveal(session_id: str):
        live = store.get(session_id)
        with live.lock:
            pending = live.session.pending
            if pending is None:
                raise ProtocolViolationError("no committed bet to reveal")
            live.session = betting.reveal(live.session, timestamp=time.time())
            store.append_event(live, {"type": "reveal"})
            entry = live.session.audit[-1]
            live.suggestions = _suggestions_for(live)
            payload = {
                "session_id": session_id,
                "subject_id": entry.subject_id,
                "a": entry.revealed_a,
                "w": entry.w,
                "factor": entry.factor,
                "log_wealth": live.session.log_wealth[-1],
                "wealth": live.session.wealth,
                "anytime_p": betting.anytime_p(live.session),
                "rejected": live.session.status is SessionStatus.REJECTED,
                "status": live.session.status.value,
                "suggestions": {str(k): v for k, v in live.suggestions.items()},
            }
            _broadcast(
                live,
                _delta(live, "reveal", {"subject_id": entry.subject_id, "a": entry.revealed_a}),
            )
        return payload

    @app.post("/sessions/{session_id}/model", dependencies=guarded)
    def refit_model(session_id: str, req: ModelRequest):
        live = store.get(session_id)
        with live.lock:
            if live.session.status is SessionStatus.REJECTED:
                raise ProtocolViolationError("session is rejected and read-only")
            new_design = DesignSpec.from_dict(req.model)  # validation errors keep old fit
            old = live.design
            live.design = new_design
            try:
                live.suggestions = _suggestions_for(live)
            except RankbetError:
                live.design = old
                raise
            store.append_event(live, {"type": "model", "model": new_design.to_dict()})
            _broadcast(live, _delta(live, "model"))
            return {
                "session_id": session_id,
                "model": new_design.to_dict(),
                "suggestions": {str(k): v for k, v in live.suggestions.items()},
            }

    @app.post("/sessions/{session_id}/extend", dependencies=guarded)
    def extend(session_id: str, req: ExtendRequest):
        live = store.get(session_id)
        with live.lock:
            extension = load_unpaired_csv(req.csv)
            offset = max(live.session.dataset.ids) + 1
            renumbered = [
                type(s)(id=offset + i, y=s.y, a=s.a, x=s.x, mu=s.mu)
                for i, s in enumerate(extension.subjects)
            ]
            live.session = betting.continue_session(
                live.session, renumbered, timestamp=time.time()
            )
            live.suggestions = _suggestions_for(live)
            store.append_event(live, {"type": "extend", "csv": req.csv})
            _broadcast(live, _delta(live, "extend", {"added": len(renumbered)}))
            return masked_view(live)

    @app.get("/sessions/{session_id}/wealth", dependencies=guarded)
    def wealth(session_id: str):
        live = store.get(session_id)
        path = live.session.log_wealth
        ps = _running_p(path)
        return [
            {"step": i, "logM": v, "p": p} for i, (v, p) in enumerate(zip(path, ps))
        ]

    @app.websocket("/sessions/{session_id}/stream")
    async def stream(websocket: WebSocket, session_id: str):
        if token is not None:
            header = websocket.headers.get("authorization", "")
            if header != f"Bearer {token}":
                await websocket.close(code=4401)
                return
        try:
            live = store.get(session_id)
        except HTTPException:
            await websocket.close(code=4404)
            return
        await websocket.accept()
        q: queue.SimpleQueue = queue.SimpleQueue()
        live.listeners.append(q)
        alive = True

        async def watch_disconnect():
            nonlocal alive
            try:
                while True:
                    await websocket.receive_text()
            except WebSocketDisconnect:
                alive = False

        watcher = asyncio.ensure_future(watch_disconnect())
        try:
            await websocket.send_text(json.dumps(_delta(live, "hello")))
            while alive:
                try:
                    message = q.get_nowait()
                except queue.Empty:
                    await asyncio.sleep(0.02)
                    continue
                await websocket.send_text(message)
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            watcher.cancel()
            if q in live.listeners:
                live.listeners.remove(q)

    @app.get("/", response_class=HTMLResponse)
    def index():
        ui = Path(__file__).resolve().parent / "static" / "index.html"
        if ui.exists():
            return ui.read_text(encoding="utf-8")
        return "<html><body><h1>rankbet session service</h1></body></html>"

    return app
