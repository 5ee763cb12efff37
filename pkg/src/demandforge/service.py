"""HTTP service exposing the solved day to the review console.

One service instance holds one session: one network, one day of counts, one
evolving set of accepted constraints. Reads are snapshots; mutating requests
(feedback, resolve) are serialized through a single lock, and a rejected
feedback item leaves the session untouched.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import httpx
from fastapi import Body, FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware

from demandforge import emit, refine
from demandforge.counts import SEGMENTS_PER_DAY, CountBand
from demandforge.qipsolve import InfeasibleError, solve_day
from demandforge.refine import (FeedbackItem, LlmClient, RefinementState,
                                SyntacticError, intersection_counts,
                                verify_feasible, verify_semantic)


@dataclass
class Engine:
    """Session state behind the HTTP endpoints."""
    state: RefinementState
    bands_cv: Dict[Tuple[int, int], CountBand]
    bands_ld: Dict[Tuple[int, int], CountBand]
    client: LlmClient
    routes: list
    class_dist: Dict[str, float] = field(default_factory=lambda: {"car": 1.0})
    seed: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)
    status: dict = field(default_factory=lambda: {
        "state": "idle", "done": SEGMENTS_PER_DAY, "total": SEGMENTS_PER_DAY,
        "error": None})

    def counts_view(self, segment: int) -> dict:
        counts = self.state.incidence.location_counts(
            self.state.solutions[segment].usage)
        rows = []
        for loc in self.state.network.counting_locations:
            count = int(round(counts[loc.id]))
            cv = self.bands_cv.get((loc.id, segment))
            ld = self.bands_ld.get((loc.id, segment))
            in_band = all(band.lower <= count <= band.upper
                          for band in (cv, ld) if band is not None)
            rows.append({
                "location": loc.id,
                "intersection": loc.intersection_id,
                "approach": loc.approach,
                "movement": loc.movement,
                "count": count,
                "bands": {
                    "cv": {"lower": cv.lower, "upper": cv.upper} if cv else None,
                    "ld": {"lower": ld.lower, "upper": ld.upper} if ld else None,
                },
                "in_band": in_band,
            })
        return {"segment": segment, "locations": rows}


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="demandforge")
    # the review console is typically served from another origin (file:// or
    # a static host), so the API answers cross-origin requests
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.get("/api/status")
    def status():
        return dict(engine.status)

    @app.get("/api/counts")
    def counts(segment: int = Query(..., ge=0, lt=SEGMENTS_PER_DAY)):
        return engine.counts_view(segment)

    @app.get("/api/intersections")
    def intersections():
        out = []
        for intersection, locs in sorted(engine.state.network.intersections().items()):
            out.append({
                "id": intersection,
                "locations": [{"location": loc.id, "approach": loc.approach,
                               "movement": loc.movement} for loc in locs],
            })
        return {"intersections": out}

    @app.post("/api/feedback")
    def feedback(payload: dict = Body(...)):
        try:
            item = FeedbackItem(k=int(payload.get("k", len(engine.state.accepted) + 1)),
                                segment=int(payload["segment"]),
                                intersection=int(payload["intersection"]),
                                text=str(payload["text"]))
        except (KeyError, ValueError, refine.RefineError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        if item.intersection not in engine.state.network.intersections():
            raise HTTPException(status_code=422,
                                detail=f"unknown intersection {item.intersection}")
        with engine.lock:
            return _run_feedback(engine, item)

    @app.post("/api/resolve")
    def resolve():
        with engine.lock:
            if engine.status["state"] == "solving":
                raise HTTPException(status_code=409, detail="already solving")
            engine.status.update(state="solving", done=0,
                                 total=len(engine.state.problems), error=None)
        thread = threading.Thread(target=_resolve_all, args=(engine,), daemon=True)
        thread.start()
        return {"status": "solving"}

    @app.get("/api/report")
    def report(source: str = Query("cv")):
        bands = engine.bands_cv if source.lower() == "cv" else engine.bands_ld
        nonfringe = engine.state.problems[0].nonfringe_ids if engine.state.problems else []
        rep = emit.diff_report(engine.state.solutions, engine.state.incidence,
                               bands, nonfringe)
        return rep.to_json()

    return app


def _run_feedback(engine: Engine, item: FeedbackItem) -> dict:
    state = engine.state
    verdicts = {"syntactic": False, "feasible": False, "semantic": False}
    try:
        spec = refine.compile_feedback(item, state, engine.client)
    except SyntacticError as exc:
        raise HTTPException(status_code=422, detail=str(exc),
                            headers=None) from None
    except httpx.TimeoutException as exc:
        raise HTTPException(status_code=504, detail=f"client timeout: {exc}") from None
    verdicts["syntactic"] = True
    try:
        candidates = verify_feasible(state, spec)
    except InfeasibleError as exc:
        raise HTTPException(status_code=422, detail={
            "error": "infeasible", "detail": str(exc), "verdicts": verdicts,
        }) from None
    verdicts["feasible"] = True
    before = intersection_counts(state, item.intersection, item.segment)
    overlay = refine.overlay_solutions(state, candidates)
    after = intersection_counts(state, item.intersection, item.segment,
                                solutions=overlay)
    try:
        ok = verify_semantic(before, after, item, engine.client, state.network)
    except httpx.TimeoutException as exc:
        raise HTTPException(status_code=504, detail=f"client timeout: {exc}") from None
    if not ok:
        raise HTTPException(status_code=422, detail={
            "error": "semantic", "detail": "counts did not move as the "
            "feedback asked", "verdicts": verdicts,
        })
    verdicts["semantic"] = True
    refine.accept_spec(state, spec, candidates)
    state.tally["accepted"] += 1
    return {
        "accepted": True,
        "verdicts": verdicts,
        "spec": spec.to_json(),
        "before": {str(j): c for j, c in before.items()},
        "after": {str(j): c for j, c in after.items()},
    }


def _resolve_all(engine: Engine):
    def progress(done, total):
        engine.status.update(done=done, total=total)

    try:
        solutions = solve_day(engine.state.problems, engine.state.config,
                              progress=progress)
        engine.state.solutions = solutions
        engine.status.update(state="idle", error=None)
    except Exception as exc:  # surface solver failures through /api/status
        engine.status.update(state="idle", error=str(exc))
