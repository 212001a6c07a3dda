"""WebSocket bridge between the MPC loop and the browser sandbox.

One sandbox session at a time. Incoming hand poses land in a latest-wins
mailbox; the planner thread snapshots the newest pose each cycle, runs one
MPC step under a wall-clock budget, and publishes an immutable state frame.
The socket handler ships the newest frame whenever it changes, dropping
intermediate frames rather than queueing them, so a slow client can never
stall the planner.
"""

from __future__ import annotations

import asyncio
import json
import logging
import threading
import time
from dataclasses import replace

import numpy as np

from .collab import CollaborativeProblem, RobotAgent, SphereAgent
from .config import RunConfig
from .kinematics import fk_batch, forward_kinematics, load_fixture
from .mpc import MpcOptions, Observation, initial_state, mpc_step
from .trajectory import constant_trajectory

log = logging.getLogger("collabmpc.server")

DEFAULT_HAND = np.array([0.62, 0.10, 0.45])


def _now_ms() -> float:
    return time.time() * 1e3


class LatestWins:
    """Single-slot mailbox: writers overwrite, readers take the newest."""

    def __init__(self):
        self._lock = threading.Lock()
        self._value = None
        self._seq = 0

    def put(self, value) -> None:
        with self._lock:
            self._value = value
            self._seq += 1

    def peek(self):
        with self._lock:
            return self._value, self._seq


class SandboxRuntime:
    """Owns the planner thread and the frame slot for one sandbox session."""

    def __init__(self, cfg: RunConfig, rate_hz: float = 10.0):
        self.cfg = cfg
        self.rate_hz = rate_hz
        self.chain = load_fixture(cfg.sim.chain)
        self.poses = LatestWins()
        self.frames = LatestWins()
        self._thread = None
        self._stop = threading.Event()
        self._params_lock = threading.Lock()
        self._pending_reset = None
        self.reset(scenario=None)

    # -- session control -------------------------------------------------

    def reset(self, scenario: int | None) -> None:
        with self._params_lock:
            self._pending_reset = {"scenario": scenario}

    def set_params(self, updates: dict) -> None:
        interaction = self.cfg.interaction
        known = {f for f in vars(interaction)}
        bad = set(updates) - known
        if bad:
            raise ValueError(f"unknown parameters: {sorted(bad)}")
        with self._params_lock:
            self.cfg = replace(self.cfg,
                               interaction=replace(interaction, **{
                                   k: float(v) for k, v in updates.items()}))
            self._pending_reset = self._pending_reset or {"scenario": None}

    def _build_state(self, scenario: int | None):
        from . import sim
        cfg = self.cfg
        if scenario is None:
            world = sim.ObstacleWorld((sim.Box([0.45, -0.10, 0.5],
                                               [0.05, 0.12, 0.15]),))
            hand = DEFAULT_HAND.copy()
            q0 = sim.HOME_CONFIG.copy()
        else:
            sc = sim.generate_scenario(int(scenario), cfg)
            world = sc.world
            hand = sc.agent_start.copy()
            q0 = sc.robot_q0.copy()
        horizon, dt = cfg.mpc.horizon, cfg.mpc.dt
        problem = CollaborativeProblem(
            robot=RobotAgent(self.chain, constant_trajectory(q0, horizon, dt),
                             cfg.robot),
            agents=(SphereAgent(constant_trajectory(hand, horizon, dt),
                                radius=cfg.sim.agent_radius,
                                weights=cfg.agent),),
            world=world, interaction=cfg.interaction)
        self._q = q0.copy()
        self._hand_default = hand
        return initial_state(problem)

    # -- planner loop ------------------------------------------------------

    def start(self) -> None:
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)

    def _loop(self) -> None:
        period = 1.0 / self.rate_hz
        state = None
        cycle = 0
        while not self._stop.is_set():
            started = time.perf_counter()
            with self._params_lock:
                pending = self._pending_reset
                self._pending_reset = None
                cfg = self.cfg
            if pending is not None or state is None:
                state = self._build_state((pending or {}).get("scenario"))
            pose, _ = self.poses.peek()
            if pose is None:
                hand, stamp_ms = self._hand_default, _now_ms()
            else:
                hand, stamp_ms = pose
            opts = MpcOptions(
                engage_threshold=cfg.mpc.engage_threshold,
                stale_after=1e9,  # an idle hand is stationary, not stale
                budget_s=max(period - 0.02, 0.02),
                inner_iters=cfg.solver.max_iters,
                outer_iters=cfg.solver.outer_iters,
                s_tol=max(cfg.solver.s_tol, 1e-6))
            obs = Observation(self._q, hand, stamp=stamp_ms / 1e3)
            try:
                cmd, state, diag = mpc_step(state, obs, opts)
                self._q = cmd
                self.frames.put(self._frame(state, diag, hand, stamp_ms, cycle))
            except Exception:
                log.exception("planner cycle failed; holding")
            cycle += 1
            elapsed = time.perf_counter() - started
            if (wait := period - elapsed) > 0:
                self._stop.wait(wait)

    def _frame(self, state, diag, hand, obs_stamp_ms: float, cycle: int) -> str:
        chain = self.chain
        robot_traj = state.problem.robot.trajectory
        agent_traj = state.problem.agents[0].trajectory
        plan_ee = fk_batch(chain, robot_traj.knots).ee_t
        obstacles = json.loads(state.problem.world.to_json())["primitives"]
        payload = {
            "robot_q": [round(float(v), 5) for v in self._q],
            "ee": [round(float(v), 5) for v in plan_ee[0]],
            "plan_ee": [[round(float(v), 4) for v in p] for p in plan_ee],
            "agent_pred": [[round(float(v), 4) for v in p]
                           for p in agent_traj.knots],
            "hand": [round(float(v), 5) for v in hand],
            "obstacles": obstacles,
            "phase": state.phase,
            "metrics": {
                "cycle": cycle,
                "distance": round(diag.distance, 4),
                "cost": None if diag.cost_final != diag.cost_final
                else round(diag.cost_final, 4),
                "solve_ms": round(diag.solve_ms, 2),
                "iterations": diag.iterations,
                "obs_stamp_ms": obs_stamp_ms,
            },
        }
        return json.dumps({"type": "state", "payload": payload,
                           "stamp_ms": _now_ms()})


def _error_reply(message: str) -> str:
    return json.dumps({"type": "error", "payload": {"message": message},
                       "stamp_ms": _now_ms()})


def handle_message(runtime: SandboxRuntime, raw: str) -> str | None:
    """Apply one client message; returns an error reply or None."""
    try:
        msg = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError):
        return _error_reply("malformed JSON")
    if not isinstance(msg, dict) or "type" not in msg:
        return _error_reply("message must be an object with a 'type'")
    kind = msg["type"]
    payload = msg.get("payload") or {}
    if kind == "hand_pose":
        t = payload.get("t")
        if (not isinstance(t, (list, tuple)) or len(t) != 3
                or not all(isinstance(v, (int, float)) for v in t)):
            return _error_reply("hand_pose payload needs t: [x, y, z]")
        stamp = float(msg.get("stamp_ms") or _now_ms())
        runtime.poses.put((np.array(t, dtype=float), stamp))
        return None
    if kind == "reset":
        runtime.reset(payload.get("scenario"))
        return None
    if kind == "set_params":
        try:
            runtime.set_params(payload)
        except (ValueError, TypeError) as exc:
            return _error_reply(str(exc))
        return None
    return _error_reply(f"unknown message type {kind!r}")


def create_app(cfg: RunConfig, rate_hz: float = 10.0):
    """FastAPI app exposing /ws plus the built sandbox page if present."""
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect

    app = FastAPI(title="collabmpc sandbox")
    runtime = SandboxRuntime(cfg, rate_hz)
    app.state.runtime = runtime
    sessions = {"active": 0}

    @app.on_event("startup")
    async def _startup():
        runtime.start()

    @app.on_event("shutdown")
    async def _shutdown():
        runtime.stop()

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        if sessions["active"] >= 1:
            await ws.close(code=1008, reason="sandbox busy")
            return
        sessions["active"] += 1
        await ws.accept()
        last_seq = -1
        try:
            while True:
                # flush pending client messages without blocking the frames
                try:
                    while True:
                        raw = await asyncio.wait_for(ws.receive_text(), 0.005)
                        reply = handle_message(runtime, raw)
                        if reply is not None:
                            await ws.send_text(reply)
                except asyncio.TimeoutError:
                    pass
                frame, seq = runtime.frames.peek()
                if frame is not None and seq != last_seq:
                    last_seq = seq
                    await ws.send_text(frame)
        except WebSocketDisconnect:
            pass
        finally:
            sessions["active"] -= 1

    from pathlib import Path
    dist = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if dist.is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(dist), html=True),
                  name="sandbox")
    return app


def serve(cfg: RunConfig, host: str = "127.0.0.1", port: int = 8765,
          rate_hz: float = 10.0) -> int:
    import uvicorn

    app = create_app(cfg, rate_hz)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except OSError as exc:
        log.error("cannot bind %s:%d (port in use?): %s", host, port, exc)
        return 3
    return 0
