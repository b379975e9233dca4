"""Robotic arm model: state machine, sensor gates, and motion programs.

An arm cycles Standby -> travel -> hoist -> align -> extend -> grip or
release -> retract -> travel home -> Standby. Alignment counts per-slot
IR beacon pulses; gripping requires both piezo force sensors to stay
above threshold for a sustained hold window. Both gates are pure
functions over sample streams so the simulator can feed them synthetic
(optionally noisy) streams and unit tests can probe edge cases directly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .catalog import ShelfAddress
from .errors import LibraryError, StateMachineViolation
from .railnet import KinematicParams, Path, rotation_steps


class IllegalTransition(StateMachineViolation):
    code = "IllegalTransition"


class InvalidAddress(LibraryError):
    code = "InvalidAddress"


class NonPositiveSpeed(LibraryError):
    code = "NonPositiveSpeed"


def travel_time(distance_m: float, speed_mps: float) -> float:
    if speed_mps <= 0:
        raise NonPositiveSpeed(str(speed_mps))
    if distance_m < 0:
        raise LibraryError("distance must be nonnegative")
    return distance_m / speed_mps


def ms_half_up(seconds: float) -> int:
    """Duration in whole milliseconds, rounding .5 up. The integer-ms time
    base keeps event ordering exact across platforms."""
    return int(seconds * 1000.0 + 0.5)


@dataclass(frozen=True)
class GripParams:
    f_min_newton: float = 1.0
    hold_ms: int = 200
    timeout_ms: int = 3000
    max_retries: int = 2
    sample_period_ms: int = 20

    def __post_init__(self):
        if min(self.f_min_newton, self.hold_ms, self.timeout_ms, self.sample_period_ms) <= 0:
            raise LibraryError("grip parameters must be positive")
        if self.max_retries < 0:
            raise LibraryError("max_retries must be >= 0")
        if self.hold_ms >= self.timeout_ms:
            raise LibraryError("hold_ms must be below timeout_ms")

    @classmethod
    def from_dict(cls, doc: dict) -> "GripParams":
        return cls(
            f_min_newton=float(doc.get("f_min_newton", 1.0)),
            hold_ms=int(doc.get("hold_ms", 200)),
            timeout_ms=int(doc.get("timeout_ms", 3000)),
            max_retries=int(doc.get("max_retries", 2)),
            sample_period_ms=int(doc.get("sample_period_ms", 20)),
        )


@dataclass(frozen=True)
class IrParams:
    tolerance_factor: float = 1.5

    def __post_init__(self):
        if self.tolerance_factor <= 0:
            raise LibraryError("tolerance_factor must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "IrParams":
        return cls(tolerance_factor=float(doc.get("tolerance_factor", 1.5)))


def pulse_interval_ms(pitch_mm: int, hoist_speed_mps: float) -> float:
    """Expected gap between beacon pulses: one slot pitch traversed at the
    carriage (hoist drive) speed."""
    return (pitch_mm / 1000.0) / hoist_speed_mps * 1000.0


@dataclass(frozen=True)
class AlignResult:
    ok: bool
    pulses_seen: int
    elapsed_ms: float
    reason: Optional[str] = None  # "MissedBeacon" when not ok


def ir_align(
    current_slot: int,
    target_slot: int,
    pulse_times_ms: Sequence[float],
    expected_interval_ms: float,
    params: IrParams,
) -> AlignResult:
    """Count beacon pulses toward the target slot.

    Aligned after exactly |target - current| pulses, each arriving within
    expected interval x tolerance of the previous one (or of the start for
    the first). A late or missing pulse is a MissedBeacon.
    """
    needed = abs(target_slot - current_slot)
    limit = expected_interval_ms * params.tolerance_factor
    last = 0.0
    seen = 0
    for t in pulse_times_ms:
        if seen == needed:
            break
        if t - last > limit:
            return AlignResult(False, seen, last + limit, reason="MissedBeacon")
        last = t
        seen += 1
    if seen == needed:
        return AlignResult(True, seen, last)
    return AlignResult(False, seen, last + limit, reason="MissedBeacon")


@dataclass(frozen=True)
class GripResult:
    ok: bool
    decided_ms: float
    reason: Optional[str] = None  # "GripFailure" when not ok


def grip(
    samples: Sequence[tuple[float, float, float]],
    params: GripParams,
) -> GripResult:
    """Evaluate a (time_ms, force1, force2) stream against the piezo gate.

    Gripped once both sensors have read at least f_min continuously for
    hold_ms; failure when no such window completes before timeout_ms.
    """
    run_start: Optional[float] = None
    for t, f1, f2 in samples:
        if t > params.timeout_ms:
            break
        if f1 >= params.f_min_newton and f2 >= params.f_min_newton:
            if run_start is None:
                run_start = t
            if t - run_start >= params.hold_ms:
                return GripResult(True, t)
        else:
            run_start = None
    return GripResult(False, params.timeout_ms, reason="GripFailure")


# --- Arm state machine ----------------------------------------------------

STANDBY = "Standby"
MOVING = "Moving"
HOISTING = "Hoisting"
ALIGNING = "Aligning"
EXTENDING = "Extending"
GRIPPING = "Gripping"
RETRACTING = "Retracting"
RELEASING = "Releasing"

_PHASE_STATE = {
    "travel": MOVING,
    "rotate": MOVING,
    "hoist": HOISTING,
    "align": ALIGNING,
    "extend": EXTENDING,
    "grip": GRIPPING,
    "release": RELEASING,
    "retract": RETRACTING,
}


def phase_state_kind(phase_kind: str) -> str:
    """The FSM state an arm occupies while executing a phase kind."""
    return _PHASE_STATE[phase_kind]


@dataclass(frozen=True)
class Phase:
    """One timed step of a motion program."""

    kind: str  # travel|rotate|hoist|align|extend|grip|release|retract
    duration_ms: int
    segment: Optional[str] = None
    from_node: Optional[str] = None
    to_node: Optional[str] = None
    length_m: Optional[float] = None
    steps: Optional[int] = None  # rotation steps
    level: Optional[int] = None
    slot: Optional[int] = None
    pulses: Optional[int] = None
    barcode: Optional[str] = None
    # Reservation boundary: segments that must all be held before this
    # phase (and the rest of its leg) may start.
    leg_segments: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.kind not in _PHASE_STATE:
            raise LibraryError(f"unknown phase kind {self.kind!r}")
        if self.duration_ms < 0:
            raise LibraryError("phase duration must be nonnegative")


@dataclass(frozen=True)
class ArmState:
    kind: str
    at_node: str
    carried: Optional[str] = None
    phase_index: int = 0

    def is_idle(self) -> bool:
        return self.kind == STANDBY


# Events the state machine accepts.
EV_ASSIGN = "AssignTask"
EV_GRANTED = "ReservationGranted"
EV_PHASE_DONE = "PhaseComplete"
EV_GRIP_OK = "GripOk"
EV_GRIP_FAIL = "GripFail"
EV_MISSED_BEACON = "MissedBeacon"


def _phase_state(program: Sequence[Phase], index: int, prior: ArmState, node: str) -> ArmState:
    if index >= len(program):
        return ArmState(STANDBY, at_node=node, carried=prior.carried, phase_index=index)
    return ArmState(
        _PHASE_STATE[program[index].kind],
        at_node=node,
        carried=prior.carried,
        phase_index=index,
    )


def transition(
    state: ArmState,
    event: str,
    program: Sequence[Phase] = (),
    at_node: Optional[str] = None,
) -> ArmState:
    """Advance the arm FSM. Illegal (state, event) pairs raise
    IllegalTransition: they indicate a scheduler bug, not a domain
    condition, so they are never swallowed."""
    node = at_node if at_node is not None else state.at_node
    phase = program[state.phase_index] if state.phase_index < len(program) else None

    if event == EV_ASSIGN or event == EV_GRANTED:
        if state.kind != STANDBY:
            raise IllegalTransition(f"{event} in {state.kind}")
        return _phase_state(program, state.phase_index if event == EV_GRANTED else 0, state, node)

    if event == EV_PHASE_DONE:
        if phase is None or state.kind != _PHASE_STATE[phase.kind]:
            raise IllegalTransition(f"PhaseComplete in {state.kind}")
        if phase.kind == "grip":
            raise IllegalTransition("grip phases complete via GripOk/GripFail")
        carried = state.carried
        if phase.kind == "release":
            carried = None
        nxt = replace(state, carried=carried)
        return _phase_state(program, state.phase_index + 1, nxt, node)

    if event == EV_GRIP_OK:
        if state.kind != GRIPPING or phase is None or phase.kind != "grip":
            raise IllegalTransition(f"GripOk in {state.kind}")
        if state.carried is not None:
            raise StateMachineViolation("grip while already carrying")
        nxt = replace(state, carried=phase.barcode)
        return _phase_state(program, state.phase_index + 1, nxt, node)

    if event == EV_GRIP_FAIL:
        if state.kind != GRIPPING:
            raise IllegalTransition(f"GripFail in {state.kind}")
        return state  # controller decides: retry the grip phase or abort

    if event == EV_MISSED_BEACON:
        if state.kind != ALIGNING:
            raise IllegalTransition(f"MissedBeacon in {state.kind}")
        return state

    raise IllegalTransition(f"unknown event {event!r}")


# --- Motion program construction -------------------------------------------


def travel_phases(path: Path, params: KinematicParams) -> list[Phase]:
    """Travel and rotate phases along a routed path. Every intermediate
    turntable contributes a rotate phase, zero-duration when the pass is
    straight through."""
    phases: list[Phase] = []
    prev_arrive: Optional[int] = None
    for step in path.steps:
        if prev_arrive is not None:
            steps = rotation_steps(prev_arrive, step.depart_port)
            phases.append(
                Phase(
                    kind="rotate",
                    duration_ms=ms_half_up(steps * params.t_rot_s),
                    steps=steps,
                    from_node=step.from_node,
                )
            )
        phases.append(
            Phase(
                kind="travel",
                duration_ms=ms_half_up(travel_time(step.length_m, params.rail_speed_mps)),
                segment=step.edge_id,
                from_node=step.from_node,
                to_node=step.to_node,
                length_m=step.length_m,
            )
        )
        prev_arrive = step.arrive_port
    if phases:
        first = phases[0]
        phases[0] = replace(first, leg_segments=path.segments)
    return phases


def hoist_phase(level: int, params: KinematicParams) -> Phase:
    seconds = travel_time(level * params.level_height_m, params.hoist_speed_mps)
    return Phase(kind="hoist", duration_ms=ms_half_up(seconds), level=level)


def align_phase(slot: int, pitch_mm: int, params: KinematicParams) -> Phase:
    interval = pulse_interval_ms(pitch_mm, params.hoist_speed_mps)
    return Phase(kind="align", duration_ms=ms_half_up(slot * interval / 1000.0), slot=slot, pulses=slot)


def shelf_action_phases(
    address: ShelfAddress,
    pitch_mm: int,
    barcode: str,
    action: str,  # "grip" | "release"
    params: KinematicParams,
    grip_params: GripParams,
) -> list[Phase]:
    """Hoist to the level, align to the slot, extend, act, retract, hoist
    back down."""
    extend_ms = ms_half_up(params.extend_time_s)
    return [
        hoist_phase(address.level, params),
        align_phase(address.slot, pitch_mm, params),
        Phase(kind="extend", duration_ms=extend_ms),
        Phase(kind=action, duration_ms=grip_params.hold_ms, barcode=barcode),
        Phase(kind="retract", duration_ms=extend_ms),
        hoist_phase(address.level, params),
    ]


def station_action_phases(
    barcode: str,
    action: str,
    params: KinematicParams,
    grip_params: GripParams,
) -> list[Phase]:
    """Extend, act, retract at a station tray (no hoist or alignment)."""
    extend_ms = ms_half_up(params.extend_time_s)
    return [
        Phase(kind="extend", duration_ms=extend_ms),
        Phase(kind=action, duration_ms=grip_params.hold_ms, barcode=barcode),
        Phase(kind="retract", duration_ms=extend_ms),
    ]


def reverse_path(path: Path) -> Path:
    steps = tuple(
        replace(
            step,
            from_node=step.to_node,
            to_node=step.from_node,
            depart_port=step.arrive_port,
            arrive_port=step.depart_port,
        )
        for step in reversed(path.steps)
    )
    return Path(steps=steps, exact_time_s=path.exact_time_s)


def plan_motion(
    task_kind: str,  # "place" | "pick"
    path: Path,
    address: ShelfAddress,
    pitch_mm: int,
    barcode: str,
    params: KinematicParams,
    grip_params: GripParams,
) -> list[Phase]:
    """One full shelf trip: out along the path, hoist/align/extend, grip or
    release, retract, then the reverse leg back to the start."""
    if task_kind not in ("place", "pick"):
        raise LibraryError(f"unknown motion task {task_kind!r}")
    if address.level < 0 or address.slot < 0:
        raise InvalidAddress(str(address))
    action = "release" if task_kind == "place" else "grip"
    phases = travel_phases(path, params)
    phases += shelf_action_phases(address, pitch_mm, barcode, action, params, grip_params)
    phases += travel_phases(reverse_path(path), params)
    return phases


def program_duration_ms(phases: Sequence[Phase]) -> int:
    return sum(p.duration_ms for p in phases)
