"""Sleep-session state machine, stress windows and next-day prediction.

A session starts when pressure is first applied to the pillow (t1), sets
sleep onset (t2) once low-voltage 12-14 cps brain waves appear after 30
minutes on the pillow, tracks deep/REM/light stages, and ends at wake
(t3). Detected stress windows are cut on a 15-minute grid over [t2, t3]
and feed the next-day prediction rules and the control-action emitter.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .physio import Classifier, SleepSample, StressState

DRIFT_MINIMUM_S = 30 * 60  # pressure time required before sleep onset counts
WINDOW_S = 15 * 60
PARTIAL_WINDOW_MIN_S = 5 * 60


class SleepStage(Enum):
    AWAKE = "awake"
    DRIFTING = "drifting"
    LIGHT_SLEEP = "light-sleep"
    DEEP_SLEEP = "deep-sleep"
    REM = "rem"
    WOKE_ALERT = "woke-alert"
    WOKE_RELAXED = "woke-relaxed"


class SequencingError(ValueError):
    """Frames must arrive in strictly increasing timestamp order."""


@dataclass(frozen=True)
class SensorFrame:
    """One instant of sensor readings inside a session."""

    timestamp: float  # seconds since session start
    pressure: bool
    bwv: str  # brain-wave voltage class: "low" | "high"
    cps: float  # wave frequency, cycles per second
    sample: SleepSample

    def __post_init__(self) -> None:
        if self.bwv not in ("low", "high"):
            raise ValueError(f"bwv must be 'low' or 'high', got {self.bwv!r}")


def stage_rule(t2_set: bool, bwv: str, cps: float, eye_movement: float) -> SleepStage:
    """Pure stage assignment from the discrete monitoring inputs.

    Before sleep onset only the drifting condition matters; after onset
    the checks run in order: deep sleep, REM, alert wake, else light.
    """
    if not t2_set:
        if bwv == "low" and 12 < cps < 14:
            return SleepStage.DRIFTING
        return SleepStage.AWAKE
    if bwv == "high":
        if cps < 4:
            return SleepStage.DEEP_SLEEP
        if eye_movement != 0:
            return SleepStage.REM
        return SleepStage.LIGHT_SLEEP
    if cps > 13:
        return SleepStage.WOKE_ALERT
    return SleepStage.LIGHT_SLEEP


@dataclass
class SessionTimeline:
    """Timers and stage segments of one night.

    Segments tile [t1, t3] without overlap once the session has ended.
    """

    t1: float | None = None  # first pressure on the pillow
    t2: float | None = None  # sleep onset
    t3: float | None = None  # wake
    wake_kind: str | None = None  # "alert" | "relaxed"
    segments: list[tuple[float, float, SleepStage]] = field(default_factory=list)

    @property
    def latency_minutes(self) -> float:
        if self.t1 is None or self.t2 is None:
            raise ValueError("latency undefined before sleep onset")
        return (self.t2 - self.t1) / 60.0

    @property
    def slept_minutes(self) -> float:
        if self.t2 is None or self.t3 is None:
            raise ValueError("time slept undefined before wake")
        return (self.t3 - self.t2) / 60.0


class SleepSession:
    """Single-writer state machine consuming frames in timestamp order.

    Monitoring is active only while pressure is applied; leaving the bed
    after sleep onset ends the session as a relaxed wake, while low
    voltage above 13 cps ends it as an alert wake.
    """

    def __init__(self) -> None:
        self.timeline = SessionTimeline()
        self.stage: SleepStage | None = None
        self.frames: list[SensorFrame] = []
        self._last_ts: float | None = None
        self._segment_start: float | None = None
        self.ended = False

    @property
    def monitoring(self) -> bool:
        return self.timeline.t1 is not None and not self.ended

    def step(self, frame: SensorFrame) -> SleepStage | None:
        """Advance the machine by one frame; returns the stage after it."""
        if self._last_ts is not None and frame.timestamp <= self._last_ts:
            raise SequencingError(
                f"frame at {frame.timestamp} not after {self._last_ts}"
            )
        self._last_ts = frame.timestamp
        if self.ended:
            return self.stage
        tl = self.timeline

        if tl.t1 is None:
            if frame.pressure:
                tl.t1 = frame.timestamp
                self.frames.append(frame)
                self._enter(SleepStage.AWAKE, frame.timestamp)
            return self.stage

        self.frames.append(frame)
        if not frame.pressure:
            # user left the bed; a wake only counts after sleep onset
            if tl.t2 is not None:
                self._wake(frame.timestamp, SleepStage.WOKE_RELAXED)
            else:
                self._close_segment(frame.timestamp)
                self.ended = True
            return self.stage

        stage = stage_rule(
            tl.t2 is not None, frame.bwv, frame.cps, frame.sample.eye_movement
        )
        if stage is SleepStage.DRIFTING:
            if frame.timestamp - tl.t1 >= DRIFT_MINIMUM_S:
                tl.t2 = frame.timestamp
            else:
                stage = SleepStage.AWAKE
        if stage is SleepStage.WOKE_ALERT:
            self._wake(frame.timestamp, SleepStage.WOKE_ALERT)
            return self.stage
        self._enter(stage, frame.timestamp)
        return self.stage

    def _enter(self, stage: SleepStage, ts: float) -> None:
        if stage is not self.stage:
            self._close_segment(ts)
            self.stage = stage
            self._segment_start = ts

    def _close_segment(self, ts: float) -> None:
        if self.stage is not None and self._segment_start is not None:
            if ts > self._segment_start:
                self.timeline.segments.append((self._segment_start, ts, self.stage))
            self._segment_start = None

    def _wake(self, ts: float, kind: SleepStage) -> None:
        self.timeline.t3 = ts
        self.timeline.wake_kind = "alert" if kind is SleepStage.WOKE_ALERT else "relaxed"
        self._enter(kind, ts)
        self.ended = True


def run_session(frames: Iterable[SensorFrame]) -> SleepSession:
    session = SleepSession()
    for frame in frames:
        session.step(frame)
    return session


@dataclass(frozen=True)
class StressWindow:
    """One 15-minute detection window over the sleeping period."""

    start: float
    end: float
    detected: StressState
    flagged: bool = False  # True when carried over from the previous window


def detect_windows(
    frames: Sequence[SensorFrame],
    classifier: Classifier,
    window_seconds: float = WINDOW_S,
) -> list[StressWindow]:
    """Classify the mean sample of each window on the [t2, t3] grid.

    A trailing partial window is kept when it covers at least 5 minutes.
    Windows with no frames carry the previous window's state, flagged.
    """
    session = run_session(frames)
    tl = session.timeline
    if tl.t2 is None or tl.t3 is None:
        raise ValueError("session must have sleep onset and wake times")
    edges: list[tuple[float, float]] = []
    start = tl.t2
    while start < tl.t3:
        end = min(start + window_seconds, tl.t3)
        if end - start >= PARTIAL_WINDOW_MIN_S or end - start == window_seconds:
            edges.append((start, end))
        start += window_seconds

    windows: list[StressWindow] = []
    previous: StressState | None = None
    for start, end in edges:
        in_window = [
            f.sample.as_array()
            for f in session.frames
            if start <= f.timestamp < end or (end == tl.t3 and f.timestamp == end)
        ]
        if in_window:
            mean = np.stack(in_window).mean(axis=0)
            detected = classifier(SleepSample.from_values(mean))
            windows.append(StressWindow(start, end, detected))
        else:
            if previous is None:
                raise ValueError(f"no frames in the first window [{start}, {end})")
            windows.append(StressWindow(start, end, previous, flagged=True))
        previous = windows[-1].detected
    return windows


class NextDayStress(Enum):
    LOW_NORMAL = "L/N"
    MEDIUM_LOW = "ML"
    MEDIUM_HIGH = "MH"
    INDETERMINATE = "indeterminate"


ADVISORIES = {
    NextDayStress.MEDIUM_HIGH: "rapid-mood-swings-irritability-sleeplessness-fatigue",
    NextDayStress.MEDIUM_LOW: "some-mood-swings-and-tiredness",
    NextDayStress.LOW_NORMAL: "active-and-happy",
    NextDayStress.INDETERMINATE: "no-clear-pattern",
}

_MH_SET = frozenset(
    {StressState.MEDIUM, StressState.HIGH, StressState.MEDIUM_HIGH}
)
_ML_SET = frozenset(
    {StressState.MEDIUM, StressState.LOW_NORMAL, StressState.MEDIUM_LOW}
)
_LN_SET = frozenset({StressState.LOW_NORMAL})


@dataclass(frozen=True)
class NextDayPrediction:
    sp: NextDayStress
    latency_minutes: float
    actual_time_slept_minutes: float
    advisory: str


def predict_next_day(
    windows: Sequence[StressWindow],
    latency_minutes: float,
    actual_time_slept_minutes: float | None = None,
) -> NextDayPrediction:
    """Next-day stress from the window mix and the sleep latency band.

    Rules, checked in order with strict latency bounds:
    medium-high when >= 80% of windows sit in {Medium, High, MediumHigh}
    and 35 < L < 45; medium-low when >= 60% sit in
    {Medium, LowNormal, MediumLow} and 20 < L < 35; low/normal when
    >= 80% are LowNormal and 10 < L < 20; anything else is indeterminate.
    """
    if not windows:
        raise ValueError("windows must be non-empty")
    if latency_minutes < 0:
        raise ValueError("latency must be >= 0")
    if actual_time_slept_minutes is None:
        actual_time_slept_minutes = sum(w.end - w.start for w in windows) / 60.0

    def fraction(states: frozenset[StressState]) -> float:
        return sum(1 for w in windows if w.detected in states) / len(windows)

    if fraction(_MH_SET) >= 0.8 and 35 < latency_minutes < 45:
        sp = NextDayStress.MEDIUM_HIGH
    elif fraction(_ML_SET) >= 0.6 and 20 < latency_minutes < 35:
        sp = NextDayStress.MEDIUM_LOW
    elif fraction(_LN_SET) >= 0.8 and 10 < latency_minutes < 20:
        sp = NextDayStress.LOW_NORMAL
    else:
        sp = NextDayStress.INDETERMINATE
    return NextDayPrediction(
        sp=sp,
        latency_minutes=latency_minutes,
        actual_time_slept_minutes=actual_time_slept_minutes,
        advisory=ADVISORIES[sp],
    )


@dataclass(frozen=True)
class ActionRecord:
    """Declarative control action; nothing here drives real devices."""

    phase: str  # "sleep" | "next-day"
    action: str
    trigger: str

    def line(self) -> str:
        return f"action phase={self.phase} action={self.action} trigger={self.trigger}"


NEXT_DAY_ACTIONS = {
    NextDayStress.LOW_NORMAL: ("stay-hydrated",),
    NextDayStress.INDETERMINATE: ("stay-hydrated",),
    NextDayStress.MEDIUM_LOW: ("stay-hydrated", "eat-mood-foods", "take-walks"),
    NextDayStress.MEDIUM_HIGH: (
        "stay-hydrated",
        "eat-mood-foods",
        "take-walks",
        "display-photo-notifications",
    ),
}


def control_actions(
    detected: Sequence[StressState],
    sp: NextDayPrediction | None = None,
    on_pillow: bool = False,
    latency_minutes: float = 0.0,
) -> list[ActionRecord]:
    """Ordered declarative actions for the sleep phase and the next day.

    Ambiance regulation triggers when the user is on the pillow or when
    high stress is detected for two continuous instances; the lights dim
    after 15 minutes of sleep latency on the pillow.
    """
    actions: list[ActionRecord] = []
    if on_pillow:
        actions.append(ActionRecord("sleep", "regulate-temperature", "on-pillow"))
        actions.append(ActionRecord("sleep", "play-audio", "on-pillow"))
        if latency_minutes >= 15:
            actions.append(ActionRecord("sleep", "dim-lights", "latency-15min"))
    streak = any(
        a == StressState.HIGH and b == StressState.HIGH
        for a, b in zip(detected, detected[1:])
    )
    if streak and not on_pillow:
        actions.append(ActionRecord("sleep", "regulate-temperature", "high-stress-streak"))
        actions.append(ActionRecord("sleep", "play-audio", "high-stress-streak"))
    if sp is not None:
        for action in NEXT_DAY_ACTIONS[sp.sp]:
            actions.append(ActionRecord("next-day", action, f"sp={sp.sp.value}"))
    return actions


REPLAY_HEADER = (
    "timestamp_s,pressure,bwv,cps,hours_slept,snoring_db,respiration_bpm,"
    "heart_bpm,blood_oxygen_pct,eye_movement,limb_movement,body_temp_f"
)


def write_replay(frames: Sequence[SensorFrame], path: str) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(REPLAY_HEADER + "\n")
        for f in frames:
            values = [repr(float(v)) for v in f.sample.as_tuple()]
            fh.write(
                ",".join(
                    [repr(float(f.timestamp)), "1" if f.pressure else "0", f.bwv, repr(float(f.cps))]
                    + values
                )
                + "\n"
            )


def load_replay(path: str) -> list[SensorFrame]:
    frames: list[SensorFrame] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != REPLAY_HEADER.split(","):
            raise ValueError("bad replay header")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 12:
                raise ValueError(f"line {lineno}: expected 12 columns, got {len(rec)}")
            frames.append(
                SensorFrame(
                    timestamp=float(rec[0]),
                    pressure=rec[1] == "1",
                    bwv=rec[2],
                    cps=float(rec[3]),
                    sample=SleepSample.from_values([float(v) for v in rec[4:12]]),
                )
            )
    return frames
