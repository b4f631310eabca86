import itertools

import numpy as np
import pytest

from sleepstress.physio import (
    DEFAULT_TABLE,
    SleepSample,
    StressState,
    classify_crisp,
)
from sleepstress.session import (
    ActionRecord,
    NextDayStress,
    SensorFrame,
    SequencingError,
    SleepSession,
    SleepStage,
    StressWindow,
    control_actions,
    detect_windows,
    load_replay,
    predict_next_day,
    run_session,
    stage_rule,
    write_replay,
)

MIN = 60.0


def class_sample(state: StressState, eye_movement=None) -> SleepSample:
    values = [
        (f.intervals[state][0] + f.intervals[state][1]) / 2
        for f in DEFAULT_TABLE.features
    ]
    if eye_movement is not None:
        values[5] = eye_movement
    return SleepSample.from_values(values)


def frame(ts_min, pressure=True, bwv="low", cps=10.0, state=StressState.LOW_NORMAL,
          eye_movement=None):
    return SensorFrame(
        timestamp=ts_min * MIN,
        pressure=pressure,
        bwv=bwv,
        cps=cps,
        sample=class_sample(state, eye_movement),
    )


def scripted_night(sleep_minutes=60, state=StressState.LOW_NORMAL, step_min=5):
    """Pressure at minute 0, drift at 30, sleep frames, wake after."""
    frames = [frame(0)]
    frames += [frame(m) for m in range(step_min, 30, step_min)]
    frames.append(frame(30, bwv="low", cps=13.0, state=state))  # onset
    minute = 30 + step_min
    while minute < 30 + sleep_minutes:
        frames.append(frame(minute, bwv="high", cps=5.0, state=state, eye_movement=0))
        minute += step_min
    frames.append(frame(30 + sleep_minutes, pressure=False, state=state))
    return frames


class TestStageRule:
    def test_truth_table_transcription(self):
        # verbatim transcription of the monitoring rules, checked over the
        # full discrete grid of (t2 set, voltage class, cps band, EM)
        cps_bands = [2.0, 8.0, 12.5, 13.5, 20.0]
        for t2_set, bwv, cps, em in itertools.product(
            (False, True), ("low", "high"), cps_bands, (0.0, 62.0)
        ):
            expected = None
            if not t2_set:
                expected = (
                    SleepStage.DRIFTING
                    if bwv == "low" and 12 < cps < 14
                    else SleepStage.AWAKE
                )
            elif bwv == "high" and cps < 4:
                expected = SleepStage.DEEP_SLEEP
            elif bwv == "high" and em != 0:
                expected = SleepStage.REM
            elif bwv == "low" and cps > 13:
                expected = SleepStage.WOKE_ALERT
            else:
                expected = SleepStage.LIGHT_SLEEP
            assert stage_rule(t2_set, bwv, cps, em) == expected, (t2_set, bwv, cps, em)


class TestSessionMachine:
    def test_drift_sets_t2_after_thirty_minutes(self):
        session = SleepSession()
        session.step(frame(0))
        stage = session.step(frame(30, cps=13.0))
        assert stage == SleepStage.DRIFTING
        assert session.timeline.t2 == 30 * MIN

    def test_drift_requires_thirty_minutes_on_pillow(self):
        session = SleepSession()
        session.step(frame(0))
        assert session.step(frame(10, cps=13.0)) == SleepStage.AWAKE
        assert session.timeline.t2 is None

    def test_deep_sleep(self):
        session = SleepSession()
        session.step(frame(0))
        session.step(frame(30, cps=13.0))
        assert session.step(frame(40, bwv="high", cps=3.0, eye_movement=0)) == SleepStage.DEEP_SLEEP

    def test_rem(self):
        session = SleepSession()
        session.step(frame(0))
        session.step(frame(30, cps=13.0))
        stage = session.step(frame(40, bwv="high", cps=6.0, eye_movement=62))
        assert stage == SleepStage.REM

    def test_deep_sleep_wins_over_rem_check(self):
        # rule order: high voltage below 4 cps is deep sleep even with EM
        session = SleepSession()
        session.step(frame(0))
        session.step(frame(30, cps=13.0))
        stage = session.step(frame(40, bwv="high", cps=3.0, eye_movement=62))
        assert stage == SleepStage.DEEP_SLEEP

    def test_alert_wake(self):
        session = SleepSession()
        session.step(frame(0))
        session.step(frame(30, cps=13.0))
        stage = session.step(frame(90, bwv="low", cps=14.0))
        assert stage == SleepStage.WOKE_ALERT
        assert session.timeline.t3 == 90 * MIN
        assert session.timeline.wake_kind == "alert"

    def test_relaxed_wake_on_pressure_release(self):
        session = run_session(scripted_night())
        assert session.timeline.wake_kind == "relaxed"
        assert session.timeline.t3 == 90 * MIN

    def test_out_of_order_frame_rejected(self):
        session = SleepSession()
        session.step(frame(10))
        with pytest.raises(SequencingError):
            session.step(frame(5))

    def test_timer_ordering_invariant(self):
        session = run_session(scripted_night())
        tl = session.timeline
        assert tl.t1 <= tl.t2 <= tl.t3
        assert tl.latency_minutes >= 0
        assert tl.slept_minutes >= 0

    def test_segments_tile_session(self):
        session = run_session(scripted_night())
        segments = session.timeline.segments
        assert segments[0][0] == session.timeline.t1
        assert segments[-1][1] == session.timeline.t3
        for (_, end, _), (start, _, _) in zip(segments, segments[1:]):
            assert end == start

    def test_monitoring_only_under_pressure(self):
        session = SleepSession()
        session.step(frame(1, pressure=False))
        assert session.timeline.t1 is None
        session.step(frame(2))
        assert session.timeline.t1 == 2 * MIN


class TestDetectWindows:
    def test_hour_of_low_frames_gives_four_low_windows(self):
        frames = scripted_night(sleep_minutes=60, state=StressState.LOW_NORMAL)
        windows = detect_windows(frames, classify_crisp)
        assert len(windows) == 4
        assert all(w.detected == StressState.LOW_NORMAL for w in windows)
        assert windows[0].start == 30 * MIN
        assert windows[-1].end == 90 * MIN

    def test_windows_tile_sleep_interval(self):
        frames = scripted_night(sleep_minutes=60)
        windows = detect_windows(frames, classify_crisp)
        for a, b in zip(windows, windows[1:]):
            assert a.end == b.start

    def test_mean_vector_classified(self):
        # alternating low/high frames classify as the mean sample
        frames = [frame(0)]
        frames.append(frame(30, cps=13.0))
        states = [StressState.LOW_NORMAL, StressState.HIGH]
        for i, minute in enumerate(range(31, 45)):
            frames.append(
                frame(minute, bwv="high", cps=5.0, state=states[i % 2], eye_movement=0)
            )
        frames.append(frame(45, pressure=False))
        windows = detect_windows(frames, classify_crisp)
        mean = np.stack(
            [f.sample.as_array() for f in frames[1:]
             if 30 * MIN <= f.timestamp <= 45 * MIN]
        ).mean(axis=0)
        expected = classify_crisp(SleepSample.from_values(mean))
        assert len(windows) == 1
        assert windows[0].detected == expected

    def test_partial_trailing_window_included_at_five_minutes(self):
        frames = scripted_night(sleep_minutes=20, step_min=1)
        windows = detect_windows(frames, classify_crisp)
        assert len(windows) == 2
        assert windows[1].end - windows[1].start == 5 * MIN

    def test_short_partial_trailing_window_dropped(self):
        frames = scripted_night(sleep_minutes=17, step_min=1)
        windows = detect_windows(frames, classify_crisp)
        assert len(windows) == 1

    def test_empty_window_carries_previous_flagged(self):
        frames = [frame(0), frame(30, cps=13.0)]
        frames.append(frame(31, bwv="high", cps=5.0, eye_movement=0))
        # nothing between minute 45 and 60, then frames again
        frames.append(frame(61, bwv="high", cps=5.0, eye_movement=0))
        frames.append(frame(75, pressure=False))
        windows = detect_windows(frames, classify_crisp)
        assert len(windows) == 3
        assert windows[1].flagged
        assert windows[1].detected == windows[0].detected

    def test_unfinished_session_rejected(self):
        frames = [frame(0), frame(30, cps=13.0)]
        with pytest.raises(ValueError):
            detect_windows(frames, classify_crisp)


def make_windows(states):
    return [
        StressWindow(i * 900.0, (i + 1) * 900.0, s) for i, s in enumerate(states)
    ]


class TestPredictNextDay:
    def test_medium_heavy_night_with_long_latency(self):
        windows = make_windows([StressState.MEDIUM] * 8 + [StressState.LOW_NORMAL] * 2)
        assert predict_next_day(windows, 40).sp == NextDayStress.MEDIUM_HIGH

    def test_low_night_with_healthy_latency(self):
        windows = make_windows([StressState.LOW_NORMAL] * 8 + [StressState.MEDIUM] * 2)
        assert predict_next_day(windows, 15).sp == NextDayStress.LOW_NORMAL

    def test_split_night_long_latency_indeterminate(self):
        windows = make_windows([StressState.LOW_NORMAL] * 5 + [StressState.HIGH] * 5)
        assert predict_next_day(windows, 60).sp == NextDayStress.INDETERMINATE

    def test_matches_rule_oracle_on_random_inputs(self):
        rng = np.random.default_rng(10)
        mh = {StressState.MEDIUM, StressState.HIGH, StressState.MEDIUM_HIGH}
        ml = {StressState.MEDIUM, StressState.LOW_NORMAL, StressState.MEDIUM_LOW}
        for _ in range(2000):
            states = [StressState(int(s)) for s in rng.integers(0, 5, size=rng.integers(1, 30))]
            latency = float(rng.uniform(0, 70))
            windows = make_windows(states)
            got = predict_next_day(windows, latency).sp
            f_mh = sum(s in mh for s in states) / len(states)
            f_ml = sum(s in ml for s in states) / len(states)
            f_ln = sum(s == StressState.LOW_NORMAL for s in states) / len(states)
            if f_mh >= 0.8 and 35 < latency < 45:
                expected = NextDayStress.MEDIUM_HIGH
            elif f_ml >= 0.6 and 20 < latency < 35:
                expected = NextDayStress.MEDIUM_LOW
            elif f_ln >= 0.8 and 10 < latency < 20:
                expected = NextDayStress.LOW_NORMAL
            else:
                expected = NextDayStress.INDETERMINATE
            assert got == expected

    def test_ats_computed_from_windows(self):
        windows = make_windows([StressState.LOW_NORMAL] * 4)
        assert predict_next_day(windows, 15).actual_time_slept_minutes == 60.0

    def test_rejects_empty_windows(self):
        with pytest.raises(ValueError):
            predict_next_day([], 10)

    def test_rejects_negative_latency(self):
        with pytest.raises(ValueError):
            predict_next_day(make_windows([StressState.MEDIUM]), -1)


class TestControlActions:
    def test_high_streak_triggers_ambiance(self):
        actions = control_actions([StressState.HIGH, StressState.HIGH])
        names = [a.action for a in actions]
        assert "regulate-temperature" in names
        assert "play-audio" in names

    def test_isolated_highs_do_not_trigger(self):
        actions = control_actions(
            [StressState.HIGH, StressState.LOW_NORMAL, StressState.HIGH]
        )
        assert actions == []

    def test_low_prediction_keeps_only_hydration(self):
        prediction = predict_next_day(
            make_windows([StressState.LOW_NORMAL] * 10), 15
        )
        actions = control_actions([], sp=prediction)
        next_day = [a for a in actions if a.phase == "next-day"]
        assert [a.action for a in next_day] == ["stay-hydrated"]

    def test_medium_high_prediction_full_list(self):
        prediction = predict_next_day(make_windows([StressState.MEDIUM] * 10), 40)
        names = [a.action for a in control_actions([], sp=prediction)]
        assert names == [
            "stay-hydrated", "eat-mood-foods", "take-walks",
            "display-photo-notifications",
        ]

    def test_no_pressure_no_windows_empty(self):
        assert control_actions([], sp=None, on_pillow=False) == []

    def test_on_pillow_with_latency_dims_lights(self):
        actions = control_actions([], on_pillow=True, latency_minutes=20)
        assert [a.action for a in actions] == [
            "regulate-temperature", "play-audio", "dim-lights",
        ]


class TestReplayFile:
    def test_roundtrip(self, tmp_path):
        frames = scripted_night()
        path = tmp_path / "night.csv"
        write_replay(frames, str(path))
        loaded = load_replay(str(path))
        assert loaded == frames

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("nope\n")
        with pytest.raises(ValueError):
            load_replay(str(path))
