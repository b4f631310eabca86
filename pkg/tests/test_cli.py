import json

import pytest

from sleepstress import session
from sleepstress.cli import main
from sleepstress.physio import StressState, load_csv


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def init_chain(capsys, workspace):
    assert run(capsys, "keys", "gen", "--keys", "keys", "--seed", "3")[0] == 0
    assert run(
        capsys, "chain", "init", "--keys", "keys", "--chain", "chain.bin",
        "--target-bits", "4",
    )[0] == 0
    assert run(
        capsys, "roles", "add", "--keys", "keys", "--chain", "chain.bin",
        "--role", "Family",
    )[0] == 0
    assert run(
        capsys, "roles", "bind", "--keys", "keys", "--chain", "chain.bin",
        "--role", "Family", "--requester", "family",
    )[0] == 0


class TestDataCommands:
    def test_gen_data_writes_balanced_csv(self, capsys, workspace):
        code, out, _ = run(
            capsys, "gen-data", "--per-class", "10", "--seed", "7", "--out", "ds.csv"
        )
        assert code == 0 and "50 rows" in out
        ds = load_csv("ds.csv")
        assert len(ds) == 50

    def test_gen_data_deterministic(self, capsys, workspace):
        run(capsys, "gen-data", "--per-class", "5", "--seed", "9", "--out", "a.csv")
        run(capsys, "gen-data", "--per-class", "5", "--seed", "9", "--out", "b.csv")
        assert (workspace / "a.csv").read_text() == (workspace / "b.csv").read_text()

    def test_train_eval_predict_cycle(self, capsys, workspace):
        run(capsys, "gen-data", "--per-class", "60", "--seed", "5", "--out", "ds.csv")
        code, out, _ = run(
            capsys, "train", "--data", "ds.csv", "--out", "model.json",
            "--seed", "1", "--max-steps", "3000", "--history", "hist.csv",
        )
        assert code == 0 and "accuracy" in out
        assert (workspace / "hist.csv").read_text().startswith("step,loss,accuracy")
        code, out, _ = run(capsys, "eval", "--model", "model.json", "--data", "ds.csv", "--json")
        assert code == 0
        report = json.loads(out)
        assert report["accuracy"] >= 0.9
        code, out, _ = run(
            capsys, "predict", "--model", "model.json", "--values", "8,45,17,52,96,70,6,97"
        )
        assert code == 0 and "prediction:" in out


class TestFuzzyCommands:
    def test_count_prints_792(self, capsys):
        code, out, _ = run(capsys, "fuzzy", "count")
        assert code == 0 and out.strip() == "792"

    def test_surface_csv(self, capsys, workspace):
        code, out, _ = run(
            capsys, "fuzzy", "surface", "--x", "snoring", "--y", "heart_rate",
            "--steps", "4", "--out", "surface.csv",
        )
        assert code == 0
        lines = (workspace / "surface.csv").read_text().splitlines()
        assert lines[0] == "snoring,heart_rate,output"
        assert len(lines) == 17


class TestDetect:
    def test_detect_on_scripted_night(self, capsys, workspace):
        from sleepstress.physio import DEFAULT_TABLE, SleepSample

        def class_sample(state):
            values = [
                (f.intervals[state][0] + f.intervals[state][1]) / 2
                for f in DEFAULT_TABLE.features
            ]
            return SleepSample.from_values(values)

        frames = [
            session.SensorFrame(0.0, True, "low", 10.0, class_sample(StressState.LOW_NORMAL))
        ]
        frames.append(
            session.SensorFrame(1800.0, True, "low", 13.0, class_sample(StressState.LOW_NORMAL))
        )
        for minute in range(35, 90, 5):
            frames.append(
                session.SensorFrame(
                    minute * 60.0, True, "high", 5.0,
                    class_sample(StressState.LOW_NORMAL),
                )
            )
        frames.append(
            session.SensorFrame(5400.0, False, "low", 10.0, class_sample(StressState.LOW_NORMAL))
        )
        session.write_replay(frames, "night.csv")
        code, out, _ = run(capsys, "detect", "night.csv", "--classifier", "crisp")
        assert code == 0
        assert out.count("window") == 4
        assert "led-low-normal" in out
        assert "next-day prediction:" in out
        code, out, _ = run(capsys, "detect", "night.csv", "--classifier", "fuzzy", "--json")
        assert code == 0
        payload = json.loads(out)
        assert len(payload["windows"]) == 4
        # the medium-low rule's level set includes LowNormal, and the
        # 30-minute latency lands in its 20..35 band
        assert payload["next_day"] == "ML"


class TestChainLifecycle:
    def test_full_cycle(self, capsys, workspace):
        init_chain(capsys, workspace)
        code, out, _ = run(
            capsys, "upload", "--keys", "keys", "--chain", "chain.bin", "--seed", "21"
        )
        assert code == 0 and "stored record" in out
        code, out, _ = run(
            capsys, "retrieve", "--keys", "keys", "--chain", "chain.bin",
            "--requester", "family",
        )
        assert code == 0 and "record ts=" in out
        code, out, _ = run(capsys, "chain", "verify", "--keys", "keys", "--chain", "chain.bin")
        assert code == 0 and "chain ok" in out
        code, out, _ = run(capsys, "chain", "export", "--keys", "keys", "--chain", "chain.bin")
        assert code == 0 and "height" in out

    def test_verify_names_height_after_byte_flip(self, capsys, workspace):
        init_chain(capsys, workspace)
        run(capsys, "upload", "--keys", "keys", "--chain", "chain.bin", "--seed", "22")
        raw = bytearray((workspace / "chain.bin").read_bytes())
        raw[-40] ^= 0x01  # inside the last block's transaction bytes
        (workspace / "chain.bin").write_bytes(bytes(raw))
        code, out, err = run(capsys, "chain", "verify", "--keys", "keys", "--chain", "chain.bin")
        assert code == 1
        assert err.startswith("error:")
        assert "height 5" in err  # genesis + 2 deploys + role + bind + upload

    def test_unauthorized_retrieve_fails(self, capsys, workspace):
        init_chain(capsys, workspace)
        run(capsys, "upload", "--keys", "keys", "--chain", "chain.bin", "--seed", "23")
        run(
            capsys, "roles", "unbind", "--keys", "keys", "--chain", "chain.bin",
            "--requester", "family",
        )
        code, _, err = run(
            capsys, "retrieve", "--keys", "keys", "--chain", "chain.bin",
            "--requester", "family",
        )
        assert code == 1 and "denied" in err


class TestThreatAndBench:
    def test_threats_pass_and_exit_zero(self, capsys):
        code, out, _ = run(capsys, "threats", "--seed", "2")
        assert code == 0
        assert out.count("PASS") == 4

    def test_threats_json(self, capsys):
        code, out, _ = run(capsys, "threats", "--seed", "2", "--json")
        assert code == 0
        payload = json.loads(out)
        assert [r["passed"] for r in payload] == [True] * 4

    def test_bench_two_difficulties(self, capsys):
        code, out, _ = run(
            capsys, "bench", "--trials", "2", "--target-bits", "4",
            "--high-bits", "13",
        )
        assert code == 0
        assert "increases with difficulty: yes" in out


class TestErrorHandling:
    def test_unknown_flag_is_usage_error(self, capsys):
        assert run(capsys, "gen-data", "--bogus")[0] == 2

    def test_unknown_command_is_usage_error(self, capsys):
        assert run(capsys, "frobnicate")[0] == 2

    def test_missing_file_is_operational_error(self, capsys, workspace):
        code, _, err = run(capsys, "train", "--data", "missing.csv")
        assert code == 1
        assert err.startswith("error:")
        assert "\n" == err[-1] and err.count("\n") == 1  # single line

    def test_config_defaults_and_overrides(self, capsys, workspace):
        (workspace / "conf.json").write_text(json.dumps({"data": "from_conf.csv", "seed": 4}))
        code, _, _ = run(
            capsys, "--config", "conf.json", "gen-data", "--per-class", "2"
        )
        assert code == 0
        assert (workspace / "from_conf.csv").exists()
        code, _, _ = run(
            capsys, "--config", "conf.json", "gen-data", "--per-class", "2",
            "--out", "explicit.csv",
        )
        assert code == 0
        assert (workspace / "explicit.csv").exists()

    def test_unknown_config_key_rejected(self, capsys, workspace):
        (workspace / "conf.json").write_text('{"nope": 1}')
        code, _, err = run(capsys, "--config", "conf.json", "fuzzy", "count")
        assert code == 1 and "unknown config keys" in err
