"""End-to-end tests for the JSON-config command line interface."""

import csv
import filecmp
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from jumpfeedback import (
    CountingWeights,
    QubitParams,
    __version__,
    marginals,
    feedback_steady_state,
    mc_estimate,
    qubit_analytic,
    qubit_cooling_model,
)
from jumpfeedback.cli import (
    main,
    model_from_config,
    model_to_config,
    parse_config,
    run_config,
)
from jumpfeedback.errors import ConfigError

from helpers import random_model

QUBIT_MODEL = {"builtin": "qubit_cooling", "params": {"nbar": 0.5, "gamma": 1.0}}
MASER_PARAMS = {"nl": 0.3, "nr": 8.0, "gl": 0.025, "gr": 0.025, "wl": 8.0, "wr": 2.0}


def base_config(directory, task, prefix="t"):
    return {
        "model": json.loads(json.dumps(QUBIT_MODEL)),
        "task": task,
        "output": {"directory": str(directory), "prefix": prefix},
    }


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


class TestVerbs:
    def test_version_prints_package_version(self, capsys):
        assert main(["version"]) == 0
        assert capsys.readouterr().out == __version__ + "\n"

    def test_validate_reports_model_summary(self, tmp_path, capsys):
        cfg = base_config(tmp_path, {"kind": "steady"})
        rc = main(["validate", write_config(tmp_path, cfg)])
        out = capsys.readouterr().out
        assert rc == 0
        assert out == "ok: dim 2, channels ['-1', '+1'], task steady\n"

    def test_validate_mentions_silent_channels(self, tmp_path, capsys):
        cfg = base_config(tmp_path, {"kind": "steady"})
        cfg["model"] = {
            "builtin": "maser",
            "params": {**MASER_PARAMS, "classical": True},
        }
        rc = main(["validate", write_config(tmp_path, cfg)])
        out = capsys.readouterr().out
        assert rc == 0
        assert "2 silent" in out
        assert "task steady" in out

    def test_run_prints_csv_paths_then_report(self, tmp_path, capsys):
        cfg = base_config(tmp_path, {"kind": "steady"})
        rc = main(["run", write_config(tmp_path, cfg)])
        lines = capsys.readouterr().out.splitlines()
        assert rc == 0
        assert lines == [
            str(tmp_path / "t_steady.csv"),
            str(tmp_path / "t_report.json"),
        ]
        for line in lines:
            assert os.path.exists(line)

    def test_missing_config_file_is_config_error(self, tmp_path, capsys):
        rc = main(["run", str(tmp_path / "nope.json")])
        err = capsys.readouterr().err
        assert rc == 2
        assert err.startswith("config error:")

    def test_invalid_json_is_config_error(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text("{oops")
        rc = main(["validate", str(path)])
        err = capsys.readouterr().err
        assert rc == 2
        assert "invalid JSON" in err

    def test_runtime_failure_exits_one(self, tmp_path, capsys):
        zero = [[0.0, 0.0], [0.0, 0.0]]
        cfg = base_config(tmp_path, {"kind": "steady"})
        cfg["model"] = {"dim": 2, "channels": ["a"], "jump_ops": {"a": zero}}
        rc = main(["run", write_config(tmp_path, cfg)])
        err = capsys.readouterr().err
        assert rc == 1
        assert err.startswith("error: DegenerateSteadyStateError:")


class TestConfigErrors:
    def check(self, cfg, match):
        with pytest.raises(ConfigError, match=match):
            parse_config(cfg)

    def test_unknown_top_level_key(self, tmp_path):
        cfg = base_config(tmp_path, {"kind": "steady"})
        cfg["extra"] = 1
        self.check(cfg, "unknown keys")

    def test_missing_model(self):
        self.check({"task": {"kind": "steady"}}, "missing 'model' section")

    def test_missing_task(self):
        self.check({"model": QUBIT_MODEL}, "missing 'task' section")

    def test_unknown_task_kind(self, tmp_path):
        self.check(base_config(tmp_path, {"kind": "dance"}), "task.kind")

    def test_unknown_builtin(self, tmp_path):
        cfg = base_config(tmp_path, {"kind": "steady"})
        cfg["model"] = {"builtin": "oscillator", "params": {}}
        self.check(cfg, "unknown builtin")

    def test_missing_required_builtin_parameter(self, tmp_path):
        cfg = base_config(tmp_path, {"kind": "steady"})
        cfg["model"] = {"builtin": "qubit_cooling", "params": {"nbar": 0.5}}
        self.check(cfg, "missing required parameter")

    def test_evolve_needs_initial_section(self, tmp_path):
        cfg = base_config(tmp_path, {"kind": "evolve", "times": [0.0, 1.0]})
        self.check(cfg, "needs an initial section")

    def test_evolve_times_must_increase(self, tmp_path):
        cfg = base_config(tmp_path, {"kind": "evolve", "times": [0.0, 1.0, 1.0]})
        cfg["initial"] = {"memory": "-1", "system": "ground"}
        self.check(cfg, "strictly increasing")

    def test_dt_rejected_for_waiting_time(self, tmp_path):
        task = {
            "kind": "trajectories",
            "n_traj": 2,
            "horizon": 1.0,
            "dt": 0.1,
        }
        cfg = base_config(tmp_path, task)
        cfg["weights"] = "activity"
        cfg["initial"] = {"memory": "-1", "system": "ground"}
        self.check(cfg, "only meaningful for the fixed-step scheme")

    def test_burn_in_must_precede_horizon(self, tmp_path):
        task = {"kind": "trajectories", "n_traj": 2, "horizon": 1.0, "burn_in": 1.0}
        cfg = base_config(tmp_path, task)
        cfg["weights"] = "activity"
        cfg["initial"] = {"memory": "-1", "system": "ground"}
        self.check(cfg, r"\[0, horizon\)")

    def test_sweep_requires_builtin_model(self, tmp_path):
        zero = [[0.0, 0.0], [0.0, 0.0]]
        task = {"kind": "sweep", "parameter": "nbar", "values": [0.1]}
        cfg = base_config(tmp_path, task)
        cfg["model"] = {"dim": 2, "channels": ["a"], "jump_ops": {"a": zero}}
        self.check(cfg, "sweep needs a builtin")

    def test_sweep_rejects_duplicate_variant_labels(self, tmp_path):
        task = {
            "kind": "sweep",
            "parameter": "nbar",
            "values": [0.1, 0.2],
            "variants": [{"label": "a"}, {"label": "a", "mode": "drive_off"}],
        }
        self.check(base_config(tmp_path, task), "duplicate variant label")

    def test_sweep_lockstep_length_mismatch(self, tmp_path):
        task = {
            "kind": "sweep",
            "parameter": "nbar",
            "values": [0.1, 0.2],
            "also": {"gamma": [1.0]},
        }
        self.check(base_config(tmp_path, task), "same length")

    def test_sweep_also_cannot_repeat_parameter(self, tmp_path):
        task = {
            "kind": "sweep",
            "parameter": "nbar",
            "values": [0.1, 0.2],
            "also": {"nbar": [1.0, 2.0]},
        }
        self.check(base_config(tmp_path, task), "not an independent")

    def test_unknown_weights_name(self, tmp_path):
        cfg = base_config(tmp_path, {"kind": "noise"})
        cfg["weights"] = "clicks"
        self.check(cfg, "unknown weights name")

    def test_work_weights_need_maser(self, tmp_path):
        cfg = base_config(tmp_path, {"kind": "noise"})
        cfg["weights"] = "work"
        self.check(cfg, "maser builtin only")

    def test_weights_forms_are_exclusive(self, tmp_path):
        cfg = base_config(tmp_path, {"kind": "noise"})
        cfg["weights"] = {"per_channel": {"-1": 1.0}, "per_transition": []}
        self.check(cfg, "exactly one of per_channel / per_transition")

    def test_initial_memory_must_be_distribution(self, tmp_path):
        cfg = base_config(tmp_path, {"kind": "evolve", "times": [0.0, 1.0]})
        cfg["initial"] = {"memory": {"-1": 0.4, "+1": 0.4}, "system": "ground"}
        self.check(cfg, "probability distribution")

    def test_initial_matrix_needs_unit_trace(self, tmp_path):
        cfg = base_config(tmp_path, {"kind": "evolve", "times": [0.0, 1.0]})
        cfg["initial"] = {
            "memory": "-1",
            "system": [[[0.5, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.4, 0.0]]],
        }
        self.check(cfg, "unit trace")

    def test_prefix_rejects_path_separators(self, tmp_path):
        cfg = base_config(tmp_path, {"kind": "steady"}, prefix="a/b")
        self.check(cfg, "path separators")

    def test_grid_forms_are_exclusive(self, tmp_path):
        task = {
            "kind": "evolve",
            "times": {"linspace": [0, 1, 5], "logspace": [0, 1, 5]},
        }
        cfg = base_config(tmp_path, task)
        cfg["initial"] = {"memory": "-1", "system": "ground"}
        self.check(cfg, "exactly one of linspace / logspace")

    def test_grid_spec_needs_three_entries(self, tmp_path):
        task = {"kind": "evolve", "times": {"linspace": [0, 1]}}
        cfg = base_config(tmp_path, task)
        cfg["initial"] = {"memory": "-1", "system": "ground"}
        self.check(cfg, r"\[start, stop, num\]")


class TestSteadyTask:
    def test_csv_layout_and_closed_form(self, tmp_path):
        cfg = base_config(tmp_path, {"kind": "steady"})
        report, report_path, files = run_config(cfg)
        header, rows = read_csv(files[0])
        assert header == ["P(-1)", "P(+1)", "pop0", "pop1", "re_c01", "im_c01"]
        assert len(rows) == 1
        got = [float(x) for x in rows[0]]
        ground, coherence, memory_minus = qubit_analytic(0.5, 1.0)
        assert got[0] == pytest.approx(memory_minus, abs=1e-12)
        assert got[2] == pytest.approx(ground, abs=1e-12)
        assert got[4] == pytest.approx(0.0, abs=1e-12)
        assert got[5] == pytest.approx(coherence.imag, abs=1e-12)
        assert report["rows"] == {"steady": 1}
        assert report["manifest"] == {"steady": "t_steady.csv"}

    def test_formatting_round_trips_doubles(self, tmp_path):
        cfg = base_config(tmp_path, {"kind": "steady"})
        _, _, files = run_config(cfg)
        _, rows = read_csv(files[0])
        state = feedback_steady_state(
            qubit_cooling_model(QubitParams(nbar=0.5, gamma=1.0, lam=1.0, delta=0.0))
        )
        system, probs, _ = marginals(state)
        assert float(rows[0][0]) == probs[0]
        assert float(rows[0][2]) == system[0, 0].real
        assert float(rows[0][5]) == system[0, 1].imag

    def test_report_file_content(self, tmp_path):
        cfg = base_config(tmp_path, {"kind": "steady"})
        report, report_path, _ = run_config(cfg)
        with open(report_path) as fh:
            text = fh.read()
        assert text.endswith("\n")
        loaded = json.loads(text)
        assert loaded["version"] == __version__
        assert loaded["config"] == parse_config(cfg)[1]
        assert set(loaded) == {"version", "config", "manifest", "rows", "wall_time_s"}


class TestEvolveTask:
    def evolve_config(self, directory, method):
        cfg = base_config(directory, {"kind": "evolve", "times": [0.0, 0.4, 1.2], "method": method})
        cfg["initial"] = {"memory": "-1", "system": "ground"}
        return cfg

    def test_initial_row_matches_input(self, tmp_path):
        _, _, files = run_config(self.evolve_config(tmp_path, "exponential"))
        header, rows = read_csv(files[0])
        assert header[0] == "time"
        assert len(rows) == 3
        first = [float(x) for x in rows[0]]
        assert first[0] == 0.0
        assert first[1] == pytest.approx(1.0, abs=1e-14)  # P(-1)
        assert first[3] == pytest.approx(1.0, abs=1e-14)  # pop0

    def test_methods_agree(self, tmp_path):
        _, _, exp_files = run_config(self.evolve_config(tmp_path / "a", "exponential"))
        _, _, ode_files = run_config(self.evolve_config(tmp_path / "b", "ode"))
        _, exp_rows = read_csv(exp_files[0])
        _, ode_rows = read_csv(ode_files[0])
        a = np.array([[float(x) for x in row] for row in exp_rows])
        b = np.array([[float(x) for x in row] for row in ode_rows])
        assert np.max(np.abs(a - b)) < 1e-6


class TestTrajectoriesTask:
    def traj_config(self, directory, dump=False):
        task = {
            "kind": "trajectories",
            "n_traj": 25,
            "horizon": 6.0,
            "scheme": "waiting-time",
            "dump": dump,
        }
        cfg = base_config(directory, task)
        cfg["weights"] = "activity"
        cfg["initial"] = {"memory": "-1", "system": "ground"}
        cfg["seed"] = 5
        return cfg

    def test_summary_matches_direct_estimate(self, tmp_path):
        _, _, files = run_config(self.traj_config(tmp_path))
        header, rows = read_csv(files[0])
        assert header[:5] == [
            "n_traj",
            "mean_charge",
            "mean_charge_se",
            "var_charge",
            "var_charge_se",
        ]
        assert header[5:] == ["freq(-1)", "freq_se(-1)", "freq(+1)", "freq_se(+1)"]
        model = qubit_cooling_model(QubitParams(nbar=0.5, gamma=1.0, lam=1.0, delta=0.0))
        weights = CountingWeights.activity(model.channels)
        rho0 = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)
        est = mc_estimate(
            model,
            weights,
            rho0,
            {"-1": 1.0, "+1": 0.0},
            horizon=6.0,
            n_traj=25,
            master_seed=5,
        )
        row = rows[0]
        assert row[0] == "25"
        assert float(row[1]) == est.mean_charge
        assert float(row[2]) == est.mean_charge_se
        assert float(row[3]) == est.var_charge
        assert float(row[5]) == est.memory_freq[0]

    def test_jump_dump_replays_records(self, tmp_path):
        _, _, files = run_config(self.traj_config(tmp_path, dump=True))
        dump_path = [f for f in files if f.endswith("_jumps.csv")]
        assert len(dump_path) == 1
        header, rows = read_csv(dump_path[0])
        assert header == [
            "trajectory_id",
            "time",
            "channel_label",
            "memory_before",
            "charge_after",
        ]
        model = qubit_cooling_model(QubitParams(nbar=0.5, gamma=1.0, lam=1.0, delta=0.0))
        weights = CountingWeights.activity(model.channels)
        rho0 = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)
        est = mc_estimate(
            model,
            weights,
            rho0,
            {"-1": 1.0, "+1": 0.0},
            horizon=6.0,
            n_traj=25,
            master_seed=5,
            collect_records=True,
        )
        assert len(rows) == sum(len(r.jump_times) for r in est.records)
        final = {}
        for row in rows:
            assert row[2] in model.channels
            assert row[3] in model.channels
            final[int(row[0])] = float(row[4])
        for tid, rec in enumerate(est.records):
            if rec.jump_times.size:
                assert final[tid] == pytest.approx(rec.charge, abs=1e-12)


class TestSweepTask:
    def test_values_sorted_with_lockstep_columns(self, tmp_path):
        task = {
            "kind": "sweep",
            "parameter": "nbar",
            "values": [2.0, 0.5, 1.0],
            "also": {"gamma": [4.0, 1.0, 2.0]},
            "inner": "steady",
            "variants": [{"label": "fb"}, {"label": "off", "mode": "drive_off"}],
        }
        cfg = base_config(tmp_path, task)
        ctx, canon = parse_config(cfg)
        assert canon["task"]["values"] == [0.5, 1.0, 2.0]
        assert canon["task"]["also"] == {"gamma": [1.0, 2.0, 4.0]}

        _, _, files = run_config(cfg)
        header, rows = read_csv(files[0])
        state_cols = ["P(-1)", "P(+1)", "pop0", "pop1", "re_c01", "im_c01"]
        expected = ["nbar", "gamma"]
        expected += [f"fb_{c}" for c in state_cols]
        expected += [f"off_{c}" for c in state_cols]
        assert header == expected
        assert [float(r[0]) for r in rows] == [0.5, 1.0, 2.0]
        assert [float(r[1]) for r in rows] == [1.0, 2.0, 4.0]

    def test_variant_columns_differ_between_modes(self, tmp_path):
        task = {
            "kind": "sweep",
            "parameter": "nbar",
            "values": [0.5],
            "variants": [{"label": "fb"}, {"label": "off", "mode": "drive_off"}],
        }
        _, _, files = run_config(base_config(tmp_path, task))
        header, rows = read_csv(files[0])
        fb_pop0 = float(rows[0][header.index("fb_pop0")])
        off_pop0 = float(rows[0][header.index("off_pop0")])
        ground, _, _ = qubit_analytic(0.5, 1.0)
        assert fb_pop0 == pytest.approx(ground, abs=1e-12)
        # without the corrective drive the qubit relaxes to the thermal state
        assert off_pop0 == pytest.approx(1.5 / 2.0, abs=1e-12)
        assert fb_pop0 > off_pop0

    def test_noise_sweep_emits_power_norm(self, tmp_path):
        task = {
            "kind": "sweep",
            "parameter": "gl",
            "values": [0.05, 0.02],
            "also": {"gr": [0.05, 0.02]},
            "inner": "noise",
            "variants": [{"label": "fb"}, {"label": "nofb", "feedback": False}],
        }
        cfg = {
            "model": {"builtin": "maser", "params": MASER_PARAMS},
            "weights": "work",
            "task": task,
            "output": {"directory": str(tmp_path), "prefix": "m"},
        }
        _, _, files = run_config(cfg)
        header, rows = read_csv(files[0])
        assert header == [
            "gl",
            "gr",
            "fb_current",
            "fb_noise",
            "fb_power_norm",
            "nofb_current",
            "nofb_noise",
            "nofb_power_norm",
        ]
        assert [float(r[0]) for r in rows] == [0.02, 0.05]
        for row in rows:
            gl = float(row[0])
            scale = gl * (MASER_PARAMS["wl"] - MASER_PARAMS["wr"])
            assert float(row[4]) == pytest.approx(float(row[2]) / scale, rel=1e-12)
            assert float(row[7]) == pytest.approx(float(row[5]) / scale, rel=1e-12)


class TestDeterminism:
    def rich_config(self, directory):
        task = {
            "kind": "trajectories",
            "n_traj": 15,
            "horizon": 5.0,
            "scheme": "fixed-step",
            "dt": 0.02,
            "burn_in": 1.0,
            "dump": True,
        }
        cfg = base_config(directory, task, prefix="rep")
        cfg["weights"] = "activity"
        cfg["initial"] = {"memory": {"-1": 0.5, "+1": 0.5}, "system": "maximally_mixed"}
        cfg["seed"] = 11
        return cfg

    def test_reruns_are_byte_identical(self, tmp_path):
        report1, path1, files1 = run_config(self.rich_config(tmp_path / "one"))
        report2, path2, files2 = run_config(self.rich_config(tmp_path / "two"))
        assert [os.path.basename(f) for f in files1] == [
            os.path.basename(f) for f in files2
        ]
        for f1, f2 in zip(files1, files2):
            assert filecmp.cmp(f1, f2, shallow=False)
        report1.pop("wall_time_s")
        report2.pop("wall_time_s")
        report1["config"]["output"].pop("directory")
        report2["config"]["output"].pop("directory")
        assert report1 == report2

    def test_canonical_config_is_idempotent(self, tmp_path):
        task = {
            "kind": "sweep",
            "parameter": "nbar",
            "values": [2.0, 0.5],
            "also": {"gamma": [4.0, 1.0]},
            "variants": [{"label": "fb"}],
        }
        cfg = base_config(tmp_path, task)
        cfg["seed"] = 3
        _, canon = parse_config(cfg)
        _, canon2 = parse_config(canon)
        assert canon2 == canon

    def test_csv_lines_end_with_lf(self, tmp_path):
        cfg = base_config(tmp_path, {"kind": "steady"})
        _, _, files = run_config(cfg)
        with open(files[0], "rb") as fh:
            data = fh.read()
        assert b"\r" not in data
        assert data.endswith(b"\n")


class TestModelRoundTrip:
    def test_explicit_section_reproduces_model(self):
        rng = np.random.default_rng(5)
        model = random_model(rng, dim=3, n_channels=2, silent=1)
        section = model_to_config(model)
        rebuilt, canon = model_from_config(section)
        assert canon == section
        assert rebuilt.channels == model.channels
        assert np.array_equal(rebuilt.hamiltonians, model.hamiltonians)
        assert np.array_equal(rebuilt.jump_ops, model.jump_ops)
        assert rebuilt.silent_labels == model.silent_labels
        assert np.array_equal(rebuilt.silent_ops, model.silent_ops)

    def test_builtin_section_fills_defaults(self):
        _, canon = model_from_config({"builtin": "maser", "params": MASER_PARAMS})
        assert canon["params"]["lam"] == 1.0
        assert canon["params"]["delta"] == 0.0
        assert canon["params"]["feedback"] is True
        assert canon["params"]["classical"] is False

    def test_explicit_matrices_with_complex_entries(self):
        sy = [[[0.0, 0.0], [0.0, -1.0]], [[0.0, 1.0], [0.0, 0.0]]]
        section = {
            "dim": 2,
            "channels": ["a"],
            "hamiltonians": {"a": sy},
            "jump_ops": {"a": [[[0.0, 0.0], [1.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]},
        }
        model, _ = model_from_config(section)
        assert model.hamiltonians[0][0, 1] == -1.0j
        assert model.hamiltonians[0][1, 0] == 1.0j


class TestThreadEnvironment:
    def run_probe(self, extra_env):
        env = {
            k: v
            for k, v in os.environ.items()
            if not k.endswith("_NUM_THREADS")
        }
        env.update(extra_env)
        code = (
            "import jumpfeedback, os; "
            "print(os.environ.get('OMP_NUM_THREADS'), os.environ.get('MKL_NUM_THREADS'))"
        )
        out = subprocess.run(
            [sys.executable, "-c", code],
            env=env,
            capture_output=True,
            text=True,
            check=True,
        )
        return out.stdout.strip()

    def test_thread_variable_fans_out(self):
        assert self.run_probe({"JUMPFEEDBACK_THREADS": "3"}) == "3 3"

    def test_existing_setting_wins(self):
        got = self.run_probe(
            {"JUMPFEEDBACK_THREADS": "3", "OMP_NUM_THREADS": "7"}
        )
        assert got == "7 3"

    def test_module_entry_point(self):
        out = subprocess.run(
            [sys.executable, "-m", "jumpfeedback.cli", "version"],
            capture_output=True,
            text=True,
            check=True,
        )
        assert out.stdout.strip() == __version__
