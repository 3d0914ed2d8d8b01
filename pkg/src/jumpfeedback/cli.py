"""Configuration-driven command line front end.

A single JSON document describes the model (builtin or explicit), the
counting weights, the initial condition, and one task; running it emits
CSV files with a fixed column order and 17-significant-digit numbers, so
repeated runs with the same config and seed are byte-identical.

Verbs: ``run <config>``, ``validate <config>``, ``version``.  The
environment variable ``JUMPFEEDBACK_THREADS`` caps the linear-algebra
thread pools (applied before numpy loads when the console script starts).
"""

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .dynamics import evolve_extended, evolve_memory_resolved, feedback_steady_state
from .errors import ConfigError, JumpFeedbackError
from .fcs import (
    CountingWeights,
    average_current,
    noise_background,
    power_spectrum,
    steady_noise,
    two_point_correlation,
)
from .hybrid import embed, extended_liouvillian, marginals
from .model import feedback_model, validate
from .models import (
    MaserParams,
    QubitParams,
    maser_model,
    qubit_baseline_model,
    qubit_cooling_model,
    work_weights,
)
from .trajectories import mc_estimate

__all__ = ["main", "run_config", "model_from_config", "model_to_config"]

TASK_KINDS = (
    "steady",
    "evolve",
    "correlation",
    "spectrum",
    "noise",
    "trajectories",
    "sweep",
)


def _fail(path, message):
    raise ConfigError(f"{path}: {message}")


def _expect_map(obj, path):
    if not isinstance(obj, dict):
        _fail(path, f"expected an object, got {type(obj).__name__}")
    return obj


def _expect_list(obj, path):
    if not isinstance(obj, list):
        _fail(path, f"expected an array, got {type(obj).__name__}")
    return obj


def _expect_str(obj, path):
    if not isinstance(obj, str):
        _fail(path, f"expected a string, got {type(obj).__name__}")
    return obj


def _expect_number(obj, path):
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        _fail(path, f"expected a number, got {type(obj).__name__}")
    return float(obj)


def _expect_int(obj, path):
    if isinstance(obj, bool) or not isinstance(obj, int):
        _fail(path, f"expected an integer, got {type(obj).__name__}")
    return obj


def _expect_bool(obj, path):
    if not isinstance(obj, bool):
        _fail(path, f"expected true/false, got {type(obj).__name__}")
    return obj


def _no_extra_keys(cfg, allowed, path):
    extra = sorted(set(cfg) - set(allowed))
    if extra:
        _fail(path, f"unknown keys {extra}; allowed: {sorted(allowed)}")


# ---------------------------------------------------------------------------
# matrices as nested [re, im] pairs


def _entry_to_complex(obj, path):
    if isinstance(obj, (int, float)) and not isinstance(obj, bool):
        return complex(obj)
    if isinstance(obj, list) and len(obj) == 2:
        re = _expect_number(obj[0], f"{path}[0]")
        im = _expect_number(obj[1], f"{path}[1]")
        return complex(re, im)
    _fail(path, "matrix entries must be numbers or [re, im] pairs")


def _matrix_from_config(obj, dim, path):
    rows = _expect_list(obj, path)
    if len(rows) != dim:
        _fail(path, f"expected {dim} rows, got {len(rows)}")
    out = np.zeros((dim, dim), dtype=complex)
    for i, row in enumerate(rows):
        row = _expect_list(row, f"{path}[{i}]")
        if len(row) != dim:
            _fail(f"{path}[{i}]", f"expected {dim} entries, got {len(row)}")
        for j, entry in enumerate(row):
            out[i, j] = _entry_to_complex(entry, f"{path}[{i}][{j}]")
    return out


def _matrix_to_pairs(mat):
    mat = np.asarray(mat, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in mat]


# ---------------------------------------------------------------------------
# model section


_QUBIT_NUMERIC = {"nbar": None, "gamma": None, "lam": 1.0, "delta": 0.0}
_QUBIT_MODES = ("feedback", "always_on", "drive_off")
_MASER_NUMERIC = {
    "nl": None,
    "nr": None,
    "gl": None,
    "gr": None,
    "lam": 1.0,
    "delta": 0.0,
    "wl": None,
    "wr": None,
}


def _canon_builtin_params(name, params, path):
    """Validate and fill defaults for builtin parameters."""
    params = dict(_expect_map(params, path))
    if name == "qubit_cooling":
        numeric, extras = _QUBIT_NUMERIC, {"mode": "feedback"}
    elif name == "maser":
        numeric, extras = _MASER_NUMERIC, {"feedback": True, "classical": False}
    else:
        _fail(path, f"unknown builtin {name!r}; available: qubit_cooling, maser")
    _no_extra_keys(params, set(numeric) | set(extras), path)
    canon = {}
    for key, default in numeric.items():
        if key in params:
            canon[key] = _expect_number(params[key], f"{path}.{key}")
        elif default is not None:
            canon[key] = default
        elif key in ("wl", "wr"):
            pass  # optional, needed only for work weights
        else:
            _fail(path, f"missing required parameter {key!r}")
    for key, default in extras.items():
        val = params.get(key, default)
        if key == "mode":
            val = _expect_str(val, f"{path}.{key}") if key in params else val
            if val not in _QUBIT_MODES:
                _fail(f"{path}.{key}", f"must be one of {_QUBIT_MODES}")
        elif key in params:
            val = _expect_bool(val, f"{path}.{key}")
        canon[key] = val
    return canon


def _build_builtin(name, canon_params):
    p = canon_params
    if name == "qubit_cooling":
        qp = QubitParams(
            nbar=p["nbar"], gamma=p["gamma"], lam=p["lam"], delta=p["delta"]
        )
        if p["mode"] == "feedback":
            return validate(qubit_cooling_model(qp))
        return validate(qubit_baseline_model(qp, drive_on=p["mode"] == "always_on"))
    mp = MaserParams(
        nl=p["nl"],
        nr=p["nr"],
        gl=p["gl"],
        gr=p["gr"],
        lam=p["lam"],
        delta=p["delta"],
        wl=p.get("wl"),
        wr=p.get("wr"),
    )
    return validate(
        maser_model(mp, feedback=p["feedback"], classical=p["classical"])
    )


def _builtin_params_obj(name, canon_params):
    p = canon_params
    if name == "qubit_cooling":
        return QubitParams(nbar=p["nbar"], gamma=p["gamma"], lam=p["lam"], delta=p["delta"])
    return MaserParams(
        nl=p["nl"], nr=p["nr"], gl=p["gl"], gr=p["gr"],
        lam=p["lam"], delta=p["delta"], wl=p.get("wl"), wr=p.get("wr"),
    )


def model_from_config(mcfg, path="model"):
    """Build a validated model from its config section.

    Returns (model, canonical section).  Exactly one of ``builtin`` and
    ``dim`` selects the source.
    """
    mcfg = _expect_map(mcfg, path)
    if "builtin" in mcfg:
        _no_extra_keys(mcfg, {"builtin", "params"}, path)
        name = _expect_str(mcfg["builtin"], f"{path}.builtin")
        canon_params = _canon_builtin_params(name, mcfg.get("params", {}), f"{path}.params")
        model = _build_builtin(name, canon_params)
        return model, {"builtin": name, "params": canon_params}

    _no_extra_keys(
        mcfg, {"dim", "channels", "hamiltonians", "jump_ops", "silent_ops"}, path
    )
    if "dim" not in mcfg or "channels" not in mcfg:
        _fail(path, "explicit models need 'dim' and 'channels' (or use 'builtin')")
    dim = _expect_int(mcfg["dim"], f"{path}.dim")
    if dim < 1:
        _fail(f"{path}.dim", "must be at least 1")
    channels = tuple(
        _expect_str(c, f"{path}.channels[{i}]")
        for i, c in enumerate(_expect_list(mcfg["channels"], f"{path}.channels"))
    )
    if not channels:
        _fail(f"{path}.channels", "need at least one channel")

    hams_cfg = _expect_map(mcfg.get("hamiltonians", {}), f"{path}.hamiltonians")
    _no_extra_keys(hams_cfg, set(channels), f"{path}.hamiltonians")
    hams = {
        k: _matrix_from_config(v, dim, f"{path}.hamiltonians.{k}")
        for k, v in hams_cfg.items()
    }

    jumps_cfg = _expect_map(mcfg.get("jump_ops", {}), f"{path}.jump_ops")
    _no_extra_keys(jumps_cfg, set(channels), f"{path}.jump_ops")
    jump_ops = {}
    for ch, spec in jumps_cfg.items():
        jpath = f"{path}.jump_ops.{ch}"
        if isinstance(spec, dict):
            _no_extra_keys(spec, set(channels), jpath)
            jump_ops[ch] = {
                mem: _matrix_from_config(m, dim, f"{jpath}.{mem}")
                for mem, m in spec.items()
            }
        else:
            jump_ops[ch] = _matrix_from_config(spec, dim, jpath)

    silent_cfg = _expect_map(mcfg.get("silent_ops", {}), f"{path}.silent_ops")
    silent_ops = {}
    for label, spec in silent_cfg.items():
        spath = f"{path}.silent_ops.{label}"
        spec = _expect_map(spec, spath)
        _no_extra_keys(spec, set(channels), spath)
        silent_ops[label] = {
            mem: _matrix_from_config(m, dim, f"{spath}.{mem}")
            for mem, m in spec.items()
        }

    model = validate(
        feedback_model(
            dim=dim,
            channels=channels,
            hamiltonians=hams,
            jump_ops=jump_ops,
            silent_ops=silent_ops or None,
        )
    )
    return model, model_to_config(model)


def model_to_config(model):
    """Explicit config section reproducing a model exactly."""
    channels = list(model.channels)
    section = {
        "dim": model.dim,
        "channels": channels,
        "hamiltonians": {
            ch: _matrix_to_pairs(model.hamiltonians[k])
            for k, ch in enumerate(channels)
        },
        "jump_ops": {
            ch: {
                mem: _matrix_to_pairs(model.jump_ops[k, q])
                for q, mem in enumerate(channels)
            }
            for k, ch in enumerate(channels)
        },
    }
    if model.silent_labels:
        section["silent_ops"] = {
            lab: {
                mem: _matrix_to_pairs(model.silent_ops[s, q])
                for q, mem in enumerate(channels)
            }
            for s, lab in enumerate(model.silent_labels)
        }
    return section


# ---------------------------------------------------------------------------
# weights / initial / grids


def _weights_from_config(wcfg, model, builtin, path="weights"):
    if wcfg is None:
        return None, None
    if isinstance(wcfg, str):
        if wcfg == "activity":
            return CountingWeights.activity(model.channels), "activity"
        if wcfg == "work":
            if builtin is None or builtin[0] != "maser":
                _fail(path, "'work' weights are defined for the maser builtin only")
            params = _builtin_params_obj(*builtin)
            if params.wl is None or params.wr is None:
                _fail(path, "'work' weights need maser params wl and wr")
            return work_weights(params), "work"
        _fail(path, f"unknown weights name {wcfg!r}; use 'activity' or 'work'")
    wcfg = _expect_map(wcfg, path)
    _no_extra_keys(wcfg, {"per_channel", "per_transition"}, path)
    if ("per_channel" in wcfg) == ("per_transition" in wcfg):
        _fail(path, "give exactly one of per_channel / per_transition")
    m = model.n_channels
    if "per_channel" in wcfg:
        entries = _expect_map(wcfg["per_channel"], f"{path}.per_channel")
        _no_extra_keys(entries, set(model.channels), f"{path}.per_channel")
        vals = {
            k: _expect_number(v, f"{path}.per_channel.{k}") for k, v in entries.items()
        }
        full = {ch: vals.get(ch, 0.0) for ch in model.channels}
        return (
            CountingWeights.from_channel_weights(model.channels, full),
            {"per_channel": full},
        )
    rows = _expect_list(wcfg["per_transition"], f"{path}.per_transition")
    if len(rows) != m:
        _fail(f"{path}.per_transition", f"expected {m} rows (one per channel)")
    mat = np.zeros((m, m))
    for i, row in enumerate(rows):
        row = _expect_list(row, f"{path}.per_transition[{i}]")
        if len(row) != m:
            _fail(f"{path}.per_transition[{i}]", f"expected {m} entries")
        for j, x in enumerate(row):
            mat[i, j] = _expect_number(x, f"{path}.per_transition[{i}][{j}]")
    weights = CountingWeights(channels=model.channels, per_transition=mat)
    return weights, {"per_transition": [[float(x) for x in row] for row in mat]}


def _initial_from_config(icfg, model, path="initial"):
    icfg = _expect_map(icfg, path)
    _no_extra_keys(icfg, {"memory", "system"}, path)
    if "memory" not in icfg or "system" not in icfg:
        _fail(path, "needs both 'memory' and 'system'")

    mem = icfg["memory"]
    if isinstance(mem, str):
        if mem not in model.channels:
            _fail(f"{path}.memory", f"unknown channel {mem!r}")
        dist = {ch: (1.0 if ch == mem else 0.0) for ch in model.channels}
    else:
        mem = _expect_map(mem, f"{path}.memory")
        _no_extra_keys(mem, set(model.channels), f"{path}.memory")
        dist = {
            ch: _expect_number(mem.get(ch, 0.0), f"{path}.memory.{ch}")
            for ch in model.channels
        }
        total = sum(dist.values())
        if any(v < 0 for v in dist.values()) or abs(total - 1.0) > 1e-10:
            _fail(f"{path}.memory", "entries must be a probability distribution")

    sys_cfg = icfg["system"]
    d = model.dim
    if isinstance(sys_cfg, str):
        if sys_cfg == "ground":
            rho0 = np.zeros((d, d), dtype=complex)
            rho0[0, 0] = 1.0
        elif sys_cfg == "maximally_mixed":
            rho0 = np.eye(d, dtype=complex) / d
        else:
            _fail(f"{path}.system", f"unknown named state {sys_cfg!r}")
        canon_sys = sys_cfg
    elif isinstance(sys_cfg, dict):
        _no_extra_keys(sys_cfg, {"basis"}, f"{path}.system")
        idx = _expect_int(sys_cfg.get("basis"), f"{path}.system.basis")
        if not 0 <= idx < d:
            _fail(f"{path}.system.basis", f"index out of range for dim {d}")
        rho0 = np.zeros((d, d), dtype=complex)
        rho0[idx, idx] = 1.0
        canon_sys = {"basis": idx}
    else:
        rho0 = _matrix_from_config(sys_cfg, d, f"{path}.system")
        if abs(np.trace(rho0) - 1.0) > 1e-10:
            _fail(f"{path}.system", "matrix must have unit trace")
        canon_sys = _matrix_to_pairs(rho0)

    return dist, rho0, {"memory": dist, "system": canon_sys}


def _grid_from_config(gcfg, path, allow_negative=True):
    if isinstance(gcfg, list):
        vals = [_expect_number(x, f"{path}[{i}]") for i, x in enumerate(gcfg)]
    elif isinstance(gcfg, dict):
        _no_extra_keys(gcfg, {"linspace", "logspace"}, path)
        if ("linspace" in gcfg) == ("logspace" in gcfg):
            _fail(path, "give exactly one of linspace / logspace (or a plain array)")
        key = "linspace" if "linspace" in gcfg else "logspace"
        spec = _expect_list(gcfg[key], f"{path}.{key}")
        if len(spec) != 3:
            _fail(f"{path}.{key}", "expected [start, stop, num]")
        start = _expect_number(spec[0], f"{path}.{key}[0]")
        stop = _expect_number(spec[1], f"{path}.{key}[1]")
        num = _expect_int(spec[2], f"{path}.{key}[2]")
        if num < 1:
            _fail(f"{path}.{key}", "num must be at least 1")
        fn = np.linspace if key == "linspace" else np.logspace
        vals = [float(x) for x in fn(start, stop, num)]
    else:
        _fail(path, "expected an array of numbers or {linspace/logspace: [...]}")
    if not vals:
        _fail(path, "grid must be non-empty")
    if not allow_negative and min(vals) < 0:
        _fail(path, "grid values must be non-negative")
    return vals


# ---------------------------------------------------------------------------
# CSV output


def _fmt(x):
    return format(float(x), ".17g")


def _write_csv(fpath, header, rows):
    with open(fpath, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _state_header(model):
    cols = [f"P({ch})" for ch in model.channels]
    cols += [f"pop{i}" for i in range(model.dim)]
    for i in range(model.dim):
        for j in range(i + 1, model.dim):
            cols += [f"re_c{i}{j}", f"im_c{i}{j}"]
    return cols


def _state_row(model, state):
    system, probs, _ = marginals(state)
    out = [_fmt(p) for p in probs]
    out += [_fmt(system[i, i].real) for i in range(model.dim)]
    for i in range(model.dim):
        for j in range(i + 1, model.dim):
            out += [_fmt(system[i, j].real), _fmt(system[i, j].imag)]
    return out


# ---------------------------------------------------------------------------
# task parsing (validation without execution)


def _parse_task(tcfg, ctx):
    tcfg = _expect_map(tcfg, "task")
    kind = _expect_str(tcfg.get("kind", ""), "task.kind")
    if kind not in TASK_KINDS:
        _fail("task.kind", f"must be one of {TASK_KINDS}")
    model = ctx["model"]
    canon = {"kind": kind}

    if kind == "steady":
        _no_extra_keys(tcfg, {"kind"}, "task")

    elif kind == "evolve":
        _no_extra_keys(tcfg, {"kind", "times", "method"}, "task")
        times = _grid_from_config(tcfg.get("times"), "task.times", allow_negative=False)
        if any(b <= a for a, b in zip(times, times[1:])):
            _fail("task.times", "must be strictly increasing")
        method = tcfg.get("method", "exponential")
        if method not in ("exponential", "ode"):
            _fail("task.method", "must be 'exponential' or 'ode'")
        if ctx["initial"] is None:
            _fail("initial", "task 'evolve' needs an initial section")
        canon.update(times=times, method=method)

    elif kind == "correlation":
        _no_extra_keys(tcfg, {"kind", "taus"}, "task")
        taus = _grid_from_config(tcfg.get("taus"), "task.taus", allow_negative=False)
        if ctx["weights"] is None:
            _fail("weights", "task 'correlation' needs a weights section")
        canon.update(taus=taus)

    elif kind == "spectrum":
        _no_extra_keys(tcfg, {"kind", "omegas"}, "task")
        omegas = _grid_from_config(tcfg.get("omegas"), "task.omegas")
        if ctx["weights"] is None:
            _fail("weights", "task 'spectrum' needs a weights section")
        canon.update(omegas=omegas)

    elif kind == "noise":
        _no_extra_keys(tcfg, {"kind"}, "task")
        if ctx["weights"] is None:
            _fail("weights", "task 'noise' needs a weights section")

    elif kind == "trajectories":
        _no_extra_keys(
            tcfg,
            {"kind", "n_traj", "horizon", "scheme", "dt", "burn_in", "dump"},
            "task",
        )
        n_traj = _expect_int(tcfg.get("n_traj"), "task.n_traj")
        if n_traj < 1:
            _fail("task.n_traj", "must be at least 1")
        horizon = _expect_number(tcfg.get("horizon"), "task.horizon")
        if horizon <= 0:
            _fail("task.horizon", "must be positive")
        scheme = tcfg.get("scheme", "waiting-time")
        if scheme not in ("waiting-time", "fixed-step"):
            _fail("task.scheme", "must be 'waiting-time' or 'fixed-step'")
        dt = None
        if scheme == "fixed-step":
            dt = _expect_number(tcfg.get("dt"), "task.dt")
        elif "dt" in tcfg:
            _fail("task.dt", "only meaningful for the fixed-step scheme")
        burn_in = _expect_number(tcfg.get("burn_in", 0.0), "task.burn_in")
        if not 0.0 <= burn_in < horizon:
            _fail("task.burn_in", "must lie in [0, horizon)")
        dump = _expect_bool(tcfg.get("dump", False), "task.dump")
        if ctx["weights"] is None:
            _fail("weights", "task 'trajectories' needs a weights section")
        if ctx["initial"] is None:
            _fail("initial", "task 'trajectories' needs an initial section")
        canon.update(n_traj=n_traj, horizon=horizon, scheme=scheme, burn_in=burn_in, dump=dump)
        if dt is not None:
            canon["dt"] = dt

    elif kind == "sweep":
        _no_extra_keys(
            tcfg, {"kind", "parameter", "values", "also", "inner", "variants"}, "task"
        )
        if ctx["builtin"] is None:
            _fail("task", "sweep needs a builtin model (named numeric parameters)")
        name, base = ctx["builtin"]
        numeric = _QUBIT_NUMERIC if name == "qubit_cooling" else _MASER_NUMERIC
        parameter = _expect_str(tcfg.get("parameter", ""), "task.parameter")
        if parameter not in numeric:
            _fail(
                "task.parameter",
                f"not a numeric parameter of {name!r}; choose from {sorted(numeric)}",
            )
        raw_values = _grid_from_config(tcfg.get("values"), "task.values")
        # secondary parameters varied in lockstep with the primary one
        also_cfg = _expect_map(tcfg.get("also", {}), "task.also")
        also = {}
        for key, spec in also_cfg.items():
            if key not in numeric or key == parameter:
                _fail(f"task.also.{key}", f"not an independent numeric parameter of {name!r}")
            vals = _grid_from_config(spec, f"task.also.{key}")
            if len(vals) != len(raw_values):
                _fail(f"task.also.{key}", "must have the same length as task.values")
            also[key] = vals
        order = sorted(range(len(raw_values)), key=raw_values.__getitem__)
        values = [raw_values[i] for i in order]
        also = {k: [v[i] for i in order] for k, v in sorted(also.items())}
        inner = tcfg.get("inner", "steady")
        if inner not in ("steady", "noise"):
            _fail("task.inner", "must be 'steady' or 'noise'")
        if inner == "noise" and ctx["weights_cfg"] is None:
            _fail("weights", "sweep with inner 'noise' needs a weights section")
        variants_cfg = tcfg.get("variants", [{"label": "run"}])
        variants_cfg = _expect_list(variants_cfg, "task.variants")
        if not variants_cfg:
            _fail("task.variants", "must be non-empty")
        variants = []
        seen = set()
        first_point = {parameter: values[0], **{k: v[0] for k, v in also.items()}}
        for i, vc in enumerate(variants_cfg):
            vpath = f"task.variants[{i}]"
            vc = dict(_expect_map(vc, vpath))
            label = _expect_str(vc.pop("label", ""), f"{vpath}.label")
            if not label:
                _fail(vpath, "each variant needs a nonempty 'label'")
            if label in seen:
                _fail(vpath, f"duplicate variant label {label!r}")
            seen.add(label)
            merged = _canon_builtin_params(name, {**base, **vc}, vpath)
            variants.append({"label": label, **vc})
            # building each variant at the first sweep point proves it is valid
            _build_builtin(name, {**merged, **first_point})
        canon.update(parameter=parameter, values=values, inner=inner, variants=variants)
        if also:
            canon["also"] = also

    return canon


# ---------------------------------------------------------------------------
# config parsing


def parse_config(raw):
    """Validate a raw config dict; return (context, canonical config)."""
    raw = _expect_map(raw, "config")
    _no_extra_keys(
        raw, {"model", "weights", "initial", "task", "output", "seed"}, "config"
    )
    if "model" not in raw:
        _fail("config", "missing 'model' section")
    if "task" not in raw:
        _fail("config", "missing 'task' section")

    model, model_canon = model_from_config(raw["model"])
    builtin = None
    if "builtin" in model_canon:
        builtin = (model_canon["builtin"], model_canon["params"])

    weights, weights_canon = _weights_from_config(raw.get("weights"), model, builtin)

    initial = None
    initial_canon = None
    if "initial" in raw:
        mem_dist, rho0, initial_canon = _initial_from_config(raw["initial"], model)
        initial = (mem_dist, rho0)

    seed = _expect_int(raw.get("seed", 0), "seed")

    out_cfg = _expect_map(raw.get("output", {}), "output")
    _no_extra_keys(out_cfg, {"directory", "prefix"}, "output")
    directory = _expect_str(out_cfg.get("directory", "."), "output.directory")
    prefix = _expect_str(out_cfg.get("prefix", "run"), "output.prefix")
    if not prefix or any(c in prefix for c in "/\\"):
        _fail("output.prefix", "must be a nonempty name without path separators")

    ctx = {
        "model": model,
        "builtin": builtin,
        "weights": weights,
        "weights_cfg": weights_canon,
        "initial": initial,
        "seed": seed,
        "directory": directory,
        "prefix": prefix,
    }
    task_canon = _parse_task(raw["task"], ctx)
    ctx["task"] = task_canon

    canon = {
        "model": model_canon,
        "seed": seed,
        "task": task_canon,
        "output": {"directory": directory, "prefix": prefix},
    }
    if weights_canon is not None:
        canon["weights"] = weights_canon
    if initial_canon is not None:
        canon["initial"] = initial_canon
    return ctx, canon


# ---------------------------------------------------------------------------
# task execution


def _run_steady(ctx, out):
    model = ctx["model"]
    state = feedback_steady_state(model)
    out.add("steady", _state_header(model), [_state_row(model, state)])


def _run_evolve(ctx, out):
    model = ctx["model"]
    times = np.array(ctx["task"]["times"])
    mem_dist, rho0 = ctx["initial"]
    state0 = embed(model.channels, mem_dist, rho0)
    if ctx["task"]["method"] == "exponential":
        result = evolve_extended(model, state0, times)
    else:
        result = evolve_memory_resolved(model, state0, times)
    header = ["time"] + _state_header(model)
    rows = [
        [_fmt(t)] + _state_row(model, st) for t, st in zip(result.times, result.states)
    ]
    out.add("evolve", header, rows)


def _run_correlation(ctx, out):
    model, weights = ctx["model"], ctx["weights"]
    ext = extended_liouvillian(model)
    taus = np.array(ctx["task"]["taus"])
    corr = two_point_correlation(ext, weights, taus)
    rows = [[_fmt(t), _fmt(v)] for t, v in zip(corr.taus, corr.values)]
    out.add("correlation", ["tau", "F_smooth"], rows)
    out.add("correlation_background", ["K"], [[_fmt(corr.background)]])
    out.extras["current"] = corr.current


def _run_spectrum(ctx, out):
    model, weights = ctx["model"], ctx["weights"]
    ext = extended_liouvillian(model)
    omegas = np.array(ctx["task"]["omegas"])
    spec = power_spectrum(ext, weights, omegas)
    rows = [[_fmt(w), _fmt(s)] for w, s in zip(spec.omegas, spec.values)]
    out.add("spectrum", ["omega", "S"], rows)


def _run_noise(ctx, out):
    model, weights = ctx["model"], ctx["weights"]
    ext = extended_liouvillian(model)
    state = feedback_steady_state(model)
    current = average_current(ext, weights, state)
    noise = steady_noise(ext, weights, state=state)
    background = noise_background(ext, weights, state)
    fano = noise / current if current != 0 else float("nan")
    out.add(
        "noise",
        ["current", "noise", "background", "fano"],
        [[_fmt(current), _fmt(noise), _fmt(background), _fmt(fano)]],
    )


def _run_trajectories(ctx, out):
    model, weights = ctx["model"], ctx["weights"]
    task = ctx["task"]
    mem_dist, rho0 = ctx["initial"]
    est = mc_estimate(
        model,
        weights,
        rho0,
        mem_dist,
        horizon=task["horizon"],
        n_traj=task["n_traj"],
        scheme=task["scheme"],
        master_seed=ctx["seed"],
        dt=task.get("dt"),
        burn_in=task["burn_in"],
        collect_records=task["dump"],
    )
    header = ["n_traj", "mean_charge", "mean_charge_se", "var_charge", "var_charge_se"]
    row = [str(est.n_traj), _fmt(est.mean_charge), _fmt(est.mean_charge_se), _fmt(est.var_charge), _fmt(est.var_charge_se)]
    for ch, f, se in zip(est.memory_labels, est.memory_freq, est.memory_freq_se):
        header += [f"freq({ch})", f"freq_se({ch})"]
        row += [_fmt(f), _fmt(se)]
    out.add("trajectories", header, [row])

    if task["dump"]:
        rows = []
        for tid, rec in enumerate(est.records):
            running = 0.0
            for t, ch, mem in zip(rec.jump_times, rec.jump_channels, rec.memory_before):
                if ch < rec.n_monitored and t >= rec.burn_in:
                    running += weights.per_transition[ch, mem]
                rows.append(
                    [
                        str(tid),
                        _fmt(t),
                        rec.labels[ch],
                        model.channels[mem],
                        _fmt(running),
                    ]
                )
        out.add(
            "jumps",
            ["trajectory_id", "time", "channel_label", "memory_before", "charge_after"],
            rows,
        )


def _run_sweep(ctx, out):
    task = ctx["task"]
    name, base = ctx["builtin"]
    parameter, values, inner = task["parameter"], task["values"], task["inner"]
    also = task.get("also", {})
    weights_cfg = ctx["weights_cfg"]

    header = [parameter] + list(also)
    model0 = ctx["model"]
    for var in task["variants"]:
        label = var["label"]
        if inner == "steady":
            cols = [f"{label}_{c}" for c in _state_header(model0)]
            if weights_cfg is not None:
                cols.append(f"{label}_current")
                if name == "maser" and weights_cfg == "work":
                    cols.append(f"{label}_power_norm")
        else:
            cols = [f"{label}_current", f"{label}_noise"]
            if name == "maser" and weights_cfg == "work":
                cols.append(f"{label}_power_norm")
        header += cols

    rows = []
    for i, value in enumerate(values):
        point = {parameter: value, **{k: v[i] for k, v in also.items()}}
        row = [_fmt(value)] + [_fmt(also[k][i]) for k in also]
        for var in task["variants"]:
            overrides = {k: v for k, v in var.items() if k != "label"}
            merged = _canon_builtin_params(
                name, {**base, **overrides, **point}, "task.variants"
            )
            model = _build_builtin(name, merged)
            weights, _ = _weights_from_config(
                weights_cfg, model, (name, merged)
            )
            state = feedback_steady_state(model)
            if inner == "steady":
                row += _state_row(model, state)
                if weights is not None:
                    ext = extended_liouvillian(model)
                    current = average_current(ext, weights, state)
                    row.append(_fmt(current))
                    if name == "maser" and weights_cfg == "work":
                        scale = merged["gl"] * (merged["wl"] - merged["wr"])
                        row.append(_fmt(current / scale))
            else:
                ext = extended_liouvillian(model)
                current = average_current(ext, weights, state)
                noise = steady_noise(ext, weights, state=state)
                row += [_fmt(current), _fmt(noise)]
                if name == "maser" and weights_cfg == "work":
                    scale = merged["gl"] * (merged["wl"] - merged["wr"])
                    row.append(_fmt(current / scale))
        rows.append(row)
    out.add("sweep", header, rows)


_RUNNERS = {
    "steady": _run_steady,
    "evolve": _run_evolve,
    "correlation": _run_correlation,
    "spectrum": _run_spectrum,
    "noise": _run_noise,
    "trajectories": _run_trajectories,
    "sweep": _run_sweep,
}


class _Outputs:
    def __init__(self, directory, prefix):
        self.directory = directory
        self.prefix = prefix
        self.files = []
        self.extras = {}

    def add(self, suffix, header, rows):
        fpath = os.path.normpath(
            os.path.join(self.directory, f"{self.prefix}_{suffix}.csv")
        )
        _write_csv(fpath, header, rows)
        self.files.append((suffix, fpath, len(rows)))


def run_config(raw, base_dir="."):
    """Parse and execute a config; returns the run report dict."""
    started = time.perf_counter()
    ctx, canon = parse_config(raw)
    directory = os.path.normpath(os.path.join(base_dir, ctx["directory"]))
    os.makedirs(directory, exist_ok=True)
    out = _Outputs(directory, ctx["prefix"])
    _RUNNERS[ctx["task"]["kind"]](ctx, out)

    report = {
        "version": __version__,
        "config": canon,
        "manifest": {suffix: os.path.basename(fpath) for suffix, fpath, _ in out.files},
        "rows": {suffix: n for suffix, _, n in out.files},
        "wall_time_s": time.perf_counter() - started,
    }
    if out.extras:
        report["extras"] = out.extras
    report_path = os.path.join(directory, f"{ctx['prefix']}_report.json")
    with open(report_path, "w", newline="") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report, report_path, [fpath for _, fpath, _ in out.files]


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="jumpfeedback",
        description="Feedback master equations and counting statistics, driven by a JSON config.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    p_run = sub.add_parser("run", help="execute a config and write CSV outputs")
    p_run.add_argument("config", help="path to the JSON config")
    p_val = sub.add_parser("validate", help="parse and validate a config without running it")
    p_val.add_argument("config", help="path to the JSON config")
    sub.add_parser("version", help="print the package version")
    args = parser.parse_args(argv)

    if args.verb == "version":
        print(__version__)
        return 0

    try:
        raw = _load_json(args.config)
        if args.verb == "validate":
            ctx, _ = parse_config(raw)
            model = ctx["model"]
            silent = len(model.silent_labels)
            print(
                f"ok: dim {model.dim}, channels {list(model.channels)}"
                + (f", {silent} silent" if silent else "")
                + f", task {ctx['task']['kind']}"
            )
            return 0
        report, report_path, files = run_config(raw)
        for fpath in files:
            print(fpath)
        print(report_path)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except JumpFeedbackError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
