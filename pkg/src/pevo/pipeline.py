"""Run configurations and the check -> tune -> solve -> audit pipeline."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .coefficients import check_conditions
from .linear import InstabilityError, LinearProblem, energy_audit, solve_linear, solve_transformed, write_norms_csv
from .scenarios import ConfigError, build_scenario, preset_defaults
from .semilinear import NewtonError, SemilinearProblem, newton_solve
from .transform import TuningError, build_pack, pack_report, tune_constants, write_pack_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECK = 3
EXIT_TUNING = 4
EXIT_INSTABILITY = 5
EXIT_AUDIT = 6
EXIT_NEWTON = 7

DEFAULTS = {
    "schema_version": "1",
    "solver": {
        "n_frames": 51,
        "dt": None,
        "s": 0.0,
        "tol": 1e-6,
        "max_iter": 10,
        "eps": None,
        "seed": "taylor",
        "target": "mollified",
        "stepper": "lawson",
        "smoothing": False,
    },
    "pack": {
        "skip_tune": False,
        "M": None,
        "h0": 4.0,
        "M0": 1.0,
        "M_cap": 65536.0,
        "c0": 40.0,
        "r_max": 0.5,
        "neumann_order": 8,
    },
    "audit": {"enabled": True, "fit_fraction": 0.1},
    "output": {"frames": True},
    "seed": 0,
}

SUBCOMMAND_STAGES = {
    "check": ("check",),
    "tune": ("tune",),
    "solve-linear": ("tune", "linear"),
    "solve": ("newton",),
    "audit": ("tune", "solve", "audit"),
    "pipeline": ("check", "tune", "solve", "audit"),
}


def schema() -> dict:
    return json.loads(resources.files("pevo").joinpath("config.schema.json").read_text())


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(raw: dict) -> dict:
    """Validate ``raw`` against the schema and fill in every default.

    The result is self-contained: running it again reproduces the run.
    """
    try:
        jsonschema.validate(raw, schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config invalid at {list(exc.absolute_path)}: {exc.message}") from exc
    cfg = _merge(DEFAULTS, raw)
    name = cfg["scenario"]["name"]
    try:
        params = preset_defaults(name)
    except KeyError as exc:
        raise ConfigError(f"unknown preset {name!r}") from exc
    cfg["scenario"]["params"] = _merge(params, cfg["scenario"].get("params", {}))
    jsonschema.validate(cfg, schema())
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return resolve_config(raw)


def preset_config(name: str) -> dict:
    return resolve_config({"schema_version": "1", "scenario": {"name": name}})


def _dump(obj, path: Path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


@dataclass
class RunResult:
    exit_code: int
    stages: dict = field(default_factory=dict)
    failure: dict | None = None
    out_dir: str | None = None

    def to_dict(self) -> dict:
        return {"exit_code": self.exit_code, "stages": self.stages, "failure": self.failure}


class _Stop(Exception):
    def __init__(self, code, stage, message):
        super().__init__(message)
        self.code, self.stage, self.message = code, stage, message


def run_pipeline(config: dict, out_dir, subcommand: str = "pipeline") -> RunResult:
    """Execute the stages of ``subcommand`` for a resolved ``config``.

    Reports are written into ``out_dir``; the exit code follows the stage map
    0 ok, 2 config, 3 condition check, 4 tuning, 5 instability, 6 audit,
    7 Newton.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stages = SUBCOMMAND_STAGES[subcommand]
    res = RunResult(EXIT_OK, out_dir=str(out))
    try:
        cfg = resolve_config(config)
        _dump(cfg, out / "resolved-config.json")
        _run(cfg, out, stages, res)
    except ConfigError as exc:
        res.failure = {"stage": "config", "exit_code": EXIT_CONFIG, "message": str(exc)}
        res.exit_code = EXIT_CONFIG
    except _Stop as stop:
        res.failure = {"stage": stop.stage, "exit_code": stop.code, "message": stop.message}
        res.exit_code = stop.code
    if res.failure is not None:
        _dump(res.failure, out / "failure.json")
    _dump(res.to_dict(), out / "run-summary.json")
    return res


def _run(cfg, out: Path, stages, res: RunResult):
    sc = build_scenario(cfg["scenario"]["name"], cfg["scenario"]["params"])
    sv, pk, au = cfg["solver"], cfg["pack"], cfg["audit"]
    kind = sc.kind
    pack = None
    traj = w = None
    frozen_state = None

    if "check" in stages:
        rep = check_conditions(sc.coeffs, sc.sample)
        rep.to_json(out / "decay-report.json")
        res.stages["check"] = {"passed": rep.passed, "failures": [f.condition for f in rep.failures()]}
        if not rep.passed:
            f = rep.failures()[0]
            raise _Stop(EXIT_CHECK, "check",
                        f"condition ({f.condition}) fails for j={f.j}: ratio {f.worst_ratio:.4g} "
                        f"> {f.bound:.4g} at {f.witness}")

    if "tune" in stages:
        p = sc.coeffs.p
        u_state = sc.u0 if kind == "semilinear" else None
        if pk["skip_tune"]:
            M = pk["M"] if pk["M"] is not None else [0.0] * (p - 1)
            if len(M) != p - 1:
                raise ConfigError(f"pack.M needs {p - 1} entries")
            try:
                pack = build_pack(p, M, pk["h0"], sc.grid, neumann_order=pk["neumann_order"])
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        else:
            try:
                pack = tune_constants(sc.coeffs, u_state, sc.grid, absorber=sc.absorber, c0=pk["c0"],
                                      h0=pk["h0"], M0=pk["M0"], M_cap=pk["M_cap"], r_max=pk["r_max"],
                                      neumann_order=pk["neumann_order"], seed=cfg["seed"])
            except TuningError as exc:
                _dump({"error": str(exc), "level": exc.level, "report": exc.report}, out / "pack-report.json")
                raise _Stop(EXIT_TUNING, "tune", str(exc)) from exc
        rep = pack_report(pack)
        write_pack_report(_jsonable(rep), out / "pack-report.json")
        res.stages["tune"] = {"M": rep["M"], "h": rep["h"], "neumann_norm": rep["neumann_norm"]}

    solve_linear_stage = "linear" in stages or ("solve" in stages and kind == "linear")
    newton_stage = "newton" in stages or ("solve" in stages and kind == "semilinear")

    if solve_linear_stage:
        state = sc.u0 if kind == "semilinear" else None
        frozen_state = state
        lp = LinearProblem(sc.coeffs, sc.grid, sc.u0, sc.T, dt=sv["dt"], forcing=sc.forcing, s=sv["s"],
                           n_frames=sv["n_frames"], state=state, absorber=sc.absorber,
                           stepper=sv["stepper"], pack=pack)
        try:
            if pack is not None and not pack.is_trivial():
                ts = solve_transformed(lp)
                traj, w = ts.v, ts.w
            else:
                traj = solve_linear(lp)
        except InstabilityError as exc:
            raise _Stop(EXIT_INSTABILITY, "solve", f"{exc} (t = {exc.time:.6g})") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        res.stages["solve"] = {"kind": "linear", "transformed": w is not None,
                               "dt": traj.diagnostics.get("dt"), "steps": traj.diagnostics.get("steps")}

    if newton_stage:
        if kind != "semilinear":
            raise ConfigError(f"scenario {sc.name} is linear; use solve-linear")
        sp_ = SemilinearProblem(sc.coeffs, sc.u0, sc.T, forcing=sc.forcing, s=sv["s"], tol=sv["tol"],
                                max_iter=sv["max_iter"], eps=sv["eps"], seed=sv["seed"],
                                target=sv["target"], n_frames=sv["n_frames"], smoothing=sv["smoothing"])
        try:
            traj, rep = newton_solve(sp_)
        except NewtonError as exc:
            exc.report.to_json(out / "newton-report.json")
            raise _Stop(EXIT_NEWTON, "solve", str(exc)) from exc
        except InstabilityError as exc:
            raise _Stop(EXIT_INSTABILITY, "solve", f"{exc} (t = {exc.time:.6g})") from exc
        rep.to_json(out / "newton-report.json")
        frozen_state = traj
        res.stages["solve"] = {"kind": "newton", "iterations": rep.iterations,
                               "residual": rep.residuals[-1], "pde_residual": rep.pde_residual}

    if traj is not None:
        sigma = pack.sigma if pack is not None else 0.0
        audit = energy_audit(traj, sv["s"], sigma, frozen_state, sc.coeffs, sc.forcing, w=w, pack=pack,
                             fit_fraction=au["fit_fraction"])
        write_norms_csv(out / "norms.csv", traj, audit)
        if cfg["output"]["frames"]:
            traj.write_frames(out / "frames.bin")
        if "audit" in stages and au["enabled"]:
            res.stages["audit"] = audit.to_dict()
            _dump(audit.to_dict(), out / "audit-report.json")
            if not audit.passed:
                raise _Stop(EXIT_AUDIT, "audit", f"energy bound violated: margin {audit.margin:.4g} < 1")


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=_json_default))
