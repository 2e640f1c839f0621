"""Scenario files (TOML, schema version 1).

Layout::

    schema_version = 1
    name = "hw4"
    controller = "dmpc-qp"         # lfbk | dmpc-qp | dmpc-lp
    tail = 12.0                    # seconds simulated after the profile ends
    # duration = 63.0              # ... or an absolute duration instead of tail

    [profile]                      # levels form
    levels = [0.0, 2.0, 3.5]
    dwell = 8.0
    accel = 1.0
    lead_in = 1.0
    # times = [...]; speeds = [...]   # or explicit breakpoints

    [platoon]
    n_followers = 3
    d_des = 1.0
    dt = 0.1
    tau = 0.3
    v_min = 0.0
    v_max = 4.0
    a_max = 2.0

    [initial]                      # optional
    gap = 1.0
    velocity = 0.0

    [noise]
    dynamics_std = [0.05, 0.05]    # position, velocity (a scalar applies to both)
    sensing_std = 0.045
    seed = 0

    [lfbk]
    k_p = 1.0
    k_v = 2.0

    [dmpc]
    H = 100
    F = [[1.0, 0.0], [0.0, 1.0]]
    G = [[1.0, 0.0], [0.0, 1.0]]
    R = 1.0
    s = 1.0
    q = 1.0
    r = 1.0

    [dmpc.overrides.2]             # per-vehicle weight overrides
    F = [[0.5, 0.0], [0.0, 0.5]]

Unknown keys are rejected. Every error names the offending field.
"""

from __future__ import annotations

import hashlib
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Union

import numpy as np

from .controllers import DmpcConfig, LfbkConfig
from .model import NoiseConfig, PlatoonConfig
from .sim import CONTROLLERS, Scenario, SpeedProfile

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
BUNDLED = ("hw4", "sim100")

_TOP = {"schema_version", "name", "controller", "duration", "tail", "profile", "platoon",
        "initial", "noise", "lfbk", "dmpc"}
_PROFILE_LEVELS = {"levels", "dwell", "accel", "lead_in"}
_PROFILE_POINTS = {"times", "speeds"}
_PLATOON = {"n_followers", "d_des", "dt", "tau", "v_min", "v_max", "a_max"}
_INITIAL = {"gap", "velocity"}
_NOISE = {"dynamics_std", "sensing_std", "seed"}
_LFBK = {"k_p", "k_v"}
_WEIGHTS = {"F", "G", "R", "s", "q", "r"}
_DMPC = {"H", "overrides"} | _WEIGHTS


class ScenarioError(ValueError):
    """Invalid scenario file; the message locates the problem."""


def _check_keys(table: dict, allowed: set, where: str):
    extra = sorted(set(table) - allowed)
    if extra:
        raise ScenarioError(f"{where}: unknown key(s) {', '.join(map(repr, extra))}")


def _table(doc: dict, key: str, required: bool = True) -> dict:
    if key not in doc:
        if required:
            raise ScenarioError(f"missing table [{key}]")
        return {}
    val = doc[key]
    if not isinstance(val, dict):
        raise ScenarioError(f"{key}: expected a table")
    return val


def _num(table: dict, key: str, where: str, default=None, integer=False):
    if key not in table:
        if default is None:
            raise ScenarioError(f"{where}.{key}: required field missing")
        return default
    val = table[key]
    ok = isinstance(val, int) if integer else isinstance(val, (int, float))
    if isinstance(val, bool) or not ok:
        kind = "an integer" if integer else "a number"
        raise ScenarioError(f"{where}.{key}: expected {kind}, got {val!r}")
    return int(val) if integer else float(val)


def _matrix(val, where: str):
    try:
        M = np.asarray(val, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}: expected a 2x2 numeric matrix") from None
    if M.shape != (2, 2):
        raise ScenarioError(f"{where}: expected a 2x2 matrix, got shape {M.shape}")
    return M


def _weights(table: dict, where: str) -> dict:
    out = {}
    for key in ("F", "G"):
        if key in table:
            out[key] = _matrix(table[key], f"{where}.{key}")
    for key in ("R", "s", "q", "r"):
        if key in table:
            out[key] = _num(table, key, where)
    return out


def _profile(tbl: dict) -> SpeedProfile:
    keys = set(tbl)
    if keys & _PROFILE_POINTS and keys & _PROFILE_LEVELS:
        raise ScenarioError("profile: use either levels/dwell/accel/lead_in or times/speeds")
    if keys & _PROFILE_POINTS:
        _check_keys(tbl, _PROFILE_POINTS, "profile")
        try:
            return SpeedProfile(tuple(tbl["times"]), tuple(tbl["speeds"]))
        except KeyError as exc:
            raise ScenarioError(f"profile.{exc.args[0]}: required field missing") from None
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"profile: {exc}") from None
    _check_keys(tbl, _PROFILE_LEVELS, "profile")
    if "levels" not in tbl:
        raise ScenarioError("profile.levels: required field missing")
    levels = tbl["levels"]
    if not isinstance(levels, list) or not levels or \
            not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in levels):
        raise ScenarioError("profile.levels: expected a nonempty list of speeds")
    try:
        return SpeedProfile.from_levels(levels, _num(tbl, "dwell", "profile"),
                                        _num(tbl, "accel", "profile"),
                                        _num(tbl, "lead_in", "profile", default=0.0))
    except ValueError as exc:
        raise ScenarioError(f"profile: {exc}") from None


def scenario_from_dict(doc: dict) -> Scenario:
    """Build a validated :class:`Scenario` from a parsed TOML document."""
    _check_keys(doc, _TOP, "top level")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"schema_version: unsupported version {version!r} "
                            f"(expected {SCHEMA_VERSION})")
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise ScenarioError("name: expected a nonempty string")
    controller = doc.get("controller", "dmpc-qp")
    if controller not in CONTROLLERS:
        raise ScenarioError(f"controller: unknown controller {controller!r}; "
                            f"choose one of {', '.join(CONTROLLERS)}")

    profile = _profile(_table(doc, "profile"))

    pt = _table(doc, "platoon")
    _check_keys(pt, _PLATOON, "platoon")
    try:
        platoon = PlatoonConfig.uniform(
            _num(pt, "n_followers", "platoon", integer=True), _num(pt, "d_des", "platoon"),
            dt=_num(pt, "dt", "platoon", 0.1), tau=_num(pt, "tau", "platoon", 0.3),
            v_min=_num(pt, "v_min", "platoon", 0.0), v_max=_num(pt, "v_max", "platoon", 35.0),
            a_max=_num(pt, "a_max", "platoon", 3.0))
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(f"platoon: {exc}") from None

    if ("duration" in doc) == ("tail" in doc):
        raise ScenarioError("duration/tail: give exactly one of them")
    duration = (_num(doc, "duration", "top level") if "duration" in doc
                else profile.end + _num(doc, "tail", "top level"))

    it = _table(doc, "initial", required=False)
    _check_keys(it, _INITIAL, "initial")
    gap = _num(it, "gap", "initial") if "gap" in it else None
    vel = _num(it, "velocity", "initial") if "velocity" in it else None

    nt = _table(doc, "noise", required=False)
    _check_keys(nt, _NOISE, "noise")
    dyn = nt.get("dynamics_std", 0.0)
    if isinstance(dyn, (int, float)) and not isinstance(dyn, bool):
        dyn = (float(dyn), float(dyn))
    elif not (isinstance(dyn, list) and len(dyn) == 2):
        raise ScenarioError("noise.dynamics_std: expected a number or a [position, velocity] pair")
    try:
        noise = NoiseConfig(tuple(dyn), _num(nt, "sensing_std", "noise", 0.0),
                            _num(nt, "seed", "noise", 0, integer=True))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"noise: {exc}") from None

    lt = _table(doc, "lfbk", required=False)
    _check_keys(lt, _LFBK, "lfbk")
    try:
        lfbk = LfbkConfig(_num(lt, "k_p", "lfbk", 1.0), _num(lt, "k_v", "lfbk", 2.0))
    except ValueError as exc:
        raise ScenarioError(f"lfbk: {exc}") from None

    dt_ = _table(doc, "dmpc", required=False)
    _check_keys(dt_, _DMPC, "dmpc")
    base = _weights(dt_, "dmpc")
    H = _num(dt_, "H", "dmpc", 100, integer=True)
    overrides = {}
    ov = dt_.get("overrides", {})
    if not isinstance(ov, dict):
        raise ScenarioError("dmpc.overrides: expected a table keyed by vehicle index")
    for key, tbl in ov.items():
        where = f"dmpc.overrides.{key}"
        try:
            vehicle = int(key)
        except ValueError:
            raise ScenarioError(f"{where}: vehicle index must be an integer") from None
        if not isinstance(tbl, dict):
            raise ScenarioError(f"{where}: expected a table")
        _check_keys(tbl, _WEIGHTS, where)
        overrides[vehicle] = _weights(tbl, where)
    try:
        dmpc = DmpcConfig(H=H, **base)
        for vehicle, fields in overrides.items():
            DmpcConfig(H=H, **{**base, **fields})
    except ValueError as exc:
        raise ScenarioError(f"dmpc: {exc}") from None

    try:
        return Scenario(name=name, profile=profile, duration=duration, platoon=platoon,
                        noise=noise, controller=controller, lfbk=lfbk, dmpc=dmpc,
                        dmpc_overrides=overrides, initial_gap=gap, initial_velocity=vel)
    except ValueError as exc:
        raise ScenarioError(f"scenario: {exc}") from None


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # the decoder message carries line and column
        raise ScenarioError(f"{source}: {exc}") from None
    try:
        return scenario_from_dict(doc)
    except ScenarioError as exc:
        raise ScenarioError(f"{source}: {exc}") from None


def resolve_scenario_path(ref: Union[str, Path]) -> Path:
    """A bundled scenario name (``hw4``, ``sim100``) or a file path."""
    ref = str(ref)
    if ref in BUNDLED:
        return Path(str(resources.files("platoon_bench") / "scenarios" / f"{ref}.toml"))
    return Path(ref)


def read_scenario_source(ref: Union[str, Path]) -> tuple[Path, bytes]:
    path = resolve_scenario_path(ref)
    try:
        return path, path.read_bytes()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario ({exc.strerror})") from None


def load_scenario(ref: Union[str, Path]) -> Scenario:
    path, raw = read_scenario_source(ref)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise ScenarioError(f"{path}: not UTF-8 text") from None
    return parse_scenario(text, str(path))


def content_hash(raw: bytes) -> str:
    return "sha256:" + hashlib.sha256(raw).hexdigest()


def scenario_to_dict(sc: Scenario) -> dict[str, Any]:
    """Echo of a scenario for manifests (profile as explicit breakpoints)."""
    pc = sc.platoon
    dmpc = sc.dmpc
    out = {
        "schema_version": SCHEMA_VERSION,
        "name": sc.name,
        "controller": sc.controller,
        "duration": sc.duration,
        "profile": {"times": list(sc.profile.times), "speeds": list(sc.profile.speeds)},
        "platoon": {"n_followers": pc.n_followers, "d_des": pc.d_des, "dt": sc.dt,
                    "tau": pc.dynamics[0].tau, "v_min": pc.v_min[0], "v_max": pc.v_max[0],
                    "a_max": pc.a_max[0]},
        "noise": {"dynamics_std": list(sc.noise.dynamics_std),
                  "sensing_std": sc.noise.sensing_std, "seed": sc.noise.seed},
        "lfbk": {"k_p": sc.lfbk.k_p, "k_v": sc.lfbk.k_v},
        "dmpc": {"H": dmpc.H, "F": dmpc.F.tolist(), "G": dmpc.G.tolist(), "R": dmpc.R,
                 "s": dmpc.s, "q": dmpc.q, "r": dmpc.r,
                 "overrides": {str(i): {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                                        for k, v in o.items()}
                               for i, o in sorted(sc.dmpc_overrides.items())}},
    }
    init = {}
    if sc.initial_gap is not None:
        init["gap"] = sc.initial_gap
    if sc.initial_velocity is not None:
        init["velocity"] = sc.initial_velocity
    if init:
        out["initial"] = init
    return out
