"""Declarative run configuration: TOML file, dotted overrides, validation."""

from __future__ import annotations

import copy
import logging
import math
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .harness import SweepConfig, TrialConfig, config_hash
from .population import preset as population_preset

log = logging.getLogger(__name__)

# section -> key -> default (None means "unset")
SCHEMA: dict[str, dict] = {
    "model": {"N": 32, "r": 1, "p": 3, "lambdas": [1.0], "noise": "gaussian", "sigma": 1.0, "planted": True},
    "dynamics": {
        "kind": "sgd", "seed": 0, "steps": 0, "delta": None, "regime": None, "C_delta": 1.0,
        "grad_mode": "exact", "noise_backend": "streamed", "record_every": None,
        "beta": math.inf, "M": 1.0, "dt": 1e-2, "T": 1.0, "M0": None, "preset": None,
    },
    "recovery": {"eps": 0.1, "eps_prime": 0.2, "success": "permutation", "init": "invariant", "null_c": 10.0},
    "conditions": {"gamma0": 1.0, "gamma1": 3.0, "gamma2": 0.05, "gamma": 0.1, "samples": 100, "init_file": None},
    "sweep": {
        "N_values": [16], "budget": "power", "budget_values": [1.0], "coeff": 1.0, "trials": 10,
        "master_seed": 0, "workers": None, "allow_large": False,
    },
    "output": {"trajectory": True},
}


def defaults() -> dict:
    return copy.deepcopy(SCHEMA)


def _check_keys(tree: dict, where: str = "") -> None:
    for sec, body in tree.items():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]{where}")
        if not isinstance(body, dict):
            raise ConfigError(f"[{sec}] must be a table{where}")
        for k in body:
            if k not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {sec}.{k}{where}")


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(tree: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` pairs in order; a repeated key keeps the last value."""
    seen: dict[str, str] = {}
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) != 2:
            raise ConfigError(f"override key {key!r} must be section.key")
        sec, k = parts
        _check_keys({sec: {k: None}}, " in --override")
        if key in seen:
            log.warning("override %s given more than once; %r wins over %r", key, text, seen[key])
        seen[key] = text
        tree.setdefault(sec, {})[k] = _parse_value(text.strip())
    return tree


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> dict:
    """Parse, check keys, apply overrides and fill defaults. The file is never modified."""
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        try:
            raw = tomllib.loads(p.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
    _check_keys(raw)
    raw = apply_overrides(copy.deepcopy(raw), overrides or [])
    tree = defaults()
    for sec, body in raw.items():
        tree[sec].update(body)
    name = tree["dynamics"]["preset"]
    if name is not None:
        _apply_preset(tree, raw, name)
    return tree


def _apply_preset(tree: dict, raw: dict, name: str) -> None:
    try:
        pre = population_preset(name)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    given_dyn = raw.get("dynamics", {})
    given_model = raw.get("model", {})
    # explicit keys in the file or overrides take precedence over the preset
    for k, v in (("p", pre["p"]), ("lambdas", list(pre["lambdas"])), ("r", len(pre["lambdas"]))):
        if k not in given_model:
            tree["model"][k] = v
    for k, v in (("M0", pre["M0"].tolist()), ("T", pre["T"]), ("dt", pre["dt"]), ("kind", "population")):
        if k not in given_dyn:
            tree["dynamics"][k] = v


def tree_hash(tree: dict) -> str:
    return config_hash(tree)


def trial_config(tree: dict) -> TrialConfig:
    m, d, rc, c = tree["model"], tree["dynamics"], tree["recovery"], tree["conditions"]
    try:
        return TrialConfig(
            N=int(m["N"]), r=int(m["r"]), p=int(m["p"]), lambdas=tuple(m["lambdas"]),
            noise_dist=m["noise"], sigma=float(m["sigma"]), planted=bool(m["planted"]),
            dynamics=d["kind"], steps=int(d["steps"]), delta=d["delta"], regime=d["regime"],
            C_delta=float(d["C_delta"]), grad_mode=d["grad_mode"], noise_backend=d["noise_backend"],
            record_every=d["record_every"], beta=float(d["beta"]), M=float(d["M"]), dt=float(d["dt"]),
            T=float(d["T"]), M0=None if d["M0"] is None else tuple(map(tuple, d["M0"])),
            init=rc["init"], eps=float(rc["eps"]), eps_prime=float(rc["eps_prime"]), success=rc["success"],
            null_c=float(rc["null_c"]),
            gamma0=float(c["gamma0"]), gamma1=float(c["gamma1"]), gamma2=float(c["gamma2"]), gamma=float(c["gamma"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def sweep_config(tree: dict) -> SweepConfig:
    s = tree["sweep"]
    try:
        return SweepConfig(
            base=trial_config(tree), N_values=tuple(s["N_values"]), budget=s["budget"],
            budget_values=tuple(s["budget_values"]), coeff=float(s["coeff"]), trials=int(s["trials"]),
            master_seed=int(s["master_seed"]), workers=s["workers"], allow_large=bool(s["allow_large"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid sweep configuration: {exc}") from exc
