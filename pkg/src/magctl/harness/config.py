"""Experiment configuration files.

A config is a YAML mapping.  Unknown keys are errors at every level that
has a fixed schema.  Each experiment ships a default config
(``magctl/harness/configs/<experiment>.yaml``); a user file is merged on
top of it key by key (``system``, ``params`` and ``tolerances`` merge one
level deep, everything else is replaced).

Common keys
-----------
experiment : one of :data:`EXPERIMENTS`.
description : free text, echoed in reports.
system : system descriptor (``kind``, ``d``, ``n``, ``L``, ``A``, ``V``, ``W2``, ``W``).
state : initial state, ``{expr: "<expression>"}`` (complex allowed, normalised
    on the grid), ``{gaussian: {a: .., b: ..}}`` or ``{random: {modes: k}}``
    (band-limited, drawn from the seed).
kick_mode : ``ideal`` or ``pulsed:<eps>``.
method : propagation method, ``auto``, ``dense_eig`` or ``krylov``.
seed : unsigned 64-bit integer, default 0.
out : output directory.
formats : subset of ``[csv, json, svg]``.
tolerances : pass thresholds (experiment specific, echoed in reports).
workers : thread count for the rows of a sweep.
record_timing : write wall times into the CSV (off by default so that
    outputs are byte-stable).

Sweep keys (``*-conv`` and ``demo-small-time``)
-----------------------------------------------
target : target operator in the textual syntax.
ladder : mapping from parameter name to a list of values; lists are zipped
    (length-1 lists broadcast).  Names: ``tau``, ``n``, ``n_strip``,
    ``eps_kick``, ``split`` (and ``eps`` for the small-time demo).
params : fixed :class:`~magctl.synth.SynthParams` fields.
order_variable : ``tau`` or ``n`` (error is fitted against ``tau`` or ``1/n``).
cases : list of case mappings ``{label, target, system, state, ladder,
    tolerances, force, product, sigma, axis, u, realization}``; each case
    overrides the corresponding top-level value.
realization : ``schedule`` (default) or ``oracle_dilation`` (free
    evolution with exact dilations around the synthesized drift).

Experiment-specific keys are documented in :data:`EXTRA_KEYS`.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

EXPERIMENTS = (
    "phase-conv",
    "dilation-conv",
    "freeevo-conv",
    "trotter-conv",
    "gradsq-conv",
    "translation-conv",
    "gradientflow-conv",
    "identities",
    "obstruction",
    "saturate",
    "demo-small-time",
)

CONVERGENCE = ("phase-conv", "dilation-conv", "freeevo-conv", "gradsq-conv", "translation-conv",
               "gradientflow-conv")

COMMON_KEYS = {"experiment", "description", "system", "state", "kick_mode", "method", "seed", "out",
               "formats", "tolerances", "workers", "record_timing"}

_SWEEP = {"target", "ladder", "params", "order_variable", "cases"}

EXTRA_KEYS = {
    **{name: _SWEEP | {"realization"} for name in CONVERGENCE},
    "trotter-conv": {"ladder", "order_variable", "cases", "product", "sigma", "axis", "u"},
    "identities": {"cases"},
    "obstruction": {"count", "max_segments", "u_max", "max_duration", "contrast"},
    "saturate": {"trig", "hermite", "targets"},
    "demo-small-time": {"target", "ladder", "params", "cases"},
}

CASE_KEYS = {"label", "target", "system", "state", "ladder", "tolerances", "force", "product", "sigma",
             "axis", "u", "realization"}

IDENTITY_KEYS = {"identity", "label", "system", "phi", "tau", "alpha", "u", "axis", "t", "sigma", "expect",
                 "threshold"}

LADDER_KEYS = {"tau", "n", "n_strip", "eps_kick", "split", "eps"}
PARAM_KEYS = {"tau", "n", "eps_kick", "split", "n_strip", "truncation", "kick_realization", "exact_drift"}
FORMATS = ("csv", "json", "svg")
_MERGED = ("system", "params", "tolerances")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    system: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)
    kick_mode: str = "ideal"
    method: str = "auto"
    seed: int = 0
    out: str = "results"
    formats: tuple = FORMATS
    tolerances: dict = field(default_factory=dict)
    workers: int = 1
    record_timing: bool = False
    description: str = ""
    extra: dict = field(default_factory=dict)

    def get(self, key, default=None):
        return self.extra.get(key, default)

    def echo(self) -> dict:
        """Plain mapping of the full configuration, as written to reports."""
        out = {"experiment": self.experiment, "description": self.description, "system": self.system,
               "state": self.state, "kick_mode": self.kick_mode, "method": self.method, "seed": self.seed,
               "out": self.out, "formats": list(self.formats), "tolerances": self.tolerances,
               "workers": self.workers, "record_timing": self.record_timing}
        out.update(self.extra)
        return copy.deepcopy(out)


def default_config(experiment: str) -> dict:
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    text = resources.files("magctl.harness").joinpath("configs", f"{experiment}.yaml").read_text()
    return yaml.safe_load(text)


def merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k in _MERGED and isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **copy.deepcopy(v)}
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_keys(mapping: dict, allowed: set, where: str):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where} must be a mapping")
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def ladder_points(ladder: dict) -> list[dict]:
    """Zip the ladder lists into parameter points (length-1 lists broadcast)."""
    if not ladder:
        raise ConfigError("parameter ladder is empty")
    _check_keys(ladder, LADDER_KEYS, "ladder")
    lists = {k: (list(v) if isinstance(v, (list, tuple)) else [v]) for k, v in ladder.items()}
    if any(len(v) == 0 for v in lists.values()):
        raise ConfigError("parameter ladder is empty")
    size = max(len(v) for v in lists.values())
    for k, v in lists.items():
        if len(v) not in (1, size):
            raise ConfigError(f"ladder list {k!r} has {len(v)} entries, expected 1 or {size}")
    return [{k: (v[0] if len(v) == 1 else v[i]) for k, v in lists.items()} for i in range(size)]


def _validate(raw: dict) -> ExperimentConfig:
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}")
    _check_keys(raw, COMMON_KEYS | EXTRA_KEYS[exp], "config")
    seed = int(raw.get("seed", 0))
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    formats = raw.get("formats", list(FORMATS))
    if isinstance(formats, str):
        formats = [f for f in formats.split(",") if f]
    bad = set(formats) - set(FORMATS)
    if bad:
        raise ConfigError(f"unknown output formats {sorted(bad)}")
    workers = int(raw.get("workers", 1))
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    extra = {k: copy.deepcopy(raw[k]) for k in EXTRA_KEYS[exp] if k in raw}
    if "params" in extra:
        _check_keys(extra["params"], PARAM_KEYS, "params")
    if "ladder" in extra:
        ladder_points(extra["ladder"])
    for i, case in enumerate(extra.get("cases", []) if exp != "identities" else []):
        _check_keys(case, CASE_KEYS, f"cases[{i}]")
        if "ladder" in case:
            ladder_points(case["ladder"])
    if exp == "identities":
        cases = extra.get("cases") or []
        if not cases:
            raise ConfigError("identity checks need at least one case")
        for i, case in enumerate(cases):
            _check_keys(case, IDENTITY_KEYS, f"cases[{i}]")
    if exp in CONVERGENCE or exp in ("trotter-conv", "demo-small-time"):
        if "ladder" not in extra and not all("ladder" in c for c in extra.get("cases", [{}])):
            raise ConfigError("parameter ladder is empty")
    state = raw.get("state") or {}
    _check_keys(state, {"expr", "gaussian", "random"}, "state")
    return ExperimentConfig(
        experiment=exp,
        system=copy.deepcopy(raw.get("system") or {}),
        state=copy.deepcopy(state),
        kick_mode=str(raw.get("kick_mode", "ideal")),
        method=str(raw.get("method", "auto")),
        seed=seed,
        out=str(raw.get("out", f"results/{exp}")),
        formats=tuple(formats),
        tolerances=copy.deepcopy(raw.get("tolerances") or {}),
        workers=workers,
        record_timing=bool(raw.get("record_timing", False)),
        description=str(raw.get("description", "")),
        extra=extra,
    )


def load_config(source=None, experiment: str | None = None, **overrides) -> ExperimentConfig:
    """Build a validated config.

    ``source`` is a path, a mapping or ``None`` (defaults only).  The
    experiment name comes from ``experiment`` or from the source.  Keyword
    overrides (e.g. ``seed=3``) are applied last; ``None`` values are ignored.
    """
    if source is None:
        user = {}
    elif isinstance(source, dict):
        user = copy.deepcopy(source)
    else:
        text = Path(source).read_text()
        user = yaml.safe_load(text) or {}
        if not isinstance(user, dict):
            raise ConfigError("a config file must hold a mapping")
    exp = experiment or user.get("experiment")
    if exp is None:
        raise ConfigError("config does not name an experiment")
    if user.get("experiment", exp) != exp:
        raise ConfigError(f"config is for {user['experiment']!r}, not {exp!r}")
    raw = merge(default_config(exp), {**user, "experiment": exp})
    raw = merge(raw, {k: v for k, v in overrides.items() if v is not None})
    return _validate(raw)
