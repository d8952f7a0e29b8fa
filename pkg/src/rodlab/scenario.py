"""Scenario documents: a flat, sectioned key = value format.

Example::

    name = cycle-default
    experiment = cycle

    [params]
    pe = 0.6
    a = 0.5
    n_conc = 2.0

    [cycle]
    eps1 = 0.05
    eps2 = 0.05

    [output]
    dir = out
    seed = 42

Lines are ``key = value`` pairs grouped under ``[section]`` headers; ``#``
starts a comment. Values parse as booleans (true/false), integers, floats,
comma-separated numeric lists, or bare strings. Unknown sections and unknown
keys are hard errors (no silent typo tolerance), and every value is checked
against its field's constraint before any computation starts.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidParameterError, ScenarioError
from .types import ModelParams

EXPERIMENTS = ("ode", "cycle", "sde", "chaos", "entropy", "full-suite")

# field: (parser, default, constraint description or None, validator)
_IDENT = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-_."


def _positive(v):
    return v > 0


def _non_negative(v):
    return v >= 0


_PARAMS_SCHEMA = {
    "pe": (float, None, "pe >= 0", _non_negative),
    "a": (float, None, None, None),
    "n_conc": (float, None, "n_conc >= 0", _non_negative),
    "length": (float, 1.0, "length > 0", _positive),
    "dim": (int, 2, "dim >= 2", lambda v: v >= 2),
}

_OUTPUT_SCHEMA = {
    "dir": (str, "out", None, None),
    "seed": (int, 0, None, None),
}

_EXPERIMENT_SCHEMAS = {
    "ode": {
        "x0": (float, 0.3, None, None),
        "y0": (float, 0.0, None, None),
        "step": (float, 1e-3, "step > 0", _positive),
        "t_end": (float, 50.0, "t_end > 0", _positive),
        "method": (str, "rk4", "method in {rk4, rk45-adaptive}",
                   lambda v: v in ("rk4", "rk45-adaptive")),
        "stride": (int, 10, "stride >= 1", lambda v: v >= 1),
        "representation": (str, "matrix", "representation in {matrix, xy, polar}",
                           lambda v: v in ("matrix", "xy", "polar")),
    },
    "cycle": {
        "eps1": (float, 0.05, "eps1 > 0", _positive),
        "eps2": (float, 0.05, "eps2 > 0", _positive),
        "step": (float, 1e-3, "step > 0", _positive),
    },
    "sde": {
        "model": (str, "meanfield-a",
                  "model in {original, meanfield-a, meanfield-b, replica}",
                  lambda v: v in ("original", "meanfield-a", "meanfield-b", "replica")),
        "n_particles": (int, 10_000, "n_particles >= 1", lambda v: v >= 1),
        "step": (float, 1e-3, "step > 0", _positive),
        "t_end": (float, 5.0, "t_end > 0", _positive),
        "stride": (int, 10, "stride >= 1", lambda v: v >= 1),
        "scheme": (str, "euler-maruyama-project",
                   "scheme in {euler-maruyama-project, heun-stratonovich}",
                   lambda v: v in ("euler-maruyama-project", "heun-stratonovich")),
        "x0": (float, 0.3, None, None),
        "y0": (float, 0.0, None, None),
        "compare_ode": (bool, True, None, None),
    },
    "entropy": {
        "x1": (float, 0.25, None, None),
        "y1": (float, 0.05, None, None),
        "x2": (float, -0.2, None, None),
        "y2": (float, 0.1, None, None),
        "step": (float, 1e-3, "step > 0", _positive),
        "t_end": (float, 10.0, "t_end > 0", _positive),
    },
    "chaos": {
        "replica_counts": (list, [16, 64, 256, 1024], None, None),
        "trials": (int, 200, "trials >= 1", lambda v: v >= 1),
        "horizon": (float, 1.0, "horizon > 0", _positive),
        "step": (float, 1e-3, "step > 0", _positive),
        "law_term": (str, "moment-ode", "law_term in {moment-ode, particle-oracle}",
                     lambda v: v in ("moment-ode", "particle-oracle")),
        "maier_saupe": (bool, False, None, None),
    },
    "full-suite": {
        "criteria": (str, "all", None, None),
    },
}


@dataclass
class Scenario:
    name: str
    experiment: str
    params: ModelParams
    config: dict
    output_dir: str
    seed: int


def _parse_value(raw: str):
    low = raw.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    if "," in raw:
        return [_parse_scalar(part.strip()) for part in raw.split(",") if part.strip()]
    return _parse_scalar(raw)


def _parse_scalar(raw: str):
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def _coerce(value, target, key, lineno):
    if target is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(f"line {lineno}: key '{key}' expects a number, got {value!r}")
        return float(value)
    if target is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioError(f"line {lineno}: key '{key}' expects an integer, got {value!r}")
        return value
    if target is bool:
        if not isinstance(value, bool):
            raise ScenarioError(f"line {lineno}: key '{key}' expects true/false, got {value!r}")
        return value
    if target is list:
        if not isinstance(value, list):
            value = [value]
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ScenarioError(f"line {lineno}: key '{key}' expects an integer list")
        return value
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_scenario(text: str) -> Scenario:
    """Parse and fully validate a scenario document.

    Raises ScenarioError with the offending line number for parse problems,
    unknown sections/keys, type mismatches, and constraint violations.
    """
    section = ""
    seen: dict[str, dict] = {"": {}}
    lines_of: dict[str, dict] = {"": {}}
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ScenarioError(f"line {lineno}: malformed section header {rawline!r}")
            section = line[1:-1].strip()
            seen.setdefault(section, {})
            lines_of.setdefault(section, {})
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected 'key = value', got {rawline!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if not key or not raw:
            raise ScenarioError(f"line {lineno}: expected 'key = value', got {rawline!r}")
        if key in seen[section]:
            raise ScenarioError(f"line {lineno}: duplicate key '{key}'")
        seen[section][key] = _parse_value(raw)
        lines_of[section][key] = lineno

    top = seen.pop("", {})
    top_lines = lines_of.pop("", {})
    name = top.pop("name", None)
    experiment = top.pop("experiment", None)
    if top:
        key = next(iter(top))
        raise ScenarioError(
            f"line {top_lines[key]}: unknown top-level key '{key}' "
            "(only 'name' and 'experiment' are allowed)"
        )
    if not name or not isinstance(name, str):
        raise ScenarioError("scenario requires a top-level 'name'")
    if any(ch not in _IDENT for ch in name):
        raise ScenarioError(f"name '{name}' is not filesystem-safe")
    if experiment not in EXPERIMENTS:
        raise ScenarioError(
            f"experiment must be one of {EXPERIMENTS}, got {experiment!r}"
        )

    exp_section = experiment
    allowed_sections = {"params", "output", exp_section}
    for sec in seen:
        if sec not in allowed_sections:
            raise ScenarioError(
                f"unknown section '[{sec}]' (allowed: "
                + ", ".join(sorted(allowed_sections)) + ")"
            )

    def apply_schema(sec_name, schema):
        values = {}
        raw_map = seen.get(sec_name, {})
        raw_lines = lines_of.get(sec_name, {})
        for key, value in raw_map.items():
            if key not in schema:
                raise ScenarioError(
                    f"line {raw_lines[key]}: unknown key '{key}' in [{sec_name}]"
                )
        for key, (target, default, constraint, validator) in schema.items():
            if key in raw_map:
                val = _coerce(raw_map[key], target, key, raw_lines[key])
            elif default is not None:
                val = default
            else:
                raise ScenarioError(f"[{sec_name}] is missing required key '{key}'")
            if validator is not None and not validator(val):
                lineno = raw_lines.get(key)
                where = f"line {lineno}: " if lineno else ""
                raise ScenarioError(f"{where}constraint violated for '{key}': {constraint}")
            values[key] = val
        return values

    params_values = apply_schema("params", _PARAMS_SCHEMA)
    output_values = apply_schema("output", _OUTPUT_SCHEMA)
    config = apply_schema(exp_section, _EXPERIMENT_SCHEMAS[experiment])

    try:
        params = ModelParams(**params_values)
    except InvalidParameterError as exc:
        raise ScenarioError(f"invalid [params]: {exc}") from exc

    return Scenario(
        name=name,
        experiment=experiment,
        params=params,
        config=config,
        output_dir=output_values["dir"],
        seed=output_values["seed"],
    )


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())
