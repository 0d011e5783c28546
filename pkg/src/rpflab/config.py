"""Sectioned key=value experiment configuration.

The command-line harness is driven by a small line-oriented text format::

    # full-line comments start with '#'
    [model]
    variant = transfer
    slopes = 2 2
    cos = 1.0; 0.6

    [experiment]
    seed = 7
    n_grid = 50 100 200 400

Three sections exist — ``model`` (environment law, maps or kernels, and
observables), ``numeric`` (grids, solver depth and tolerances), and
``experiment`` (seed, windows, length grids, budgets).  Every field has a
default, so the empty text is a complete configuration; unknown sections
or keys are errors that list the offending names rather than being
ignored.  Symbol paths are never serialized — they are regenerated from
the seed, so a configuration file fully determines an experiment.

Value syntax per field kind:

* scalars: ``42``, ``1e-10``, ``true``/``false``;
* complex numbers: ``0.05i``, ``0.1+0.1i`` (``j`` is accepted for ``i``);
* flat lists: whitespace-separated, ``50 100 200``;
* per-symbol lists (observable coefficients, kernel kinds, transition
  rows): groups separated by ``;``, entries by whitespace, e.g.
  ``cos = 1.0; 0.6`` or ``kernels = flat; vonmises 1.0 0.0``;
* optional fields accept a blank value meaning "automatic".

:func:`effective_text` renders the post-default configuration in a
canonical form that re-parses to the same values; the harness echoes it
into every output file header so results are reproducible from their own
artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (LinearObservable, MapFamily, ObservablePair,
                       StepObservable, TrigPoly, center_observable)
from .env import EnvModel, EnvPath, sample_path
from .errors import ConfigError
from .operators import KernelFamily, OperatorSpec

__all__ = [
    "ExperimentConfig",
    "parse_config",
    "default_config",
    "effective_text",
    "build_env_model",
    "build_operator_spec",
    "build_path",
]


# --------------------------------------------------------------------------
# field kinds: parse (str -> value) and show (value -> canonical str)
# --------------------------------------------------------------------------

def _parse_bool(raw: str):
    low = raw.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"expected a boolean (true/false), got {raw!r}")


def _parse_int(raw: str):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw!r}") from None


def _parse_float(raw: str):
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"expected a number, got {raw!r}") from None
    if not np.isfinite(value):
        raise ConfigError(f"expected a finite number, got {raw!r}")
    return value


def _parse_complex(raw: str):
    try:
        value = complex(raw.replace("i", "j"))
    except ValueError:
        raise ConfigError(f"expected a complex number, got {raw!r}") from None
    if not np.isfinite(value.real) or not np.isfinite(value.imag):
        raise ConfigError(f"expected a finite complex number, got {raw!r}")
    return value


def _show_float(value) -> str:
    return repr(float(value))


def _show_complex(value) -> str:
    z = complex(value)
    if z.imag == 0.0:
        return repr(z.real)
    imag = f"{repr(abs(z.imag))}i"
    if z.real == 0.0:
        return imag if z.imag > 0 else "-" + imag
    sign = "+" if z.imag > 0 else "-"
    return f"{repr(z.real)}{sign}{imag}"


def _split_entries(raw: str):
    return raw.replace(",", " ").split()


class _Kind:
    """One field kind: parser, canonical serializer, optionality."""

    def __init__(self, parse, show, optional: bool = False):
        self.parse = parse
        self.show = show
        self.optional = optional

    def read(self, raw: str, where: str):
        raw = raw.strip()
        if raw == "":
            if self.optional:
                return None
            raise ConfigError(f"{where}: blank value is not allowed")
        try:
            return self.parse(raw)
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from None

    def write(self, value) -> str:
        if value is None:
            return ""
        return self.show(value)


def _scalar(parse, show, optional=False) -> _Kind:
    return _Kind(parse, show, optional)


def _list_kind(parse_entry, show_entry, optional=False) -> _Kind:
    def parse(raw):
        entries = _split_entries(raw)
        if not entries:
            raise ConfigError("expected at least one entry")
        return tuple(parse_entry(e) for e in entries)

    def show(value):
        return " ".join(show_entry(v) for v in value)

    return _Kind(parse, show, optional)


def _groups_kind(parse_entry, show_entry, optional=False) -> _Kind:
    """Groups separated by ';', entries by whitespace: per-symbol lists."""

    def parse(raw):
        groups = []
        for chunk in raw.split(";"):
            groups.append(tuple(parse_entry(e) for e in _split_entries(chunk)))
        return tuple(groups)

    def show(value):
        return "; ".join(" ".join(show_entry(v) for v in group)
                         for group in value)

    return _Kind(parse, show, optional)


def _choice_kind(*choices: str) -> _Kind:
    def parse(raw):
        if raw not in choices:
            raise ConfigError(f"must be one of {choices}, got {raw!r}")
        return raw

    return _Kind(parse, str)


def _kernel_kinds() -> _Kind:
    """Kernel kind groups: a name token followed by numeric parameters."""

    def parse(raw):
        kinds = []
        for chunk in raw.split(";"):
            tokens = _split_entries(chunk)
            if not tokens:
                raise ConfigError("empty kernel kind")
            kinds.append((tokens[0],) + tuple(_parse_float(t)
                                              for t in tokens[1:]))
        return tuple(kinds)

    def show(value):
        return "; ".join(" ".join([k[0]] + [_show_float(v) for v in k[1:]])
                         for k in value)

    return _Kind(parse, show)


_BOOL = _scalar(_parse_bool, lambda v: "true" if v else "false")
_INT = _scalar(_parse_int, str)
_OPT_INT = _scalar(_parse_int, str, optional=True)
_FLOAT = _scalar(_parse_float, _show_float)
_OPT_FLOAT = _scalar(_parse_float, _show_float, optional=True)
_INTS = _list_kind(_parse_int, str)
_FLOATS = _list_kind(_parse_float, _show_float)
_OPT_FLOATS = _list_kind(_parse_float, _show_float, optional=True)
_COMPLEXES = _list_kind(_parse_complex, _show_complex)
_FLOAT_GROUPS = _groups_kind(_parse_float, _show_float)
_OPT_FLOAT_GROUPS = _groups_kind(_parse_float, _show_float, optional=True)


# --------------------------------------------------------------------------
# schema: section -> key -> (kind, default)
# --------------------------------------------------------------------------

_SCHEMA: dict = {
    "model": {
        "variant": (_choice_kind("transfer", "markov"), "transfer"),
        "law": (_choice_kind("iid", "markov"), "iid"),
        "probs": (_OPT_FLOATS, None),
        "transition": (_OPT_FLOAT_GROUPS, None),
        "slopes": (_INTS, (2,)),
        "kernels": (_kernel_kinds(), (("flat",),)),
        "doeblin_alpha": (_FLOAT, 0.2),
        "observable": (_choice_kind("trig", "linear", "step"), "trig"),
        "const": (_OPT_FLOATS, None),
        "cos": (_FLOAT_GROUPS, ((1.0,),)),
        "sin": (_OPT_FLOAT_GROUPS, None),
        "slope": (_FLOAT, 1.0),
        "intercept": (_FLOAT, -0.5),
        "step_values": (_FLOATS, (-0.5, 0.5)),
        "center": (_BOOL, False),
        "rule": (_choice_kind("trig", "linear"), "trig"),
    },
    "numeric": {
        "grid_size": (_INT, 256),
        "quad_size": (_INT, 64),
        "depth": (_OPT_INT, None),
        "tol": (_FLOAT, 1e-10),
        "radius": (_FLOAT, 0.05),
        "points": (_INT, 64),
        "jet_order": (_INT, 4),
        "min_gap": (_FLOAT, 0.05),
        "s_points": (_INT, 1201),
        "t_max": (_OPT_FLOAT, None),
        "t_nodes": (_OPT_INT, None),
    },
    "experiment": {
        "seed": (_INT, 0),
        "n_past": (_INT, 500),
        "n_future": (_INT, 500),
        "n_grid": (_INTS, (50, 100, 200, 400)),
        "k_list": (_INTS, (2, 3, 4)),
        "d": (_INT, 1),
        "z_list": (_COMPLEXES, (0j, 0.05 + 0j, 0.05j,
                                0.07071067811865475 + 0.07071067811865475j)),
        "mc_samples": (_INT, 0),
        "paths": (_INT, 4),
        "gamma_limit": (_OPT_FLOAT, None),
        "sigma2": (_OPT_FLOAT, None),
        "frequencies": (_FLOATS, (0.5, 1.0, 2.0, 4.0,
                                  6.283185307179586, 8.0)),
        "lengths": (_INTS, (25, 50, 100, 200)),
        "residual_tol": (_FLOAT, 1e-8),
        "decay_threshold": (_FLOAT, 0.9),
        "slope_gate": (_FLOAT, -0.35),
    },
}


@dataclass
class ExperimentConfig:
    """Parsed, fully-defaulted configuration for one harness run."""

    model: dict = field(default_factory=dict)
    numeric: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        if name not in _SCHEMA:
            raise ConfigError(f"unknown section {name!r}")
        return getattr(self, name)

    def get(self, section: str, key: str):
        table = self.section(section)
        if key not in _SCHEMA[section]:
            raise ConfigError(f"unknown key {section}.{key}")
        return table[key]


def default_config() -> ExperimentConfig:
    """The all-defaults configuration (the empty text parses to this)."""
    cfg = ExperimentConfig()
    for section, keys in _SCHEMA.items():
        table = cfg.section(section)
        for key, (_, default) in keys.items():
            table[key] = default
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    """Parse sectioned key=value text into a fully-defaulted configuration.

    Unknown sections or keys are collected and reported together; blank
    lines and full-line ``#`` comments are ignored; a key may appear at
    most once per section.
    """
    cfg = default_config()
    section = None
    seen: set = set()
    unknown: list = []
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                unknown.append(f"section [{section}] (line {lineno})")
                section = "__unknown__"
            continue
        if "=" not in line:
            raise ConfigError(
                f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        if section is None:
            raise ConfigError(
                f"line {lineno}: key {key!r} appears before any [section]")
        if section == "__unknown__":
            continue
        if key not in _SCHEMA[section]:
            unknown.append(f"key {section}.{key} (line {lineno})")
            continue
        if (section, key) in seen:
            raise ConfigError(
                f"line {lineno}: duplicate key {section}.{key}")
        seen.add((section, key))
        kind = _SCHEMA[section][key][0]
        cfg.section(section)[key] = kind.read(raw_value, f"{section}.{key}")
    if unknown:
        raise ConfigError("unknown configuration names: "
                          + "; ".join(unknown))
    return cfg


def effective_text(cfg: ExperimentConfig) -> str:
    """Canonical text of the post-default configuration.

    Every field appears, in schema order, serialized so the text re-parses
    to an identical configuration; this is what output file headers echo.
    """
    lines = []
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (kind, _) in keys.items():
            lines.append(f"{key} = {kind.write(cfg.section(section)[key])}")
        lines.append("")
    return "\n".join(lines[:-1]) + "\n"


# --------------------------------------------------------------------------
# constructing model objects from a configuration
# --------------------------------------------------------------------------

def _alphabet_size(cfg: ExperimentConfig) -> int:
    if cfg.get("model", "variant") == "transfer":
        return len(cfg.get("model", "slopes"))
    return len(cfg.get("model", "kernels"))


def build_env_model(cfg: ExperimentConfig) -> EnvModel:
    """The symbol-process law described by the ``[model]`` section."""
    size = _alphabet_size(cfg)
    law = cfg.get("model", "law")
    probs = cfg.get("model", "probs")
    transition = cfg.get("model", "transition")
    if law == "iid":
        return EnvModel(size, law="iid", probs=probs)
    matrix = None if transition is None else np.array(transition, dtype=float)
    return EnvModel(size, law="markov", transition=matrix)


def _per_symbol_groups(groups, size: int, what: str):
    if groups is None:
        return [()] * size
    if len(groups) != size:
        raise ConfigError(
            f"{what} has {len(groups)} group(s) but the model has {size} "
            f"symbol(s); separate per-symbol groups with ';'")
    return list(groups)


def _build_observables(cfg: ExperimentConfig, size: int):
    kind = cfg.get("model", "observable")
    if kind == "trig":
        cos = _per_symbol_groups(cfg.get("model", "cos"), size, "model.cos")
        sin = _per_symbol_groups(cfg.get("model", "sin"), size, "model.sin")
        const = cfg.get("model", "const")
        if const is None:
            const = (0.0,) * size
        elif len(const) != size:
            raise ConfigError(
                f"model.const has {len(const)} entries but the model has "
                f"{size} symbol(s)")
        return [TrigPoly(const=const[s], cos=cos[s], sin=sin[s])
                for s in range(size)]
    if kind == "linear":
        obs = LinearObservable(cfg.get("model", "slope"),
                               cfg.get("model", "intercept"))
        return [obs for _ in range(size)]
    obs = StepObservable(cfg.get("model", "step_values"))
    return [obs for _ in range(size)]


def build_operator_spec(cfg: ExperimentConfig) -> OperatorSpec:
    """The operator cocycle described by ``[model]`` and ``[numeric]``.

    With ``center = true`` the ensemble-averaged Gibbs mean (Lebesgue for
    the plain geometric potential and for the supported kernels) is
    subtracted from every observable before the spec is built.
    """
    size = _alphabet_size(cfg)
    field_obj = ObservablePair(_build_observables(cfg, size))
    model = build_env_model(cfg)
    if cfg.get("model", "variant") == "transfer":
        family = MapFamily(cfg.get("model", "slopes"))
        if cfg.get("model", "center"):
            field_obj = center_observable(family, field_obj, None, model)
        return OperatorSpec.transfer(family, field_obj,
                                     grid_size=cfg.get("numeric", "grid_size"),
                                     rule=cfg.get("model", "rule"))
    if cfg.get("model", "center"):
        weights = np.asarray(model.stationary, dtype=float)
        mean = float(weights @ [obs.lebesgue_mean for obs in field_obj.u])
        field_obj = field_obj.with_u(tuple(obs.shifted(-mean)
                                           for obs in field_obj.u))
    kernels = KernelFamily(cfg.get("model", "kernels"),
                           doeblin_alpha=cfg.get("model", "doeblin_alpha"),
                           quad_size=cfg.get("numeric", "quad_size"))
    return OperatorSpec.markov(kernels, field_obj)


def build_path(cfg: ExperimentConfig, seed: int | None = None) -> EnvPath:
    """Sample the symbol path for this run (``seed`` overrides the config)."""
    effective_seed = cfg.get("experiment", "seed") if seed is None else seed
    return sample_path(build_env_model(cfg), seed=effective_seed,
                       n_past=cfg.get("experiment", "n_past"),
                       n_future=cfg.get("experiment", "n_future"))
