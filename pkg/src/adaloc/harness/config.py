"""Experiment configuration: TOML files mapped onto frozen dataclasses.

Unknown sections and keys are rejected; every error names the offending
line of the file when it can be located.
"""

from __future__ import annotations

import dataclasses
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from adaloc.adaptive import GammaPrior, OptimizerSettings, PriorError
from adaloc.localization import DIFFERENTIABLE_KINDS, LOC_FUNCTIONS, MEAN_KINDS, GroupMapping

MODEL_KINDS = ("lorenz96", "mlorenz96", "qg")
MODES = ("constant", "adaptive", "oracle", "free")

# 0-based indices of the thirty observed Lorenz'96 components (every second one up to 20, then all)
SPARSE30 = tuple(range(1, 19, 2)) + tuple(range(19, 40))

MODEL_DEFAULTS = {
    "lorenz96": {"n": 40, "F": 8.0, "dt": 0.01},
    "mlorenz96": {"n": 40, "base": 8.0, "amplitude": 4.0, "omega": 2.0 * math.pi, "q": 4, "dt": 0.01},
    "qg": {"grid": 33, "F": 1600.0, "eps": 1e-5, "A": 2e-11, "dt": 1.0,
           "spinup_time": 10000.0, "climatology_time": 2000.0, "climatology_stride": 10.0},
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip() if where else message)


@dataclass(frozen=True)
class ModelSection:
    kind: str = "lorenz96"
    params: dict = field(default_factory=dict)

    def get(self, key):
        return self.params.get(key, MODEL_DEFAULTS[self.kind][key])

    def resolved(self) -> dict:
        out = dict(MODEL_DEFAULTS[self.kind])
        out.update(self.params)
        return out

    @property
    def n(self) -> int:
        if self.kind == "qg":
            return int(self.get("grid")) ** 2
        return int(self.get("n"))


@dataclass(frozen=True)
class ObservationSection:
    pattern: str = "all"  # all | sparse30 | indices | stride | lattice
    indices: tuple = ()
    stride: int = 2
    offset: int = 0
    variance: float = 1.0


@dataclass(frozen=True)
class FilterSection:
    ensemble_size: int = 10
    inflation: float = 1.02
    cycles: int = 1100
    spinup: int = 100
    window: float = 0.05
    initial_spread: float | None = None
    divergence_factor: float = 10.0


@dataclass(frozen=True)
class LocalizationSection:
    mode: str = "constant"
    function: str = "gauss"
    mean: str = "mean"
    groups: str = "univariate"  # univariate | modulo | blocks
    g: int = 1
    radius: tuple = (4.0,)
    prior_mean: tuple = (4.0,)
    prior_var: tuple = (1.0,)
    K: int = 0
    warm_start_cycles: int = 0

    @property
    def n_groups(self) -> int:
        return 1 if self.groups == "univariate" else self.g


@dataclass(frozen=True)
class OracleSection:
    mode: str = "univariate"
    grid: tuple | None = None
    sweeps: int = 2


@dataclass(frozen=True)
class SweepSection:
    inflation: tuple = ()
    radius: tuple = ()
    prior_mean: tuple = ()
    prior_mean_offset: tuple = ()
    prior_var: tuple = ()
    seed_policy: str = "indexed"  # indexed: base seed + point index; shared: base seed for every point


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    model: ModelSection = field(default_factory=ModelSection)
    observations: ObservationSection = field(default_factory=ObservationSection)
    filter: FilterSection = field(default_factory=FilterSection)
    localization: LocalizationSection = field(default_factory=LocalizationSection)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    oracle: OracleSection = field(default_factory=OracleSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def __post_init__(self):
        validate(self)

    # -- derived objects --------------------------------------------------------
    def observed_indices(self) -> np.ndarray:
        return observed_indices(self)

    def group_mapping(self) -> GroupMapping:
        loc = self.localization
        n = self.model.n
        if loc.groups == "univariate":
            return GroupMapping.univariate(n)
        if loc.groups == "modulo":
            return GroupMapping.modulo(n, loc.g)
        return GroupMapping.blocks(n, loc.g)

    def prior(self) -> GammaPrior:
        g = self.localization.n_groups
        return GammaPrior(_expand(self.localization.prior_mean, g), _expand(self.localization.prior_var, g))

    def radii(self) -> np.ndarray:
        return _expand(self.localization.radius, self.localization.n_groups)

    @property
    def obs_std(self) -> float:
        return math.sqrt(self.observations.variance)

    # -- modified copies ----------------------------------------------------------
    def replace(self, **sections) -> "ExperimentConfig":
        return dataclasses.replace(self, **sections)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return self.replace(seed=int(seed))

    def with_mode(self, mode: str) -> "ExperimentConfig":
        return self.replace(localization=dataclasses.replace(self.localization, mode=mode))

    def with_oracle(self, spec) -> "ExperimentConfig":
        return self.replace(oracle=OracleSection(spec.mode, tuple(spec.grid), spec.sweeps))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = {"kind": self.model.kind, **self.model.resolved()}
        return _jsonable(d)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _expand(values, g: int) -> np.ndarray:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 1:
        return np.full(g, v[0])
    if v.size != g:
        raise ConfigError(f"expected 1 or {g} values, got {v.size}")
    return v


def observed_indices(cfg: ExperimentConfig) -> np.ndarray:
    o = cfg.observations
    n = cfg.model.n
    if o.pattern == "all":
        return np.arange(n)
    if o.pattern == "sparse30":
        if n != 40:
            raise ConfigError("the sparse30 observation pattern needs n = 40")
        return np.array(SPARSE30)
    if o.pattern == "indices":
        return np.array(o.indices, dtype=np.int64)
    if o.pattern == "stride":
        return np.arange(o.offset, n, o.stride)
    # lattice: regular sub-lattice of the QG grid
    G = int(cfg.model.get("grid"))
    ticks = np.arange(o.offset, G, o.stride)
    iy, ix = np.meshgrid(ticks, ticks, indexing="ij")
    return (iy * G + ix).ravel()


# ---------------------------------------------------------------------------
# validation

def validate(cfg: ExperimentConfig):
    m = cfg.model
    if m.kind not in MODEL_KINDS:
        raise ConfigError(f"model.kind must be one of {MODEL_KINDS}, got {m.kind!r}")
    unknown = set(m.params) - set(MODEL_DEFAULTS[m.kind])
    if unknown:
        raise ConfigError(f"unknown model parameter(s) for {m.kind}: {sorted(unknown)}")
    if m.kind in ("lorenz96", "mlorenz96") and m.n < 4:
        raise ConfigError("Lorenz'96 needs n >= 4")
    if m.kind == "mlorenz96" and m.n % int(m.get("q")):
        raise ConfigError("mlorenz96: q must divide n")
    if m.kind == "qg" and int(m.get("grid")) < 8:
        raise ConfigError("qg: grid must be at least 8")

    f = cfg.filter
    if f.ensemble_size < 2:
        raise ConfigError("filter.ensemble_size must be >= 2")
    if not f.inflation >= 1.0:
        raise ConfigError("filter.inflation must be >= 1")
    if f.cycles < 1 or not 0 <= f.spinup < f.cycles:
        raise ConfigError("need 0 <= filter.spinup < filter.cycles")
    if not f.window > 0:
        raise ConfigError("filter.window must be positive")
    if f.initial_spread is not None and not f.initial_spread > 0:
        raise ConfigError("filter.initial_spread must be positive")
    if not f.divergence_factor > 0:
        raise ConfigError("filter.divergence_factor must be positive")

    o = cfg.observations
    if o.pattern not in ("all", "sparse30", "indices", "stride", "lattice"):
        raise ConfigError(f"unknown observations.pattern {o.pattern!r}")
    if o.pattern == "lattice" and m.kind != "qg":
        raise ConfigError("observations.pattern = 'lattice' is only meaningful for the qg model")
    if o.stride < 1 or o.offset < 0:
        raise ConfigError("observations.stride must be >= 1 and offset >= 0")
    if not o.variance >= 0:
        raise ConfigError("observations.variance must be non-negative")
    idx = observed_indices(cfg)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= m.n or np.unique(idx).size != idx.size:
        raise ConfigError("observed indices must be distinct and lie in [0, n)")

    loc = cfg.localization
    if loc.mode not in MODES:
        raise ConfigError(f"localization.mode must be one of {MODES}, got {loc.mode!r}")
    if loc.function not in LOC_FUNCTIONS:
        raise ConfigError(f"localization.function must be one of {LOC_FUNCTIONS}")
    if loc.mean not in MEAN_KINDS:
        raise ConfigError(f"localization.mean must be one of {MEAN_KINDS}")
    if loc.mode == "adaptive" and loc.mean not in DIFFERENTIABLE_KINDS:
        raise ConfigError(f"localization.mean: adaptive localization needs a differentiable mean function {DIFFERENTIABLE_KINDS}")
    if loc.groups not in ("univariate", "modulo", "blocks"):
        raise ConfigError("localization.groups must be univariate, modulo or blocks")
    if loc.groups != "univariate" and not 1 <= loc.g <= m.n:
        raise ConfigError("localization.g must lie in [1, n]")
    if loc.K < 0:
        raise ConfigError("localization.K must be >= 0")
    if loc.warm_start_cycles < 0:
        raise ConfigError("localization.warm_start_cycles must be >= 0")
    g = loc.n_groups
    for key in ("radius", "prior_mean", "prior_var"):
        vals = getattr(loc, key)
        if len(vals) not in (1, g):
            raise ConfigError(f"localization.{key} needs 1 or {g} values")
        if not all(v > 0 for v in vals):
            raise ConfigError(f"localization.{key} must be positive")
    try:
        GammaPrior(_expand(loc.prior_mean, g), _expand(loc.prior_var, g))
    except PriorError as exc:
        raise ConfigError(f"localization.prior_var: {exc}") from None
    if loc.mode == "free" and loc.K:
        raise ConfigError("free runs do not use K")

    oc = cfg.oracle
    if oc.mode not in ("univariate", "multivariate"):
        raise ConfigError("oracle.mode must be univariate or multivariate")
    if oc.grid is not None:
        gr = np.asarray(oc.grid, dtype=float)
        if gr.size == 0 or np.any(gr <= 0) or np.any(np.diff(gr) <= 0):
            raise ConfigError("oracle.grid must be nonempty, positive and ascending")
    if oc.sweeps < 1:
        raise ConfigError("oracle.sweeps must be >= 1")

    s = cfg.sweep
    if s.seed_policy not in ("indexed", "shared"):
        raise ConfigError("sweep.seed_policy must be indexed or shared")
    for key in ("inflation", "radius", "prior_mean", "prior_var"):
        if any(not v > 0 for v in getattr(s, key)):
            raise ConfigError(f"sweep.{key} values must be positive")
    if any(v < 1 for v in s.inflation):
        raise ConfigError("sweep.inflation values must be >= 1")
    if s.prior_mean and s.prior_mean_offset:
        raise ConfigError("give either sweep.prior_mean or sweep.prior_mean_offset, not both")


# ---------------------------------------------------------------------------
# parsing

_SECTION_TYPES = {
    "observations": ObservationSection,
    "filter": FilterSection,
    "localization": LocalizationSection,
    "optimizer": OptimizerSettings,
    "oracle": OracleSection,
    "sweep": SweepSection,
}
_TOP_KEYS = {"name", "seed"}
_TUPLE_FIELDS = {
    ("observations", "indices"), ("localization", "radius"), ("localization", "prior_mean"),
    ("localization", "prior_var"), ("oracle", "grid"),
    ("sweep", "inflation"), ("sweep", "radius"), ("sweep", "prior_mean"),
    ("sweep", "prior_mean_offset"), ("sweep", "prior_var"),
}


def _locate(text: str, section: str | None, key: str | None) -> int | None:
    """Best-effort line number of ``key`` inside ``[section]`` (or of the section header)."""
    if text is None:
        return None
    current = None
    header_line = None
    key_re = re.compile(r"^\s*[\"']?" + re.escape(key) + r"[\"']?\s*=") if key else None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        hm = re.match(r"^\[\s*([^\]]+?)\s*\]", line)
        if hm:
            current = hm.group(1)
            if current == section:
                header_line = no
                if key is None:
                    return no
            continue
        if key_re is not None and current == section and key_re.match(raw):
            return no
    return header_line


def _coerce(section: str, key: str, value, ftype, text, path):
    line = _locate(text, section, key)
    if (section, key) in _TUPLE_FIELDS:
        vals = value if isinstance(value, list) else [value]
        for v in vals:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{section}.{key} must be a number or a list of numbers", line, path)
        if key == "indices":
            if any(float(v) != int(v) for v in vals):
                raise ConfigError("observation indices must be integers", line, path)
            return tuple(int(v) for v in vals)
        return tuple(float(v) for v in vals)
    default = ftype
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{key} must be true or false", line, path)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{section}.{key} must be an integer", line, path)
        return value
    if isinstance(default, float) or default is None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{key} must be a number", line, path)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{section}.{key} must be a string", line, path)
        return value
    return value


def from_dict(data: dict, text: str | None = None, path=None) -> ExperimentConfig:
    """Build a validated config from parsed TOML (``text`` is used only for line numbers)."""
    kwargs = {}
    for key, value in data.items():
        if isinstance(value, dict):
            continue
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown top-level key {key!r}", _locate(text, None, key), path)
        if key == "seed":
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise ConfigError("seed must be a non-negative integer", _locate(text, None, key), path)
        elif not isinstance(value, str):
            raise ConfigError("name must be a string", _locate(text, None, key), path)
        kwargs[key] = value
    for section, body in data.items():
        if not isinstance(body, dict):
            continue
        if section == "model":
            body = dict(body)
            kind = body.pop("kind", "lorenz96")
            if kind not in MODEL_KINDS:
                raise ConfigError(f"model.kind must be one of {MODEL_KINDS}", _locate(text, "model", "kind"), path)
            params = {}
            for k, v in body.items():
                if k not in MODEL_DEFAULTS[kind]:
                    raise ConfigError(f"unknown key {k!r} in [model] for kind {kind!r}",
                                      _locate(text, "model", k), path)
                d = MODEL_DEFAULTS[kind][k]
                params[k] = _coerce("model", k, v, d, text, path)
            kwargs["model"] = ModelSection(kind, params)
            continue
        cls = _SECTION_TYPES.get(section)
        if cls is None:
            raise ConfigError(f"unknown section [{section}]", _locate(text, section, None), path)
        defaults = {f.name: f.default for f in dataclasses.fields(cls)}
        fields = {}
        for k, v in body.items():
            if k not in defaults:
                raise ConfigError(f"unknown key {k!r} in [{section}]", _locate(text, section, k), path)
            if isinstance(v, dict):
                raise ConfigError(f"[{section}].{k} cannot be a table", _locate(text, section, k), path)
            fields[k] = _coerce(section, k, v, defaults[k], text, path)
        try:
            kwargs[section] = cls(**fields)
        except ValueError as exc:
            raise ConfigError(f"[{section}]: {exc}", _locate(text, section, None), path) from None
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError as exc:
        if exc.line is None:
            line = _line_for_message(text, str(exc))
            raise ConfigError(str(exc), line, path) from None
        raise


def _line_for_message(text, message):
    m = re.search(r"\b(model|observations|filter|localization|optimizer|oracle|sweep)\.(\w+)", message)
    if m is None:
        return None
    return _locate(text, m.group(1), m.group(2))


def loads(text: str, path=None) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = None
        m = re.search(r"line (\d+)", str(exc))
        if m:
            line = int(m.group(1))
        raise ConfigError(f"TOML syntax error: {exc}", line, path) from None
    return from_dict(data, text, path)


def load(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", None, p) from None
    return loads(text, p)


def bundled_config_path(name: str) -> Path:
    here = Path(__file__).resolve().parent.parent / "configs"
    p = here / (name if name.endswith(".toml") else f"{name}.toml")
    if not p.exists():
        raise ConfigError(f"no bundled config named {name!r}")
    return p


def bundled_configs() -> list[str]:
    here = Path(__file__).resolve().parent.parent / "configs"
    return sorted(p.stem for p in here.glob("*.toml"))
