"""Declarative experiment configuration stored as INI files.

Sections
--------
``[experiment]``
    kind, methods, cycles, burn_in, quick_cycles, quick_burn_in, window,
    seed, delta, gamma, init_q, single_members, orders, static_switch,
    static_average, q_basis (``diagonal``, ``scalar`` or ``block:K``),
    estimate_q
``[truth]``
    model (``lorenz96`` or ``two_scale``), D, d, F, dt, variant, h, b, c,
    spinup
``[obs]``
    r_scale *or* r_climate_fraction, indices (``all``, ``odd`` or a list)
``[localization]``
    radius, radius_y
``[forecast]``
    leads, init_r, init_members
``[fidelity]``
    bandwidth, shift (model noise is ``noise_scale * (B - shift J)(B - shift J)^T``)
``[model.NAME]``
    model (``lorenz96``, ``two_scale`` or ``truth``), F, dt, members, map
    (``identity`` or ``x_projection``), noise_scale

Lists are comma separated; ``8x10`` repeats the value 8 ten times.
"""
import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional

from ..error_estimation import block_basis
from ..exceptions import ConfigParseError

ASSIMILATION_METHODS = ("single", "mme", "method1", "method2", "static")
FORECAST_METHODS = ("single", "mme", "method1", "method2", "recursive1", "recursive2")


@dataclass
class TruthSpec:
    model: str = "lorenz96"
    D: int = 40
    d: int = 0
    F: List[float] = field(default_factory=lambda: [8.0])
    dt: float = 0.05
    variant: str = "conventional"
    h: float = 1.0
    b: float = 10.0
    c: float = 10.0
    spinup: float = 1000.0


@dataclass
class ObsSpec:
    r_scale: Optional[float] = None
    r_climate_fraction: Optional[float] = None
    indices: str = "all"


@dataclass
class LocalizationConfig:
    radius: float = 4.0
    radius_y: float = 40.0


@dataclass
class ForecastSpec:
    leads: List[int] = field(default_factory=lambda: [1])
    init_r: float = 0.1
    init_members: int = 80


@dataclass
class FidelitySpec:
    bandwidth: int = 20
    shift: float = 0.4


@dataclass
class ModelSpec:
    name: str
    model: str = "lorenz96"
    F: Optional[List[float]] = None
    dt: Optional[float] = None
    members: int = 20
    map: str = "identity"
    noise_scale: float = 0.0


@dataclass
class ExperimentConfig:
    """Full description of a twin experiment.

    ``cycles``/``burn_in`` are the full-length counts; ``quick_cycles`` and
    ``quick_burn_in`` are the reduced counts used by ``--quick``.
    """

    name: str = "experiment"
    kind: str = "assimilation"
    methods: List[str] = field(default_factory=lambda: ["single", "mme", "method1"])
    cycles: int = 2000
    burn_in: int = 1500
    quick_cycles: Optional[int] = None
    quick_burn_in: Optional[int] = None
    window: float = 0.2
    seed: int = 0
    delta: float = 1e-3
    gamma: float = 1e-2
    init_q: float = 0.1
    single_members: str = "80"
    orders: List[str] = field(default_factory=list)
    static_switch: Optional[int] = None
    static_average: int = 100
    q_basis: str = "diagonal"
    estimate_q: bool = True
    truth: TruthSpec = field(default_factory=TruthSpec)
    obs: ObsSpec = field(default_factory=ObsSpec)
    localization: LocalizationConfig = field(default_factory=LocalizationConfig)
    forecast: Optional[ForecastSpec] = None
    fidelity: Optional[FidelitySpec] = None
    models: List[ModelSpec] = field(default_factory=list)

    def scaled(self, quick=False, seed=None):
        """Copy with the quick cycle counts and/or a different seed applied."""
        cfg = replace(self)
        if quick:
            if self.quick_cycles is None or self.quick_burn_in is None:
                raise ConfigParseError("config defines no quick_cycles/quick_burn_in", key="quick_cycles")
            cfg.cycles, cfg.burn_in = self.quick_cycles, self.quick_burn_in
        if seed is not None:
            cfg.seed = int(seed)
        cfg.validate()
        return cfg

    def validate(self):
        if self.kind not in ("assimilation", "forecast"):
            raise ConfigParseError(f"unknown experiment kind {self.kind!r}", key="kind")
        allowed = ASSIMILATION_METHODS if self.kind == "assimilation" else FORECAST_METHODS
        for m in self.methods:
            if m not in allowed:
                raise ConfigParseError(f"method {m!r} not valid for {self.kind}", key="methods")
        if not self.methods:
            raise ConfigParseError("methods must be nonempty", key="methods")
        if not 0 <= self.burn_in < self.cycles:
            raise ConfigParseError("need 0 <= burn_in < cycles", key="burn_in")
        if not self.window > 0:
            raise ConfigParseError("window must be positive", key="window")
        for key in ("delta", "gamma"):
            if not 0 < getattr(self, key) < 1:
                raise ConfigParseError(f"{key} must lie in (0, 1)", key=key)
        if not self.models:
            raise ConfigParseError("at least one [model.NAME] section is required", key="model")
        if (self.obs.r_scale is None) == (self.obs.r_climate_fraction is None):
            raise ConfigParseError("set exactly one of r_scale and r_climate_fraction", key="r_scale")
        if self.truth.model not in ("lorenz96", "two_scale"):
            raise ConfigParseError(f"unknown truth model {self.truth.model!r}", key="model")
        for spec in self.models:
            if spec.model not in ("lorenz96", "two_scale", "truth"):
                raise ConfigParseError(f"unknown model type {spec.model!r}", key=f"model.{spec.name}")
            if spec.map not in ("identity", "x_projection"):
                raise ConfigParseError(f"unknown map {spec.map!r}", key=f"model.{spec.name}.map")
            if spec.members < 2:
                raise ConfigParseError("members must be at least 2", key=f"model.{spec.name}.members")
        if self.kind == "forecast" and (self.forecast is None or not self.forecast.leads):
            raise ConfigParseError("forecast experiments need [forecast] leads", key="leads")
        if self.single_members != "own":
            try:
                if int(self.single_members) < 2:
                    raise ValueError
            except ValueError:
                raise ConfigParseError("single_members must be 'own' or an integer >= 2",
                                       key="single_members") from None
        try:
            q_basis_size(self.q_basis)
        except ValueError:
            raise ConfigParseError("q_basis must be 'diagonal', 'scalar' or 'block:K'", key="q_basis") from None
        M = len(self.models)
        for order in self.orders:
            if sorted(parse_order(order)) != list(range(M)):
                raise ConfigParseError(f"order {order!r} is not a permutation of 0..{M - 1}", key="orders")
        return self

    def q_basis_for(self, dim):
        """Basis list for the least-squares model-error path; ``None`` means diagonal."""
        size = q_basis_size(self.q_basis)
        if size == 1:
            return None
        return block_basis(dim, dim if size is None else size)

    @property
    def static_switch_cycle(self):
        return self.burn_in // 2 if self.static_switch is None else self.static_switch


def q_basis_size(text):
    """Block size for a ``q_basis`` value: 1 for diagonal, ``None`` for scalar."""
    text = text.strip().lower()
    if text == "diagonal":
        return 1
    if text == "scalar":
        return None
    kind, _, size = text.partition(":")
    if kind != "block" or not size.isdigit() or int(size) < 1:
        raise ValueError(text)
    return int(size)


def parse_order(text):
    return [int(ch) for ch in str(text).strip()]


def parse_list(text, kind=float):
    """Parse ``"8x10, 10x10"`` style lists."""
    out = []
    for item in str(text).split(","):
        item = item.strip()
        if not item:
            continue
        if "x" in item and kind is not str:
            value, count = item.split("x")
            out.extend([kind(value)] * int(count))
        else:
            out.append(kind(item))
    return out


def _format_list(values):
    return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in values)


_LIST_FIELDS = {"methods": str, "orders": str, "F": float, "leads": int}


def _coerce(cls, section, items, line_of):
    """Build dataclass ``cls`` from raw strings, rejecting unknown keys."""
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        if key not in known or key == "name" and cls is ModelSpec:
            raise ConfigParseError(
                f"unknown key {key!r} in [{section}] (line {line_of(section, key)})",
                key=key, line=line_of(section, key),
            )
        f = known[key]
        try:
            if key in _LIST_FIELDS:
                kwargs[key] = parse_list(raw, _LIST_FIELDS[key])
            else:
                kwargs[key] = _convert(f.type, raw)
        except (TypeError, ValueError) as exc:
            raise ConfigParseError(
                f"bad value for {key!r} in [{section}] (line {line_of(section, key)}): {exc}",
                key=key, line=line_of(section, key),
            ) from None
    return kwargs


def _convert(annotation, raw):
    text = str(annotation)
    if "int" in text and "Optional" in text or annotation is int:
        return int(raw)
    if "float" in text and "Optional" in text or annotation is float:
        return float(raw)
    if annotation is bool:
        value = raw.strip().lower()
        if value not in ("1", "true", "yes", "on", "0", "false", "no", "off"):
            raise ValueError(f"not a boolean: {raw!r}")
        return value in ("1", "true", "yes", "on")
    return raw.strip()


def _line_index(text):
    """Map (section, key) to its 1-based line number for error messages."""
    index, section = {}, None
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif section and ("=" in s or ":" in s) and not s.startswith(("#", ";")):
            key = s.split("=", 1)[0].split(":", 1)[0].strip()
            index[(section, key)] = n
    return lambda sec, key: index.get((sec, key))


REQUIRED = ("kind", "methods", "cycles", "burn_in", "window")


def loads_config(text, name="experiment"):
    """Parse configuration text; see :func:`load_config`."""
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str  # keys are case sensitive (D and d differ)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigParseError(f"malformed config: {exc}", line=getattr(exc, "lineno", None)) from None
    line_of = _line_index(text)
    if "experiment" not in parser:
        raise ConfigParseError("missing [experiment] section", key="experiment")
    for key in REQUIRED:
        if key not in parser["experiment"]:
            raise ConfigParseError(f"missing required key {key!r} in [experiment]", key=key)

    sections = {"truth": TruthSpec, "obs": ObsSpec, "localization": LocalizationConfig,
                "forecast": ForecastSpec, "fidelity": FidelitySpec}
    kwargs = _coerce(ExperimentConfig, "experiment", dict(parser["experiment"]), line_of)
    for key in ("truth", "obs", "localization", "forecast", "fidelity", "models"):
        if key in kwargs:
            raise ConfigParseError(f"{key!r} is a section, not a key", key=key)
    kwargs.setdefault("name", name)
    models = []
    for section in parser.sections():
        if section == "experiment":
            continue
        if section in sections:
            kwargs[section] = sections[section](**_coerce(sections[section], section,
                                                          dict(parser[section]), line_of))
        elif section.startswith("model."):
            model_name = section[len("model."):]
            models.append(ModelSpec(name=model_name,
                                    **_coerce(ModelSpec, section, dict(parser[section]), line_of)))
        else:
            raise ConfigParseError(f"unknown section [{section}]", key=section)
    kwargs["models"] = models
    return ExperimentConfig(**kwargs).validate()


def load_config(path):
    """Read and validate an INI experiment configuration.

    Raises
    ------
    ConfigParseError
        On malformed syntax, missing required keys or unknown keys; the
        exception carries ``key`` and, where known, ``line``.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParseError(f"cannot read config {path}: {exc}") from None
    return loads_config(text, name=path.stem)


def _section_items(obj, skip=()):
    items = {}
    for key, value in asdict(obj).items():
        if key in skip or value is None:
            continue
        if isinstance(value, list):
            if not value and key != "orders":
                continue
            if key == "orders" and not value:
                continue
            items[key] = _format_list(value)
        else:
            items[key] = repr(value) if isinstance(value, float) else str(value)
    return items


def dumps_config(cfg):
    """Serialize a configuration back to INI text."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["experiment"] = _section_items(
        cfg, skip=("truth", "obs", "localization", "forecast", "fidelity", "models"))
    for key in ("truth", "obs", "localization", "forecast", "fidelity"):
        value = getattr(cfg, key)
        if value is not None:
            parser[key] = _section_items(value)
    for spec in cfg.models:
        parser[f"model.{spec.name}"] = _section_items(spec, skip=("name",))
    from io import StringIO

    buf = StringIO()
    parser.write(buf)
    return buf.getvalue()


def dump_config(cfg, path):
    Path(path).write_text(dumps_config(cfg), encoding="utf-8")


BUILTIN_DIR = Path(__file__).resolve().parent.parent / "configs"


def builtin_configs():
    return sorted(p.stem for p in BUILTIN_DIR.glob("*.ini"))


def resolve_config(name_or_path):
    """Load a config from a path, or by name from the shipped configs."""
    path = Path(name_or_path)
    if path.exists():
        return load_config(path)
    builtin = BUILTIN_DIR / f"{name_or_path}.ini"
    if builtin.exists():
        return load_config(builtin)
    raise ConfigParseError(
        f"no config file {name_or_path!r}; shipped configs: {', '.join(builtin_configs())}"
    )
