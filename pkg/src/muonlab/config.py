"""
Declarative experiment configuration.

A config is a nested JSON object. Parsing is strict: unknown keys are
rejected with the offending dotted path, missing keys take defaults, and
``ExperimentConfig.to_dict()`` round-trips through :func:`config_from_dict`.
"""

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, InvalidInputError
from .optim import KINDS, Hyperparams

EXPERIMENTS = ("dynamics", "oscillation", "routing", "spurious-sweep", "oracle", "orthogonalize")
MODES = ("population", "sample")


@dataclass
class OptimizerConfig:
    kind: str = "gd"
    learning_rate: float = 1e-3
    momentum: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    ns_iterations: int = 5
    rank_cutoff: float = 1e-12
    svd_method: str = "jacobi"

    def hyperparams(self):
        d = dataclasses.asdict(self)
        d.pop("kind")
        return Hyperparams(**d)


@dataclass
class ModelConfig:
    d_in: int = 2
    hidden: int = 4
    d_out: int = 2


@dataclass
class DataConfig:
    spectrum: list = field(default_factory=lambda: [2.0, 1.0])
    init_scale: float = 1e-2
    init: str = "gaussian"          # gaussian | balanced | aligned
    noise: float = 0.0


@dataclass
class RoutingConfig:
    m: int = 7
    k: int = 2
    n_numbers: int = 4
    in_dim: int = 4
    hidden: int = 64
    out_dim: int = 7
    init_scale: float = 5e-5
    hidden_init_scale: float = 1e-4
    targets: list = None            # None -> built-in default targets
    loss_tol: float = 1e-5
    eval_every: int = 200


@dataclass
class OscillationConfig:
    learning_rates: list = field(default_factory=lambda: [1e-3, 3e-3, 1e-2, 3e-2])
    momentum: float = 0.9
    t_end: float = 5.0


@dataclass
class SpuriousConfig:
    core_strength: float = 1.0
    spurious_strengths: list = field(default_factory=lambda: [0.1, 0.3, 1.0, 3.0])
    noise_level: float = 1.0
    d_in: int = 6
    d_out: int = 2
    hidden: int = 8
    n_train: int = 4096
    n_eval: int = 4096
    init_scale: float = 1e-3
    optimizers: list = field(default_factory=lambda: ["momentum_gd", "spectral_gd", "muon", "adam"])
    seeds: list = field(default_factory=lambda: [0])
    eval_every: int = 10


@dataclass
class ExperimentConfig:
    experiment: str = "dynamics"
    seed: int = 0
    steps: int = 20000
    log_every: int = 10
    mode: str = "population"
    n_samples: int = 512
    out: str = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    routing: RoutingConfig = field(default_factory=RoutingConfig)
    oscillation: OscillationConfig = field(default_factory=OscillationConfig)
    spurious: SpuriousConfig = field(default_factory=SpuriousConfig)
    sweep: dict = field(default_factory=dict)   # dotted key -> list of values

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def fingerprint(self):
        """Hex digest identifying the resolved config (seed included, output dir excluded)."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# Experiment-specific defaults layered over the dataclass defaults.
_KIND_DEFAULTS = {
    "dynamics": {},
    "oscillation": {"mode": "sample", "log_every": 1, "data": {"noise": 0.5},
                    "optimizer": {"kind": "spectral_gd", "svd_method": "lapack"}},
    "routing": {"steps": 100000, "optimizer": {"kind": "momentum_gd", "learning_rate": 0.1,
                                               "momentum": 0.9, "svd_method": "lapack"}},
    "spurious-sweep": {"steps": 10000, "optimizer": {"svd_method": "lapack"}},
    "oracle": {},
    "orthogonalize": {},
}

# Routing defaults for orthogonalized updates, whose step size does not shrink with the gradient.
_ROUTING_OPT_DEFAULTS = {kind: {"learning_rate": 1e-3, "momentum": 0.0}
                         for kind in ("spectral_gd", "muon")}

_SECTIONS = {
    "optimizer": OptimizerConfig,
    "model": ModelConfig,
    "data": DataConfig,
    "routing": RoutingConfig,
    "oscillation": OscillationConfig,
    "spurious": SpuriousConfig,
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key != "sweep":
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _build(cls, raw, prefix):
    if not isinstance(raw, dict):
        raise ConfigError(prefix.rstrip("."), "expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(prefix + key, "unknown field")
    return cls(**raw)


def set_dotted(d, dotted, value):
    """Assign ``value`` at a dotted path inside nested dicts, creating levels as needed."""
    keys = dotted.split(".")
    cur = d
    for key in keys[:-1]:
        nxt = cur.get(key)
        if nxt is None:
            nxt = cur[key] = {}
        elif isinstance(nxt, str) and key == "optimizer":
            nxt = cur[key] = {"kind": nxt}
        elif not isinstance(nxt, dict):
            raise ConfigError(dotted, f"{key!r} is not a section")
        cur = nxt
    cur[keys[-1]] = value


def parse_override(text):
    """Split ``KEY=VALUE``; the value is decoded as JSON, falling back to a bare string."""
    if "=" not in text:
        raise ConfigError(text, "override must look like KEY=VALUE")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def config_from_dict(raw, overrides=()):
    """Resolve defaults, apply ``(dotted_key, value)`` overrides and validate."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    raw = copy.deepcopy(raw)
    if isinstance(raw.get("optimizer"), str):
        raw["optimizer"] = {"kind": raw["optimizer"]}
    for key, value in overrides:
        set_dotted(raw, key, value)
    kind = raw.get("experiment", "dynamics")
    if kind not in EXPERIMENTS:
        raw_kind = kind
        raise ConfigError("experiment", f"unknown experiment {raw_kind!r}; expected one of {EXPERIMENTS}")
    resolved = _merge(ExperimentConfig().to_dict(), _KIND_DEFAULTS[kind])
    opt_kind = (raw.get("optimizer") or {}).get("kind")
    if kind == "routing" and opt_kind in _ROUTING_OPT_DEFAULTS:
        resolved = _merge(resolved, {"optimizer": _ROUTING_OPT_DEFAULTS[opt_kind]})
    for key in raw:
        if key not in resolved:
            raise ConfigError(key, "unknown field")
    resolved = _merge(resolved, raw)
    top = {k: v for k, v in resolved.items() if k not in _SECTIONS}
    sections = {k: _build(cls, resolved[k], k + ".") for k, cls in _SECTIONS.items()}
    cfg = ExperimentConfig(**top, **sections)
    validate(cfg)
    return cfg


def _positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(name, "must be a positive integer")


def _number(value, name, lo=None, hi=None, lo_open=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, "must be a number")
    if lo is not None and (value < lo or (lo_open and value == lo)):
        raise ConfigError(name, f"must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and value > hi:
        raise ConfigError(name, f"must be <= {hi}")


def validate(cfg):
    """Semantic checks; each failure names the offending dotted field."""
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError("experiment", "unknown experiment kind")
    if isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    _positive_int(cfg.steps, "steps")
    _positive_int(cfg.log_every, "log_every")
    _positive_int(cfg.n_samples, "n_samples")
    if cfg.mode not in MODES:
        raise ConfigError("mode", f"must be one of {MODES}")
    if cfg.out is not None and not isinstance(cfg.out, str):
        raise ConfigError("out", "must be a string path")
    opt = cfg.optimizer
    if opt.kind not in KINDS:
        raise ConfigError("optimizer.kind", f"must be one of {KINDS}")
    try:
        opt.hyperparams()
    except (InvalidInputError, TypeError) as exc:
        raise ConfigError("optimizer", str(exc)) from None
    for name in ("d_in", "hidden", "d_out"):
        _positive_int(getattr(cfg.model, name), f"model.{name}")
    data = cfg.data
    if not isinstance(data.spectrum, list) or not data.spectrum:
        raise ConfigError("data.spectrum", "must be a non-empty list")
    for i, s in enumerate(data.spectrum):
        _number(s, f"data.spectrum[{i}]", lo=0)
    if any(b > a for a, b in zip(data.spectrum, data.spectrum[1:])):
        raise ConfigError("data.spectrum", "must be non-increasing")
    if len(data.spectrum) > min(cfg.model.d_in, cfg.model.d_out):
        raise ConfigError("data.spectrum", "longer than min(model.d_in, model.d_out)")
    _number(data.init_scale, "data.init_scale", lo=0, lo_open=True)
    _number(data.noise, "data.noise", lo=0)
    if data.init not in ("gaussian", "balanced", "aligned"):
        raise ConfigError("data.init", "must be gaussian, balanced or aligned")
    if data.init == "aligned" and cfg.model.hidden < len(data.spectrum):
        raise ConfigError("model.hidden", "aligned init needs hidden >= len(spectrum)")
    r = cfg.routing
    for name in ("m", "k", "n_numbers", "in_dim", "hidden", "out_dim", "eval_every"):
        _positive_int(getattr(r, name), f"routing.{name}")
    if r.k > r.m:
        raise ConfigError("routing.k", "must not exceed routing.m")
    if r.n_numbers > r.in_dim:
        raise ConfigError("routing.n_numbers", "must not exceed routing.in_dim")
    _number(r.init_scale, "routing.init_scale", lo=0, lo_open=True)
    _number(r.hidden_init_scale, "routing.hidden_init_scale", lo=0, lo_open=True)
    _number(r.loss_tol, "routing.loss_tol", lo=0)
    if r.targets is not None:
        if (not isinstance(r.targets, list) or len(r.targets) != r.n_numbers
                or any(not isinstance(row, list) or len(row) != r.out_dim for row in r.targets)):
            raise ConfigError("routing.targets", "must be n_numbers lists of length out_dim")
    o = cfg.oscillation
    if not isinstance(o.learning_rates, list) or not o.learning_rates:
        raise ConfigError("oscillation.learning_rates", "must be a non-empty list")
    for i, lr in enumerate(o.learning_rates):
        _number(lr, f"oscillation.learning_rates[{i}]", lo=0, lo_open=True)
    _number(o.momentum, "oscillation.momentum", lo=0, hi=0.999999)
    _number(o.t_end, "oscillation.t_end", lo=0, lo_open=True)
    sp = cfg.spurious
    _number(sp.core_strength, "spurious.core_strength", lo=0, lo_open=True)
    _number(sp.noise_level, "spurious.noise_level", lo=0)
    if not isinstance(sp.spurious_strengths, list) or not sp.spurious_strengths:
        raise ConfigError("spurious.spurious_strengths", "must be a non-empty list")
    for i, s in enumerate(sp.spurious_strengths):
        _number(s, f"spurious.spurious_strengths[{i}]", lo=0)
    for name in ("d_in", "d_out", "hidden", "n_train", "n_eval", "eval_every"):
        _positive_int(getattr(sp, name), f"spurious.{name}")
    if sp.d_out > sp.d_in - 1:
        raise ConfigError("spurious.d_out", "must be at most spurious.d_in - 1")
    _number(sp.init_scale, "spurious.init_scale", lo=0, lo_open=True)
    for i, kind in enumerate(sp.optimizers):
        if kind not in KINDS:
            raise ConfigError(f"spurious.optimizers[{i}]", f"must be one of {KINDS}")
    if not isinstance(sp.seeds, list) or not sp.seeds:
        raise ConfigError("spurious.seeds", "must be a non-empty list")
    if not isinstance(cfg.sweep, dict):
        raise ConfigError("sweep", "must map dotted keys to value lists")
    for key, values in cfg.sweep.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.{key}", "must be a non-empty list")


def load_config(path, overrides=()):
    """Read a JSON config file; syntax errors report line and column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_dict(raw, overrides)
