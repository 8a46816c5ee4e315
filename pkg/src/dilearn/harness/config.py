"""Experiment configuration: ``key = value`` text with ``[section]`` headers.

Sections::

    [experiment]     name, methods, seeds, buffer_capacities, output_dir, workers, log_flush_every
    [benchmark]      kind = synthetic | manifest, plus generator or manifest keys
    [training]       defaults shared by every method
    [method.<label>] per-method overrides; ``method`` picks the algorithm

Labels listed in ``methods`` without a section of their own name an
algorithm directly (``methods = drift, naive, joint``).
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, fields, replace

from ..datagen import SPLIT_TYPES, DomainShift, SyntheticConfig
from ..exceptions import ConfigError
from ..model import LossConfig
from ..trainer import METHODS, MethodConfig, parse_snapshot_policy


@dataclass(frozen=True)
class ManifestBenchmark:
    manifest: str
    features: str
    split_type: str = "scenes"
    test_ratio: float = 0.2
    # None: use the run seed
    order_seed: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    benchmark: object
    methods: tuple
    seeds: tuple = (0,)
    buffer_capacities: tuple = (200,)
    output_dir: str = "results"
    name: str = "synthetic"
    workers: int = 1
    log_flush_every: int = 100
    # synthetic only; None ties the generator seed to the run seed
    data_seed: int | None = None


def _bool(text):
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    return None if text.strip().lower() in ("", "none") else int(text)


def _angle(text):
    """A float, or a multiple of ``pi`` such as ``pi/6`` or ``0.5*pi``."""
    t = text.strip().replace(" ", "")
    match = re.fullmatch(r"(?:([0-9.eE+-]+)\*?)?pi(?:/([0-9.eE+-]+))?", t)
    if match:
        num = float(match.group(1)) if match.group(1) else 1.0
        den = float(match.group(2)) if match.group(2) else 1.0
        return num * math.pi / den
    return float(t)


def _int_list(text):
    items = [v.strip() for v in text.split(",") if v.strip()]
    return tuple(int(v) for v in items)


def _int_pair(text):
    pair = _int_list(text)
    if len(pair) != 2:
        raise ValueError("expected two comma-separated integers")
    return pair


def _float_tuple(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _opt_float_tuple(text):
    return None if text.strip().lower() in ("", "none") else _float_tuple(text)


def _names(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


EXPERIMENT_KEYS = {
    "name": str, "methods": _names, "seeds": _int_list, "buffer_capacities": _int_list,
    "output_dir": str, "workers": int, "log_flush_every": int,
}
SYNTHETIC_KEYS = {
    "num_domains": int, "num_classes": int, "feature_dim": int, "samples_per_class_per_domain": int,
    "class_separation": float, "plane_weight": float, "noise_std": float, "test_ratio": float,
    "rotation_angle": _angle, "rotation_plane": _int_pair, "translation_magnitude": float,
    "translation_direction": _opt_float_tuple, "scale_factor": float, "seed": _opt_int,
}
MANIFEST_KEYS = {"manifest": str, "features": str, "split_type": str, "test_ratio": float,
                 "order_seed": _opt_int}
TRAINING_KEYS = {
    "arch": str, "hidden": int, "epochs_per_task": int, "batch_size": int, "replay_batch_size": _opt_int,
    "lr": float, "momentum": float, "lambda": float, "temperature": float, "use_class_loss": _bool,
    "use_kd_loss": _bool, "kd_t2_scaling": _bool, "kd_on_replay": _bool, "lambda_ewc": float,
    "fisher_samples": _opt_int, "fisher_normalization": str, "snapshot_policy": str,
    "class_balanced": _bool, "buffer_capacity": int,
}
METHOD_KEYS = dict(TRAINING_KEYS, method=str)
SHIFT_KEYS = ("rotation_angle", "rotation_plane", "translation_magnitude", "translation_direction",
              "scale_factor")


class _Locator:
    """Maps ``(section, key)`` to its 1-based line number in the source text."""

    def __init__(self, text: str):
        self.lines = {}
        self.sections = {}
        section = None
        for n, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line[0] in "#;":
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                self.sections.setdefault(section, n)
            elif section is not None and ("=" in line or ":" in line):
                key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
                self.lines.setdefault((section, key), n)

    def __call__(self, section, key=None):
        if key is None:
            return self.sections.get(section)
        return self.lines.get((section, key), self.sections.get(section))


def _read_section(parser, section, schema, where) -> dict:
    out = {}
    for key, raw in parser.items(section):
        if key not in schema:
            raise ConfigError(f"unknown key in [{section}]", field=key, line=where(section, key))
        try:
            out[key] = schema[key](raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value {raw!r}: {exc}", field=key, line=where(section, key)) from None
    return out


def _method_config(values: dict, label: str) -> MethodConfig:
    values = dict(values)
    loss = LossConfig(
        lambda_=values.pop("lambda", 1.0),
        temperature=values.pop("temperature", 2.0),
        use_class_loss=values.pop("use_class_loss", True),
        use_kd_loss=values.pop("use_kd_loss", True),
        kd_t2_scaling=values.pop("kd_t2_scaling", False),
        kd_on_replay=values.pop("kd_on_replay", False),
    )
    return MethodConfig(name=label, loss=loss, **values)


def parse_config(text: str) -> ExperimentConfig:
    where = _Locator(text)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                       default_section="__none__")
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], line=getattr(exc, "lineno", None)) from None

    for section in parser.sections():
        if section not in ("experiment", "benchmark", "training") and not section.startswith("method."):
            raise ConfigError("unknown section", field=section, line=where(section))
    if not parser.has_section("experiment"):
        raise ConfigError("missing [experiment] section", field="methods")

    exp = _read_section(parser, "experiment", EXPERIMENT_KEYS, where)
    labels = exp.get("methods", ())
    if not labels:
        raise ConfigError("at least one method is required", field="methods",
                          line=where("experiment", "methods"))
    if len(set(labels)) != len(labels):
        raise ConfigError("duplicate method labels", field="methods", line=where("experiment", "methods"))
    if not exp.get("seeds", (0,)):
        raise ConfigError("at least one seed is required", field="seeds", line=where("experiment", "seeds"))
    for key in ("seeds", "buffer_capacities"):
        if any(v < 0 for v in exp.get(key, ())):
            raise ConfigError("values must be non-negative", field=key, line=where("experiment", key))
    if exp.get("workers", 1) < 1:
        raise ConfigError("must be >= 1", field="workers", line=where("experiment", "workers"))

    bench = dict(parser.items("benchmark")) if parser.has_section("benchmark") else {}
    kind = bench.pop("kind", "synthetic").strip()
    if parser.has_section("benchmark"):
        parser.remove_option("benchmark", "kind")
    data_seed = None
    if kind == "synthetic":
        values = _read_section(parser, "benchmark", SYNTHETIC_KEYS, where) if bench else {}
        data_seed = values.pop("seed", None)
        shift = DomainShift(**{k: values.pop(k) for k in SHIFT_KEYS if k in values})
        benchmark = SyntheticConfig(domain_shift=shift, **values)
        try:
            benchmark.validate()
        except ConfigError as exc:
            key = exc.field if exc.field in SYNTHETIC_KEYS else None
            raise ConfigError(str(exc).split(": ", 1)[-1], field=exc.field,
                              line=where("benchmark", key)) from None
    elif kind == "manifest":
        values = _read_section(parser, "benchmark", MANIFEST_KEYS, where)
        for key in ("manifest", "features"):
            if key not in values:
                raise ConfigError("required for manifest benchmarks", field=key, line=where("benchmark"))
        if values.get("split_type", "scenes") not in SPLIT_TYPES:
            raise ConfigError(f"must be one of {SPLIT_TYPES}", field="split_type",
                              line=where("benchmark", "split_type"))
        benchmark = ManifestBenchmark(**values)
    else:
        raise ConfigError("must be 'synthetic' or 'manifest'", field="kind", line=where("benchmark", "kind"))

    shared = _read_section(parser, "training", TRAINING_KEYS, where) if parser.has_section("training") else {}
    methods = []
    for label in labels:
        section = f"method.{label}"
        values = dict(shared)
        if parser.has_section(section):
            values.update(_read_section(parser, section, METHOD_KEYS, where))
        else:
            values["method"] = label
        values.setdefault("method", label)
        line = where(section, "method") or where("experiment", "methods")
        if values["method"] not in METHODS:
            raise ConfigError(f"unknown method {values['method']!r}", field="method", line=line)
        if "snapshot_policy" in values:
            try:
                parse_snapshot_policy(values["snapshot_policy"])
            except ConfigError as exc:
                raise ConfigError(str(exc).split(": ", 1)[-1], field="snapshot_policy",
                                  line=where(section, "snapshot_policy")
                                  or where("training", "snapshot_policy")) from None
        cfg = _method_config(values, label)
        try:
            cfg.validate()
        except ConfigError as exc:
            key = "lambda" if exc.field == "lambda" else exc.field
            raise ConfigError(str(exc).split(": ", 1)[-1], field=exc.field,
                              line=where(section, key) or where("training", key) or line) from None
        methods.append(cfg)
    for section in parser.sections():
        if section.startswith("method.") and section[len("method."):] not in labels:
            raise ConfigError("method section not listed in `methods`", field=section, line=where(section))

    exp.pop("methods", None)
    return ExperimentConfig(benchmark=benchmark, methods=tuple(methods), data_seed=data_seed, **exp)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def dump_config(cfg: ExperimentConfig) -> str:
    """Fully resolved config text; ``parse_config(dump_config(c)) == c``."""
    lines = ["[experiment]",
             f"name = {cfg.name}",
             f"methods = {', '.join(m.label for m in cfg.methods)}",
             f"seeds = {_fmt(cfg.seeds)}",
             f"buffer_capacities = {_fmt(cfg.buffer_capacities)}",
             f"output_dir = {cfg.output_dir}",
             f"workers = {cfg.workers}",
             f"log_flush_every = {cfg.log_flush_every}",
             "", "[benchmark]"]
    b = cfg.benchmark
    if isinstance(b, SyntheticConfig):
        lines.append("kind = synthetic")
        for f in fields(b):
            if f.name == "domain_shift":
                for key in SHIFT_KEYS:
                    lines.append(f"{key} = {_fmt(getattr(b.domain_shift, key))}")
            elif f.name != "seed":
                lines.append(f"{f.name} = {_fmt(getattr(b, f.name))}")
        lines.append(f"seed = {_fmt(cfg.data_seed)}")
    else:
        lines.append("kind = manifest")
        lines.extend(f"{f.name} = {_fmt(getattr(b, f.name))}" for f in fields(b))
    for m in cfg.methods:
        lines += ["", f"[method.{m.label}]", f"method = {m.method}"]
        for f in fields(m):
            if f.name in ("method", "name", "seed"):
                continue
            if f.name == "loss":
                for lf in fields(m.loss):
                    key = "lambda" if lf.name == "lambda_" else lf.name
                    lines.append(f"{key} = {_fmt(getattr(m.loss, lf.name))}")
            else:
                lines.append(f"{f.name} = {_fmt(getattr(m, f.name))}")
    return "\n".join(lines) + "\n"


def override_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return replace(cfg, seeds=(int(seed),))
