"""Task configuration documents: the four-section YAML files users submit.

A config has sections ``general_args``, ``device_args``, a task section
(named ``task_args`` or ``model_args`` -- both spellings occur in the wild
and are accepted as aliases), and ``out_args``.  Parsing is lossless: every
key/value survives into the :class:`TaskConfig`, unknown keys land in
``extras`` with a warning rather than an error, and ``serialize_config``
re-emits a canonical byte form suitable for golden-file comparison.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ._canonical import dumps_canonical
from .errors import ConfigError, ValidationReport

logger = logging.getLogger(__name__)

TASKS = ("conversion", "inference", "container")
DEVICES = ("cpu", "gpu")

Scalar = str | int | float | bool | None


@dataclass(frozen=True)
class GeneralArgs:
    task: str
    tag: str | None = None
    backend: str | list[str] | None = None


@dataclass(frozen=True)
class DeviceArgs:
    worker_num: int = 1
    device: str = "cpu"
    gpu_mapping_file: str | None = None
    gpu_mapping_key: str | None = None


@dataclass(frozen=True)
class TaskConfig:
    general: GeneralArgs
    device: DeviceArgs
    task_args: dict[str, Any] = field(default_factory=dict)
    # which alias carried the task section; None if the section was absent
    task_section: str | None = "task_args"
    out: dict[str, Any] = field(default_factory=dict)
    extras: dict[str, Any] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()
    # directory that relative paths in the config resolve against
    base_dir: Path | None = None

    @property
    def export_files(self) -> list[str]:
        return as_list(self.out.get("export_file"))

    def resolve(self, path: str) -> Path:
        base = self.base_dir if self.base_dir is not None else Path.cwd()
        return (base / path).resolve() if not Path(path).is_absolute() \
            else Path(path)


def as_list(value: Any) -> list[Any]:
    """Normalize a scalar-or-sequence config value to a list."""
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


_GENERAL_KEYS = ("task", "tag", "backend")
_DEVICE_KEYS = ("worker_num", "device", "gpu_mapping_file", "gpu_mapping_key")
_SECTIONS = ("general_args", "device_args", "task_args", "model_args",
             "out_args")


def _is_scalar(v: Any) -> bool:
    return v is None or isinstance(v, (str, int, float, bool))


def _check_section(name: str, value: Any) -> dict[str, Any]:
    if not isinstance(value, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    for key, v in value.items():
        if not isinstance(key, str):
            raise ConfigError(f"section '{name}' has a non-string key {key!r}")
        if not (_is_scalar(v) or
                (isinstance(v, list) and all(_is_scalar(x) for x in v))):
            raise ConfigError(
                f"'{name}.{key}' must be a scalar or a flat sequence")
    return value


def parse_config(text: bytes | str, *,
                 base_dir: Path | None = None) -> TaskConfig:
    """Parse a config document; lossless, warning on unknown keys."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config document: {exc}")
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping of sections")

    warnings: list[str] = []
    extras: dict[str, Any] = {}

    if "general_args" not in doc:
        raise ConfigError("config is missing the 'general_args' section")
    general_raw = _check_section("general_args", doc["general_args"])
    if "task" not in general_raw:
        raise ConfigError("'general_args' is missing the 'task' key")

    device_raw = _check_section("device_args", doc.get("device_args", {}))
    out_raw = _check_section("out_args", doc.get("out_args", {}))

    if "task_args" in doc and "model_args" in doc:
        raise ConfigError(
            "'task_args' and 'model_args' are aliases; supply exactly one")
    task_section: str | None = None
    task_raw: dict[str, Any] = {}
    for alias in ("task_args", "model_args"):
        if alias in doc:
            task_section = alias
            task_raw = _check_section(alias, doc[alias])

    def take(section: str, raw: dict[str, Any],
             known: tuple[str, ...]) -> dict[str, Any]:
        kept = {}
        for key, value in raw.items():
            if key in known:
                kept[key] = value
            else:
                extras[f"{section}.{key}"] = value
                warnings.append(f"unknown key '{section}.{key}'")
        return kept

    general_known = take("general_args", general_raw, _GENERAL_KEYS)
    device_known = take("device_args", device_raw, _DEVICE_KEYS)

    for section in doc:
        if section not in _SECTIONS:
            extras[section] = doc[section]
            warnings.append(f"unknown section '{section}'")

    for message in warnings:
        logger.warning("%s", message)

    general = GeneralArgs(
        task=general_known["task"],
        tag=general_known.get("tag"),
        backend=general_known.get("backend"),
    )
    device = DeviceArgs(
        worker_num=device_known.get("worker_num", 1),
        device=device_known.get("device", "cpu"),
        gpu_mapping_file=device_known.get("gpu_mapping_file"),
        gpu_mapping_key=device_known.get("gpu_mapping_key"),
    )
    return TaskConfig(
        general=general,
        device=device,
        task_args=dict(task_raw),
        task_section=task_section,
        out=dict(out_raw),
        extras=extras,
        warnings=tuple(warnings),
        base_dir=base_dir,
    )


def load_config(path: str | Path) -> TaskConfig:
    """Parse a config file; relative paths resolve against its directory."""
    path = Path(path)
    return parse_config(path.read_bytes(), base_dir=path.parent)


def serialize_config(cfg: TaskConfig) -> bytes:
    """Canonical bytes: fixed section and key order, values verbatim."""
    doc = {
        "general": {
            "task": cfg.general.task,
            "tag": cfg.general.tag,
            "backend": cfg.general.backend,
        },
        "device": {
            "worker_num": cfg.device.worker_num,
            "device": cfg.device.device,
            "gpu_mapping_file": cfg.device.gpu_mapping_file,
            "gpu_mapping_key": cfg.device.gpu_mapping_key,
        },
        "task_args": {k: cfg.task_args[k] for k in sorted(cfg.task_args)},
        "task_section": cfg.task_section,
        "out": {k: cfg.out[k] for k in sorted(cfg.out)},
        "extras": {k: cfg.extras[k] for k in sorted(cfg.extras)},
    }
    return dumps_canonical(doc)


def validate_config(cfg: TaskConfig) -> ValidationReport:
    """Dispatchability check: required keys, enums, aligned lengths."""
    v: list[str] = []
    task = cfg.general.task

    if task not in TASKS:
        v.append(f"general_args.task must be one of {list(TASKS)}, "
                 f"got {task!r}")
    wn = cfg.device.worker_num
    if not isinstance(wn, int) or isinstance(wn, bool) or wn < 1:
        v.append("worker_num must be >= 1")
    if cfg.device.device not in DEVICES:
        v.append(f"device must be one of {list(DEVICES)}, "
                 f"got {cfg.device.device!r}")
    if cfg.task_section is None:
        v.append("config has no 'task_args'/'model_args' section")
    if "export_file" not in cfg.out:
        v.append("out_args.export_file is required")

    def require(keys: tuple[str, ...]) -> None:
        section = cfg.task_section or "task_args"
        for key in keys:
            if key not in cfg.task_args:
                v.append(f"{task} requires {section}.{key}")

    if task == "conversion":
        require(("model_name", "model_file"))
        names = as_list(cfg.task_args.get("model_name"))
        files = as_list(cfg.task_args.get("model_file"))
        exports = cfg.export_files
        backends = as_list(cfg.general.backend)
        lengths = {"model_name": len(names), "model_file": len(files),
                   "export_file": len(exports)}
        # a single backend string fans out over all items
        if len(backends) > 1:
            lengths["backend"] = len(backends)
        if names and len(set(lengths.values())) > 1:
            v.append("conversion requires aligned sequences of equal "
                     "length, got " +
                     ", ".join(f"{k}={n}" for k, n in sorted(lengths.items())))
        if not backends:
            v.append("conversion requires general_args.backend")
    elif task == "inference":
        require(("model_file", "input"))
    elif task == "container":
        require(("work_dir", "build_file", "build_tag", "volume"))

    ver = cfg.task_args.get("onnx_version")
    if ver is not None and (not isinstance(ver, int) or isinstance(ver, bool)
                            or ver < 1):
        v.append(f"onnx_version must be an integer >= 1, got {ver!r}")

    return ValidationReport.from_violations(v)
