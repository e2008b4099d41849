"""Manifest-driven reproducible project execution.

"Containerization" here is a staged-directory sandbox: building an image
copies the project tree into an immutable staging area and fingerprints it;
running executes the entrypoint in a fresh copy with an allowlisted
environment, so the staged tree is never mutated and identical inputs yield
identical output digests.

Digest framing (kept stable so external tooling can recompute it):

    tree_frame(relpath, bytes) = relpath + "\n" + decimal(len(bytes)) + "\n"
                                 + bytes + "\n"
    data_frame(bytes)          = decimal(len(bytes)) + "\n" + bytes + "\n"
    image_digest  = sha256( tree_frame for every staged file, sorted by
                            relpath, followed by the canonical manifest )
    input_digest  = sha256( data_frame for declared_inputs, manifest order )
    output_digest = sha256( data_frame for declared_outputs, manifest order )

Input/output digests frame content only, so moving a payload between paths
does not change it: a run that copies its input to its output yields
output_digest == input_digest.

The manifest's ``volume`` path is honored without privileged mounts: the
entrypoint runs with the run copy as its working directory and receives the
real path in ``HPCFAIR_VOLUME`` (the host path standing in for the volume).
"""

from __future__ import annotations

import hashlib
import logging
import os
import secrets
import shutil
import subprocess
from dataclasses import dataclass
from pathlib import Path, PurePosixPath
from typing import Mapping

import yaml

from ._canonical import dumps_canonical
from .config import TaskConfig, as_list
from .errors import ConfigError, MalformedDocumentError, SandboxError, \
    UnknownBackendError

logger = logging.getLogger(__name__)

_MANIFEST_KEYS = ("build_tag", "entrypoint", "env", "inputs", "outputs",
                  "volume")
_BASELINE_ENV = ("PATH", "LC_ALL")


@dataclass(frozen=True)
class SandboxManifest:
    build_tag: str
    entrypoint: str
    env: dict[str, str]
    declared_inputs: tuple[str, ...]
    declared_outputs: tuple[str, ...]
    volume: str

    def canonical_bytes(self) -> bytes:
        return dumps_canonical({
            "build_tag": self.build_tag,
            "entrypoint": self.entrypoint,
            "env": {k: self.env[k] for k in sorted(self.env)},
            "inputs": list(self.declared_inputs),
            "outputs": list(self.declared_outputs),
            "volume": self.volume,
        })


@dataclass(frozen=True)
class ImageRecord:
    build_tag: str
    image_digest: str
    staged_root: Path
    manifest: SandboxManifest


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    image_digest: str
    input_digest: str
    output_digest: str | None
    exit_status: int
    captured_log: str
    errors: tuple[str, ...] = ()
    device_requested: str = "cpu"

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "image_digest": self.image_digest,
            "input_digest": self.input_digest,
            "output_digest": self.output_digest,
            "exit_status": self.exit_status,
            "captured_log": self.captured_log,
            "errors": list(self.errors),
            "device_requested": self.device_requested,
        }


def _check_rel_path(raw: object, where: str) -> str:
    if not isinstance(raw, str) or not raw:
        raise MalformedDocumentError(
            f"{where}: paths must be non-empty strings")
    path = PurePosixPath(raw)
    if path.is_absolute():
        raise MalformedDocumentError(
            f"{where}: '{raw}' must be relative")
    if ".." in path.parts:
        raise MalformedDocumentError(
            f"{where}: '{raw}' escapes the sandbox via '..'")
    return str(path)


def parse_manifest(data: bytes | str) -> SandboxManifest:
    """Parse and validate a build file."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = yaml.safe_load(data)
    except yaml.YAMLError as exc:
        raise MalformedDocumentError(f"malformed manifest: {exc}")
    if not isinstance(doc, dict):
        raise MalformedDocumentError("manifest must be a mapping")
    unknown = set(doc) - set(_MANIFEST_KEYS)
    if unknown:
        raise MalformedDocumentError(
            f"unknown manifest keys {sorted(unknown)}")

    build_tag = doc.get("build_tag")
    if not isinstance(build_tag, str) or not build_tag:
        raise MalformedDocumentError(
            "manifest 'build_tag' must be a non-empty string")
    entrypoint = doc.get("entrypoint")
    if not isinstance(entrypoint, str) or not entrypoint.split():
        raise MalformedDocumentError(
            "manifest 'entrypoint' must be a non-empty command string")

    env_raw = doc.get("env", {}) or {}
    if not isinstance(env_raw, dict) or \
            not all(isinstance(k, str) and isinstance(v, str)
                    for k, v in env_raw.items()):
        raise MalformedDocumentError(
            "manifest 'env' must map strings to strings")

    inputs = tuple(_check_rel_path(p, "inputs")
                   for p in as_list(doc.get("inputs")))
    outputs = tuple(_check_rel_path(p, "outputs")
                    for p in as_list(doc.get("outputs")))

    volume = doc.get("volume")
    if not isinstance(volume, str) or \
            not PurePosixPath(volume).is_absolute():
        raise MalformedDocumentError(
            "manifest 'volume' must be an absolute path string")

    return SandboxManifest(build_tag, entrypoint, dict(env_raw), inputs,
                           outputs, volume)


# ---------------------------------------------------------------------------
# digests


def _tree_frame(h, relpath: str, data: bytes) -> None:
    h.update(relpath.encode("utf-8") + b"\n")
    h.update(str(len(data)).encode("ascii") + b"\n")
    h.update(data + b"\n")


def _data_frame(h, data: bytes) -> None:
    h.update(str(len(data)).encode("ascii") + b"\n")
    h.update(data + b"\n")


def digest_tree(root: Path) -> str:
    """sha-256 over all files under root, framed, sorted by relative path."""
    h = hashlib.sha256()
    for relpath in sorted(_walk_files(root)):
        _tree_frame(h, relpath, (root / relpath).read_bytes())
    return h.hexdigest()


def digest_paths(root: Path, relpaths: tuple[str, ...]) -> str:
    """sha-256 over the given files' contents in the given (manifest) order."""
    h = hashlib.sha256()
    for relpath in relpaths:
        _data_frame(h, (root / relpath).read_bytes())
    return h.hexdigest()


def _walk_files(root: Path) -> list[str]:
    found = []
    for dirpath, _dirnames, filenames in os.walk(root):
        for filename in filenames:
            full = Path(dirpath) / filename
            found.append(full.relative_to(root).as_posix())
    return found


# ---------------------------------------------------------------------------
# build and run


def build_image(manifest: SandboxManifest, work_dir: str | Path,
                staging_root: str | Path) -> ImageRecord:
    """Stage an immutable copy of work_dir and fingerprint it."""
    work_dir = Path(work_dir)
    if not work_dir.is_dir():
        raise SandboxError(f"work_dir not found: {work_dir}")
    for relpath in manifest.declared_inputs:
        if not (work_dir / relpath).is_file():
            raise SandboxError(f"declared input missing: {relpath}")

    h = hashlib.sha256()
    for relpath in sorted(_walk_files(work_dir)):
        _tree_frame(h, relpath, (work_dir / relpath).read_bytes())
    h.update(manifest.canonical_bytes())
    image_digest = h.hexdigest()

    staged = Path(staging_root) / image_digest
    if not staged.exists():
        tmp = staged.with_name(staged.name + ".tmp-" + secrets.token_hex(4))
        shutil.copytree(work_dir, tmp)
        tmp.replace(staged)
    logger.info("image %s staged as %s", manifest.build_tag,
                image_digest[:12])
    return ImageRecord(manifest.build_tag, image_digest, staged, manifest)


def run_container(image: ImageRecord, run_root: str | Path,
                  input_overrides: Mapping[str, bytes] | None = None,
                  device: str = "cpu",
                  runs_log: Path | None = None) -> RunRecord:
    """Execute the image entrypoint in a private copy of the staged tree.

    Nonzero exit and missing declared outputs are recorded on the RunRecord,
    not raised; a missing entrypoint program is a hard error.
    """
    manifest = image.manifest
    run_id = "run-" + secrets.token_hex(8)
    workspace = Path(run_root) / run_id
    shutil.copytree(image.staged_root, workspace)

    for relpath, data in (input_overrides or {}).items():
        target = workspace / _check_rel_path(relpath, "input_overrides")
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
    input_digest = digest_paths(workspace, manifest.declared_inputs)

    argv = manifest.entrypoint.split()
    env = {key: os.environ[key] for key in _BASELINE_ENV
           if key in os.environ}
    env.update(manifest.env)
    env["HOME"] = str(workspace)
    env["HPCFAIR_VOLUME"] = str(workspace)
    env["HPCFAIR_VOLUME_NAME"] = manifest.volume
    if device == "gpu":
        logger.warning("executing on cpu (gpu unavailable in reference "
                       "runtime)")

    try:
        proc = subprocess.run(argv, cwd=workspace, env=env,
                              capture_output=True, text=True, timeout=60)
    except FileNotFoundError:
        raise SandboxError(f"entrypoint program not found: {argv[0]}")
    except subprocess.TimeoutExpired:
        raise SandboxError(f"entrypoint timed out: {manifest.entrypoint}")

    errors = []
    missing = [p for p in manifest.declared_outputs
               if not (workspace / p).is_file()]
    for relpath in missing:
        errors.append(f"missing-output: {relpath}")
    output_digest = None
    if not missing:
        output_digest = digest_paths(workspace, manifest.declared_outputs)

    record = RunRecord(
        run_id=run_id,
        image_digest=image.image_digest,
        input_digest=input_digest,
        output_digest=output_digest,
        exit_status=proc.returncode,
        captured_log=proc.stdout + proc.stderr,
        errors=tuple(errors),
        device_requested=device,
    )
    if runs_log is not None:
        runs_log.parent.mkdir(parents=True, exist_ok=True)
        with open(runs_log, "ab") as fh:
            fh.write(dumps_canonical(record.to_dict()))
    return record


def run_container_task(cfg: TaskConfig,
                       store_root: Path | None = None
                       ) -> tuple[Path, RunRecord]:
    """Parse manifest, build, run, export: the `task: "container"` flow.

    Returns the written export path and the run record; stage failures raise
    with the stage name in the message.
    """
    if cfg.general.task != "container":
        raise ConfigError(
            f"container task got config for task {cfg.general.task!r}")
    if cfg.general.backend != "mlcube":
        raise UnknownBackendError(
            f"container supports backend 'mlcube', got "
            f"{cfg.general.backend!r}")
    for key in ("work_dir", "build_file", "build_tag", "volume"):
        if key not in cfg.task_args:
            raise ConfigError(f"container requires task_args.{key}")

    store = store_root if store_root is not None else cfg.resolve("store")

    build_file = cfg.resolve(cfg.task_args["build_file"])
    if not build_file.is_file():
        raise SandboxError(
            f"parse_manifest: build file not found: "
            f"{cfg.task_args['build_file']}")
    try:
        manifest = parse_manifest(build_file.read_bytes())
    except MalformedDocumentError as exc:
        raise SandboxError(f"parse_manifest: {exc}")

    for key, value in (("build_tag", manifest.build_tag),
                       ("volume", manifest.volume)):
        if cfg.task_args[key] != value:
            logger.warning("config %s %r differs from manifest %r; the "
                           "config value labels the run", key,
                           cfg.task_args[key], value)

    work_dir = cfg.resolve(cfg.task_args["work_dir"])
    if not work_dir.is_dir():
        raise SandboxError(
            f"build_image: work_dir not found: {cfg.task_args['work_dir']}")
    try:
        image = build_image(manifest, work_dir, store / "images")
    except SandboxError as exc:
        raise SandboxError(f"build_image: {exc}")

    record = run_container(image, store / "runs",
                           device=cfg.device.device,
                           runs_log=store / "runs.log")
    if record.exit_status != 0:
        raise SandboxError(
            f"run_container: entrypoint exited with status "
            f"{record.exit_status}: {record.captured_log.strip()}")
    if record.errors:
        raise SandboxError(f"run_container: {'; '.join(record.errors)}")

    if not manifest.declared_outputs:
        raise SandboxError(
            "run_container: manifest declares no outputs to export")
    exports = cfg.export_files
    if len(exports) != 1:
        raise ConfigError(
            f"container requires a single out_args.export_file, "
            f"got {len(exports)}")
    produced = Path(store / "runs" / record.run_id /
                    manifest.declared_outputs[0])
    export = cfg.resolve(exports[0])
    export.parent.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(produced, export)
    logger.info("container output exported: %s", export)
    return export, record
