"""Client API: one call per task, in the spirit of

    from hpcfair import modelAPI
    api = modelAPI()
    api.conversion(path_to_config)
    api.collaborate(path_to_config)
    api.container(path_to_config)

Each verb loads a config file, submits it, waits for completion, and
returns the TaskResult; a failed task raises instead of returning partial
success.  With no address the client runs tasks in-process; with an address
it submits over HTTP and polls.
"""

from __future__ import annotations

import logging
import os
import time
from pathlib import Path

from .config import TaskConfig, parse_config
from .errors import ConfigError, HpcfairError
from .tasks import Dispatcher, TaskResult

logger = logging.getLogger(__name__)

_POLL_SECONDS = 0.05
_POLL_TIMEOUT = 60.0


class TaskFailed(HpcfairError):
    """A submitted task finished with status "failed"."""

    code = "task_failed"

    def __init__(self, result: TaskResult):
        error = result.error or {}
        code = error.get("code", "task_failed")
        message = error.get("message", "task failed")
        super().__init__(f"task {result.task_id} failed: {message}",
                         details={"task_id": result.task_id})
        self.code = code
        self.result = result


class ModelAPI:
    """Task-submission client; local in-process by default, HTTP if
    constructed with a server address (or HPCFAIR_ADDR in the environment).
    """

    def __init__(self, address: str | None = None, token: str | None = None,
                 store=None):
        self.address = address or os.environ.get("HPCFAIR_ADDR") or None
        self.token = token or os.environ.get("HPCFAIR_TOKEN") or None
        self._dispatcher = None if self.address else Dispatcher(store=store)

    # -- public verbs --------------------------------------------------------

    def conversion(self, config_path: str | Path) -> TaskResult:
        """Convert checkpoint files to interchange files."""
        return self._submit(self._load(config_path, expect="conversion"))

    def infer(self, config_path: str | Path) -> TaskResult:
        """Run inference with one model (or a composed pair)."""
        return self._submit(self._load(config_path, expect="inference"))

    def collaborate(self, config_path: str | Path,
                    conversion_config: str | Path | None = None
                    ) -> TaskResult:
        """Compose-and-run two models.

        One combined config must be an inference config with
        tag "collaboration"; alternatively pass the conversion config as a
        second argument to run the full convert-then-infer flow.
        """
        if conversion_config is not None:
            self._submit(self._load(conversion_config, expect="conversion"))
        loaded = self._load(config_path, expect="inference")
        if loaded[0].general.tag != "collaboration":
            raise ConfigError(
                "collaborate requires general_args.tag 'collaboration', "
                f"got {loaded[0].general.tag!r}")
        return self._submit(loaded)

    def container(self, config_path: str | Path) -> TaskResult:
        """Build and run a sandboxed project."""
        return self._submit(self._load(config_path, expect="container"))

    # -- mechanics -------------------------------------------------------------

    def _load(self, config_path: str | Path,
              expect: str) -> tuple[TaskConfig, bytes]:
        path = Path(config_path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        raw = path.read_bytes()
        cfg = parse_config(raw, base_dir=path.parent)
        if cfg.general.task != expect:
            raise ConfigError(
                f"this verb handles task '{expect}', the config declares "
                f"{cfg.general.task!r}")
        return cfg, raw

    def _submit(self, loaded: tuple[TaskConfig, bytes]) -> TaskResult:
        cfg, raw = loaded
        if self._dispatcher is not None:
            result = self._dispatcher.dispatch(cfg)
        else:
            result = self._submit_http(raw)
        if result.status != "succeeded":
            raise TaskFailed(result)
        logger.info("task %s succeeded: %s", result.task_id,
                    ", ".join(result.outputs))
        return result

    def _submit_http(self, raw: bytes) -> TaskResult:
        import requests

        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        response = requests.post(f"{self.address}/v1/tasks",
                                 data=raw, headers=headers)
        body = response.json()
        if not body.get("ok"):
            error = body.get("error", {})
            raise HpcfairError(
                error.get("message", f"task submission failed "
                                     f"({response.status_code})"),
                details={"code": error.get("code")})
        task_id = body["data"]["task_id"]

        deadline = time.monotonic() + _POLL_TIMEOUT
        while True:
            poll = requests.get(f"{self.address}/v1/tasks/{task_id}",
                                headers=headers)
            data = poll.json().get("data", {})
            if data.get("status") in ("succeeded", "failed"):
                return TaskResult(
                    task_id=data["task_id"],
                    status=data["status"],
                    outputs=tuple(data.get("outputs", ())),
                    log=tuple(data.get("log", ())),
                    error=data.get("error"),
                )
            if time.monotonic() > deadline:
                raise HpcfairError(f"task {task_id} did not finish within "
                                   f"{_POLL_TIMEOUT:.0f}s")
            time.sleep(_POLL_SECONDS)


# lowercase alias, kept for callers that write `api = modelAPI()`
modelAPI = ModelAPI
