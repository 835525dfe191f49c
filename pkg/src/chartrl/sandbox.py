"""Supervised execution of untrusted candidate plotting scripts.

The supervisor never runs candidate code in-process: each execution is a
dedicated worker subprocess invoked with (script path, output PNG path,
render settings), killed as a whole process group on timeout.  Exit codes
follow the worker protocol:

    0   success, output PNG written
    10  script syntax error
    11  script runtime exception
    12  script produced no figure

Negative return codes (killed by signal, e.g. the memory cap) map to
``resource_kill``.  :class:`MockSandbox` is the in-process stand-in used by
the test suite and the toy RL loop; it classifies syntax errors with
``compile()`` and serves configured images without spawning anything.
"""

from __future__ import annotations

import io
import os
import re
import shlex
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

from PIL import Image, UnidentifiedImageError

from .errors import SandboxUnavailable

# Canonical render settings: fixed canvas and DPI keep renders byte-identical.
CANONICAL_DPI = 100
CANONICAL_CANVAS = (6.4, 4.8)

WORKER_CMD_ENV = "CHARTRL_WORKER_CMD"
WORKER_PROGRAM = "chart-render-worker"
WORKER_MODULE = "chart_render_worker"

_DIAGNOSTIC_LIMIT = 8192
_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)(?:```|\Z)", re.DOTALL)


@dataclass(frozen=True)
class ExecutionLimits:
    """Resource limits applied to one script execution."""

    wall_clock: float = 30.0
    memory: int = 2 * 1024**3
    output_image_max: int = 16 * 1024**2

    def __post_init__(self) -> None:
        if self.wall_clock <= 0 or self.memory <= 0 or self.output_image_max <= 0:
            raise ValueError("all execution limits must be strictly positive")


class RenderStatus(str, Enum):
    SUCCESS = "success"
    COMPILE_ERROR = "compile_error"
    RUNTIME_ERROR = "runtime_error"
    TIMEOUT = "timeout"
    RESOURCE_KILL = "resource_kill"
    NO_IMAGE = "no_image"


@dataclass(frozen=True)
class RenderOutcome:
    """Result of executing one candidate script."""

    status: RenderStatus
    image: bytes | None
    diagnostic: str
    duration: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "status", RenderStatus(self.status))
        if self.status is RenderStatus.SUCCESS:
            if self.image is None:
                raise ValueError("success outcomes must carry an image")
            try:
                Image.open(io.BytesIO(self.image)).verify()
            except (UnidentifiedImageError, OSError, ValueError) as exc:
                raise ValueError(f"success outcomes must carry a decodable image: {exc}")
        else:
            if self.image is not None:
                raise ValueError("only success outcomes may carry an image")
            if not self.diagnostic:
                raise ValueError("non-success outcomes must carry a diagnostic")

    @property
    def ok(self) -> bool:
        return self.status is RenderStatus.SUCCESS

    def to_dict(self) -> dict:
        import base64

        return {
            "status": self.status.value,
            "image_b64": base64.b64encode(self.image).decode("ascii") if self.image else None,
            "diagnostic": self.diagnostic,
            "duration": self.duration,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RenderOutcome":
        import base64

        image = base64.b64decode(data["image_b64"]) if data.get("image_b64") else None
        return cls(
            status=RenderStatus(data["status"]),
            image=image,
            diagnostic=data["diagnostic"],
            duration=data["duration"],
        )


def extract_code_block(model_output: str) -> str:
    """Return the first fenced code block, or the whole text trimmed.

    The opening fence's language tag is ignored; an unclosed fence captures
    through the end of the text.
    """
    match = _FENCE_RE.search(model_output)
    if match is None:
        return model_output.strip()
    return match.group(1).strip("\n")


def _truncate(text: str) -> str:
    if len(text) <= _DIAGNOSTIC_LIMIT:
        return text
    return "...(truncated)...\n" + text[-_DIAGNOSTIC_LIMIT:]


class RenderSandbox:
    """Shared batch machinery; subclasses implement execute_script."""

    def execute_script(self, code: str, limits: ExecutionLimits) -> RenderOutcome:
        raise NotImplementedError

    def batch_execute(
        self, codes: Sequence[str], limits: ExecutionLimits, parallelism: int = 1
    ) -> list[RenderOutcome]:
        """Execute scripts with at most ``parallelism`` concurrent workers.

        Outcome i corresponds to code i.
        """
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if not codes:
            return []
        if parallelism == 1 or len(codes) == 1:
            return [self.execute_script(code, limits) for code in codes]
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(lambda code: self.execute_script(code, limits), codes))


def resolve_worker_command() -> list[str] | None:
    """Discover how to invoke the render worker, or None if absent.

    Order: CHARTRL_WORKER_CMD env var, the installed console script, then
    ``python -m chart_render_worker`` when the module is importable.
    """
    env_cmd = os.environ.get(WORKER_CMD_ENV)
    if env_cmd:
        return shlex.split(env_cmd)
    program = shutil.which(WORKER_PROGRAM)
    if program:
        return [program]
    try:
        import importlib.util

        if importlib.util.find_spec(WORKER_MODULE) is not None:
            return [sys.executable, "-m", WORKER_MODULE]
    except (ImportError, ValueError):
        pass
    return None


class SubprocessSandbox(RenderSandbox):
    """Executes each script in a dedicated, resource-limited worker process.

    The worker process group is always reaped, including on timeout; network
    denial and render configuration live in the worker itself.
    """

    def __init__(
        self,
        worker_cmd: Sequence[str] | None = None,
        dpi: int = CANONICAL_DPI,
        canvas: tuple[float, float] = CANONICAL_CANVAS,
    ):
        self._worker_cmd = list(worker_cmd) if worker_cmd else None
        self.dpi = dpi
        self.canvas = canvas

    def _command(self) -> list[str]:
        if self._worker_cmd is None:
            self._worker_cmd = resolve_worker_command()
        if self._worker_cmd is None:
            raise SandboxUnavailable(
                "render worker not found: install the worker package or set "
                f"{WORKER_CMD_ENV}"
            )
        return self._worker_cmd

    def execute_script(self, code: str, limits: ExecutionLimits) -> RenderOutcome:
        command = self._command()
        started = time.monotonic()
        with tempfile.TemporaryDirectory(prefix="chartrl-render-") as tmp:
            script_path = Path(tmp) / "script.py"
            output_path = Path(tmp) / "figure.png"
            script_path.write_text(code)

            argv = command + [
                str(script_path),
                str(output_path),
                "--dpi",
                str(self.dpi),
                "--width",
                str(self.canvas[0]),
                "--height",
                str(self.canvas[1]),
            ]

            def _apply_rlimits() -> None:  # pragma: no cover - runs in the child
                import resource

                resource.setrlimit(resource.RLIMIT_AS, (limits.memory, limits.memory))

            try:
                proc = subprocess.Popen(
                    argv,
                    cwd=tmp,
                    stdout=subprocess.PIPE,
                    stderr=subprocess.PIPE,
                    start_new_session=True,
                    preexec_fn=_apply_rlimits,
                )
            except FileNotFoundError as exc:
                raise SandboxUnavailable(f"cannot spawn render worker {command!r}: {exc}")

            try:
                _, stderr = proc.communicate(timeout=limits.wall_clock)
            except subprocess.TimeoutExpired:
                self._kill_group(proc)
                _, stderr = proc.communicate()
                duration = time.monotonic() - started
                return RenderOutcome(
                    status=RenderStatus.TIMEOUT,
                    image=None,
                    diagnostic=f"wall clock limit of {limits.wall_clock}s exceeded",
                    duration=duration,
                )

            duration = time.monotonic() - started
            diagnostic = _truncate(stderr.decode("utf-8", errors="replace"))
            return self._classify(proc.returncode, output_path, diagnostic, duration, limits)

    @staticmethod
    def _kill_group(proc: subprocess.Popen) -> None:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            proc.kill()

    @staticmethod
    def _classify(
        returncode: int,
        output_path: Path,
        diagnostic: str,
        duration: float,
        limits: ExecutionLimits,
    ) -> RenderOutcome:
        def failure(status: RenderStatus, fallback: str) -> RenderOutcome:
            return RenderOutcome(
                status=status, image=None, diagnostic=diagnostic or fallback, duration=duration
            )

        if returncode == 0:
            if not output_path.exists():
                return failure(RenderStatus.NO_IMAGE, "worker exited 0 without an output image")
            image = output_path.read_bytes()
            if len(image) > limits.output_image_max:
                return RenderOutcome(
                    status=RenderStatus.RESOURCE_KILL,
                    image=None,
                    diagnostic=f"output image of {len(image)} bytes exceeds cap "
                    f"{limits.output_image_max}",
                    duration=duration,
                )
            try:
                return RenderOutcome(
                    status=RenderStatus.SUCCESS, image=image, diagnostic="", duration=duration
                )
            except ValueError:
                return failure(RenderStatus.NO_IMAGE, "worker wrote an undecodable image")
        if returncode == 10:
            return failure(RenderStatus.COMPILE_ERROR, "script failed to compile")
        if returncode == 11:
            return failure(RenderStatus.RUNTIME_ERROR, "script raised at runtime")
        if returncode == 12:
            return failure(RenderStatus.NO_IMAGE, "script produced no figure")
        if returncode < 0:
            return failure(
                RenderStatus.RESOURCE_KILL, f"worker killed by signal {-returncode}"
            )
        return failure(RenderStatus.RUNTIME_ERROR, f"worker exited with code {returncode}")


@dataclass(frozen=True)
class MockRenderRule:
    """First matching code substring decides the mocked outcome."""

    code_substring: str
    status: RenderStatus
    image: bytes | None = None
    diagnostic: str = "mocked failure"


class MockSandbox(RenderSandbox):
    """Deterministic in-process sandbox stand-in.

    Resolution order per script: first matching rule; then a ``compile()``
    syntax check; then success with ``default_image`` when configured, else
    a no-image failure.  Instrumented like the mock Inspector so concurrency
    bounds stay observable.
    """

    def __init__(
        self,
        rules: Sequence[MockRenderRule] = (),
        default_image: bytes | None = None,
        latency: float = 0.0,
    ):
        self.rules = list(rules)
        self.default_image = default_image
        self.latency = latency
        self.calls = 0
        self.peak_in_flight = 0
        self._in_flight = 0
        self._lock = threading.Lock()

    def execute_script(self, code: str, limits: ExecutionLimits) -> RenderOutcome:
        with self._lock:
            self.calls += 1
            self._in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self._in_flight)
        try:
            if self.latency > 0:
                time.sleep(self.latency)
            for rule in self.rules:
                if rule.code_substring in code:
                    if rule.status is RenderStatus.SUCCESS:
                        return RenderOutcome(
                            status=RenderStatus.SUCCESS,
                            image=rule.image,
                            diagnostic="",
                            duration=0.0,
                        )
                    return RenderOutcome(
                        status=rule.status,
                        image=None,
                        diagnostic=rule.diagnostic,
                        duration=0.0,
                    )
            try:
                compile(code, "<candidate>", "exec")
            except SyntaxError as exc:
                return RenderOutcome(
                    status=RenderStatus.COMPILE_ERROR,
                    image=None,
                    diagnostic=f"SyntaxError: {exc}",
                    duration=0.0,
                )
            if self.default_image is not None:
                return RenderOutcome(
                    status=RenderStatus.SUCCESS,
                    image=self.default_image,
                    diagnostic="",
                    duration=0.0,
                )
            return RenderOutcome(
                status=RenderStatus.NO_IMAGE,
                image=None,
                diagnostic="mock sandbox has no rule or default image for this script",
                duration=0.0,
            )
        finally:
            with self._lock:
                self._in_flight -= 1
