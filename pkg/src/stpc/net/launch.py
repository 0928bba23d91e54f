"""Start both party servers as local subprocesses (loopback deployments, tests)."""

from __future__ import annotations

import copy
import os
import subprocess
import sys
import tempfile
import time

from .config import SessionConfig

READY_PREFIX = "LISTENING "


class LaunchError(RuntimeError):
    pass


def _read_ready(proc: subprocess.Popen, timeout: float) -> str:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        line = proc.stdout.readline()
        if not line:
            if proc.poll() is not None:
                raise LaunchError(f"party exited early: {proc.stderr.read()}")
            continue
        if line.startswith(READY_PREFIX):
            return line[len(READY_PREFIX):].strip()
    raise LaunchError("party did not report its address in time")


class LocalParties:
    """Context manager running ``stpc party`` for roles 1 then 0 on ephemeral ports.

    ``config`` is a copy of the input configuration with the real party
    addresses filled in; the parties get a copy without the controller
    matrices.
    """

    def __init__(self, cfg: SessionConfig, host: str = "127.0.0.1", start_timeout: float = 20.0):
        self.config = copy.deepcopy(cfg)
        self.host = host
        self.start_timeout = start_timeout
        self.procs: list[subprocess.Popen] = []
        self._tmp = tempfile.TemporaryDirectory(prefix="stpc-")

    def _spawn(self, role: int, cfg_path: str, peer: str | None) -> subprocess.Popen:
        cmd = [sys.executable, "-m", "stpc", "party", "--role", str(role), "--config", cfg_path,
               "--listen", f"{self.host}:0"]
        if peer:
            cmd += ["--peer", peer]
        env = dict(os.environ, PYTHONUNBUFFERED="1")
        return subprocess.Popen(cmd, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
                                env=env)

    def start(self) -> SessionConfig:
        cfg_path = os.path.join(self._tmp.name, "party.json")
        self.config.dump(cfg_path, include_controller=False)
        p1 = self._spawn(1, cfg_path, None)
        self.procs.append(p1)
        addr1 = _read_ready(p1, self.start_timeout)
        p0 = self._spawn(0, cfg_path, addr1)
        self.procs.append(p0)
        addr0 = _read_ready(p0, self.start_timeout)
        self.config.parties = {0: addr0, 1: addr1}
        return self.config

    def wait(self, timeout: float = 20.0) -> list[int]:
        codes = []
        for p in self.procs:
            try:
                codes.append(p.wait(timeout))
            except subprocess.TimeoutExpired:
                p.kill()
                codes.append(p.wait())
        return codes

    def stop(self) -> None:
        for p in self.procs:
            if p.poll() is None:
                p.terminate()
                try:
                    p.wait(5)
                except subprocess.TimeoutExpired:
                    p.kill()
            for stream in (p.stdout, p.stderr):
                if stream is not None:
                    stream.close()
        self._tmp.cleanup()

    def __enter__(self) -> SessionConfig:
        try:
            return self.start()
        except BaseException:
            self.stop()
            raise

    def __exit__(self, *exc):
        self.stop()
