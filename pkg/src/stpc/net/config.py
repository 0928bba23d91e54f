"""Session configuration shared by the client and both parties (JSON).

Parties only read the header fields (modulus, dimensions, bit lengths,
addresses). The ``controller`` section with the plaintext matrices belongs
on the client; hand the parties a copy without it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..controller import (
    PENDULUM_C,
    PENDULUM_GAMMA,
    ControllerSpec,
    pendulum_controller,
)
from ..modring import Modulus
from .wire import SessionHeader


class ConfigError(ValueError):
    pass


def parse_int(v) -> int:
    """Integers may be given as JSON numbers or decimal / ``0x`` hex strings."""
    if isinstance(v, bool):
        raise ConfigError("boolean where an integer was expected")
    if isinstance(v, int):
        return v
    if isinstance(v, str):
        return int(v.strip(), 0)
    raise ConfigError(f"cannot read integer from {v!r}")


@dataclass
class SessionConfig:
    q: int
    n: int
    m: int
    p: int
    k: int = 64
    ell: int = 32
    lam: int = 80
    parties: dict[int, str] = field(default_factory=lambda: {0: "127.0.0.1:9400",
                                                             1: "127.0.0.1:9401"})
    period_ms: float = 40.0
    timeout_s: float = 5.0
    audit: bool = False
    on_timeout: str = "abort"
    controller: dict | None = None
    measurement: dict = field(default_factory=lambda: {"k": 18, "ell": 9})
    plant: dict | None = None

    @property
    def modulus(self) -> Modulus:
        return Modulus(self.q)

    def header(self, role: int) -> SessionHeader:
        return SessionHeader(self.q, self.n, self.m, self.p, self.k, self.ell, self.lam,
                             role, self.audit)

    def controller_spec(self) -> ControllerSpec:
        if not self.controller:
            raise ConfigError("configuration has no controller section")
        c = self.controller
        spec = ControllerSpec.from_values(
            c["A"], c["B"], c["C"], c["D"], c.get("x0"),
            k=self.k, ell=self.ell, lam=self.lam, modulus=self.modulus,
            c=c.get("c"), gamma=c.get("gamma"),
        )
        if (spec.n, spec.m, spec.p) != (self.n, self.m, self.p):
            raise ConfigError("controller matrices disagree with n, m, p")
        return spec

    # (de)serialization ----------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> "SessionConfig":
        if "modulus" not in d:
            raise ConfigError("missing 'modulus'")
        known = {"modulus", "n", "m", "p", "k", "ell", "lam", "parties", "period_ms",
                 "timeout_s", "audit", "on_timeout", "controller", "measurement", "plant"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown configuration keys {sorted(extra)}")
        try:
            cfg = cls(
                q=parse_int(d["modulus"]),
                n=parse_int(d["n"]), m=parse_int(d["m"]), p=parse_int(d["p"]),
                k=parse_int(d.get("k", 64)), ell=parse_int(d.get("ell", 32)),
                lam=parse_int(d.get("lam", 80)),
                parties={int(i): str(a) for i, a in d.get("parties", {}).items()}
                or {0: "127.0.0.1:9400", 1: "127.0.0.1:9401"},
                period_ms=float(d.get("period_ms", 40.0)),
                timeout_s=float(d.get("timeout_s", 5.0)),
                audit=bool(d.get("audit", False)),
                on_timeout=str(d.get("on_timeout", "abort")),
                controller=d.get("controller"),
                measurement=d.get("measurement", {"k": 18, "ell": 9}),
                plant=d.get("plant"),
            )
        except KeyError as exc:
            raise ConfigError(f"missing {exc.args[0]!r}") from None
        if cfg.on_timeout not in ("abort", "hold"):
            raise ConfigError("on_timeout must be 'abort' or 'hold'")
        Modulus(cfg.q)  # primality check
        return cfg

    def to_dict(self, include_controller: bool = True) -> dict:
        d = {
            "modulus": hex(self.q), "n": self.n, "m": self.m, "p": self.p,
            "k": self.k, "ell": self.ell, "lam": self.lam,
            "parties": {str(i): a for i, a in sorted(self.parties.items())},
            "period_ms": self.period_ms, "timeout_s": self.timeout_s,
            "audit": self.audit, "on_timeout": self.on_timeout,
            "measurement": self.measurement,
        }
        if include_controller and self.controller is not None:
            d["controller"] = self.controller
        if self.plant is not None:
            d["plant"] = self.plant
        return d

    @classmethod
    def load(cls, path: str | Path) -> "SessionConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def dump(self, path: str | Path, include_controller: bool = True) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(include_controller), fh, indent=2)
            fh.write("\n")


def controller_section(spec: ControllerSpec) -> dict:
    sec = {name: getattr(spec, name).to_strings() for name in ("A", "B", "C", "D")}
    sec["x0"] = [row[0] for row in spec.x0.to_strings()]
    if spec.c is not None:
        sec["c"] = str(spec.c)
    if spec.gamma is not None:
        sec["gamma"] = str(spec.gamma)
    return sec


def config_for(spec: ControllerSpec, **kw) -> SessionConfig:
    return SessionConfig(q=spec.modulus.q, n=spec.n, m=spec.m, p=spec.p, k=spec.k,
                         ell=spec.ell, lam=spec.lam, controller=controller_section(spec), **kw)


def pendulum_config(**kw) -> SessionConfig:
    """Configuration for the rotary-pendulum controller with the pinned 256-bit prime."""
    spec = pendulum_controller()
    cfg = config_for(spec, **kw)
    cfg.controller["c"], cfg.controller["gamma"] = PENDULUM_C, PENDULUM_GAMMA
    return cfg
