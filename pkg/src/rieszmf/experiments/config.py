"""Flat key = value experiment configuration.

Format: one ``key = value`` per line, ``#`` starts a comment, lists are
comma separated. Unknown keys are rejected. The canonical form sorts keys
and prints floats with ``repr`` so parse -> dump -> parse is the identity.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..fields import Box, InitialDensity, PdeConfig
from ..kernels import RieszParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RegimeSpec:
    d: int = 3
    lam: float = 0.5
    beta: float = 0.05
    alpha_list: tuple = (0.3,)
    theta_list: tuple = (0.3,)
    sigma: float = 0.25
    kappa: float = 1.0
    N_list: tuple = (500, 1000, 2000, 4000)
    R: int = 50
    T_end: float = 0.5
    dt: float = 0.01
    L: float = 16.0
    M: int = 64
    u0: str = "gaussian"         # gaussian | two_bump
    u0_std: float = 1.0
    u0_sep: float = 2.0
    seed: int = 20240601
    interaction: bool = True
    lln_every: int = 10          # LLN statistics every k steps
    clt_N_list: tuple = (1000, 2000)
    clt_R: int = 400
    clt_times: tuple = (0.0, 0.5)
    eta_list: tuple = (0.4, 0.2, 0.1, 0.05)
    scaling_N_list: tuple = (1024, 2048, 4096, 8192, 16384, 32768, 65536, 131072, 262144)
    realization_offset: int = 0

    # -- derived objects -------------------------------------------------

    @property
    def params(self) -> RieszParams:
        return RieszParams(self.d, self.lam)

    @property
    def box(self) -> Box:
        return Box(self.L, self.M, self.d)

    @property
    def init(self) -> InitialDensity:
        if self.u0 == "gaussian":
            return InitialDensity.gaussian(self.u0_std)
        if self.u0 == "two_bump":
            return InitialDensity.two_bump(self.u0_sep, self.u0_std)
        raise ConfigError(f"unknown u0 family {self.u0!r}")

    def pde_config(self, **kw) -> PdeConfig:
        base = dict(sigma=self.sigma, kappa=self.kappa, dt=self.dt, T_end=self.T_end,
                    interaction=self.interaction)
        base.update(kw)
        return PdeConfig(**base)

    def eta(self, N) -> float:
        return float(N) ** (-self.beta)

    def replace(self, **kw) -> "RegimeSpec":
        return dataclasses.replace(self, **kw)

    # -- serialization ---------------------------------------------------

    def canonical(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            lines.append(f"{f.name} = {_fmt(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @classmethod
    def parse(cls, text: str) -> "RegimeSpec":
        kinds = {f.name: f for f in fields(cls)}
        defaults = cls()
        kw = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected key = value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in kinds:
                raise ConfigError(f"line {n}: unknown key {key!r}")
            if key in kw:
                raise ConfigError(f"line {n}: duplicate key {key!r}")
            kw[key] = _coerce(val, getattr(defaults, key), key)
        try:
            return cls(**kw)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path) -> "RegimeSpec":
        return cls.parse(Path(path).read_text())

    def __post_init__(self):
        if self.R < 1 or self.clt_R < 1:
            raise ConfigError("realization counts must be positive")
        if self.kappa not in (1.0, -1.0):
            raise ConfigError("kappa must be +1 or -1")
        if self.sigma <= 0 or self.dt <= 0 or self.T_end < 0:
            raise ConfigError("sigma, dt must be positive and T_end nonnegative")
        if not self.N_list or min(self.N_list) < 1:
            raise ConfigError("N_list must hold positive integers")
        if self.lln_every < 1:
            raise ConfigError("lln_every must be >= 1")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def _coerce(text: str, default, key):
    try:
        if isinstance(default, bool):
            t = text.lower()
            if t not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return t in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [s.strip() for s in text.split(",") if s.strip()]
            proto = default[0] if default else 0.0
            return tuple(_coerce(s, proto, key) for s in items)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
