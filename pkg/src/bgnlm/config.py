"""Run configuration: flat key = value files, environment and command-line overrides.

Precedence, lowest first: defaults, config file, ``BGNLM_THREADS``, flags.
"""
from __future__ import annotations

import configparser
import dataclasses
import math
import os
from dataclasses import dataclass, fields
from typing import Optional

from .alpha import AlphaStrategy
from .errors import ConfigError
from .glm import FamilySpec
from .gmjmcmc import GMJMCMCConfig
from .mjmcmc import KernelConfig
from .model_space import prior_a
from .transforms import PRESETS, REGISTRY, TransformLibrary

SECTION = "bgnlm"


@dataclass
class RunConfig:
    # data
    data: Optional[str] = None
    response: Optional[str] = None
    categorical: str = ""
    standardize: bool = False
    # model
    family: str = "gaussian"
    link: Optional[str] = None
    transforms: str = "G1"
    D: int = 5
    L: int = 20
    Q: int = 20
    prior_a: str = "aic"
    strategy: int = 1
    sigma_alpha: float = 1.0
    mc_samples: int = 100
    # schedule
    s: int = 20
    T: int = 20
    N_init: int = 200
    N_expl: int = 100
    N_final: int = 1000
    max_final_steps: Optional[int] = None
    P_p: float = 0.1
    P_mo: float = 0.3
    P_mu: float = 0.4
    P_i: float = 0.2
    keep_threshold: float = 0.5
    preselect_q0: Optional[int] = None
    protected_count: int = 3
    parent_floor: float = 0.1
    # kernel
    large_jump_flip_prob: float = 0.35
    local_steps: int = 20
    local_method: str = "greedy"
    randomize_flip_prob: float = 0.05
    mh_step_prob: float = 0.7
    # runner
    B: int = 1
    workers: Optional[int] = None
    seed: int = 0
    aggregation: str = "mass_weighted"
    threshold: float = 0.5
    detection_threshold: float = 0.25

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    # ------------------------------------------------------------ parsing
    def update(self, values: dict, source: str = "") -> "RunConfig":
        types = {f.name: f.type for f in fields(self)}
        for k, raw in values.items():
            if raw is None:
                continue
            if k not in types:
                raise ConfigError(f"unknown configuration key {k!r}{' in ' + source if source else ''}")
            setattr(self, k, _coerce(k, types[k], raw))
        return self

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        text = open(path).read()
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        if not text.lstrip().startswith("["):
            text = f"[{SECTION}]\n" + text
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        values = {}
        for sec in parser.sections():
            values.update({k: v.strip().strip('"').strip("'") for k, v in parser[sec].items()})
        return cls().update(values, str(path))

    def apply_env(self, environ=None) -> "RunConfig":
        environ = os.environ if environ is None else environ
        if environ.get("BGNLM_THREADS"):
            self.update({"B": environ["BGNLM_THREADS"]}, "BGNLM_THREADS")
        return self

    # --------------------------------------------------------- validation
    def validate(self, n: Optional[int] = None) -> None:
        try:
            FamilySpec(self.family, self.link)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.library()
        try:
            prior_a(self.prior_a, n if n is not None else 2)
        except ValueError as exc:
            raise ConfigError(f"prior_a: {exc}") from None
        if self.strategy not in (1, 2, 3, 4):
            raise ConfigError("strategy must be 1, 2, 3 or 4")
        if self.B < 1:
            raise ConfigError("B must be at least 1")
        if self.aggregation not in ("mass_weighted", "uniform"):
            raise ConfigError("aggregation must be mass_weighted or uniform")
        for name in ("threshold", "detection_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        self.to_chain_config(n).validate()

    def library(self) -> TransformLibrary:
        try:
            return TransformLibrary.from_spec(self.transforms)
        except (KeyError, ValueError) as exc:
            known = ", ".join(sorted(PRESETS)) + "; transforms: " + ", ".join(sorted(REGISTRY))
            raise ConfigError(f"unknown transform set {self.transforms!r} (presets: {known})") from exc

    def family_spec(self) -> FamilySpec:
        return FamilySpec(self.family, self.link)

    def to_chain_config(self, n: Optional[int] = None) -> GMJMCMCConfig:
        try:
            strategy = AlphaStrategy.from_number(self.strategy, self.sigma_alpha, self.mc_samples)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        kernel = KernelConfig(self.large_jump_flip_prob, self.local_steps, self.local_method,
                              self.randomize_flip_prob, self.mh_step_prob)
        return GMJMCMCConfig(
            s=self.s, T=self.T, N_init=self.N_init, N_expl=self.N_expl, N_final=self.N_final,
            kind_probs=(self.P_p, self.P_mo, self.P_mu, self.P_i), keep_threshold=self.keep_threshold,
            preselect_q0=self.preselect_q0, protected_count=self.protected_count,
            parent_floor=self.parent_floor, D=self.D, L=self.L, Q=self.Q, a=self.prior_a,
            strategy=strategy, transforms=self.library(), family=self.family_spec(), kernel=kernel,
            max_final_steps=self.max_final_steps,
        )

    def echo(self) -> str:
        lines = [f"[{SECTION}]"]
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'' if v is None else v}")
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(key, typ, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    typ = str(typ)
    optional = "Optional" in typ
    if optional and text.lower() in ("", "none", "null"):
        return None
    try:
        if "bool" in typ:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if "int" in typ:
            v = float(text)
            if v != math.floor(v):
                raise ValueError(text)
            return int(v)
        if "float" in typ:
            return float(text)
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for {key}") from None
    return text
