"""Versioned JSON run configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .calib import CalibOptions, CalibrationError, calibrate, load_lane_csv, sample_lanes_path
from .fluid import Mode
from .mech import Mechanism
from .net import Network, NetworkError, scale_instance, theorem_instance

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _check_keys(data: dict, allowed: set[str], where: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    bad = sorted(set(data) - allowed)
    if bad:
        raise ConfigError(f"{where}: unknown field {bad[0]!r}")


@dataclass(frozen=True)
class NetworkSource:
    """Where the network comes from: ``sample``, ``csv``, ``inline`` or ``scaling``."""

    kind: str = "sample"
    path: str | None = None
    inline: dict | None = None
    calib: CalibOptions = field(default_factory=CalibOptions)

    KINDS = ("sample", "csv", "inline", "scaling")

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkSource":
        _check_keys(data, {"kind", "path", "network", "calib"}, "network")
        kind = data.get("kind", "sample")
        if kind not in cls.KINDS:
            raise ConfigError(f"network.kind: expected one of {list(cls.KINDS)}, got {kind!r}")
        if kind == "csv" and not isinstance(data.get("path"), str):
            raise ConfigError("network.path: required string for kind 'csv'")
        if kind == "inline" and not isinstance(data.get("network"), dict):
            raise ConfigError("network.network: required object for kind 'inline'")
        try:
            calib = CalibOptions.from_dict(data.get("calib", {}))
        except (CalibrationError, TypeError, ValueError) as exc:
            raise ConfigError(f"network.calib: {exc}") from None
        return cls(kind, data.get("path"), data.get("network"), calib)

    def build(self, share: float | None, theta: float, base_dir: Path | None = None) -> Network:
        if self.kind == "scaling":
            return theorem_instance(theta)
        if self.kind == "inline":
            try:
                net = Network.from_dict(self.inline)
            except (NetworkError, KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"network.network: {exc}") from None
        else:
            path = sample_lanes_path() if self.kind == "sample" else Path(self.path)
            if not path.is_absolute() and base_dir is not None and self.kind == "csv":
                path = base_dir / path
            net = calibrate(load_lane_csv(path), 0.01 if share is None else share, self.calib)
        return net if theta == 1 else scale_instance(net, theta)


@dataclass(frozen=True)
class RunConfig:
    version: int = SCHEMA_VERSION
    network: NetworkSource = field(default_factory=NetworkSource)
    mechanisms: tuple[str, ...] = ("SP", "AUC", "HYB")
    mode: str = "cost"
    T: int = 1000
    T0: int = 200
    n_reps: int = 30
    base_seed: int = 0
    shares: tuple[float, ...] | None = None
    thetas: tuple[float, ...] = (1.0,)
    out_dir: str = "results"
    init_share: float = 1.0
    ic_trials: int = 10_000
    dominance_thin: int = 5
    scaling_thetas: tuple[float, ...] = (16.0, 64.0, 256.0, 1024.0)
    trace_csv: bool = True

    def __post_init__(self):
        if self.version != SCHEMA_VERSION:
            raise ConfigError(f"version: unsupported schema version {self.version!r}")
        if not self.mechanisms:
            raise ConfigError("mechanisms: must be non-empty")
        for m in self.mechanisms:
            try:
                Mechanism(m)
            except ValueError:
                raise ConfigError(f"mechanisms: unknown mechanism {m!r}") from None
        try:
            Mode(self.mode)
        except ValueError:
            raise ConfigError(f"mode: expected 'cost' or 'profit', got {self.mode!r}") from None
        for name in ("T", "T0", "n_reps", "base_seed", "ic_trials", "dominance_thin"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{name}: expected an integer, got {v!r}")
        if not self.T > self.T0 >= 0:
            raise ConfigError("T0: need T > T0 >= 0")
        if self.n_reps < 1:
            raise ConfigError("n_reps: must be >= 1")
        if self.base_seed < 0:
            raise ConfigError("base_seed: must be >= 0")
        if self.ic_trials < 1 or self.dominance_thin < 1:
            raise ConfigError("ic_trials/dominance_thin: must be >= 1")
        if self.shares is not None:
            if self.network.kind not in ("sample", "csv"):
                raise ConfigError("shares: only meaningful for lane-data networks")
            if not self.shares or any(not 0 < s <= 1 for s in self.shares):
                raise ConfigError("shares: each share must lie in (0, 1]")
        for name in ("thetas", "scaling_thetas"):
            vals = getattr(self, name)
            if not vals or any(not t > 0 for t in vals):
                raise ConfigError(f"{name}: values must be positive")
        if not 0 < self.init_share <= 1:
            raise ConfigError("init_share: must lie in (0, 1]")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        _check_keys(data, known, "config")
        kw = dict(data)
        if "version" not in kw:
            raise ConfigError("version: required")
        if "network" in kw:
            kw["network"] = NetworkSource.from_dict(kw["network"])
        for name in ("mechanisms", "thetas", "scaling_thetas", "shares"):
            if kw.get(name) is not None:
                if not isinstance(kw[name], list):
                    raise ConfigError(f"{name}: expected a list")
                kw[name] = tuple(kw[name])
        for name in ("thetas", "scaling_thetas", "shares"):
            if kw.get(name) is not None:
                try:
                    kw[name] = tuple(float(x) for x in kw[name])
                except (TypeError, ValueError):
                    raise ConfigError(f"{name}: expected numbers") from None
        for name in ("init_share",):
            if name in kw:
                if not isinstance(kw[name], (int, float)) or isinstance(kw[name], bool):
                    raise ConfigError(f"{name}: expected a number")
                kw[name] = float(kw[name])
        if "out_dir" in kw and not isinstance(kw["out_dir"], str):
            raise ConfigError("out_dir: expected a string")
        if "trace_csv" in kw and not isinstance(kw["trace_csv"], bool):
            raise ConfigError("trace_csv: expected true or false")
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def sweep(self) -> list[dict[str, float]]:
        """Sweep points as labels; market shares outermost."""
        shares = self.shares if self.shares is not None else (None,)
        return [
            {**({"share": s} if s is not None else {}), "theta": th}
            for s in shares for th in self.thetas
        ]

    def to_dict(self) -> dict:
        src = self.network
        net = {"kind": src.kind}
        if src.path is not None:
            net["path"] = src.path
        if src.inline is not None:
            net["network"] = src.inline
        net["calib"] = {f.name: getattr(src.calib, f.name) for f in fields(src.calib)}
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "network"}
        out["network"] = net
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out
