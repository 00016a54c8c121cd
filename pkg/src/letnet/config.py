"""Experiment configuration: flat JSON on top of built-in scale presets."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from os import PathLike

from .errors import ConfigError
from .nets import Arch, DEFAULT_K

_LAYERS = {
    "desk": {"letnet-fixed": 20, "letnet-var": 20, "fletnet": 10},
    "paper": {"letnet-fixed": 100, "letnet-var": 100, "fletnet": 50},
}

SCALES = {
    "desk": dict(n=64, m=45, n_train=50, n_val=10, n_test=100, trials=3, epochs=10, rho=[0.2], snr_db=[20.0]),
    "paper": dict(
        n=256,
        m=180,
        n_train=100,
        n_val=20,
        n_test=100,
        trials=10,
        epochs=60,
        rho=[0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
        snr_db=[10.0, 15.0, 20.0, 25.0, 30.0],
    ),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of a run.

    ``layers`` of ``None`` resolves to the architecture's default at the
    chosen scale.  Lambda grids are given as ``[lo, hi, count]`` and expanded
    log-uniformly.
    """

    scale: str = "desk"
    n: int = 64
    m: int = 45
    rho: list[float] = field(default_factory=lambda: [0.2])
    snr_db: list[float] = field(default_factory=lambda: [20.0])
    n_train: int = 50
    n_val: int = 10
    n_test: int = 100
    trials: int = 3
    arch: str = "letnet-var"
    layers: int | None = None
    K: int = DEFAULT_K
    ista_lambda_grid: list[float] = field(default_factory=lambda: [1e-5, 0.1, 10])
    net_lambda_grid: list[float] = field(default_factory=lambda: [0.05, 0.5, 5])
    solver_iters: int = 100
    eps_cg: float = 5e-4
    gamma0: float = 1.0
    epochs: int = 10
    cg_cap: int = 250
    literal_lm: bool = False
    seed: int = 0
    workers: int = 1
    curve_example: int = 0

    def __post_init__(self) -> None:
        if self.scale not in SCALES:
            raise ConfigError(f"unknown scale {self.scale!r}")
        try:
            Arch(self.arch)
        except ValueError:
            raise ConfigError(f"unknown architecture {self.arch!r}") from None
        if not 0 < self.m <= self.n:
            raise ConfigError("need 0 < m <= n")
        if not self.rho or not self.snr_db:
            raise ConfigError("rho and snr_db lists must be nonempty")
        if any(not 0.0 <= r <= 1.0 for r in self.rho):
            raise ConfigError("rho values must lie in [0, 1]")
        if self.n_train < 1 or self.n_test < 1 or self.n_val < 0 or self.trials < 1:
            raise ConfigError("need n_train, n_test, trials >= 1 and n_val >= 0")
        if self.K < 2 or (self.layers is not None and self.layers < 1):
            raise ConfigError("need K >= 2 and layers >= 1")
        for name in ("ista_lambda_grid", "net_lambda_grid"):
            g = getattr(self, name)
            if len(g) != 3 or not 0 < g[0] <= g[1] or int(g[2]) < 1:
                raise ConfigError(f"{name} must be [lo, hi, count] with 0 < lo <= hi")
        if self.epochs < 0 or self.cg_cap < 1 or not self.eps_cg > 0 or not self.gamma0 > 0:
            raise ConfigError("invalid training settings")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        if self.workers < 1:
            raise ConfigError("workers must be positive")

    @property
    def L(self) -> int:
        return self.layers if self.layers is not None else _LAYERS[self.scale][self.arch]

    @staticmethod
    def _grid(triple: list[float]) -> list[float]:
        lo, hi, count = float(triple[0]), float(triple[1]), int(triple[2])
        if count == 1:
            return [lo]
        step = (math.log10(hi) - math.log10(lo)) / (count - 1)
        return [10.0 ** (math.log10(lo) + i * step) for i in range(count)]

    @property
    def ista_grid(self) -> list[float]:
        return self._grid(self.ista_lambda_grid)

    @property
    def net_grid(self) -> list[float]:
        return self._grid(self.net_lambda_grid)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form, truncated to 16 hex digits."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def header(self, **extra: object) -> dict:
        return {"config_hash": self.config_hash(), "seed": self.seed, **extra}


def load_config(
    path: str | PathLike | None = None,
    scale: str | None = None,
    overrides: dict | None = None,
) -> ExperimentConfig:
    """Layer a JSON file and explicit overrides over the scale preset.

    Raises:
        ConfigError: on unreadable JSON, unknown keys or invalid values.
    """
    raw: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    merged = dict(raw)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    scale = scale or merged.get("scale", "desk")
    if scale not in SCALES:
        raise ConfigError(f"unknown scale {scale!r}")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(merged) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    values = dict(SCALES[scale])
    values.update(merged)
    values["scale"] = scale
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
