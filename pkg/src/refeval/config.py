"""Run configuration: seeds, paths, pipeline thresholds, and eval parameters.

Defaults carry the published constants (mask-area minimums, per-category
MSE cutoffs, patch bands, bootstrap count, significance level). Client
endpoints and API keys can be overridden through environment variables
(REFEVAL_<NAME>_ENDPOINT, REFEVAL_API_KEY).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .core import DomainError


@dataclass
class PatchSettings:
    size_range: tuple[int, int] = (250, 300)
    unit: str = "side"
    max_patches: int = 5
    coverage: tuple[float, float] = (0.30, 0.50)
    max_attempts: int = 50


@dataclass
class InpaintSettings:
    eta: float = 1.0
    guidance_scale: float = 3.0
    variants: int = 5


@dataclass
class EvalSettings:
    n_bootstrap: int = 1000
    p_level: float = 0.05
    min_sample: int = 100
    rounding_decimals: int = 2


@dataclass
class ClientSettings:
    mode: str = "mock"  # mock | live
    endpoints: dict = field(default_factory=dict)  # client name -> URL
    api_key: str = ""
    timeout: float = 30.0
    retries: int = 2
    cache_enabled: bool = True
    embed_dim: int = 32


@dataclass
class RunConfig:
    seed: int = 0
    image_root: str = "."
    out_dir: str = "out"
    cache_dir: str = ""
    blur_threshold: float = 100.0
    min_mask_area: dict = field(
        default_factory=lambda: {"Object": 60_000, "Animal": 60_000, "Human": 20_000}
    )
    mse_cutoffs: dict = field(
        default_factory=lambda: {"Object": 6_500.0, "Animal": 5_400.0, "Human": 20_000.0}
    )
    patch: PatchSettings = field(default_factory=PatchSettings)
    inpaint: InpaintSettings = field(default_factory=InpaintSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    clients: ClientSettings = field(default_factory=ClientSettings)

    def __post_init__(self):
        if self.blur_threshold <= 0:
            raise DomainError("blur_threshold must be positive")
        for name, table in (("min_mask_area", self.min_mask_area),
                            ("mse_cutoffs", self.mse_cutoffs)):
            if any(v <= 0 for v in table.values()):
                raise DomainError(f"{name} values must be positive")

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        data = json.loads(Path(path).read_text())
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        for key, sub in (("patch", PatchSettings), ("inpaint", InpaintSettings),
                         ("eval", EvalSettings), ("clients", ClientSettings)):
            if key in data and isinstance(data[key], dict):
                data[key] = sub(**data[key])
        cfg = cls(**data)
        if isinstance(cfg.patch.size_range, list):
            cfg.patch.size_range = tuple(cfg.patch.size_range)
        if isinstance(cfg.patch.coverage, list):
            cfg.patch.coverage = tuple(cfg.patch.coverage)
        cfg._apply_env_overrides()
        return cfg

    def _apply_env_overrides(self) -> None:
        for name in ("caption", "perturb", "inpaint", "detect", "embed", "quality",
                     "inference"):
            env = os.environ.get(f"REFEVAL_{name.upper()}_ENDPOINT")
            if env:
                self.clients.endpoints[name] = env
        key = os.environ.get("REFEVAL_API_KEY")
        if key:
            self.clients.api_key = key

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]
