import os
from dataclasses import dataclass, replace, asdict
from pathlib import Path
from typing import Dict, Any, Optional

import yaml
from dotenv import load_dotenv

load_dotenv()

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent / "config.yaml"


class Config:
    """Configuration manager for the differential K-theory engine."""

    def __init__(self, config_path: Optional[str] = None):
        self.config_path = Path(config_path or os.environ.get("DKDESK_CONFIG", DEFAULT_CONFIG_PATH))
        self._config = self._load_config()

    def _load_config(self) -> Dict[str, Any]:
        """Load configuration from YAML file."""
        if not self.config_path.exists():
            raise FileNotFoundError(f"Configuration file not found: {self.config_path}")

        with open(self.config_path, 'r', encoding='utf-8') as f:
            return yaml.safe_load(f) or {}

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value using dot notation (e.g., 'numerics.circle_points')."""
        keys = key.split('.')
        value = self._config

        for k in keys:
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default

        return value

    @property
    def numerics_config(self) -> Dict[str, Any]:
        return self._config.get('numerics') or {}

    @property
    def tolerance_config(self) -> Dict[str, Any]:
        return self._config.get('tolerances') or {}

    @property
    def runner_config(self) -> Dict[str, Any]:
        return self._config.get('runner') or {}


NUMERICS_RANGES = {
    "circle_points": (8, 4096),
    "sphere_order": (8, 256),
    "sphere_phi_points": (8, 512),
    "interval_order": (2, 128),
    "t_quadrature": (2, 128),
    "simplex_quadrature": (2, 128),
    "holonomy_steps": (16, 65536),
    "threads": (1, 64),
}


@dataclass(frozen=True)
class Numerics:
    """Grid sizes, quadrature orders and tolerances shared by one computation."""

    circle_points: int = 128
    sphere_order: int = 64
    sphere_phi_points: int = 64
    interval_order: int = 32
    t_quadrature: int = 32
    simplex_quadrature: int = 32
    holonomy_steps: int = 1024
    richardson_order: int = 4
    assert_tolerance: float = 1e-7
    accept_tolerance: float = 1e-6
    fiber_index_hard: float = 1e-4
    imaginary_tolerance: float = 1e-9
    threads: int = 1

    def __post_init__(self):
        for name, (low, high) in NUMERICS_RANGES.items():
            value = getattr(self, name)
            if not (low <= value <= high):
                raise ValueError(f"numerics.{name}={value} outside [{low}, {high}]")
        if self.sphere_order % 2:
            raise ValueError("numerics.sphere_order must be even (two panels per cap)")

    @classmethod
    def from_config(cls, cfg: Optional[Config] = None) -> "Numerics":
        cfg = cfg or config
        grids, tolerances = cfg.numerics_config, cfg.tolerance_config
        env_threads = os.environ.get("DKDESK_THREADS")
        threads = int(env_threads) if env_threads else cfg.runner_config.get("threads", 1)
        sphere_order = grids.get("sphere_order", 64)
        return cls(
            circle_points=grids.get("circle_points", 128),
            sphere_order=sphere_order,
            sphere_phi_points=grids.get("sphere_phi_points", sphere_order),
            interval_order=grids.get("interval_order", 32),
            t_quadrature=grids.get("t_quadrature", 32),
            simplex_quadrature=grids.get("simplex_quadrature", 32),
            holonomy_steps=grids.get("holonomy_steps", 1024),
            richardson_order=grids.get("richardson_order", 4),
            assert_tolerance=tolerances.get("assert", 1e-7),
            accept_tolerance=tolerances.get("accept", 1e-6),
            fiber_index_hard=tolerances.get("fiber_index_hard", 1e-4),
            imaginary_tolerance=tolerances.get("imaginary", 1e-9),
            threads=threads,
        )

    def with_overrides(self, **overrides: Any) -> "Numerics":
        """Copy with the non-None overrides applied (CLI flags)."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        if "sphere_order" in changes and "sphere_phi_points" not in changes:
            changes["sphere_phi_points"] = changes["sphere_order"]
        return replace(self, **changes)

    def coarsened(self) -> "Numerics":
        """The coarse level of the two-level convergence table."""
        half_sphere = max(8, (self.sphere_order // 2) // 2 * 2)
        return replace(
            self,
            circle_points=max(8, self.circle_points // 2),
            sphere_order=half_sphere,
            sphere_phi_points=max(8, self.sphere_phi_points // 2),
            interval_order=max(2, self.interval_order // 2),
            t_quadrature=max(2, self.t_quadrature // 2),
            simplex_quadrature=max(2, self.simplex_quadrature // 2),
        )

    def grid_levels(self) -> Dict[str, int]:
        return {"circle_points": self.circle_points, "sphere_order": self.sphere_order,
                "sphere_phi_points": self.sphere_phi_points}

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


# Global config instance
config = Config()
