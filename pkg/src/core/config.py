"""
Configuration management for qcomb.
"""

from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Toolkit settings loaded from environment variables (prefix ``QCOMB_``)."""

    model_config = SettingsConfigDict(
        env_prefix="QCOMB_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
        validate_assignment=True,
    )

    # Numerics
    tol: float = Field(default=1e-9, gt=0.0, lt=1.0)  # relative tolerance
    rank_factor: float = Field(default=1.0, gt=0.0)  # rank cutoff = rank_factor * tol * sigma_max
    recheck_factor: float = Field(default=100.0, ge=1.0)  # decompositions are re-verified at recheck_factor * tol
    max_total_dim: int = Field(default=64, ge=1)  # budget on the dimension of A_n
    bisection_steps: int = Field(default=40, ge=1)  # section sampler

    # Processing settings
    max_workers: int = Field(default=4, ge=1)

    # Logging settings
    log_level: str = "WARNING"
    log_file: str = ""  # empty means console only

    def model_post_init(self, __context):
        """Create the log directory when a log file is configured."""
        if self.log_file:
            Path(self.log_file).parent.mkdir(parents=True, exist_ok=True)

    def rank_cutoff(self, tol: Optional[float] = None) -> float:
        """Relative rank cutoff derived from ``tol`` (default: the configured tolerance)."""
        return self.rank_factor * (self.tol if tol is None else tol)

    def recheck_tol(self, tol: Optional[float] = None) -> float:
        """Tolerance for re-verifying a constructed decomposition against its input."""
        return self.recheck_factor * (self.tol if tol is None else tol)


# Global settings instance
settings = Settings()


@contextmanager
def overridden(**values) -> Iterator[Settings]:
    """Temporarily replace fields of the global settings; ``None`` values are left alone.

    Tolerance defaults across the toolkit read ``settings`` at call time.
    """
    values = {name: value for name, value in values.items() if value is not None}
    saved = {name: getattr(settings, name) for name in values}
    try:
        for name, value in values.items():
            setattr(settings, name, value)
        yield settings
    finally:
        for name, value in saved.items():
            setattr(settings, name, value)
