"""Environment configuration."""

import os
from typing import Mapping, Optional

from pydantic import Field

from .core.models import FrozenModel

THREADS_ENV = "COLLUSION_LAB_THREADS"


class Settings(FrozenModel):
    threads: int = Field(default=1, ge=1, description="Worker processes for sweeps")

    @classmethod
    def from_env(cls, environ: Optional[Mapping[str, str]] = None) -> "Settings":
        """Read settings from the environment; invalid values raise ValueError."""
        environ = os.environ if environ is None else environ
        raw = environ.get(THREADS_ENV, "").strip()
        if not raw:
            return cls()
        try:
            threads = int(raw)
        except ValueError as exc:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from exc
        if threads < 1:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
        return cls(threads=threads)
