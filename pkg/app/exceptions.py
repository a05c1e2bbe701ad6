"""
    SpaceTimeError
      ├── InvalidArgumentError   (exit 2)  bad spaces, meshes, parameters
      ├── SolverFailureError     (exit 3)  singular factorization, CG / eigen stagnation
      └── InternalError          (exit 4)  a computed quantity contradicts the theory
"""

from typing import Any, Dict, Optional


class SpaceTimeError(Exception):
    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail

    def __str__(self) -> str:
        return self.detail


class InvalidArgumentError(SpaceTimeError, ValueError):
    exit_code = 2


class SolverFailureError(SpaceTimeError, RuntimeError):
    exit_code = 3

    def __init__(self, detail: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(detail)
        self.diagnostics: Dict[str, Any] = dict(diagnostics or {})

    def __str__(self) -> str:
        if not self.diagnostics:
            return self.detail
        extra = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{self.detail} ({extra})"


class InternalError(SpaceTimeError, AssertionError):
    exit_code = 4
