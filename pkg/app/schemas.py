from enum import Enum
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

# ==================== RUN CONFIGURATION ====================


class Method(str, Enum):
    NEW_MIXED = "new_mixed"
    ANDREEV = "andreev"
    STEINBACH = "steinbach"


class ProblemKind(str, Enum):
    SMOOTH = "smooth"
    SINGULAR = "singular"
    ZERO = "zero"


class SolverKind(str, Enum):
    DIRECT = "direct"
    SCHUR_CG = "schur_cg"


class RunConfig(BaseModel):
    """Validated configuration of one CLI run (file values merged with flags)."""

    method: Method = Method.NEW_MIXED
    problem: ProblemKind = ProblemKind.SMOOTH
    beta: float = Field(0.0, ge=0.0, description="Convection coefficient")
    # Temporal element counts; the spatial count equals N (h_t = h_x)
    levels: List[int] = Field(default_factory=lambda: [8, 16, 32, 64, 128])
    ref_factor: int = Field(4, ge=2)
    solver: SolverKind = SolverKind.DIRECT
    out: str = "results.csv"
    jobs: int = Field(1, ge=1)

    @field_validator("levels", mode="before")
    @classmethod
    def _split_levels(cls, value):
        if isinstance(value, str):
            parts = [p.strip() for p in value.split(",") if p.strip()]
            if not parts:
                raise ValueError("levels must not be empty")
            return [int(p) for p in parts]
        return value

    @field_validator("levels")
    @classmethod
    def _check_levels(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("levels must not be empty")
        if any(n < 2 for n in value):
            raise ValueError("every level N must be >= 2")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("levels must be strictly increasing")
        return value

    @model_validator(mode="after")
    def _check_solver(self) -> "RunConfig":
        if self.method == Method.STEINBACH and self.solver == SolverKind.SCHUR_CG:
            raise ValueError("schur_cg applies to the saddle-point methods only")
        return self

    class Config:
        json_schema_extra = {
            "example": {
                "method": "new_mixed",
                "problem": "singular",
                "beta": 100.0,
                "levels": [8, 16, 32, 64, 128],
                "ref_factor": 4,
                "solver": "direct",
                "out": "singular_beta100.csv",
                "jobs": 2,
            }
        }


# ==================== SOLVES ====================


class SolverDiagnostics(BaseModel):
    solver: str
    residual: float = Field(..., ge=0.0, description="Relative algebraic residual of the full system")
    iterations: int = 0
    factorizations: int = 0
    refinement_steps: int = 0
    min_ritz: Optional[float] = None


class ErrorReport(BaseModel):
    """Error norms of one discrete solution against the exact solution."""

    dim_X: int
    err_X: float = Field(..., ge=0.0)
    err_Y: float = Field(..., ge=0.0)
    err_T: float = Field(..., ge=0.0, description="L2(Omega) error of the trace at t = T")
    err_0: float = Field(..., ge=0.0, description="L2(Omega) error of the trace at t = 0")
    err_dual: float = Field(..., ge=0.0, description="Reference-space dual norm of the time derivative error")
    err_aux_Y: Optional[float] = Field(None, description="||u - lambda||_Y (new_mixed) or ||mu||_Y (andreev)")
    ref_refinement: int

    class Config:
        json_schema_extra = {
            "example": {
                "dim_X": 2159,
                "err_X": 0.0421,
                "err_Y": 0.0398,
                "err_T": 0.0011,
                "err_0": 0.0023,
                "err_dual": 0.0137,
                "err_aux_Y": 0.0455,
                "ref_refinement": 4,
            }
        }


# ==================== STABILITY ====================


class InfSupResult(BaseModel):
    gamma: float = Field(..., gt=0.0, le=1.0 + 1e-10)
    method: Literal["factorized", "full", "temporal-only", "spatial-only"]
    kernel_dim: int = 0
    diagnostics: Dict[str, float] = Field(default_factory=dict)


class QuasiOptConstants(BaseModel):
    rho: float = Field(..., ge=0.0, lt=1.0)
    C: float = Field(..., gt=0.0)
    gamma_in: float
    aa_norm_in: float


class DegradationResult(BaseModel):
    n_elements: int
    h: float
    gamma_full: Optional[float] = None
    zigzag_value: float
    g_norm: float = Field(..., description="||G x|| from the assembled bidiagonal G")
    g_norm_expected: float = Field(..., description="1/2 sqrt(h)")


# ==================== TABLES ====================


class ConvergenceRow(BaseModel):
    N: int
    dim_X: int
    err_X: float
    err_Y: float
    err_0: float
    err_T: float
    err_aux_Y: Optional[float] = None
    quasiopt_ratio: float
    quasiopt_bound: Optional[float] = None
    wall_time: float


class InfSupRow(BaseModel):
    N: int
    spatial_gamma: float
    temporal_gamma: float
    factorized_gamma: float
    full_gamma: Optional[float] = None
    steinbach_gamma_full: Optional[float] = None
    zigzag_value: Optional[float] = None
    aa_norm: float
    C_delta: Optional[float] = None
