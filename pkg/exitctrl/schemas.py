"""Pydantic schemas for input documents, solver configs and reports"""
from typing import Any, Dict, List, Literal, Optional, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from exitctrl.exceptions import SchemaError


ModelT = TypeVar("ModelT", bound=BaseModel)


def validate_document(model: Type[ModelT], doc: Any, root: str = "") -> ModelT:
    """
    Validate a parsed JSON document against a schema.

    Args:
        model: Pydantic model class
        doc: Parsed JSON value
        root: JSON path prefix for error messages

    Returns:
        Validated model instance

    Raises:
        SchemaError: naming the dotted path of the first offending field
    """
    try:
        return model.model_validate(doc)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = ".".join(str(part) for part in err["loc"])
        path = ".".join(p for p in (root, loc) if p)
        raise SchemaError(err["msg"], path or "$") from exc


# Problem document schemas
class DimensionDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    d: int = Field(..., ge=1)
    m: int = Field(..., ge=1)
    k: int = Field(..., ge=1)


class DomainDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["interval", "ball", "box"]
    center: List[float] = Field(..., min_length=1)
    radius: Optional[float] = Field(None, gt=0)
    half_widths: Optional[List[float]] = None
    exterior_radius: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def check_extent(self) -> "DomainDoc":
        if self.kind == "box":
            if not self.half_widths or any(h <= 0 for h in self.half_widths):
                raise ValueError("box domains need positive half_widths")
        elif self.radius is None:
            raise ValueError(f"{self.kind} domains need a radius")
        return self


class ControlsDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    points: List[List[float]] = Field(..., min_length=1)


class ConstantsDoc(BaseModel):
    """Declared constants; anything left out is estimated by derive_constants"""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    L: Optional[float] = Field(None, ge=0)
    beta: Optional[float] = Field(None, ge=0)
    alpha: Optional[float] = None
    mu: Optional[float] = None
    lam: Optional[float] = Field(None, gt=0, alias="lambda")
    rho: Optional[float] = Field(None, gt=0)
    L0: Optional[float] = Field(None, ge=0)
    Ltilde: Optional[float] = Field(None, ge=0)


class ProblemDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: Optional[str] = None
    catalog: Optional[str] = None
    params: Dict[str, float] = Field(default_factory=dict)
    dimension: Optional[DimensionDoc] = None
    b: Optional[List[Any]] = None
    sigma: Optional[List[List[Any]]] = None
    f: Any = None
    g: Any = None
    domain: Optional[DomainDoc] = None
    controls: Optional[ControlsDoc] = None
    constants: ConstantsDoc = Field(default_factory=ConstantsDoc)

    @model_validator(mode="after")
    def check_form(self) -> "ProblemDocument":
        explicit = ("dimension", "b", "sigma", "f", "g", "domain", "controls")
        if self.catalog is not None:
            given = [key for key in explicit if getattr(self, key) is not None]
            if given:
                raise ValueError(f"catalog documents cannot also give {given}")
            return self
        missing = [key for key in explicit if getattr(self, key) is None]
        if missing:
            raise ValueError(f"explicit problem documents need {missing}")
        return self


# Solver configuration
class SimConfig(BaseModel):
    """Time grid, path count, master seed and exit detection mode"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    dt: float = Field(1e-3, gt=0)
    t_max: float = Field(20.0, gt=0)
    n_paths: int = Field(10000, ge=1)
    master_seed: int = Field(0, ge=0, lt=2**64)
    exit_correction: Literal["grid-crossing", "bridge-corrected"] = "bridge-corrected"

    @model_validator(mode="after")
    def check_horizon(self) -> "SimConfig":
        if self.dt >= self.t_max:
            raise ValueError("dt must be smaller than t_max")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))


class RegressionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    basis: Literal["polynomial", "piecewise"] = "polynomial"
    degree: int = Field(2, ge=0)
    cells: int = Field(16, ge=1)
    ridge: float = Field(0.0, ge=0)
    picard_iterations: int = Field(3, ge=1)

    @classmethod
    def default_for(cls, d: int) -> "RegressionConfig":
        return cls() if d <= 2 else cls(basis="piecewise", cells=8)


class GridConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    nodes: List[int] = Field(default_factory=lambda: [201], min_length=1)
    max_policy_iterations: int = Field(50, ge=1)
    max_semilinear_iterations: int = Field(2000, ge=1)
    tolerance: float = Field(1e-9, gt=0)
    upwind: bool = True
    damping: float = Field(0.5, gt=0, le=1)

    @model_validator(mode="after")
    def check_nodes(self) -> "GridConfig":
        if any(n < 3 for n in self.nodes):
            raise ValueError("at least 3 nodes per axis")
        return self


class ProbeConfig(BaseModel):
    """Sampling settings for assumption audits and constant estimation"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = Field(0, ge=0, lt=2**64)
    sample_count: int = Field(1000, ge=2)
    y_box: float = Field(2.0, gt=0)
    z_box: float = Field(2.0, gt=0)
    min_separation: float = Field(1e-3, gt=0)
    rel_tol: float = Field(1e-9, ge=0)
    mu_ladder: List[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0, 1.5, 2.0])
    mu_paths: int = Field(2000, ge=10)
    mu_dt: float = Field(5e-3, gt=0)
    mu_horizon: float = Field(3.0, gt=0)
    mu_rel_change: float = Field(0.05, gt=0)
    k_start: float = Field(1.0, gt=0)
    k_max: float = Field(256.0, gt=0)
    barrier_samples: int = Field(400, ge=2)


class VerifyConfig(BaseModel):
    """Per-check settings for the check harness"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    checks: List[str] = Field(default_factory=list)
    bias_budget: float = Field(0.05, ge=0)
    c_bias: float = Field(1.0, ge=0)
    dpp_thetas: List[float] = Field(default_factory=lambda: [0.0, 0.1])
    dpp_subdomain_fraction: Optional[float] = Field(0.5, gt=0, lt=1)
    holder_pairs: int = Field(24, ge=4)
    holder_min_separation: float = Field(2e-3, gt=0)
    holder_max_separation: float = Field(0.5, gt=0)
    comparison_pairs: int = Field(10, ge=1)
    invert_expectation: bool = False
    stability_sizes: List[float] = Field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    supermartingale_theta: Optional[float] = None
    supermartingale_bins: int = Field(8, ge=1)
    supermartingale_times: List[float] = Field(default_factory=lambda: [0.05, 0.1, 0.2, 0.4])
    epsilons: List[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])
    section5_point: Optional[List[float]] = None
    section5_phi: Any = None
    section5_paths: int = Field(20000, ge=10)
    section5_steps: int = Field(50, ge=2)
    section5_policy_index: Optional[int] = Field(None, ge=0)
    section5_bias_budget: float = Field(5.0, ge=0)
    moment_mus: List[float] = Field(default_factory=lambda: [0.5, 1.0])
    moment_blowup_mu: float = 2.5
    moment_paths: int = Field(20000, ge=10)
    moment_dt: float = Field(5e-3, gt=0)
    moment_horizon: float = Field(3.0, gt=0)
    grid_ladder: List[int] = Field(default_factory=lambda: [21, 41, 81, 161])
    xval_probes: Optional[List[List[float]]] = None
    xval_probe_count: int = Field(5, ge=1)

    @model_validator(mode="after")
    def check_epsilons(self) -> "VerifyConfig":
        if any(not 0 < eps <= 1 for eps in self.epsilons):
            raise ValueError("epsilon values must lie in (0, 1]")
        return self


class OutputDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    detail: bool = False


class RunConfig(BaseModel):
    """Top-level run configuration document"""
    model_config = ConfigDict(extra="forbid")

    problem: Dict[str, Any]
    simulation: SimConfig = Field(default_factory=SimConfig)
    regression: Optional[RegressionConfig] = None
    grid: GridConfig = Field(default_factory=GridConfig)
    probe: ProbeConfig = Field(default_factory=ProbeConfig)
    verify: VerifyConfig = Field(default_factory=VerifyConfig)
    x0: Optional[List[float]] = None
    output: OutputDoc = Field(default_factory=OutputDoc)


# Report schemas
class CheckReport(BaseModel):
    name: str
    status: Literal["pass", "fail", "skipped"]
    measured: Optional[float] = None
    tolerance: Optional[float] = None
    margin: Optional[float] = None
    reason: Optional[str] = None
    sample_sizes: Dict[str, int] = Field(default_factory=dict)
    seeds: List[int] = Field(default_factory=list)
    narrative: str = ""
    details: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_status_fields(self) -> "CheckReport":
        if self.status == "fail" and self.margin is None:
            raise ValueError("failed checks carry the violation margin")
        if self.status == "skipped" and not self.reason:
            raise ValueError("skipped checks carry a reason")
        return self


class RunManifest(BaseModel):
    command: str
    digest: str
    master_seed: int
    artifacts: List[str] = Field(default_factory=list)
    stage_seconds: Dict[str, float] = Field(default_factory=dict)
    version: str
    inputs: Dict[str, Any] = Field(default_factory=dict)
