"""
File models for operators, subspaces, sections, supermap specs, POVMs and manifests.

Matrices are stored row-major over the full tensor space with real and imaginary parts in
separate arrays; the first listed factor is the most significant one.
"""

import math
from typing import Annotated, Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, TypeAdapter, field_validator, model_validator


class _FileModel(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)


class FactorModel(_FileModel):
    """One tensor factor: a label and its block sizes."""

    label: int = Field(ge=0)
    blocks: list[PositiveInt] = Field(min_length=1)

    @property
    def dim(self) -> int:
        return sum(self.blocks)


class MatrixModel(_FileModel):
    re: list[list[float]]
    im: list[list[float]]

    @model_validator(mode="after")
    def check_square(self) -> "MatrixModel":
        n = len(self.re)
        if len(self.im) != n:
            raise ValueError("re and im parts have different row counts")
        for row_re, row_im in zip(self.re, self.im):
            if len(row_re) != n or len(row_im) != n:
                raise ValueError(f"matrix must be square {n}x{n}")
        return self


def _check_labels(factors: list[FactorModel]) -> list[int]:
    labels = [f.label for f in factors]
    if len(set(labels)) != len(labels):
        raise ValueError(f"factor labels must be distinct, got {labels}")
    return labels


class OperatorFile(_FileModel):
    kind: Literal["operator"] = "operator"
    factors: list[FactorModel] = Field(min_length=1)
    matrix: MatrixModel
    role: Optional[Literal["choi", "state"]] = None
    output_labels: list[int] = Field(default_factory=list)
    input_labels: list[int] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_layout(self) -> "OperatorFile":
        labels = _check_labels(self.factors)
        expected = math.prod(f.dim for f in self.factors)
        if len(self.matrix.re) != expected:
            raise ValueError(f"matrix is {len(self.matrix.re)}x{len(self.matrix.re)}, factors need {expected}x{expected}")
        if self.role == "choi":
            if sorted(self.output_labels + self.input_labels) != sorted(labels):
                raise ValueError("output and input labels of a Choi file must partition the factor labels")
            if not self.output_labels:
                raise ValueError("a Choi file needs at least one output label")
        elif self.output_labels or self.input_labels:
            raise ValueError("output/input labels are only meaningful with role 'choi'")
        return self


class SubspaceFile(_FileModel):
    kind: Literal["subspace"] = "subspace"
    factors: list[FactorModel] = Field(min_length=1)
    basis: list[MatrixModel] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_basis(self) -> "SubspaceFile":
        _check_labels(self.factors)
        expected = math.prod(f.dim for f in self.factors)
        for element in self.basis:
            if len(element.re) != expected:
                raise ValueError(f"basis element is {len(element.re)}x{len(element.re)}, expected {expected}x{expected}")
        return self


class SectionFile(_FileModel):
    kind: Literal["section"] = "section"
    subspace: SubspaceFile
    rho: Optional[OperatorFile] = None
    scale: float = Field(default=1.0, gt=0.0)

    @model_validator(mode="after")
    def check_rho(self) -> "SectionFile":
        if self.rho is not None and self.rho.factors != self.subspace.factors:
            raise ValueError("rho and the subspace must share one algebra descriptor")
        return self


class SpecFile(_FileModel):
    """A supermap tower; a missing base means the full state space on ``base_factors``."""

    kind: Literal["supermap", "comb", "tester"] = "supermap"
    base: Optional[SectionFile] = None
    base_factors: list[FactorModel] = Field(default_factory=list)
    chain: list[FactorModel] = Field(min_length=1)
    outcomes: Optional[PositiveInt] = None

    @model_validator(mode="after")
    def check_spec(self) -> "SpecFile":
        if self.base is None and not self.base_factors:
            raise ValueError("a spec needs a base section or base factors")
        base = self.base.subspace.factors if self.base is not None else self.base_factors
        _check_labels(base + self.chain)
        if self.kind == "tester" and self.outcomes is None:
            raise ValueError("a tester spec needs the number of outcomes")
        if self.kind in ("comb", "tester") and len(self.chain) % 2 == 0:
            raise ValueError("a comb spec lists an odd number of chain algebras after the base")
        return self


class PovmFile(_FileModel):
    kind: Literal["povm"] = "povm"
    elements: list[OperatorFile] = Field(min_length=1)

    @field_validator("elements")
    @classmethod
    def check_shared_factors(cls, elements: list[OperatorFile]) -> list[OperatorFile]:
        if any(e.factors != elements[0].factors for e in elements):
            raise ValueError("all POVM elements must share one algebra descriptor")
        return elements


class ManifestFile(_FileModel):
    """Outcome of a decomposition run: component files and the reconstruction residual."""

    kind: Literal["manifest"] = "manifest"
    method: str
    input: str
    tol: float
    residual: float
    holds: bool
    components: dict[str, str] = Field(default_factory=dict)
    details: dict[str, Any] = Field(default_factory=dict)


AnyFile = Annotated[
    Union[OperatorFile, SubspaceFile, SectionFile, SpecFile, PovmFile, ManifestFile],
    Field(discriminator="kind"),
]

any_file_adapter = TypeAdapter(AnyFile)
