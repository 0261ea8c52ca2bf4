"""
Conversion between file models and domain values, and JSON reading/writing.
"""

import json
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, ValidationError

from src.core.exceptions import CrossCheckError, MalformedInputError, QcombError
from src.linalg.algebra import AlgebraShape
from src.linalg.choi import CpMapChoi
from src.linalg.subspace import Subspace, span
from src.linalg.tensor import Factor, Layout, LabeledOperator
from src.storage.models import (
    FactorModel,
    ManifestFile,
    MatrixModel,
    OperatorFile,
    PovmFile,
    SectionFile,
    SpecFile,
    SubspaceFile,
    any_file_adapter,
)
from src.supermaps.comb import SupermapSpec, build_spec
from src.supermaps.gchannel import GeneralizedPovm, SectionSpec

PathLike = Union[str, Path]


# ---------------------------------------------------------------------------
# Models <-> values
# ---------------------------------------------------------------------------


def factors_to_models(factors: Layout) -> list[FactorModel]:
    return [FactorModel(label=f.label, blocks=list(f.shape.blocks)) for f in factors]


def models_to_factors(models: Iterable[FactorModel]) -> Layout:
    return tuple(Factor(m.label, AlgebraShape(tuple(m.blocks))) for m in models)


def matrix_to_model(matrix: np.ndarray) -> MatrixModel:
    matrix = np.asarray(matrix, dtype=complex)
    return MatrixModel(re=matrix.real.tolist(), im=matrix.imag.tolist())


def model_to_matrix(model: MatrixModel) -> np.ndarray:
    return np.array(model.re, dtype=float) + 1j * np.array(model.im, dtype=float)


def operator_to_model(x: LabeledOperator, role: Optional[str] = None) -> OperatorFile:
    return OperatorFile(factors=factors_to_models(x.factors), matrix=matrix_to_model(x.matrix), role=role)


def model_to_operator(model: OperatorFile) -> LabeledOperator:
    return LabeledOperator(models_to_factors(model.factors), model_to_matrix(model.matrix))


def choi_to_model(m: CpMapChoi) -> OperatorFile:
    return OperatorFile(
        factors=factors_to_models(m.choi.factors),
        matrix=matrix_to_model(m.choi.matrix),
        role="choi",
        output_labels=list(m.output_labels),
        input_labels=list(m.input_labels),
    )


def model_to_choi(model: OperatorFile) -> CpMapChoi:
    if model.role != "choi":
        raise MalformedInputError("file does not hold a Choi matrix (role 'choi' with output labels)")
    return CpMapChoi.from_operator(model_to_operator(model), model.output_labels)


def subspace_to_model(j: Subspace) -> SubspaceFile:
    return SubspaceFile(factors=factors_to_models(j.factors), basis=[matrix_to_model(b.matrix) for b in j.basis])


def model_to_subspace(model: SubspaceFile) -> Subspace:
    """Orthonormalizes the stored basis."""
    factors = models_to_factors(model.factors)
    return span([LabeledOperator(factors, model_to_matrix(b)) for b in model.basis], factors)


def section_to_model(k: SectionSpec) -> SectionFile:
    return SectionFile(subspace=subspace_to_model(k.subspace), rho=operator_to_model(k.rho, "state"), scale=k.scale)


def model_to_section(model: SectionFile) -> SectionSpec:
    rho = model_to_operator(model.rho) if model.rho is not None else None
    return SectionSpec.from_subspace(model_to_subspace(model.subspace), rho, model.scale)


def spec_to_model(spec: SupermapSpec, kind: str = "supermap", outcomes: Optional[int] = None) -> SpecFile:
    chain = [spec.chain_factor(l) for l in range(1, spec.n + 1)]
    if kind == "tester":
        chain = chain[:-1]
    return SpecFile(kind=kind, base=section_to_model(spec.base), chain=factors_to_models(tuple(chain)), outcomes=outcomes)


def model_to_spec(model: SpecFile) -> SupermapSpec:
    if model.base is not None:
        base = model_to_section(model.base)
    else:
        base = SectionSpec.full(models_to_factors(model.base_factors))
    chain = models_to_factors(model.chain)
    shapes = [f.shape for f in chain]
    labels = [f.label for f in chain]
    if model.kind == "tester":
        shapes.append(AlgebraShape.classical(model.outcomes))
        labels.append(max(labels + list(base.labels)) + 1)
    return build_spec(base, shapes, labels)


def povm_to_model(m: GeneralizedPovm) -> PovmFile:
    return PovmFile(elements=[operator_to_model(e) for e in m.elements])


def model_to_povm(model: PovmFile) -> GeneralizedPovm:
    return GeneralizedPovm(tuple(model_to_operator(e) for e in model.elements))


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def write_model(path: PathLike, model: BaseModel) -> Path:
    """Write a model as JSON; floats use the shortest round-trip representation."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model.model_dump(mode="json"), f, indent=1)
    logger.debug(f"wrote {model.__class__.__name__} to {path}")
    return path


def read_model(path: PathLike):
    """Read and validate any file model, dispatching on its ``kind``."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
        return any_file_adapter.validate_python(payload)
    except (ValidationError, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise MalformedInputError(f"{path}: {e}") from e


def _expect(model, cls, path: PathLike):
    if not isinstance(model, cls):
        raise MalformedInputError(f"{path}: expected a {cls.__name__}, found kind '{model.kind}'")
    return model


def _converted(path: PathLike, cls, convert):
    model = _expect(read_model(path), cls, path)
    try:
        return convert(model)
    except (MalformedInputError, CrossCheckError):
        raise
    except QcombError as e:
        raise MalformedInputError(f"{path}: {e}") from e


def load_operator(path: PathLike) -> LabeledOperator:
    return _converted(path, OperatorFile, model_to_operator)


def load_choi(path: PathLike) -> CpMapChoi:
    return _converted(path, OperatorFile, model_to_choi)


def load_subspace(path: PathLike) -> Subspace:
    return _converted(path, SubspaceFile, model_to_subspace)


def load_section(path: PathLike) -> SectionSpec:
    return _converted(path, SectionFile, model_to_section)


def load_spec(path: PathLike) -> SupermapSpec:
    return _converted(path, SpecFile, model_to_spec)


def load_povm(path: PathLike) -> GeneralizedPovm:
    return _converted(path, PovmFile, model_to_povm)


def load_manifest(path: PathLike) -> ManifestFile:
    return _expect(read_model(path), ManifestFile, path)


def save_operator(path: PathLike, x: LabeledOperator, role: Optional[str] = None) -> Path:
    return write_model(path, operator_to_model(x, role))


def save_choi(path: PathLike, m: CpMapChoi) -> Path:
    return write_model(path, choi_to_model(m))


def load_spec_file(path: PathLike) -> tuple[SpecFile, SupermapSpec]:
    """The spec model (for its ``kind`` and ``outcomes``) together with the built spec."""
    model = _expect(read_model(path), SpecFile, path)
    return model, _converted(path, SpecFile, model_to_spec)
