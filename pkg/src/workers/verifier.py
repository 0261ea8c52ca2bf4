"""
Verification Worker

Loads operator, section and spec files and runs the membership, equivalence and
application checks behind the ``verify``, ``equiv`` and ``apply`` commands.
"""

import asyncio
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Union

from loguru import logger

from src.core.config import Settings
from src.core.exceptions import MalformedInputError
from src.core.results import Verdict, failed, passed
from src.linalg.choi import CpMapChoi, is_cp, is_tp, tp_residual
from src.linalg.tensor import LabeledOperator, relabel
from src.storage.files import (
    load_choi,
    load_operator,
    load_povm,
    load_section,
    load_spec_file,
    read_model,
)
from src.storage.models import OperatorFile, PovmFile
from src.supermaps.comb import (
    SupermapSpec,
    apply_supermap,
    check_membership,
    comb_equivalent,
    supermap_equivalent,
)
from src.supermaps.gchannel import (
    GeneralizedPovm,
    SectionSpec,
    are_equivalent,
    is_generalized_channel,
    is_generalized_instrument,
    is_generalized_povm,
    povm_equivalent,
)

PathLike = Union[str, Path]

KINDS = ("cp", "channel", "gchannel", "gpovm", "instrument", "ppovm", "supermap", "comb", "tester")
SPEC_KINDS = ("supermap", "comb", "tester")


class VerificationWorker:
    """Worker for membership, equivalence and application checks on files."""

    def __init__(self, config: Settings):
        self.config = config

    def _tol(self, tol: Optional[float]) -> float:
        return self.config.tol if tol is None else tol

    def _section_for(self, factors, section_path: Optional[PathLike]) -> SectionSpec:
        """The section from a file, or the full state space of ``factors``."""
        if section_path is not None:
            return load_section(section_path)
        return SectionSpec.full(factors)

    def _spec(self, kind: str, spec_path: Optional[PathLike]) -> SupermapSpec:
        if spec_path is None:
            raise MalformedInputError(f"--kind {kind} needs a --spec file")
        model, spec = load_spec_file(spec_path)
        if kind != "supermap" and model.kind != kind:
            raise MalformedInputError(f"{spec_path}: expected a {kind} spec, found '{model.kind}'")
        return spec

    # -- single checks --------------------------------------------------------

    def _verify_channel(self, x: CpMapChoi, tol: float) -> Verdict:
        if not is_cp(x, tol):
            return failed("complete positivity")
        residual = tp_residual(x)
        if not is_tp(x, tol):
            return failed("trace preservation Tr_out X = I_in", residual)
        return passed("channel", residual)

    def _verify_ppovm(self, m: GeneralizedPovm, section_path: Optional[PathLike], tol: float) -> Verdict:
        if section_path is not None:
            return is_generalized_povm(m, load_section(section_path), tol)
        if len(m.factors) != 2:
            raise MalformedInputError("a process POVM acts on B_1 x B_0; give two factors or a --section")
        b1, b0 = m.factors
        section = SectionSpec.channel_section(b0.shape, b1.shape, b0.label, b1.label)
        return is_generalized_povm(m, section, tol)

    def verify(
        self,
        kind: str,
        input_path: PathLike,
        section_path: Optional[PathLike] = None,
        spec_path: Optional[PathLike] = None,
        method: str = "subspace",
        tol: Optional[float] = None,
        outcomes: Optional[int] = None,
    ) -> Verdict:
        """Run one membership check on one input file."""
        tol = self._tol(tol)
        try:
            logger.debug(f"verifying {input_path} as {kind}")
            if kind not in KINDS:
                raise MalformedInputError(f"unknown kind {kind!r}")
            if kind in ("gpovm", "ppovm"):
                m = load_povm(input_path)
                if kind == "ppovm":
                    return self._verify_ppovm(m, section_path, tol)
                return is_generalized_povm(m, self._section_for(m.factors, section_path), tol)
            if kind in SPEC_KINDS:
                spec = self._spec(kind, spec_path)
                return check_membership(load_operator(input_path), spec, method, tol)

            x = load_choi(input_path)
            if kind == "cp":
                return passed("complete positivity") if is_cp(x, tol) else failed("complete positivity")
            if kind == "channel":
                return self._verify_channel(x, tol)
            if kind == "gchannel":
                return is_generalized_channel(x, self._section_for(x.inputs, section_path), tol)
            outcome_factor = x.outputs[0]
            count = outcomes if outcomes is not None else len(outcome_factor.shape.blocks)
            return is_generalized_instrument(x, self._section_for(x.inputs, section_path), count, outcome_factor.label, tol)
        except Exception as e:
            logger.error(f"Error verifying {input_path}: {e}")
            raise

    # -- batches ----------------------------------------------------------------

    async def verify_directory(self, kind: str, directory: PathLike, **options) -> dict[str, Union[Verdict, Exception]]:
        """Verify every ``*.json`` file in a directory on the worker pool.

        Each entry is a verdict, or the exception that stopped that file.
        """
        directory = Path(directory)
        paths = sorted(directory.glob("*.json"))
        if not paths:
            logger.warning(f"No JSON files found in {directory}")
            return {}
        logger.info(f"Verifying {len(paths)} files in {directory}")

        loop = asyncio.get_running_loop()
        with ThreadPoolExecutor(max_workers=self.config.max_workers) as executor:
            tasks = [loop.run_in_executor(executor, lambda p=p: self.verify(kind, p, **options)) for p in paths]
            outcomes = await asyncio.gather(*tasks, return_exceptions=True)
        results = {p.name: outcome for p, outcome in zip(paths, outcomes)}

        holding = sum(1 for r in results.values() if isinstance(r, Verdict) and r)
        errors = sum(1 for r in results.values() if isinstance(r, Exception))
        logger.info(f"Verification completed: {holding} hold, {len(results) - holding - errors} fail, {errors} errors")
        return results

    # -- equivalence and application ------------------------------------------------

    def equivalent(
        self,
        first_path: PathLike,
        second_path: PathLike,
        section_path: Optional[PathLike] = None,
        spec_path: Optional[PathLike] = None,
        tol: Optional[float] = None,
    ) -> Verdict:
        """Equivalence of two generalized channels, POVMs, supermaps or combs.

        A comb spec compares the combs as maps between combs; any other spec compares
        the operators as supermaps.
        """
        tol = self._tol(tol)
        try:
            first, second = read_model(first_path), read_model(second_path)
            if isinstance(first, PovmFile) and isinstance(second, PovmFile):
                m, n = load_povm(first_path), load_povm(second_path)
                return povm_equivalent(m, n, self._section_for(m.factors, section_path), tol)
            if not (isinstance(first, OperatorFile) and isinstance(second, OperatorFile)):
                raise MalformedInputError("equivalence compares two operator files or two POVM files")
            if spec_path is not None:
                model, spec = load_spec_file(spec_path)
                x1, x2 = load_operator(first_path), load_operator(second_path)
                if model.kind == "comb":
                    return self._comb_equivalent(x1, x2, spec, tol)
                return supermap_equivalent(x1, x2, spec, tol)
            x1, x2 = load_choi(first_path), load_choi(second_path)
            return are_equivalent(x1, x2, self._section_for(x1.inputs, section_path), tol)
        except Exception as e:
            logger.error(f"Error comparing {first_path} and {second_path}: {e}")
            raise

    def _comb_equivalent(self, x1: LabeledOperator, x2: LabeledOperator, spec: SupermapSpec, tol: float) -> Verdict:
        """Relabel B_0, ..., B_n to 0, ..., n and compare as combs."""
        if len(spec.base_factors) != 1:
            raise MalformedInputError("comb equivalence needs a single base algebra")
        order = [spec.base_factors[0].label] + list(spec.chain_labels)
        mapping = {label: position for position, label in enumerate(order)}
        shapes = [spec.base_factors[0].shape] + list(spec.chain)
        x1, x2 = (relabel(spec.align(x), mapping) for x in (x1, x2))
        return comb_equivalent(x1, x2, shapes, tol)

    def apply(
        self, supermap_path: PathLike, member_path: PathLike, spec_path: PathLike, tol: Optional[float] = None
    ) -> LabeledOperator:
        """Phi_Y(X) after checking both memberships."""
        tol = self._tol(tol)
        try:
            _, spec = load_spec_file(spec_path)
            y, x = load_operator(supermap_path), load_operator(member_path)
            output = apply_supermap(y, x, spec, tol)
            logger.info(f"Applied {supermap_path} to {member_path}: output on labels {list(output.labels)}")
            return output
        except Exception as e:
            logger.error(f"Error applying {supermap_path} to {member_path}: {e}")
            raise
