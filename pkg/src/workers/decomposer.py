"""
Decomposition Worker

Runs the constructive decompositions on files and writes the component files together
with a manifest recording the reconstruction residual.
"""

from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from loguru import logger

from src.core.config import Settings
from src.core.exceptions import MalformedInputError
from src.linalg.choi import maximally_entangled
from src.linalg.tensor import permute
from src.storage.files import (
    load_choi,
    load_operator,
    load_section,
    load_spec_file,
    save_choi,
    save_operator,
    write_model,
)
from src.storage.models import ManifestFile
from src.supermaps.decompose import ladder_decompose, realize_on_channels, from_realization, semilocalize
from src.supermaps.gchannel import SectionSpec, SimpleFactorization, are_equivalent, factor_simple

PathLike = Union[str, Path]

METHODS = ("simple-factor", "semilocalize", "ladder", "realize")


def _index_name(index: Sequence[int]) -> str:
    return "-".join(str(i) for i in index) or "0"


def identity_on_support_residual(factorization: SimpleFactorization) -> Optional[float]:
    """||Lambda_p - (p x I) Psi (p x I)|| when input and output are one copy of the same algebra."""
    restricted = factorization.restricted
    if len(restricted.inputs) != 1 or len(restricted.outputs) != 1:
        return None
    (a,), (b,) = restricted.inputs, restricted.outputs
    if a.shape != b.shape:
        return None
    psi = maximally_entangled(a.shape, b.label, a.label)
    side = np.kron(factorization.support.matrix, np.eye(a.shape.dim))
    target = side @ psi.matrix @ side
    return float(np.linalg.norm(permute(restricted.choi, psi.labels).matrix - target))


class DecompositionWorker:
    """Worker for simple factorizations, semilocal splits, ladders and channel realizations."""

    def __init__(self, config: Settings):
        self.config = config

    def _tol(self, tol: Optional[float]) -> float:
        return self.config.tol if tol is None else tol

    def _manifest(
        self, method: str, input_path: PathLike, out_dir: Path, tol: float, residual: float, norm: float,
        components: dict[str, str], **details
    ) -> ManifestFile:
        manifest = ManifestFile(
            method=method,
            input=str(input_path),
            tol=tol,
            residual=residual,
            holds=residual <= tol * max(1.0, norm),
            components=components,
            details=details,
        )
        write_model(out_dir / "manifest.json", manifest)
        logger.info(f"{method}: residual {residual:.3e}, {len(components)} components in {out_dir}")
        return manifest

    # -- methods --------------------------------------------------------------

    def _simple_factor(self, input_path, out_dir: Path, section_path, tol: float) -> ManifestFile:
        x = load_choi(input_path)
        section = load_section(section_path) if section_path is not None else SectionSpec.full(x.inputs)
        factorization = factor_simple(x, section, tol)
        components = {
            "c": save_operator(out_dir / "c.json", factorization.c).name,
            "support": save_operator(out_dir / "support.json", factorization.support).name,
            "channel": save_choi(out_dir / "channel.json", factorization.channel).name,
            "restricted": save_choi(out_dir / "restricted.json", factorization.restricted).name,
        }
        details = {"rank": int(round(np.trace(factorization.support.matrix).real))}
        identity_gap = identity_on_support_residual(factorization)
        if identity_gap is not None:
            details["identity_on_support_residual"] = identity_gap
        return self._manifest("simple-factor", input_path, out_dir, tol, factorization.residual, x.choi.norm(),
                              components, **details)

    def _semilocalize(self, input_path, out_dir: Path, a_labels, b_labels, tol: float) -> ManifestFile:
        if not a_labels or not b_labels:
            raise MalformedInputError("semilocalize needs --a-labels and --b-labels")
        x = load_operator(input_path)
        split = semilocalize(x, a_labels, b_labels, tol)
        components = {}
        for (m, n), channel in split.channels.items():
            name = f"channel_{_index_name(m)}_{_index_name(n)}"
            components[name] = save_choi(out_dir / f"{name}.json", channel).name
        for n, state in split.states.items():
            name = f"state_{_index_name(n)}"
            components[name] = save_operator(out_dir / f"{name}.json", state, "state").name
        return self._manifest("semilocalize", input_path, out_dir, tol, split.reconstruction_residual(x), x.norm(),
                              components, ancilla_dim=split.ancilla_dim, marginal_residual=split.marginal_residual())

    def _ladder(self, input_path, out_dir: Path, spec_path, tol: float) -> ManifestFile:
        if spec_path is None:
            raise MalformedInputError("ladder needs a --spec file")
        _, spec = load_spec_file(spec_path)
        x = load_operator(input_path)
        ladder = ladder_decompose(x, spec, tol)
        components = {"initial": save_operator(out_dir / "initial.json", ladder.initial).name}
        for m, stage in enumerate(ladder.stages, start=1):
            for index, channel in stage.items():
                name = f"stage_{m}_{_index_name(index)}"
                components[name] = save_choi(out_dir / f"{name}.json", channel).name
        return self._manifest("ladder", input_path, out_dir, tol, ladder.reconstruction_residual(x), x.norm(),
                              components, k=ladder.k, ancilla_dim=ladder.ancilla_dim,
                              stages_are_channels=ladder.stages_are_channels(tol))

    def _realize(self, input_path, out_dir: Path, tol: float) -> ManifestFile:
        x = load_choi(input_path)
        realization = realize_on_channels(x, tol)
        components = {
            "rho": save_operator(out_dir / "rho.json", realization.rho, "state").name,
            "Lambda": save_choi(out_dir / "Lambda.json", realization.channel).name,
            "omega": save_operator(out_dir / "omega.json", realization.omega, "state").name,
        }
        h1, h0 = x.inputs
        section = SectionSpec.channel_section(h0.shape, h1.shape, h0.label, h1.label)
        rebuilt = from_realization(realization.rho, realization.channel, tol)
        verdict = are_equivalent(rebuilt, x, section, self.config.recheck_tol(tol))
        return self._manifest("realize", input_path, out_dir, tol, verdict.residual, x.choi.norm(),
                              components, ancilla_dim=realization.ancilla.shape.dim)

    def decompose(
        self,
        method: str,
        input_path: PathLike,
        out_dir: PathLike,
        section_path: Optional[PathLike] = None,
        spec_path: Optional[PathLike] = None,
        a_labels: Optional[Sequence[int]] = None,
        b_labels: Optional[Sequence[int]] = None,
        tol: Optional[float] = None,
    ) -> ManifestFile:
        """Decompose one input file into ``out_dir``."""
        tol = self._tol(tol)
        out_dir = Path(out_dir)
        try:
            logger.info(f"Decomposing {input_path} with {method}")
            if method == "simple-factor":
                return self._simple_factor(input_path, out_dir, section_path, tol)
            if method == "semilocalize":
                return self._semilocalize(input_path, out_dir, a_labels, b_labels, tol)
            if method == "ladder":
                return self._ladder(input_path, out_dir, spec_path, tol)
            if method == "realize":
                return self._realize(input_path, out_dir, tol)
            raise MalformedInputError(f"unknown decomposition method {method!r}")
        except Exception as e:
            logger.error(f"Error decomposing {input_path}: {e}")
            raise
