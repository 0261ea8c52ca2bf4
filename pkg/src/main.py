"""
Command-line entry point for qcomb.

Exit codes: 0 = the checked property holds, 1 = it fails (or a construction could not be
verified), 2 = malformed input or IO error. Diagnostics go to stderr; ``--json`` prints one
JSON object per command on stdout.
"""

import argparse
import asyncio
import json
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from loguru import logger
from pydantic import ValidationError

from src.core.config import Settings, overridden, settings
from src.core.exceptions import (
    DimensionBudgetError,
    MalformedInputError,
    NotHermitianError,
    QcombError,
    ShapeMismatchError,
)
from src.core.logger import setup_logging
from src.core.results import Verdict
from src.linalg.algebra import AlgebraShape
from src.linalg.tensor import Factor, LabeledOperator, link_product
from src.storage.files import (
    load_operator,
    load_section,
    load_spec_file,
    povm_to_model,
    save_choi,
    save_operator,
    write_model,
)
from src.supermaps.gchannel import GeneralizedPovm
from src.supermaps.sampler import (
    random_channel,
    random_comb,
    random_generalized_channel,
    random_layout_state,
    random_povm,
    random_section_element,
)
from src.workers.decomposer import METHODS as DECOMPOSITION_METHODS
from src.workers.decomposer import DecompositionWorker
from src.workers.verifier import KINDS, VerificationWorker

EXIT_HOLDS = 0
EXIT_FAILS = 1
EXIT_MALFORMED = 2

INPUT_ERRORS = (
    MalformedInputError,
    ShapeMismatchError,
    NotHermitianError,
    DimensionBudgetError,
    ValidationError,
    OSError,
    ValueError,
)

SAMPLE_KINDS = ("state", "channel", "gchannel", "section", "povm", "comb")


def exit_code_for(error: BaseException) -> int:
    """2 for inputs that cannot be checked, 1 for failed preconditions and constructions."""
    if isinstance(error, INPUT_ERRORS):
        return EXIT_MALFORMED
    if isinstance(error, QcombError):
        return EXIT_FAILS
    raise error


def _verdict_code(verdict: Verdict) -> int:
    return EXIT_HOLDS if verdict else EXIT_FAILS


def _operator_summary(x: LabeledOperator) -> dict[str, Any]:
    summary = {"labels": list(x.labels), "trace": float(x.trace().real)}
    if len(x.factors) == 1 and x.factors[0].shape.is_classical:
        summary["probabilities"] = [float(v) for v in x.matrix.diagonal().real]
    return summary


class Toolkit:
    """Orchestrates the verification and decomposition workers for the command line."""

    def __init__(self, config: Optional[Settings] = None):
        self.config = config or Settings()
        self.verifier = VerificationWorker(self.config)
        self.decomposer = DecompositionWorker(self.config)

    def verify(self, kind: str, input_path: str, **options) -> tuple[int, dict]:
        """Verify a file, or every JSON file of a directory; the exit code is the worst one."""
        path = Path(input_path)
        if not path.is_dir():
            verdict = self.verifier.verify(kind, path, **options)
            return _verdict_code(verdict), verdict.to_dict()

        results = asyncio.run(self.verifier.verify_directory(kind, path, **options))
        files, code = {}, EXIT_HOLDS
        for name, outcome in results.items():
            if isinstance(outcome, Verdict):
                files[name] = outcome.to_dict()
                code = max(code, _verdict_code(outcome))
            else:
                files[name] = {"holds": False, "error": str(outcome)}
                code = max(code, exit_code_for(outcome))
        return code, {"holds": code == EXIT_HOLDS, "files": files}

    def decompose(self, method: str, input_path: str, out_dir: str, **options) -> tuple[int, dict]:
        manifest = self.decomposer.decompose(method, input_path, out_dir, **options)
        return (EXIT_HOLDS if manifest.holds else EXIT_FAILS), manifest.model_dump(mode="json")

    def link(self, first_path: str, second_path: str, out_path: str) -> tuple[int, dict]:
        output = link_product(load_operator(first_path), load_operator(second_path))
        save_operator(out_path, output)
        logger.info(f"Linked {first_path} and {second_path} into {out_path}")
        return EXIT_HOLDS, {"output": out_path, **_operator_summary(output)}

    def apply(self, supermap_path: str, member_path: str, spec_path: str, out_path: Optional[str], tol) -> tuple[int, dict]:
        output = self.verifier.apply(supermap_path, member_path, spec_path, tol)
        payload = _operator_summary(output)
        if out_path:
            save_operator(out_path, output)
            payload["output"] = out_path
        return EXIT_HOLDS, payload

    def equivalent(self, first_path: str, second_path: str, **options) -> tuple[int, dict]:
        verdict = self.verifier.equivalent(first_path, second_path, **options)
        return _verdict_code(verdict), verdict.to_dict()

    def sample(
        self,
        kind: str,
        out_path: str,
        seed: Optional[int] = None,
        blocks: Sequence[int] = (2,),
        outputs: Sequence[int] = (2,),
        outcomes: int = 2,
        rank: Optional[int] = None,
        section_path: Optional[str] = None,
        spec_path: Optional[str] = None,
    ) -> tuple[int, dict]:
        """Draw one seeded random object and write it to ``out_path``."""
        shape, output_shape = AlgebraShape(tuple(blocks)), AlgebraShape(tuple(outputs))
        if kind in ("gchannel", "section") and section_path is None:
            raise MalformedInputError(f"sampling a {kind} needs a --section file")
        if kind == "comb" and spec_path is None:
            raise MalformedInputError("sampling a comb needs a --spec file")

        if kind == "state":
            output = random_layout_state((Factor(0, shape),), seed, rank)
            save_operator(out_path, output, "state")
        elif kind == "channel":
            channel = random_channel(shape, output_shape, rank, seed)
            save_choi(out_path, channel)
            output = channel.choi
        elif kind == "gchannel":
            channel = random_generalized_channel(load_section(section_path), output_shape, seed, rank)
            save_choi(out_path, channel)
            output = channel.choi
        elif kind == "section":
            output = random_section_element(load_section(section_path), seed)
            save_operator(out_path, output, "state")
        elif kind == "povm":
            elements = random_povm((Factor(0, shape),), outcomes, seed)
            write_model(out_path, povm_to_model(GeneralizedPovm(tuple(elements))))
            logger.info(f"Sampled a {outcomes}-outcome POVM into {out_path}")
            return EXIT_HOLDS, {"output": out_path, "outcomes": outcomes}
        elif kind == "comb":
            _, spec = load_spec_file(spec_path)
            output, _ = random_comb(spec, seed)
            save_operator(out_path, output)
        else:
            raise MalformedInputError(f"unknown sample kind {kind!r}")
        logger.info(f"Sampled a random {kind} into {out_path}")
        return EXIT_HOLDS, {"output": out_path, **_operator_summary(output)}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--tol",
        type=float,
        default=None,
        help="relative tolerance (default QCOMB_TOL or 1e-9); rank cutoffs use QCOMB_RANK_FACTOR * tol, "
        "constructive decompositions are re-verified at QCOMB_RECHECK_FACTOR * tol",
    )
    common.add_argument("--json", action="store_true", help="print the result as JSON on stdout")
    common.add_argument("--log-level", default=None, help="loguru level for stderr diagnostics")

    parser = argparse.ArgumentParser(
        prog="qcomb", description="Verify and decompose generalized channels, combs and testers"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    verify = commands.add_parser("verify", parents=[common], help="membership checks")
    verify.add_argument("--kind", required=True, choices=KINDS)
    verify.add_argument("--input", required=True, help="operator/POVM file or a directory of them")
    verify.add_argument("--section", default=None, help="section file (default: full state space)")
    verify.add_argument("--spec", default=None, help="supermap, comb or tester spec file")
    verify.add_argument("--method", default="subspace", choices=("subspace", "chain", "both"))
    verify.add_argument("--outcomes", type=int, default=None, help="instrument outcomes (default: from the output factor)")

    decompose = commands.add_parser("decompose", parents=[common], help="constructive decompositions")
    decompose.add_argument("--method", required=True, choices=DECOMPOSITION_METHODS)
    decompose.add_argument("--input", required=True)
    decompose.add_argument("--out", required=True, help="output directory")
    decompose.add_argument("--section", default=None)
    decompose.add_argument("--spec", default=None)
    decompose.add_argument("--a-labels", type=int, nargs="+", default=None, help="semilocalize: labels of A")
    decompose.add_argument("--b-labels", type=int, nargs="+", default=None, help="semilocalize: labels of B")

    link = commands.add_parser("link", parents=[common], help="link product of two operators")
    link.add_argument("first")
    link.add_argument("second")
    link.add_argument("-o", "--output", required=True)

    apply = commands.add_parser("apply", parents=[common], help="apply a supermap to a member")
    apply.add_argument("supermap")
    apply.add_argument("member")
    apply.add_argument("--spec", required=True)
    apply.add_argument("-o", "--output", default=None)

    equiv = commands.add_parser("equiv", parents=[common], help="equivalence of two operators")
    equiv.add_argument("first")
    equiv.add_argument("second")
    equiv.add_argument("--section", default=None)
    equiv.add_argument("--spec", default=None)

    sample = commands.add_parser("sample", parents=[common], help="seeded random objects")
    sample.add_argument("--kind", required=True, choices=SAMPLE_KINDS)
    sample.add_argument("--seed", type=int, default=None)
    sample.add_argument("-o", "--output", required=True)
    sample.add_argument("--blocks", type=int, nargs="+", default=[2], help="block sizes of the (input) algebra")
    sample.add_argument("--outputs", type=int, nargs="+", default=[2], help="block sizes of the output algebra")
    sample.add_argument("--outcomes", type=int, default=2)
    sample.add_argument("--rank", type=int, default=None, help="Wishart or Kraus rank")
    sample.add_argument("--section", default=None)
    sample.add_argument("--spec", default=None)
    return parser


def _dispatch(toolkit: Toolkit, args: argparse.Namespace) -> tuple[int, dict]:
    if args.command == "verify":
        return toolkit.verify(
            args.kind, args.input, section_path=args.section, spec_path=args.spec,
            method=args.method, tol=args.tol, outcomes=args.outcomes,
        )
    if args.command == "decompose":
        return toolkit.decompose(
            args.method, args.input, args.out, section_path=args.section, spec_path=args.spec,
            a_labels=args.a_labels, b_labels=args.b_labels, tol=args.tol,
        )
    if args.command == "link":
        return toolkit.link(args.first, args.second, args.output)
    if args.command == "apply":
        return toolkit.apply(args.supermap, args.member, args.spec, args.output, args.tol)
    if args.command == "equiv":
        return toolkit.equivalent(args.first, args.second, section_path=args.section, spec_path=args.spec, tol=args.tol)
    return toolkit.sample(
        args.kind, args.output, args.seed, args.blocks, args.outputs, args.outcomes, args.rank, args.section, args.spec
    )


def _report(command: str, code: int, payload: dict, as_json: bool):
    if as_json:
        print(json.dumps({"command": command, "exit_code": code, **payload}))
        return
    if "condition" in payload:
        status = "holds" if code == EXIT_HOLDS else "fails"
        line = f"{status}: {payload['condition']} (residual {payload['residual']:.3e})"
        if "rung" in payload:
            line += f", rung {payload['rung']}"
        print(line)
    elif "files" in payload:
        for name, result in payload["files"].items():
            print(f"{name}: {'holds' if result['holds'] else 'fails'} {result.get('condition', result.get('error', ''))}")
    elif "method" in payload:
        print(f"{payload['method']}: residual {payload['residual']:.3e}, holds {payload['holds']}")
    else:
        print(json.dumps(payload))


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, run one command and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_MALFORMED if e.code else EXIT_HOLDS

    setup_logging(args.log_level or settings.log_level, settings.log_file)
    try:
        with overridden(tol=args.tol) as config:
            code, payload = _dispatch(Toolkit(config), args)
    except (QcombError, ValidationError, OSError, ValueError) as e:
        code = exit_code_for(e)
        logger.error(f"{args.command} failed: {e}")
        payload = {"holds": False, "error": str(e)}
    _report(args.command, code, payload, args.json)
    return code


if __name__ == "__main__":
    sys.exit(main())
