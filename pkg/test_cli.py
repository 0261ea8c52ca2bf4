"""
End-to-end tests for the qcomb command line: exit codes, JSON reports and output files.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pytest

from src.core.config import settings
from src.linalg.algebra import AlgebraShape
from src.linalg.choi import CpMapChoi
from src.linalg.tensor import LabeledOperator, identity_operator
from src.main import EXIT_FAILS, EXIT_HOLDS, EXIT_MALFORMED, main
from src.storage.files import (
    load_choi,
    load_manifest,
    load_operator,
    povm_to_model,
    save_choi,
    save_operator,
    section_to_model,
    spec_to_model,
    write_model,
)
from src.supermaps.comb import comb_spec
from src.supermaps.gchannel import GeneralizedPovm, SectionSpec
from src.supermaps.sampler import random_channel, random_generalized_channel, random_layout_state
from src.workers import verifier as verifier_module

QUBIT = AlgebraShape.full(2)
SIGMA_Z = np.diag([1.0, -1.0])


def run(capsys, *argv):
    """Run one command with --json and return the exit code and the parsed report."""
    code = main([*argv, "--json"])
    lines = [line for line in capsys.readouterr().out.splitlines() if line.strip()]
    payload = json.loads(lines[-1])
    assert payload["exit_code"] == code
    return code, payload


@pytest.fixture
def corpus(tmp_path):
    """Channel, state, section, spec and supermap files shared by the command tests."""
    paths = {}
    paths["channel"] = str(save_choi(tmp_path / "channel.json", random_channel(QUBIT, QUBIT, seed=1)))
    paths["other_channel"] = str(save_choi(tmp_path / "other_channel.json", random_channel(QUBIT, QUBIT, seed=2)))
    paths["state"] = str(save_operator(tmp_path / "state.json", random_layout_state([(0, [2])], seed=3), "state"))
    paths["section"] = str(write_model(tmp_path / "section.json", section_to_model(SectionSpec.channel_section(QUBIT, QUBIT))))

    comb = comb_spec([QUBIT] * 4)
    paths["comb_spec"] = str(write_model(tmp_path / "comb_spec.json", spec_to_model(comb, "comb")))
    uniform = identity_operator(comb.factors()) / 4
    paths["uniform"] = str(save_operator(tmp_path / "uniform.json", uniform))
    breaking = np.kron(np.kron(np.eye(2), SIGMA_Z), np.eye(4))
    paths["broken"] = str(save_operator(tmp_path / "broken.json", uniform.with_matrix(uniform.matrix + 0.1 * breaking)))

    tester = comb_spec([QUBIT, QUBIT], outcomes=2)
    paths["tester_spec"] = str(write_model(tmp_path / "tester_spec.json", spec_to_model(tester, "tester", 2)))
    omega = random_layout_state([(0, [2])], seed=4).matrix
    f0 = np.array([[0.8, 0.1], [0.1, 0.3]])
    elements = [np.kron(f0, omega), np.kron(np.eye(2) - f0, omega)]
    y = sum(np.kron(np.diag(np.eye(2)[j]), p) for j, p in enumerate(elements))
    paths["tester"] = str(save_operator(tmp_path / "tester.json", LabeledOperator(tester.factors(), y)))

    pair = ((1, QUBIT), (0, QUBIT))
    flat = [LabeledOperator(pair, np.eye(4) / 4)] * 2
    heavy = [LabeledOperator(pair, np.eye(4) / 2)] * 2
    paths["ppovm"] = str(write_model(tmp_path / "ppovm.json", povm_to_model(GeneralizedPovm(tuple(flat)))))
    paths["heavy_ppovm"] = str(write_model(tmp_path / "heavy_ppovm.json", povm_to_model(GeneralizedPovm(tuple(heavy)))))
    return paths


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def test_verify_channel(capsys, corpus):
    code, payload = run(capsys, "verify", "--kind", "channel", "--input", corpus["channel"])
    assert code == EXIT_HOLDS
    assert payload["command"] == "verify"
    assert payload["holds"] is True


def test_verify_ppovm(capsys, corpus):
    assert run(capsys, "verify", "--kind", "ppovm", "--input", corpus["ppovm"])[0] == EXIT_HOLDS
    assert run(capsys, "verify", "--kind", "ppovm", "--input", corpus["heavy_ppovm"])[0] == EXIT_FAILS


def test_verify_comb_reports_the_failing_rung(capsys, corpus):
    code, payload = run(capsys, "verify", "--kind", "comb", "--input", corpus["uniform"], "--spec", corpus["comb_spec"])
    assert code == EXIT_HOLDS
    code, payload = run(
        capsys, "verify", "--kind", "comb", "--input", corpus["broken"], "--spec", corpus["comb_spec"], "--method", "both"
    )
    assert code == EXIT_FAILS
    assert payload["holds"] is False
    assert payload["rung"] == 0


def test_verify_comb_needs_a_matching_spec(capsys, corpus):
    code, _ = run(capsys, "verify", "--kind", "tester", "--input", corpus["uniform"], "--spec", corpus["comb_spec"])
    assert code == EXIT_MALFORMED


def test_verify_text_output(capsys, corpus):
    code = main(["verify", "--kind", "channel", "--input", corpus["channel"]])
    assert code == EXIT_HOLDS
    assert capsys.readouterr().out.startswith("holds: channel")


def test_verify_directory_takes_the_worst_exit_code(capsys, tmp_path):
    batch = tmp_path / "batch"
    for seed in range(29):
        save_choi(batch / f"channel_{seed:02d}.json", random_channel(QUBIT, QUBIT, seed=seed))
    scaled = random_channel(QUBIT, QUBIT, seed=99)
    save_choi(batch / "scaled.json", CpMapChoi(scaled.inputs, scaled.outputs, scaled.choi * 2))

    code, payload = run(capsys, "verify", "--kind", "channel", "--input", str(batch))
    assert code == EXIT_FAILS
    assert len(payload["files"]) == 30
    assert payload["files"]["scaled.json"]["holds"] is False
    assert payload["files"]["channel_00.json"]["holds"] is True

    (batch / "nan.json").write_text('{"kind": "operator", "factors": [{"label": 0, "blocks": [1]}], '
                                    '"matrix": {"re": [[NaN]], "im": [[0.0]]}}')
    code, payload = run(capsys, "verify", "--kind", "channel", "--input", str(batch))
    assert code == EXIT_MALFORMED
    assert "error" in payload["files"]["nan.json"]


def test_malformed_input_exits_2(capsys, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"kind": "operator"}')
    assert run(capsys, "verify", "--kind", "channel", "--input", str(path))[0] == EXIT_MALFORMED
    assert run(capsys, "verify", "--kind", "channel", "--input", str(tmp_path / "missing.json"))[0] == EXIT_MALFORMED


def test_bad_arguments_exit_2(capsys):
    assert main(["verify"]) == EXIT_MALFORMED
    assert main(["verify", "--kind", "nonsense", "--input", "x.json"]) == EXIT_MALFORMED
    capsys.readouterr()


def test_tol_flag_reaches_section_validation(capsys, tmp_path):
    section = SectionSpec.channel_section(QUBIT, QUBIT)
    payload = section_to_model(section).model_dump(mode="json")
    payload["rho"]["matrix"]["re"] = [[v * (1 + 1e-7) for v in row] for row in payload["rho"]["matrix"]["re"]]
    loose = tmp_path / "loose_section.json"
    loose.write_text(json.dumps(payload))
    gchannel = str(save_choi(tmp_path / "gchannel.json", random_generalized_channel(section, QUBIT, seed=5)))
    tol_before = settings.tol

    argv = ("verify", "--kind", "gchannel", "--input", gchannel, "--section", str(loose))
    assert run(capsys, *argv)[0] == EXIT_MALFORMED
    assert run(capsys, *argv, "--tol", "1e-6")[0] == EXIT_HOLDS
    assert settings.tol == tol_before


def test_invalid_tol_exits_2(capsys, corpus):
    tol_before = settings.tol
    assert run(capsys, "verify", "--kind", "channel", "--input", corpus["channel"], "--tol", "0")[0] == EXIT_MALFORMED
    assert settings.tol == tol_before


def test_directory_batches_release_their_threads(capsys, corpus, monkeypatch):
    released = []

    class TrackedPool(ThreadPoolExecutor):
        def shutdown(self, *args, **kwargs):
            released.append(self)
            super().shutdown(*args, **kwargs)

    monkeypatch.setattr(verifier_module, "ThreadPoolExecutor", TrackedPool)
    directory = str(Path(corpus["channel"]).parent)
    for _ in range(2):
        run(capsys, "verify", "--kind", "channel", "--input", directory)
    assert len(released) == 2


# ---------------------------------------------------------------------------
# link, apply, equiv
# ---------------------------------------------------------------------------


def test_link(capsys, corpus, tmp_path):
    out = str(tmp_path / "linked.json")
    code, payload = run(capsys, "link", corpus["channel"], corpus["state"], "-o", out)
    assert code == EXIT_HOLDS
    assert payload["labels"] == [1]
    assert np.isclose(payload["trace"], 1.0)
    assert load_operator(out).labels == (1,)


def test_apply_tester(capsys, corpus, tmp_path):
    out = str(tmp_path / "probabilities.json")
    code, payload = run(capsys, "apply", corpus["tester"], corpus["channel"], "--spec", corpus["tester_spec"], "-o", out)
    assert code == EXIT_HOLDS
    assert payload["labels"] == [2]
    assert np.isclose(sum(payload["probabilities"]), 1.0)
    assert min(payload["probabilities"]) >= -1e-12
    assert load_operator(out).factors[0].shape.is_classical


def test_apply_rejects_non_members(capsys, corpus):
    code, payload = run(capsys, "apply", corpus["tester"], corpus["state"], "--spec", corpus["tester_spec"])
    assert code in (EXIT_FAILS, EXIT_MALFORMED)
    assert payload["holds"] is False


def test_equiv(capsys, corpus):
    assert run(capsys, "equiv", corpus["channel"], corpus["channel"])[0] == EXIT_HOLDS
    assert run(capsys, "equiv", corpus["channel"], corpus["other_channel"])[0] == EXIT_FAILS


def test_equiv_of_combs(capsys, corpus, tmp_path):
    comb = comb_spec([QUBIT] * 4)
    uniform = np.eye(16) / 4
    shifted = uniform - 0.1 * np.kron(np.eye(4), np.kron(SIGMA_Z, SIGMA_Z))
    path = str(save_operator(tmp_path / "shifted.json", LabeledOperator(comb.factors(), shifted)))
    code, _ = run(capsys, "equiv", corpus["uniform"], path, "--spec", corpus["comb_spec"])
    assert code == EXIT_HOLDS


# ---------------------------------------------------------------------------
# decompose
# ---------------------------------------------------------------------------


def test_decompose_ladder(capsys, corpus, tmp_path):
    out = tmp_path / "ladder"
    code, payload = run(
        capsys, "decompose", "--method", "ladder", "--input", corpus["uniform"], "--spec", corpus["comb_spec"],
        "--out", str(out), "--tol", "1e-7",
    )
    assert code == EXIT_HOLDS
    assert payload["method"] == "ladder"
    assert payload["details"]["k"] == 1
    assert payload["details"]["stages_are_channels"] is True
    manifest = load_manifest(out / "manifest.json")
    assert manifest.holds
    for name in manifest.components.values():
        assert (out / name).exists()


def test_decompose_simple_factor_and_realize(capsys, corpus, tmp_path):
    gchannel = str(tmp_path / "gchannel.json")
    code, _ = run(capsys, "sample", "--kind", "gchannel", "--seed", "5", "--section", corpus["section"], "-o", gchannel)
    assert code == EXIT_HOLDS
    assert run(capsys, "verify", "--kind", "gchannel", "--input", gchannel, "--section", corpus["section"])[0] == EXIT_HOLDS

    factored = tmp_path / "factored"
    code, payload = run(
        capsys, "decompose", "--method", "simple-factor", "--input", gchannel, "--section", corpus["section"],
        "--out", str(factored), "--tol", "1e-7",
    )
    assert code == EXIT_HOLDS
    assert set(payload["components"]) == {"c", "support", "channel", "restricted"}
    assert load_choi(factored / "channel.json").output_labels == (2,)

    realized = tmp_path / "realized"
    code, payload = run(capsys, "decompose", "--method", "realize", "--input", gchannel, "--out", str(realized), "--tol", "1e-7")
    assert code == EXIT_HOLDS
    rho = load_operator(realized / "rho.json")
    assert np.isclose(rho.trace(), 1.0)


def test_decompose_semilocalize_needs_labels(capsys, corpus, tmp_path):
    code, _ = run(capsys, "decompose", "--method", "semilocalize", "--input", corpus["uniform"], "--out", str(tmp_path / "s"))
    assert code == EXIT_MALFORMED


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------


def test_sample_state_and_channel(capsys, tmp_path):
    state = str(tmp_path / "state.json")
    code, payload = run(capsys, "sample", "--kind", "state", "--seed", "1", "--blocks", "1", "2", "-o", state)
    assert code == EXIT_HOLDS
    assert np.isclose(payload["trace"], 1.0)
    assert load_operator(state).factors[0].shape.blocks == (1, 2)

    channel = str(tmp_path / "channel.json")
    assert run(capsys, "sample", "--kind", "channel", "--seed", "1", "--outputs", "3", "-o", channel)[0] == EXIT_HOLDS
    assert run(capsys, "verify", "--kind", "channel", "--input", channel)[0] == EXIT_HOLDS


def test_sample_is_reproducible(capsys, tmp_path):
    first, second = str(tmp_path / "a.json"), str(tmp_path / "b.json")
    run(capsys, "sample", "--kind", "channel", "--seed", "7", "-o", first)
    run(capsys, "sample", "--kind", "channel", "--seed", "7", "-o", second)
    assert np.array_equal(load_choi(first).choi.matrix, load_choi(second).choi.matrix)


def test_sample_comb_is_a_member(capsys, corpus, tmp_path):
    comb = str(tmp_path / "comb.json")
    assert run(capsys, "sample", "--kind", "comb", "--seed", "3", "--spec", corpus["comb_spec"], "-o", comb)[0] == EXIT_HOLDS
    code, _ = run(capsys, "verify", "--kind", "comb", "--input", comb, "--spec", corpus["comb_spec"], "--method", "both")
    assert code == EXIT_HOLDS


def test_sample_povm(capsys, tmp_path):
    povm = str(tmp_path / "povm.json")
    code, payload = run(capsys, "sample", "--kind", "povm", "--outcomes", "3", "--seed", "2", "-o", povm)
    assert code == EXIT_HOLDS and payload["outcomes"] == 3
    assert run(capsys, "verify", "--kind", "gpovm", "--input", povm)[0] == EXIT_HOLDS


def test_sample_needs_its_inputs(capsys, tmp_path):
    assert run(capsys, "sample", "--kind", "gchannel", "-o", str(tmp_path / "g.json"))[0] == EXIT_MALFORMED
    assert run(capsys, "sample", "--kind", "comb", "-o", str(tmp_path / "c.json"))[0] == EXIT_MALFORMED
