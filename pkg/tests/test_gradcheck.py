import json

import pytest

from mbexwn.gradcheck import REGISTRY, check_op, format_table, results_json, run_suite

REQUIRED = ["stft", "mel", "wavetable", "min_phase_envelope", "apply_vtf.excitation",
            "apply_vtf.cepstrum", "pqmf.analyze", "pqmf.synthesize", "f0_loss", "loss.linear",
            "loss.log", "loss.recon", "conv1d.input", "conv1d.weights", "linear_upsample",
            "gated_block", "f0_net", "vtf_net", "wavenet"]


def test_registry_covers_the_signal_chain():
    assert set(REQUIRED) <= set(REGISTRY)


@pytest.mark.parametrize("name", ["cumsum", "rfft", "wavetable", "min_phase_envelope"])
def test_selected_ops_pass(name):
    r = check_op(name, instances=2)
    assert r.passed, r


def test_unknown_op():
    with pytest.raises(KeyError):
        check_op("nope")


def test_report_formats():
    results = run_suite(["add", "mul"], instances=1)
    table = format_table(results)
    assert "PASS" in table and table.splitlines()[0].startswith("op")
    assert json.loads(results_json(results))["all_passed"] is True
