import pytest

from core import diagnostics
from core.diagnostics import CHECKS, run_checks
from core.errors import InvariantViolationError


def test_named_checks_pass():
    names = ["reward_oracles", "gae_oracle", "inertia_spectrum", "coulomb_slide", "roa_routing"]
    report = run_checks(names)
    assert report.passed, [c.detail for c in report.checks if not c.passed]
    assert [c.name for c in report.checks] == names


@pytest.mark.parametrize("name", ["mlp_gradients", "lstm_bptt_gradients", "ppo_loss_gradients"])
def test_gradient_checks_pass(name):
    report = run_checks([name])
    assert report.passed, report.checks[0].detail


def test_com_containment_check_passes():
    assert run_checks(["com_containment"]).passed


def test_failures_are_collected(monkeypatch):
    def broken() -> str:
        raise AssertionError("off by one")

    monkeypatch.setitem(CHECKS, "broken", broken)
    report = diagnostics.run_checks(["broken", "roa_routing"])
    assert not report.passed
    by_name = {c.name: c for c in report.checks}
    assert by_name["broken"].detail == "off by one"
    assert by_name["roa_routing"].passed


def _corrupting(real, tensor):
    def backward(*args, **kwargs):
        grads, dx = real(*args, **kwargs)
        grads[tensor] = grads[tensor] + 1e-2
        return grads, dx
    return backward


@pytest.mark.parametrize("tensor", ["net.W0", "net.W1", "net.b1"])
def test_mlp_check_catches_wrong_gradient_in_any_layer(monkeypatch, tensor):
    monkeypatch.setattr(diagnostics, "mlp_backward", _corrupting(diagnostics.mlp_backward, tensor))
    with pytest.raises(InvariantViolationError, match=tensor):
        diagnostics._check_mlp_gradients()

    report = run_checks(["mlp_gradients"])
    assert not report.passed
    assert tensor in report.checks[0].detail


@pytest.mark.parametrize("tensor", ["enc.Wh", "enc.Wp", "enc.bp"])
def test_lstm_check_catches_wrong_gradient(monkeypatch, tensor):
    monkeypatch.setattr(diagnostics, "lstm_backward", _corrupting(diagnostics.lstm_backward, tensor))
    with pytest.raises(InvariantViolationError, match=tensor):
        diagnostics._check_lstm_gradients()


def test_routing_check_reports_leaking_gradients(monkeypatch):
    def leaky(l, l_tilde, lambda_mult, squared=False, reg_weight=1.0):
        return 0.0, l - l_tilde, l_tilde - l

    monkeypatch.setattr(diagnostics, "roa_loss", leaky)
    with pytest.raises(InvariantViolationError):
        diagnostics._check_roa_routing()
