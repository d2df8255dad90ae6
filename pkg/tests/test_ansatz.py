import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qimps import ansatz, mps
from qimps.ansatz import AnsatzSpec


@pytest.mark.parametrize("spec,count", [
    (AnsatzSpec("full_su4", 2), 15),
    (AnsatzSpec("full_su2", 1), 3),
    (AnsatzSpec("brick", 2, 1), 15),
    (AnsatzSpec("brick", 3, 2), 30),
    (AnsatzSpec("real_brick", 3, 1), 6),
    (AnsatzSpec("env_diag", 4), 2),
    (AnsatzSpec("env_alt_R", 2), 7),
    (AnsatzSpec("env_general", 2), 4),
    (AnsatzSpec("pxp_site", 2), 2),
])
def test_parameter_counts(spec, count):
    assert spec.param_count == count


def test_identity_at_zero():
    for spec in (AnsatzSpec("brick", 3, 2), AnsatzSpec("env_diag", 4), AnsatzSpec("full_su4", 2)):
        U = ansatz.unitary(spec, np.zeros(spec.param_count))
        assert np.allclose(U, np.eye(U.shape[0]))


def test_pxp_site_not_identity_at_zero():
    U = ansatz.unitary(AnsatzSpec("pxp_site", 2), [0.0, 0.0])
    assert np.allclose(U, ansatz.pxp_entangler())


def test_bad_specs():
    with pytest.raises(ValueError):
        AnsatzSpec("nonsense", 2)
    with pytest.raises(ValueError):
        AnsatzSpec("env_diag", 3)
    with pytest.raises(ValueError):
        AnsatzSpec("brick", 2, 0)
    with pytest.raises(ValueError):
        ansatz.unitary(AnsatzSpec("full_su4", 2), np.zeros(14))
    with pytest.raises(ValueError):
        ansatz.unitary(AnsatzSpec("full_su4", 2), [np.nan] * 15)


def test_spec_json_round_trip():
    spec = AnsatzSpec("brick", 3, 2)
    assert AnsatzSpec.from_json(spec.to_json()) == spec
    assert json.loads(spec.to_json())["family"] == "brick"


def test_env_diag_spectrum_matches_housed_environment():
    g = [0.3, 1.1]
    V = ansatz.unitary(AnsatzSpec("env_diag", 4), g)
    r = mps.housed_env(V)
    assert np.allclose(np.sort(np.linalg.eigvalsh(r)), np.sort(ansatz.env_diag_spectrum(g)))


@given(st.floats(-np.pi, np.pi))
def test_env_alt_R_houses_diagonal_schmidt(theta):
    V = ansatz.env_alt_R(theta).unitary(np.concatenate([[theta], np.zeros(6)]))
    X = V[:, 0].reshape(2, 2)
    s = np.linalg.svd(X, compute_uv=False)
    assert np.allclose(np.sort(s), np.sort(np.abs([np.cos(theta), np.sin(theta)])), atol=1e-12)


@given(st.lists(st.floats(-np.pi, np.pi), min_size=6, max_size=6))
def test_real_brick_is_real_orthogonal(p):
    U = ansatz.unitary(AnsatzSpec("real_brick", 2), p)
    assert np.allclose(U.imag, 0, atol=1e-12)
    assert np.allclose(U @ U.T, np.eye(4), atol=1e-12)


@given(st.lists(st.floats(-np.pi, np.pi), min_size=30, max_size=30))
def test_brick_depth_two_is_unitary(p):
    U = ansatz.unitary(AnsatzSpec("brick", 3, 2), p)
    assert mps.is_unitary(U)


def test_brick_layout_alternates():
    assert ansatz.brick_pairs(4, 2) == [[(0, 1), (2, 3)], [(1, 2)]]
    assert ansatz.brick_pairs(2, 3) == [[(0, 1)]] * 3
