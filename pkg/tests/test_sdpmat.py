import numpy as np
import pytest

import netgen
from sdpse.errors import ValidationError
from sdpse.measurements import state_to_X
from sdpse.sdpmat import (
    SdpMatrix,
    build_matrix_set,
    count_variables,
    eval_measurement,
    realify_active,
    realify_reactive,
)


def random_complex_entries(n, rng, k=6):
    out = []
    for _ in range(k):
        a, b = rng.integers(0, n, size=2)
        out.append((int(a), int(b), complex(rng.normal(), rng.normal())))
    return out


@pytest.mark.parametrize("seed", range(5))
def test_realify_active_matches_complex_form(seed):
    rng = np.random.default_rng(seed)
    n = 7
    entries = random_complex_entries(n, rng)
    A = realify_active(n, entries)
    C = np.zeros((n, n), dtype=complex)
    for a, b, v in entries:
        C[a, b] += v
    for _ in range(20):
        V = rng.normal(size=n) + 1j * rng.normal(size=n)
        X = np.concatenate([V.real, V.imag])
        assert A.quad(X) == pytest.approx((np.conj(V) @ C @ V).real, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_realify_reactive_matches_complex_form(seed):
    rng = np.random.default_rng(100 + seed)
    n = 7
    entries = random_complex_entries(n, rng)
    A = realify_reactive(n, entries)
    C = np.zeros((n, n), dtype=complex)
    for a, b, v in entries:
        C[a, b] += v
    for _ in range(20):
        V = rng.normal(size=n) + 1j * rng.normal(size=n)
        X = np.concatenate([V.real, V.imag])
        assert A.quad(X) == pytest.approx(-(np.conj(V) @ C @ V).imag, abs=1e-12)


def test_matrices_are_symmetric():
    model = netgen.model_from(netgen.tree_doc(8, seed=2))
    mats = build_matrix_set(model)
    for group in (mats.inj_p, mats.inj_q, mats.vmag, mats.flow_p, mats.flow_q):
        for A in group.values():
            D = A.to_dense()
            assert np.allclose(D, D.T, atol=1e-14)


def test_dot_quad_and_dense_agree():
    rng = np.random.default_rng(0)
    model = netgen.model_from(netgen.chain_doc(5))
    mats = build_matrix_set(model)
    X = rng.normal(size=mats.dim)
    W = np.outer(X, X)
    A = mats.inj_p[2]
    assert A.dot(W) == pytest.approx(A.quad(X))
    assert A.dot(W) == pytest.approx(float(np.sum(A.to_dense() * W)))


def test_matrix_algebra_and_max_abs():
    A = SdpMatrix(2, {(0, 0): 1.0, (0, 1): -2.0})
    B = SdpMatrix(2, {(0, 0): -1.0, (1, 1): 3.0})
    S = A + B
    assert np.allclose(S.to_dense(), A.to_dense() + B.to_dense())
    D = A - A
    assert D.max_abs() == 0.0
    assert A.scaled(2.0).max_abs() == 4.0


def test_dimension_mismatch_rejected():
    A = SdpMatrix(2, {(0, 0): 1.0})
    with pytest.raises(ValidationError, match="dimension"):
        A.dot(np.eye(3))
    with pytest.raises(ValidationError, match="dimension"):
        A.quad(np.zeros(3))


def check_network_identities(model, mats, tol=1e-12):
    """Structural identities tying injections, flows, and magnitudes.

    At every node the injection matrix equals minus the sum of the incident
    flow matrices; on every zero-shunt pair the loss and voltage-drop
    combinations vanish identically.
    """
    n = model.n_nodes
    zero = SdpMatrix(2 * n, {})
    for k in range(n):
        accP, accQ = mats.inj_p[k], mats.inj_q[k]
        for m in mats.neighbors(k):
            accP = accP + mats.flow_p[(k, m)]
            accQ = accQ + mats.flow_q[(k, m)]
        scale = max(mats.inj_p[k].max_abs(), 1.0)
        assert (accP - zero).max_abs() <= tol * scale
        assert (accQ - zero).max_abs() <= tol * scale
    for (l, m), pd in mats.pairs.items():
        if l > m:
            continue
        if pd.shunt_at_from != 0 or mats.pairs[(m, l)].shunt_at_from != 0:
            continue
        y = model.ybus[l, m]
        scale = max(abs(y) ** 2, abs(y), 1.0)
        loss = (
            (mats.flow_p[(l, m)] + mats.flow_p[(m, l)]).scaled(y.imag)
            + (mats.flow_q[(l, m)] + mats.flow_q[(m, l)]).scaled(y.real)
        )
        assert loss.max_abs() <= tol * scale
        drop = (
            (mats.flow_p[(l, m)] - mats.flow_p[(m, l)]).scaled(y.real)
            - (mats.flow_q[(l, m)] - mats.flow_q[(m, l)]).scaled(y.imag)
            - (mats.vmag[l] - mats.vmag[m]).scaled(abs(y) ** 2)
        )
        assert drop.max_abs() <= tol * scale


def test_identities_on_small_networks():
    for doc in (netgen.chain_doc(5), netgen.tree_doc(10, seed=4, meshed_extra=2)):
        model = netgen.model_from(doc)
        check_network_identities(model, build_matrix_set(model))


def test_eval_matches_complex_oracle():
    model = netgen.model_from(netgen.tree_doc(9, seed=11, meshed_extra=1))
    mats = build_matrix_set(model)
    V = netgen.random_state(model, seed=5)
    X = state_to_X(V)
    for k in range(model.n_nodes):
        s = netgen.injection_oracle(V, model.ybus, k)
        assert eval_measurement(mats.inj_p[k], X) == pytest.approx(s.real, abs=1e-12)
        assert eval_measurement(mats.inj_q[k], X) == pytest.approx(s.imag, abs=1e-12)
        assert eval_measurement(mats.vmag[k], X) == pytest.approx(abs(V[k]) ** 2)
    for (l, m), pd in mats.pairs.items():
        s = netgen.flow_oracle(V, l, m, pd.series, pd.shunt_at_from)
        assert eval_measurement(mats.flow_p[(l, m)], X) == pytest.approx(s.real, abs=1e-12)
        assert eval_measurement(mats.flow_q[(l, m)], X) == pytest.approx(s.imag, abs=1e-12)


def test_parallel_branches_aggregate():
    doc = netgen.chain_doc(2)
    doc["branches"].append(
        {"id": "par", "from": {"bus": "b0", "phase": "A"},
         "to": {"bus": "b1", "phase": "A"}, "r": 0.01, "x": 0.03}
    )
    model = netgen.model_from(doc)
    mats = build_matrix_set(model)
    assert len(mats.pairs) == 2  # one per direction
    total = sum(br.series_admittance for br in model.branches)
    assert mats.pairs[(0, 1)].series == pytest.approx(total)
    # The flow matrix reflects the aggregate of both circuits.
    V = netgen.random_state(model, seed=1)
    s = netgen.flow_oracle(V, 0, 1, total, 0j)
    assert eval_measurement(mats.flow_p[(0, 1)], state_to_X(V)) == pytest.approx(
        s.real, abs=1e-12
    )


def test_count_variables_reference_values():
    c = count_variables(41, 40)
    assert c["total_sym"] == 3403
    assert c["distinct"] == 283
    assert c["max_measurements"] == 283
    assert c["independent"] == 121
    assert count_variables(117, 457)["distinct"] == 2179


def test_count_variables_rejects_bad_input():
    with pytest.raises(ValidationError):
        count_variables(0, 3)
    with pytest.raises(ValidationError):
        count_variables(4, -1)
