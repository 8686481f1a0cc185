"""Chain operations checked against the brute-force state-vector oracle."""

import numpy as np
import pytest

from dense_reference import DenseState, aligned_vector, mps_to_vector
from wgfeedback.errors import InvariantError, TensorShapeError
from wgfeedback.mps import (
    SYSTEM,
    MpsChain,
    bin_label,
    init_chain,
    install_fragment,
)
from wgfeedback.tensor import EXACT, TruncationPolicy, unitary_from_generator

NUM2 = np.diag([0.0, 1.0])


def _random_gate(rng, q1, q2):
    """Random two-site unitary that conserves the excitation count."""
    d = len(q1) * len(q2)
    a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    m = a - a.conj().T
    qq = (np.asarray(q1)[:, None] + np.asarray(q2)[None, :]).reshape(-1)
    m = np.where(qq[:, None] == qq[None, :], m, 0.0)
    return unitary_from_generator(m)


def _fresh_pair(charged, rng_seed=5, n_bins=3, p=2):
    """Chain plus a matching dense oracle, system excited."""
    chain = init_chain(n_bins, p, (0, 1), charged=charged)
    order = list(chain.labels)
    vectors = [[0, 1] if lab == SYSTEM else [1] + [0] * (p - 1) for lab in order]
    dense = DenseState.product(order, vectors)
    return chain, dense, np.random.default_rng(rng_seed)


def _site_charges(chain, pos):
    if chain.charged:
        return chain.site_charges[pos]
    d = chain.tensors[pos].shape[1]
    return [0, 1] if d == 2 else list(range(d))


def _scramble(chain, dense, rng, n_gates=6):
    """Apply the same random excitation-conserving circuit to both."""
    for _ in range(n_gates):
        pos = int(rng.integers(0, chain.n_sites - 1))
        gate = _random_gate(rng, _site_charges(chain, pos), _site_charges(chain, pos + 1))
        chain.apply_two_site(pos, gate)
        dense.apply_gate(chain.labels[pos], chain.labels[pos + 1], gate)


def test_init_chain_layout():
    chain = init_chain(2, 3, (1, 0))
    assert chain.labels == [SYSTEM, bin_label(0), bin_label(1)]
    assert chain.bond_profile() == [1, 1, 1, 1]
    assert abs(chain.norm_sq() - 1.0) < 1e-14
    assert chain.position_of(bin_label(1)) == 2


def test_init_chain_prepad_places_negative_bins():
    chain = init_chain(2, 2, (0, 1), prepad=3)
    assert chain.labels[:3] == [bin_label(-3), bin_label(-2), bin_label(-1)]
    assert chain.labels[3] == SYSTEM
    assert chain.center == 3
    assert abs(chain.local_expectation(3, NUM2) - 1.0) < 1e-14


def test_init_chain_rejects_unnormalized_state():
    with pytest.raises(InvariantError):
        init_chain(2, 2, (1, 1))


def test_charged_init_rejects_superposition():
    s = 1 / np.sqrt(2)
    init_chain(2, 2, (s, s))  # dense mode accepts it
    with pytest.raises(InvariantError):
        init_chain(2, 2, (s, s), charged=True)


@pytest.mark.parametrize("charged", [False, True])
def test_circuit_matches_dense_oracle(charged):
    chain, dense, rng = _fresh_pair(charged)
    _scramble(chain, dense, rng, n_gates=8)
    got = aligned_vector(chain, dense.labels)
    assert np.abs(got - dense.vector).max() < 1e-10
    chain.check_gauge()
    if charged:
        chain.check_charges()


def test_charged_and_dense_modes_agree():
    chain_d, dense, rng_d = _fresh_pair(False)
    chain_c, _, _ = _fresh_pair(True)
    _scramble(chain_d, dense, rng_d, n_gates=8)
    rng_c = np.random.default_rng(5)
    for _ in range(8):
        pos = int(rng_c.integers(0, chain_c.n_sites - 1))
        gate = _random_gate(rng_c, _site_charges(chain_c, pos), _site_charges(chain_c, pos + 1))
        chain_c.apply_two_site(pos, gate)
    got_d = aligned_vector(chain_d, dense.labels)
    got_c = aligned_vector(chain_c, dense.labels)
    assert np.abs(got_d - got_c).max() < 1e-10


@pytest.mark.parametrize("charged", [False, True])
def test_swap_preserves_state_and_relabels(charged):
    chain, dense, rng = _fresh_pair(charged)
    _scramble(chain, dense, rng)
    before = aligned_vector(chain, dense.labels)
    labels_before = list(chain.labels)
    chain.swap_sites(1)
    assert chain.labels[1] == labels_before[2]
    assert chain.labels[2] == labels_before[1]
    after = aligned_vector(chain, dense.labels)
    assert np.abs(after - before).max() < 1e-10
    if charged:
        chain.check_charges()


@pytest.mark.parametrize("charged", [False, True])
def test_move_center_keeps_state(charged):
    chain, dense, rng = _fresh_pair(charged)
    _scramble(chain, dense, rng)
    before = aligned_vector(chain, dense.labels)
    for target in [0, chain.n_sites - 1, 2]:
        chain.move_center_to(target)
        assert chain.center == target
        chain.check_gauge()
        assert np.abs(aligned_vector(chain, dense.labels) - before).max() < 1e-12


@pytest.mark.parametrize("charged", [False, True])
def test_fuse_split_roundtrip(charged):
    chain, dense, rng = _fresh_pair(charged)
    _scramble(chain, dense, rng)
    before = aligned_vector(chain, dense.labels)
    labels = (chain.labels[1], chain.labels[2])
    dims = (chain.tensors[1].shape[1], chain.tensors[2].shape[1])
    charges = (
        (chain.site_charges[1], chain.site_charges[2]) if charged else None
    )
    chain.fuse_pair(1)
    assert chain.n_sites == 3
    chain.split_site(1, dims, labels, site_charges=charges)
    assert chain.labels[1:3] == list(labels)
    after = aligned_vector(chain, dense.labels)
    assert np.abs(after - before).max() < 1e-10
    if charged:
        chain.check_charges()


@pytest.mark.parametrize("charged", [False, True])
def test_insert_vacuum_site_is_transparent(charged):
    chain, dense, rng = _fresh_pair(charged)
    _scramble(chain, dense, rng)
    before = aligned_vector(chain, dense.labels)
    chain.insert_vacuum_site(2, bin_label(99), p=2)
    assert chain.labels[2] == bin_label(99)
    chain.check_gauge()
    if charged:
        chain.check_charges()
    # The new bin holds zero photons and is unentangled with everything.
    full = aligned_vector(chain, dense.labels + [bin_label(99)])
    assert np.abs(full[..., 0] - before).max() < 1e-12
    assert np.abs(full[..., 1]).max() < 1e-14
    assert abs(chain.local_expectation(2, NUM2)) < 1e-14


@pytest.mark.parametrize("charged", [False, True])
def test_truncation_reduces_norm_by_reported_weight(charged):
    # Three excitations total, so Schmidt ranks can exceed a cap of 2.
    chain = init_chain(3, 3, (0, 1), charged=charged)
    one = np.zeros((1, 3, 1), dtype=complex)
    one[0, 1, 0] = 1.0
    install_fragment(chain, bin_label(0), [one], total_charge=1)
    install_fragment(chain, bin_label(1), [one], total_charge=1)
    rng = np.random.default_rng(11)
    for _ in range(10):
        pos = int(rng.integers(0, chain.n_sites - 1))
        gate = _random_gate(rng, _site_charges(chain, pos), _site_charges(chain, pos + 1))
        chain.apply_two_site(pos, gate)
    assert max(chain.bond_profile()) > 2
    policy = TruncationPolicy(max_bond=2)
    total = 0.0
    for pos in [1, 2, 0, 1]:
        gate = _random_gate(rng, _site_charges(chain, pos), _site_charges(chain, pos + 1))
        total += chain.apply_two_site(pos, gate, policy=policy)
    assert max(chain.bond_profile()) <= 2
    assert total > 0.0  # the cap actually bit
    assert abs(chain.norm_sq() - (1.0 - chain.discarded_total)) < 1e-12
    assert abs(chain.discarded_total - total) < 1e-15
    if charged:
        chain.check_charges()


def test_local_expectation_excited_system():
    chain = init_chain(3, 2, (0, 1))
    pos = chain.position_of(SYSTEM)
    assert abs(chain.local_expectation(pos, NUM2) - 1.0) < 1e-14


def test_apply_rejects_non_unitary():
    chain = init_chain(2, 2, (0, 1))
    with pytest.raises(InvariantError):
        chain.apply_two_site(0, np.eye(4) * 1.5)


def test_apply_rejects_wrong_gate_shape():
    chain = init_chain(2, 2, (0, 1))
    with pytest.raises(TensorShapeError):
        chain.apply_two_site(0, np.eye(3))


def test_charged_rejects_charge_violating_gate():
    chain = init_chain(2, 2, (0, 1), charged=True)
    # Unitary, but moves |00> to |01>: creates excitation from nothing.
    gate = np.eye(4)[[1, 0, 2, 3]]
    with pytest.raises(InvariantError):
        chain.apply_two_site(1, gate)


def test_install_fragment_single_photon_pair():
    # (|10> + |01>)/sqrt(2) across two bins, system left in the ground state.
    for charged in (False, True):
        chain = init_chain(3, 2, (1, 0), charged=charged)
        # Bond index counts photons already placed: A routes, B completes.
        a = np.zeros((1, 2, 2), dtype=complex)
        a[0, 0, 0] = 1.0
        a[0, 1, 1] = 1.0
        b = np.zeros((2, 2, 1), dtype=complex)
        b[0, 1, 0] = 1 / np.sqrt(2)
        b[1, 0, 0] = 1 / np.sqrt(2)
        install_fragment(chain, bin_label(0), [a, b], total_charge=1)
        assert abs(chain.norm_sq() - 1.0) < 1e-12
        if charged:
            chain.check_charges()
        p0 = chain.position_of(bin_label(0))
        assert abs(chain.local_expectation(p0, NUM2) - 0.5) < 1e-12
        assert abs(chain.local_expectation(p0 + 1, NUM2) - 0.5) < 1e-12
        assert abs(chain.local_expectation(p0 + 2, NUM2)) < 1e-14


def test_install_fragment_rejects_entangled_target():
    chain, dense, rng = _fresh_pair(False)
    _scramble(chain, dense, rng)
    frag = [np.zeros((1, 2, 1), dtype=complex)]
    frag[0][0, 1, 0] = 1.0
    with pytest.raises(InvariantError):
        install_fragment(chain, bin_label(0), frag)


def test_copy_is_independent():
    chain, dense, rng = _fresh_pair(True)
    _scramble(chain, dense, rng)
    dup = chain.copy()
    before = mps_to_vector(chain)
    gate = _random_gate(rng, _site_charges(dup, 0), _site_charges(dup, 1))
    dup.apply_two_site(0, gate)
    assert np.abs(mps_to_vector(chain) - before).max() < 1e-15
