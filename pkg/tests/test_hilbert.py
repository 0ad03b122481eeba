import itertools
import json
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from fsl_transducer.hamiltonians import Couplings, dual_mode_jc_hamiltonian
from fsl_transducer.hilbert import (
    Atom,
    ModeBasis,
    ProductBasis,
    QuantumState,
    SiteLabel,
    Slot,
    annihilation_operator,
    basis_descriptor,
    build_chain_basis,
    chain_to_product_embedding,
    coherent_truncation,
    embed,
    number_operator,
    partial_trace,
    squeezed_truncation,
)


def _lab(n_m, atom, n_o):
    return SiteLabel(n_m, Atom[atom], n_o)


def test_chain_n1_sites():
    chain = build_chain_basis(1)
    assert list(chain.sites) == [_lab(1, "G", 0), _lab(0, "R", 0), _lab(0, "G", 1)]


def test_chain_n5_edges():
    chain = build_chain_basis(5)
    assert chain.dim == 11
    assert chain.site(1) == _lab(5, "G", 0)
    assert chain.site(11) == _lab(0, "G", 5)


def _brute_force_chain(N):
    """Walk the excitation-N block from |N,G,0> using the nonzero JC couplings."""
    states = [(m, a, o) for m in range(N + 1) for a in (0, 1) for o in range(N + 1) if m + a + o == N]

    def neighbours(s):
        m, a, o = s
        out = []
        if a == 0:
            if m > 0:
                out.append((m - 1, 1, o))
            if o > 0:
                out.append((m, 1, o - 1))
        else:
            out.append((m + 1, 0, o))
            out.append((m, 0, o + 1))
        return [x for x in out if x in states]

    order = [(N, 0, 0)]
    while len(order) < len(states):
        nxt = [x for x in neighbours(order[-1]) if x not in order]
        # along the chain each state has one unvisited neighbour, the one with more optical photons
        order.append(max(nxt, key=lambda x: (x[2], -x[1])))
    return [SiteLabel(m, Atom(a), o) for m, a, o in order]


@pytest.mark.parametrize("N", [1, 2, 3, 6, 9])
def test_chain_matches_brute_force_walk(N):
    assert list(build_chain_basis(N).sites) == _brute_force_chain(N)


def test_chain_n2_site4():
    assert build_chain_basis(2).site(4) == _lab(0, "R", 1)


@pytest.mark.parametrize("N", range(1, 13))
def test_chain_constant_excitation_and_parity(N):
    chain = build_chain_basis(N)
    assert all(s.excitation == N for s in chain.sites)
    assert sum(s.atom is Atom.G for s in chain.sites) == N + 1
    assert sum(s.atom is Atom.R for s in chain.sites) == N


def test_chain_rejects_zero():
    with pytest.raises(ValueError):
        build_chain_basis(0)


def test_annihilation_small():
    assert np.array_equal(annihilation_operator(2).toarray(), [[0, 1], [0, 0]])
    assert annihilation_operator(3).toarray()[1, 2] == pytest.approx(math.sqrt(2))
    with pytest.raises(ValueError):
        annihilation_operator(1)


def test_number_identity():
    a = annihilation_operator(6)
    n = (a.conj().T @ a).toarray()
    for k in range(6):
        v = np.zeros(6)
        v[k] = 1
        assert np.allclose(n @ v, k * v)
    assert np.allclose(number_operator(6).toarray(), n)


def test_product_basis_dimension_and_order():
    b = ProductBasis(2, 3)
    assert b.dim == 3 * 2 * 4
    labs = b.labels
    assert labs[0] == _lab(0, "G", 0)
    assert labs[1] == _lab(0, "G", 1)
    assert labs[4] == _lab(0, "R", 0)
    assert labs[8] == _lab(1, "G", 0)


def test_embed_identity_and_matrix_element():
    b = ProductBasis(3, 2)
    assert abs(embed(sp.identity(4), Slot.MW, b) - sp.identity(b.dim)).max() == 0
    B = embed(annihilation_operator(4), Slot.MW, b)
    bra = b.index(_lab(1, "G", 0))
    ket = b.index(_lab(2, "G", 0))
    assert B[bra, ket] == pytest.approx(math.sqrt(2))


def test_embed_disjoint_slots_commute():
    b = ProductBasis(3, 3)
    A = embed(annihilation_operator(4), Slot.OPT, b)
    B = embed(annihilation_operator(4), Slot.MW, b)
    assert abs(A @ B - B @ A).max() < 1e-12


def test_embed_dimension_mismatch():
    with pytest.raises(ValueError):
        embed(annihilation_operator(3), Slot.MW, ProductBasis(3, 3))


def test_embed_capped_matches_full_restriction():
    full = ProductBasis(4, 4)
    capped = ProductBasis(4, 4, max_excitation=4)
    keep = capped.full_indices
    for slot, d in ((Slot.MW, 5), (Slot.OPT, 5), (Slot.ATOM, 2)):
        op = annihilation_operator(d)
        ref = embed(op, slot, full).toarray()[np.ix_(keep, keep)]
        assert np.array_equal(embed(op, slot, capped).toarray(), ref)


def test_partial_trace_product_state():
    rng = np.random.default_rng(1)
    b = ProductBasis(2, 2)
    mats = []
    for d in (3, 2, 3):
        x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        r = x @ x.conj().T
        mats.append(r / np.trace(r))
    rho = np.kron(np.kron(mats[0], mats[1]), mats[2])
    red = partial_trace(QuantumState.density(b, rho), Slot.OPT)
    assert isinstance(red.basis, ModeBasis)
    assert np.allclose(red.data, mats[2], atol=1e-12)
    assert np.allclose(partial_trace(QuantumState.density(b, rho), Slot.MW).data, mats[0], atol=1e-12)


def test_partial_trace_bell_like():
    b = ProductBasis(1, 1)
    v = np.zeros(b.dim, dtype=complex)
    v[b.index(_lab(1, "G", 0))] = v[b.index(_lab(0, "G", 1))] = 1 / math.sqrt(2)
    red = partial_trace(QuantumState.pure(b, v), "opt")
    assert np.allclose(red.data, np.diag([0.5, 0.5]), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), nm=st.integers(1, 3), no=st.integers(1, 3))
def test_partial_trace_random_pure(seed, nm, no):
    rng = np.random.default_rng(seed)
    b = ProductBasis(nm, no)
    v = rng.normal(size=b.dim) + 1j * rng.normal(size=b.dim)
    state = QuantumState.pure(b, v / np.linalg.norm(v))
    for slot in Slot:
        red = partial_trace(state, slot).data
        ev = np.linalg.eigvalsh(red)
        assert ev.min() > -1e-12 and ev.max() < 1 + 1e-12
        assert abs(np.trace(red) - 1) < 1e-10


def test_partial_trace_order_independent():
    rng = np.random.default_rng(3)
    b = ProductBasis(2, 3)
    x = rng.normal(size=(b.dim, b.dim)) + 1j * rng.normal(size=(b.dim, b.dim))
    rho = x @ x.conj().T
    state = QuantumState.density(b, rho / np.trace(rho))
    direct = partial_trace(state, Slot.OPT).data
    via_mw = partial_trace(partial_trace(state, [Slot.ATOM, Slot.OPT]), Slot.OPT).data
    via_atom = partial_trace(partial_trace(state, [Slot.MW, Slot.OPT]), Slot.OPT).data
    assert np.max(np.abs(via_mw - via_atom)) < 1e-12
    assert np.max(np.abs(direct - via_mw)) < 1e-12


def test_partial_trace_capped_basis_matches_full():
    rng = np.random.default_rng(5)
    capped = ProductBasis(3, 3, max_excitation=3)
    full = ProductBasis(3, 3)
    v = rng.normal(size=capped.dim) + 1j * rng.normal(size=capped.dim)
    v /= np.linalg.norm(v)
    w = np.zeros(full.dim, dtype=complex)
    w[capped.full_indices] = v
    for slot in Slot:
        a = partial_trace(QuantumState.pure(capped, v), slot).data
        b = partial_trace(QuantumState.pure(full, w), slot).data
        assert np.max(np.abs(a - b)) < 1e-14


def test_chain_embedding():
    chain = build_chain_basis(1)
    b = ProductBasis(1, 1)
    idx = chain_to_product_embedding(chain, b)
    assert len(set(idx)) == 3
    for k, site in zip(idx, chain.sites):
        assert b.labels[k] == site
    idx5 = chain_to_product_embedding(build_chain_basis(5), ProductBasis(5, 5))
    assert b.labels is not None and ProductBasis(5, 5).labels[idx5[0]].n_m == 5
    with pytest.raises(ValueError):
        chain_to_product_embedding(build_chain_basis(3), ProductBasis(2, 3))


def test_jc_block_diagonal():
    b = ProductBasis(3, 3)
    H = dual_mode_jc_hamiltonian(b, Couplings(0.4, 1.1)).toarray()
    exc = b.excitation_numbers()
    mask = exc[:, None] != exc[None, :]
    assert np.all(H[mask] == 0)


def test_quantum_state_validation():
    b = ProductBasis(1, 1)
    with pytest.raises(ValueError):
        QuantumState.pure(b, np.ones(b.dim))
    bad = np.eye(b.dim) / b.dim
    bad[0, 1] = 0.1
    with pytest.raises(ValueError):
        QuantumState.density(b, bad)
    neg = np.diag([1.1, -0.1] + [0.0] * (b.dim - 2))
    with pytest.raises(ValueError):
        QuantumState.density(b, neg)
    s = QuantumState.pure(b, np.eye(b.dim)[0])
    with pytest.raises(ValueError):
        s.data[0] = 2


def test_truncation_tails():
    n = coherent_truncation(1.0)
    assert n >= 13
    r = 0.7
    m = squeezed_truncation(r)
    assert m % 2 == 0 and m >= math.ceil(6 * math.sinh(r) ** 2 + 10)
    t = math.tanh(r)
    probs = [
        math.exp(math.lgamma(2 * k + 1) - 2 * math.lgamma(k + 1) - 2 * k * math.log(2)) * t ** (2 * k) / math.cosh(r)
        for k in range(m // 2 + 1)
    ]
    assert 1 - sum(probs) < 1e-6


def test_basis_descriptor_json():
    for b in (build_chain_basis(2), ProductBasis(2, 3, max_excitation=3), ModeBasis(Slot.OPT, 4)):
        d = basis_descriptor(b)
        assert json.loads(json.dumps(d)) == d
    d = basis_descriptor(ProductBasis(2, 3))
    assert d["order"] == ["mw", "atom", "opt"] and d["dim"] == 24


def test_capped_basis_enumeration():
    b = ProductBasis(3, 3, max_excitation=3)
    brute = [
        SiteLabel(m, Atom(a), o)
        for m, a, o in itertools.product(range(4), range(2), range(4))
        if m + a + o <= 3
    ]
    assert list(b.labels) == brute
    assert b.dim == 16
