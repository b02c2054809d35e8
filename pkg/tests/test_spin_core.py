"""Spin operator algebra and tensor embedding."""

import math

import numpy as np
import pytest

from nvratchet.spin_core import HilbertLayout, embed, spin_operators


@pytest.mark.parametrize("s", [0.5, 1.0, 1.5])
def test_commutator_and_casimir(s):
    ops = spin_operators(s)
    comm = ops.Sx @ ops.Sy - ops.Sy @ ops.Sx
    assert np.allclose(comm, 1j * ops.Sz, atol=1e-12)
    s2 = ops.Sx @ ops.Sx + ops.Sy @ ops.Sy + ops.Sz @ ops.Sz
    assert np.allclose(s2, s * (s + 1) * np.eye(ops.dim), atol=1e-12)


@pytest.mark.parametrize("s", [0.5, 1.0, 1.5])
def test_hermiticity_and_ladder_relations(s):
    ops = spin_operators(s)
    for m in (ops.Sx, ops.Sy, ops.Sz):
        assert np.allclose(m, m.conj().T, atol=1e-12)
    assert np.allclose(ops.Splus, ops.Sx + 1j * ops.Sy, atol=1e-12)
    assert np.allclose(ops.Sminus, ops.Splus.conj().T, atol=1e-12)


def test_sz_diagonal_entries():
    assert np.allclose(np.diag(spin_operators(0.5).Sz), [0.5, -0.5])
    assert np.allclose(np.diag(spin_operators(1.0).Sz), [1.0, 0.0, -1.0])


def test_spin_one_ladder_elements():
    sp = spin_operators(1.0).Splus
    assert sp[0, 1] == pytest.approx(math.sqrt(2))
    assert sp[1, 2] == pytest.approx(math.sqrt(2))
    assert np.count_nonzero(sp) == 2


@pytest.mark.parametrize("s", [-0.5, 0.3, 1.2])
def test_invalid_spin_rejected(s):
    with pytest.raises(ValueError):
        spin_operators(s)


def test_layout_dimensions_and_labels():
    layout = HilbertLayout((("NV", 1.0), ("P1", 0.5), ("H", 0.5)))
    assert layout.dims == (3, 2, 2)
    assert layout.dim == 12
    assert layout.labels == ("NV", "P1", "H")
    assert layout.site_index("H") == 2
    with pytest.raises(KeyError):
        layout.site_index("B1")


def test_layout_duplicate_labels_rejected():
    with pytest.raises(ValueError):
        HilbertLayout((("a", 0.5), ("a", 0.5)))


def test_basis_index_roundtrip():
    layout = HilbertLayout((("NV", 1.0), ("P1", 0.5), ("H", 0.5)))
    labels = layout.basis_labels()
    assert len(labels) == layout.dim
    for i, proj in enumerate(labels):
        assert layout.basis_index(proj) == i
    with pytest.raises(ValueError):
        layout.basis_index((2.0, 0.5, 0.5))
    with pytest.raises(ValueError):
        layout.basis_index((0.0, 0.5))


def test_embed_identity_and_trace():
    layout = HilbertLayout((("NV", 1.0), ("P1", 0.5), ("H", 0.5)))
    ops = layout.operators(1)
    assert np.allclose(embed(ops.identity, 1, layout), np.eye(12))
    # trace multiplicativity over the spectator factors
    sz_emb = embed(ops.Sz, 1, layout)
    assert np.trace(sz_emb) == pytest.approx(np.trace(ops.Sz).real * 6)


def test_embedded_operators_on_disjoint_sites_commute():
    layout = HilbertLayout((("NV", 1.0), ("P1", 0.5), ("H", 0.5)))
    a = embed(layout.operators(0).Sx, 0, layout)
    b = embed(layout.operators(1).Sy, 1, layout)
    assert np.allclose(a @ b, b @ a, atol=1e-12)


def test_embed_matches_kron_order():
    layout = HilbertLayout((("a", 0.5), ("b", 1.0)))
    sx = layout.operators(0).Sx
    expected = np.kron(sx, np.eye(3))
    assert np.allclose(embed(sx, 0, layout), expected)
    sz = layout.operators(1).Sz
    assert np.allclose(embed(sz, 1, layout), np.kron(np.eye(2), sz))


def test_embed_errors():
    layout = HilbertLayout((("a", 0.5), ("b", 0.5)))
    with pytest.raises(IndexError):
        embed(np.eye(2), 5, layout)
    with pytest.raises(ValueError):
        embed(np.eye(3), 0, layout)
