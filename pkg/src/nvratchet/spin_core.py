"""Spin operator algebra and tensor-product embedding for small spin clusters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SpinOperatorSet:
    """Angular-momentum matrices for a single spin, in units of hbar = 1.

    Attributes
    ----------
    s : float
        Spin quantum number (0, 1/2, 1, 3/2, ...).
    Sz, Splus, Sminus, Sx, Sy, identity : ndarray
        Dense complex matrices of dimension 2s+1.  Sz is diagonal with
        entries s, s-1, ..., -s.
    """

    s: float
    Sz: np.ndarray
    Splus: np.ndarray
    Sminus: np.ndarray
    Sx: np.ndarray
    Sy: np.ndarray
    identity: np.ndarray

    @property
    def dim(self) -> int:
        return int(round(2 * self.s + 1))


def spin_operators(s: float) -> SpinOperatorSet:
    """Build the standard spin matrices for spin quantum number ``s``.

    Parameters
    ----------
    s : float
        Half-integer spin quantum number, s >= 0.

    Returns
    -------
    SpinOperatorSet

    Raises
    ------
    ValueError
        If ``s`` is negative or 2s is not an integer.
    """
    two_s = 2 * s
    if s < 0 or abs(two_s - round(two_s)) > 1e-12:
        raise ValueError(f"spin quantum number must be a non-negative half-integer, got {s}")
    dim = int(round(two_s)) + 1
    m = s - np.arange(dim)  # s, s-1, ..., -s
    Sz = np.diag(m).astype(complex)
    # <m+1| S+ |m> = sqrt(s(s+1) - m(m+1)) on the superdiagonal
    ladder = np.sqrt(s * (s + 1) - m[1:] * (m[1:] + 1))
    Splus = np.zeros((dim, dim), dtype=complex)
    Splus[np.arange(dim - 1), np.arange(1, dim)] = ladder
    Sminus = Splus.conj().T
    Sx = 0.5 * (Splus + Sminus)
    Sy = -0.5j * (Splus - Sminus)
    return SpinOperatorSet(
        s=float(s),
        Sz=Sz,
        Splus=Splus,
        Sminus=Sminus,
        Sx=Sx,
        Sy=Sy,
        identity=np.eye(dim, dtype=complex),
    )


@dataclass(frozen=True)
class HilbertLayout:
    """Ordered list of (site label, spin quantum number) defining the tensor space.

    Site order is fixed once at construction; every embedded operator uses
    this order for its Kronecker factors.
    """

    sites: tuple[tuple[str, float], ...]
    _ops: tuple[SpinOperatorSet, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        labels = [label for label, _ in self.sites]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate site labels in layout: {labels}")
        object.__setattr__(self, "_ops", tuple(spin_operators(s) for _, s in self.sites))

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(op.dim for op in self._ops)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.sites)

    def site_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"no site labelled {label!r} in layout {self.labels}") from None

    def operators(self, site: int | str) -> SpinOperatorSet:
        """Local spin matrices for one site."""
        if isinstance(site, str):
            site = self.site_index(site)
        return self._ops[site]

    def basis_labels(self) -> list[tuple[float, ...]]:
        """Projection quantum numbers (m_1, ..., m_n) for each product basis state."""
        grids = [op.Sz.diagonal().real for op in self._ops]
        out = [()]
        for g in grids:
            out = [prev + (m,) for prev in out for m in g]
        return out

    def basis_index(self, projections) -> int:
        """Index of the product basis state with the given site projections."""
        if len(projections) != len(self.sites):
            raise ValueError("one projection per site required")
        idx = 0
        for (label, s), m, op in zip(self.sites, projections, self._ops):
            local = int(round(s - m))
            if local < 0 or local >= op.dim:
                raise ValueError(f"projection {m} invalid for site {label!r} (s={s})")
            idx = idx * op.dim + local
        return idx


def embed(op: np.ndarray, site: int, layout: HilbertLayout) -> np.ndarray:
    """Embed a single-site operator into the layout's full tensor space.

    Returns I x ... x op x ... x I with factors in the layout's site order.
    """
    dims = layout.dims
    if site < 0 or site >= len(dims):
        raise IndexError(f"site index {site} out of range for layout of {len(dims)} sites")
    op = np.asarray(op, dtype=complex)
    if op.shape != (dims[site], dims[site]):
        raise ValueError(
            f"operator shape {op.shape} does not match local dimension {dims[site]} at site {site}"
        )
    result = np.eye(1, dtype=complex)
    for i, d in enumerate(dims):
        factor = op if i == site else np.eye(d, dtype=complex)
        result = np.kron(result, factor)
    return result
