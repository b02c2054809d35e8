"""Cluster Hamiltonian assembly, matching-field location, and gap estimates.

Energies and frequencies are in MHz, magnetic fields in mT, times in ms.
Gyromagnetic ratios are stored as magnitudes in MHz/mT; electron Zeeman
terms enter with a plus sign (gamma_e < 0 physically), nuclear ones with a
minus sign.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .spin_core import HilbertLayout, embed

SQRT2 = math.sqrt(2.0)

# Unit bridge: with energies in MHz and sweep slopes in MHz/ms, angular
# exponents pick up a factor 2*pi*1e3 relative to the plain ratio.
MHZ_MS = 1.0e3


@dataclass(frozen=True)
class PhysicalConstants:
    """Zero-field splitting and gyromagnetic-ratio magnitudes."""

    D: float = 2870.0            # NV zero-field splitting, MHz
    gamma_e: float = 28.025      # electron, MHz/mT (magnitude)
    gamma_H: float = 0.042577    # proton, MHz/mT
    gamma_N: float = 0.003077    # 14N, MHz/mT

    def __post_init__(self):
        for name in ("D", "gamma_e", "gamma_H", "gamma_N"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be a positive magnitude")


@dataclass(frozen=True)
class DipolarCoupling:
    """Point-dipole coupling between two sites.

    ``theta_pair``/``phi_pair`` orient the inter-spin axis relative to the
    NV frame; ``j_dip`` is the coupling strength in MHz.
    """

    j_dip: float
    theta_pair: float
    phi_pair: float
    site_a: int
    site_b: int

    def __post_init__(self):
        if self.j_dip < 0:
            raise ValueError("j_dip must be non-negative")
        if not (math.isfinite(self.theta_pair) and math.isfinite(self.phi_pair)):
            raise ValueError("pair angles must be finite")


@dataclass(frozen=True)
class HyperfineTensor:
    """Hyperfine (A) and quadrupolar (Q) tensors for a nitrogen host, MHz."""

    A: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        Q = np.asarray(self.Q, dtype=float)
        if A.shape != (3, 3) or Q.shape != (3, 3):
            raise ValueError("A and Q must be 3x3")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(Q))):
            raise ValueError("A and Q must be finite")
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise ValueError("Q must be symmetric")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", Q)

    @staticmethod
    def isotropic(a: float, q: float = 0.0) -> "HyperfineTensor":
        return HyperfineTensor(A=a * np.eye(3), Q=q * np.eye(3))


# Site labels in their fixed global order.
SITE_NV = "NV"
SITE_P1 = "P1"
SITE_H = "H"
SITE_N_NV = "N_NV"
SITE_N_P1 = "N_P1"
SITE_B1 = "B1"


@dataclass(frozen=True)
class ClusterConfig:
    """Full physical description of the NV-P1-1H spin cluster."""

    layout: HilbertLayout
    constants: PhysicalConstants
    couplings: tuple[DipolarCoupling, ...]
    hyperfine: dict = field(default_factory=dict)  # site label -> HyperfineTensor
    field_theta: float = 0.0
    field_phi: float = 0.0
    include_hosts: bool = False
    include_bystander: bool = False

    def __post_init__(self):
        n = len(self.layout.sites)
        for c in self.couplings:
            if not (0 <= c.site_a < n and 0 <= c.site_b < n):
                raise ValueError(f"coupling references invalid site: {c}")
        for label in (SITE_NV, SITE_P1, SITE_H):
            self.layout.site_index(label)  # raises if missing

    def coupling_between(self, label_a: str, label_b: str) -> DipolarCoupling | None:
        ia, ib = self.layout.site_index(label_a), self.layout.site_index(label_b)
        for c in self.couplings:
            if {c.site_a, c.site_b} == {ia, ib}:
                return c
        return None

    def with_overrides(self, **kwargs) -> "ClusterConfig":
        return replace(self, **kwargs)


def make_cluster(
    j_nv_p1: float = 0.5,
    j_h_p1: float = 0.1,
    theta1: float = math.pi / 4,
    phi1: float = 0.0,
    theta2: float = 0.495,
    phi2: float = 0.0,
    field_theta: float = 0.0,
    field_phi: float = 0.0,
    include_hosts: bool = False,
    include_bystander: bool = False,
    j_nv_b1: float = 1.0,
    theta_b1: float = math.pi / 4,
    phi_b1: float = 0.0,
    constants: PhysicalConstants | None = None,
    a_n_nv: float = 2.0,
    a_n_p1: float = 115.0,
) -> ClusterConfig:
    """Standard cluster factory with documented geometry defaults.

    The default inter-spin geometry puts the NV-P1 axis at 45 degrees from
    the NV symmetry axis with the proton close to that axis (theta2 =
    0.495 rad).  The slight offset of theta2 from theta1 tunes the
    interference between the two narrow-gap passages of a single sweep so
    that a 0.26 mT/ms ramp transfers the active-manifold population almost
    completely; the single-sweep outcome is a sensitive function of this
    angle, whereas multi-cycle protocols with inter-sweep dephasing are
    not.  With J couplings of 500/100 kHz the narrow-gap survival
    probability at 3 mT/ms is ~0.98.  Couplings are in MHz, angles in
    radians.
    """
    sites: list[tuple[str, float]] = [(SITE_NV, 1.0), (SITE_P1, 0.5), (SITE_H, 0.5)]
    if include_hosts:
        sites += [(SITE_N_NV, 1.0), (SITE_N_P1, 1.0)]
    if include_bystander:
        sites += [(SITE_B1, 0.5)]
    layout = HilbertLayout(tuple(sites))
    i_nv, i_p1, i_h = (layout.site_index(x) for x in (SITE_NV, SITE_P1, SITE_H))
    couplings = [
        DipolarCoupling(j_nv_p1, theta1, phi1, i_nv, i_p1),
        DipolarCoupling(j_h_p1, theta2, phi2, i_h, i_p1),
    ]
    hyperfine = {}
    if include_hosts:
        hyperfine = {
            SITE_N_NV: HyperfineTensor.isotropic(a_n_nv),
            SITE_N_P1: HyperfineTensor.isotropic(a_n_p1),
        }
    if include_bystander:
        couplings.append(
            DipolarCoupling(j_nv_b1, theta_b1, phi_b1, i_nv, layout.site_index(SITE_B1))
        )
    return ClusterConfig(
        layout=layout,
        constants=constants or PhysicalConstants(),
        couplings=tuple(couplings),
        hyperfine=hyperfine,
        field_theta=field_theta,
        field_phi=field_phi,
        include_hosts=include_hosts,
        include_bystander=include_bystander,
    )


def dipolar_geometry(theta_pair: float, phi_pair: float) -> tuple[float, complex, complex]:
    """Geometric factors of the dipolar interaction for a given axis orientation."""
    g0 = 1.0 - 3.0 * math.cos(theta_pair) ** 2
    g1 = -1.5 * math.sin(theta_pair) * math.cos(theta_pair) * cmath.exp(-1j * phi_pair)
    g2 = -0.75 * math.sin(theta_pair) ** 2 * cmath.exp(-2j * phi_pair)
    return g0, g1, g2


def dipolar_hamiltonian(c: DipolarCoupling, layout: HilbertLayout) -> np.ndarray:
    """Full dipolar Hamiltonian of one pair, embedded in the layout space."""
    g0, g1p, g2p = dipolar_geometry(c.theta_pair, c.phi_pair)
    g1m, g2m = g1p.conjugate(), g2p.conjugate()
    a, b = layout.operators(c.site_a), layout.operators(c.site_b)
    Az, Ap, Am = (embed(m, c.site_a, layout) for m in (a.Sz, a.Splus, a.Sminus))
    Bz, Bp, Bm = (embed(m, c.site_b, layout) for m in (b.Sz, b.Splus, b.Sminus))
    H = g0 * (Az @ Bz - 0.25 * Am @ Bp - 0.25 * Ap @ Bm)
    H = H + g1p * (Ap @ Bz + Az @ Bp) + g1m * (Am @ Bz + Az @ Bm)
    H = H + g2p * Ap @ Bp + g2m * Am @ Bm
    return c.j_dip * H


def _field_vector(B: float, theta: float, phi: float) -> np.ndarray:
    return B * np.array(
        [math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)]
    )


def _zeeman(layout: HilbertLayout, site: int, bvec: np.ndarray, gamma_signed: float) -> np.ndarray:
    ops = layout.operators(site)
    return gamma_signed * (
        bvec[0] * embed(ops.Sx, site, layout)
        + bvec[1] * embed(ops.Sy, site, layout)
        + bvec[2] * embed(ops.Sz, site, layout)
    )


def hamiltonian_terms(cfg: ClusterConfig) -> tuple[np.ndarray, np.ndarray]:
    """Affine decomposition H(B) = Hc + B * Hz for the configured field direction."""
    layout = cfg.layout
    cst = cfg.constants
    dim = layout.dim
    Hc = np.zeros((dim, dim), dtype=complex)
    Hz = np.zeros((dim, dim), dtype=complex)
    unit_b = _field_vector(1.0, cfg.field_theta, cfg.field_phi)

    nv = layout.site_index(SITE_NV)
    Sz_nv = embed(layout.operators(nv).Sz, nv, layout)
    Hc += cst.D * Sz_nv @ Sz_nv

    # Electron Zeeman carries +|gamma_e| (gamma_e < 0 physically), nuclear -gamma.
    gammas = {
        SITE_NV: +cst.gamma_e,
        SITE_P1: +cst.gamma_e,
        SITE_B1: +cst.gamma_e,
        SITE_H: -cst.gamma_H,
        SITE_N_NV: -cst.gamma_N,
        SITE_N_P1: -cst.gamma_N,
    }
    for i, (label, _) in enumerate(layout.sites):
        Hz += _zeeman(layout, i, unit_b, gammas[label])

    for c in cfg.couplings:
        Hc += dipolar_hamiltonian(c, layout)

    hf_pairs = {SITE_N_NV: SITE_NV, SITE_N_P1: SITE_P1}
    for host_label, hf in cfg.hyperfine.items():
        host = layout.site_index(host_label)
        elec = layout.site_index(hf_pairs[host_label])
        k = layout.operators(host)
        s = layout.operators(elec)
        kvec = [embed(m, host, layout) for m in (k.Sx, k.Sy, k.Sz)]
        svec = [embed(m, elec, layout) for m in (s.Sx, s.Sy, s.Sz)]
        for i in range(3):
            for j in range(3):
                if hf.A[i, j] != 0.0:
                    Hc += hf.A[i, j] * svec[i] @ kvec[j]
                if hf.Q[i, j] != 0.0:
                    Hc += hf.Q[i, j] * kvec[i] @ kvec[j]
    return Hc, Hz


def assemble_hamiltonian(cfg: ClusterConfig, B: float) -> np.ndarray:
    """Cluster Hamiltonian at field amplitude ``B`` (mT), in MHz."""
    if B < 0:
        raise ValueError("B must be non-negative")
    Hc, Hz = hamiltonian_terms(cfg)
    return Hc + B * Hz


# --- the central 4x4 crossing subspace -----------------------------------

#: Basis of the level anti-crossing subspace, |NV, P1, H> projections.
CENTRAL_SUBSPACE = (
    (0.0, +0.5, +0.5),
    (0.0, +0.5, -0.5),
    (-1.0, -0.5, +0.5),
    (-1.0, -0.5, -0.5),
)


def central_subspace_indices(layout: HilbertLayout) -> list[int]:
    """Full-space indices of the 4 anti-crossing basis states (hosts in m=0... not supported)."""
    if len(layout.sites) != 3:
        raise ValueError("central subspace is defined for the bare 3-spin cluster")
    return [layout.basis_index(p) for p in CENTRAL_SUBSPACE]


def central_subspace_matrix(cfg: ClusterConfig, B: float) -> np.ndarray:
    """Restriction of the full Hamiltonian to the 4-state crossing subspace."""
    H = assemble_hamiltonian(cfg, B)
    idx = central_subspace_indices(cfg.layout)
    return H[np.ix_(idx, idx)]


@dataclass(frozen=True)
class GapEstimate:
    """Analytic couplings and gaps of the crossing subspace, MHz.

    ``v_dq``/``v_ss`` are the exact subspace matrix elements (they carry the
    spin-1 ladder factor sqrt(2) and the S'^z eigenvalue 1/2 relative to the
    bare geometric products).
    """

    delta0: float
    delta1: float
    z1: float
    z2: float
    v_ss: complex
    v_dq: complex
    e0: float
    ea: float
    eb: float
    j_virtual: complex
    b_matching: float


def subspace_couplings(cfg: ClusterConfig) -> tuple[float, float, complex, complex]:
    """(Z1, Z2, V_SS, V_DQ) exact matrix elements of the crossing subspace."""
    c1 = cfg.coupling_between(SITE_NV, SITE_P1)
    c2 = cfg.coupling_between(SITE_H, SITE_P1)
    if c1 is None or c2 is None:
        raise ValueError("cluster must define NV-P1 and H-P1 couplings")
    g0_1, _, g2_1 = dipolar_geometry(c1.theta_pair, c1.phi_pair)
    g0_2, g1_2, _ = dipolar_geometry(c2.theta_pair, c2.phi_pair)
    z1 = g0_1 * c1.j_dip
    z2 = g0_2 * c2.j_dip
    v_ss = 0.5 * g1_2 * c2.j_dip
    v_dq = SQRT2 * g2_1 * c1.j_dip
    return z1, z2, v_ss, v_dq


def matching_field(cfg: ClusterConfig, bracket: tuple[float, float] = (40.0, 120.0)) -> float:
    """Field (mT) where the NV 0 <-> -1 splitting matches the P1 Zeeman splitting.

    For an aligned field this is the closed-form root of
    ``2 w0S + w0I = D - Z1/2``; for a tilted field the NV block is
    diagonalized exactly and the root is bracketed to 1e-4 mT.

    Raises
    ------
    ValueError
        If the two splittings do not cross inside ``bracket``.
    """
    cst = cfg.constants
    z1, _, _, _ = subspace_couplings(cfg)
    if abs(cfg.field_theta) < 1e-12:
        return (cst.D - z1 / 2.0) / (2.0 * cst.gamma_e + cst.gamma_H)

    nv_layout = HilbertLayout(((SITE_NV, 1.0),))
    ops = nv_layout.operators(0)
    unit_b = _field_vector(1.0, cfg.field_theta, cfg.field_phi)
    Hnv0 = cst.D * ops.Sz @ ops.Sz
    Hnv1 = cst.gamma_e * (unit_b[0] * ops.Sx + unit_b[1] * ops.Sy + unit_b[2] * ops.Sz)

    def mismatch(B: float) -> float:
        # same crossing condition as the aligned closed form, with the NV
        # 0 <-> -1 splitting taken from the exactly diagonalized NV block
        evals = np.linalg.eigvalsh(Hnv0 + B * Hnv1)
        nv_split = evals[1] - evals[0]
        return (nv_split - z1 / 2.0) - (cst.gamma_e + cst.gamma_H) * B

    lo, hi = bracket
    f_lo, f_hi = mismatch(lo), mismatch(hi)
    if f_lo * f_hi > 0:
        raise ValueError(
            f"NV and P1 splittings do not cross in [{lo}, {hi}] mT "
            f"(theta = {cfg.field_theta:.3f} rad)"
        )
    return float(brentq(mismatch, lo, hi, xtol=1e-4))


def gap_estimates(cfg: ClusterConfig, B: float | None = None) -> GapEstimate:
    """Analytic estimates of the wide (direct) and narrow (virtual) gaps.

    The narrow gap comes from second-order perturbation theory through the
    two intermediate subspace states; the proton Zeeman splitting sets the
    virtual-state denominators.
    """
    if B is None:
        B = matching_field(cfg)
    cst = cfg.constants
    z1, z2, v_ss, v_dq = subspace_couplings(cfg)
    w0i = cst.gamma_H * B
    denom_a = w0i - z2 / 2.0
    denom_b = w0i + z2 / 2.0
    if abs(denom_a) < 1e-9 or abs(denom_b) < 1e-9:
        raise ZeroDivisionError(
            "virtual-gap denominator degenerate (w0I ~ Z2/2); gap estimate undefined"
        )
    j_virtual = np.conj(v_dq) * v_ss * (1.0 / denom_a + 1.0 / denom_b)
    w0s = cst.gamma_e * B
    e0 = 0.5 * w0s + 0.5 * w0i - z2 / 4.0
    ea = 0.5 * w0s - 0.5 * w0i + z2 / 4.0
    eb = cst.D - 1.5 * w0s + 0.5 * w0i + z1 / 2.0 + z2 / 4.0
    return GapEstimate(
        delta0=2.0 * abs(v_dq),
        delta1=2.0 * abs(j_virtual),
        z1=z1,
        z2=z2,
        v_ss=v_ss,
        v_dq=v_dq,
        e0=e0,
        ea=ea,
        eb=eb,
        j_virtual=j_virtual,
        b_matching=B,
    )


# --- eigenvalue branch tracking ------------------------------------------

@dataclass
class BranchDiagram:
    """Eigen-branches over a field grid with avoided-crossing annotations."""

    b_grid: np.ndarray               # (n_points,)
    energies: np.ndarray             # (n_points, dim), branch-continuous
    crossings: list[dict]            # {"b": mT, "gap": MHz, "branch_lower": i, "branch_upper": j}

    def to_rows(self):
        rows = []
        for k, b in enumerate(self.b_grid):
            for j in range(self.energies.shape[1]):
                rows.append({"B_mT": float(b), "branch_index": j,
                             "energy_MHz": float(self.energies[k, j]),
                             "label": f"branch{j}"})
        return rows


def eigen_branches(
    cfg: ClusterConfig,
    b_grid,
    refine: bool = True,
    min_overlap: float = 0.5,
) -> BranchDiagram:
    """Track eigenvalue branches over a monotone field grid.

    Branch continuity is assigned by maximal eigenvector overlap with the
    previous grid point; avoided crossings are reported at local minima of
    the distance between adjacent branches, with optional grid refinement
    around each minimum.

    Raises
    ------
    RuntimeError
        If the best overlap between consecutive points drops below
        ``min_overlap`` (grid too coarse to track branches).
    """
    b_grid = np.asarray(b_grid, dtype=float)
    if b_grid.ndim != 1 or len(b_grid) < 2:
        raise ValueError("b_grid must be a 1-D array with at least two points")
    diffs = np.diff(b_grid)
    if not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise ValueError("b_grid must be strictly monotone")

    Hc, Hz = hamiltonian_terms(cfg)
    energies, vecs_prev = [], None
    for b in b_grid:
        evals, evecs = np.linalg.eigh(Hc + b * Hz)
        if vecs_prev is None:
            order = np.arange(len(evals))
        else:
            overlap = np.abs(vecs_prev.conj().T @ evecs)  # [prev_branch, new_state]
            order = np.full(len(evals), -1)
            taken = np.zeros(len(evals), dtype=bool)
            # greedy: strongest overlaps claimed first
            for flat in np.argsort(overlap, axis=None)[::-1]:
                i, j = np.unravel_index(flat, overlap.shape)
                if order[i] == -1 and not taken[j]:
                    if overlap[i, j] < min_overlap:
                        raise RuntimeError(
                            f"branch tracking ambiguous near B = {b:.4f} mT "
                            f"(best overlap {overlap[i, j]:.3f} < {min_overlap}); refine the grid"
                        )
                    order[i] = j
                    taken[j] = True
                if np.all(order >= 0):
                    break
        energies.append(evals[order])
        vecs_prev = evecs[:, order]
    energies = np.array(energies)

    crossings = []
    n_branch = energies.shape[1]
    # crossing detection runs on the sorted spectrum: adjacent-in-energy
    # levels, not adjacent tracked branches (those may have swapped order)
    sorted_e = np.sort(energies, axis=1)
    for lower in range(n_branch - 1):
        gap = sorted_e[:, lower + 1] - sorted_e[:, lower]
        # local minima in the interior of the grid
        for k in range(1, len(b_grid) - 1):
            if gap[k] <= gap[k - 1] and gap[k] < gap[k + 1]:
                b_min, g_min = b_grid[k], gap[k]
                if refine:
                    b_min, g_min = _refine_gap(Hc, Hz, b_grid[k - 1], b_grid[k + 1],
                                               lower, b_min, g_min)
                crossings.append({"b": float(b_min), "gap": float(g_min),
                                  "branch_lower": lower, "branch_upper": lower + 1})
    return BranchDiagram(b_grid=b_grid, energies=energies, crossings=crossings)


def _refine_gap(Hc, Hz, b_lo, b_hi, lower, b_best, g_best, iters: int = 40):
    """Golden-section refinement of a local inter-branch gap minimum."""
    phi = (math.sqrt(5.0) - 1.0) / 2.0

    def gap_at(b):
        evals = np.linalg.eigvalsh(Hc + b * Hz)
        return evals[lower + 1] - evals[lower]

    a, d = b_lo, b_hi
    b = d - phi * (d - a)
    c = a + phi * (d - a)
    fb, fc = gap_at(b), gap_at(c)
    for _ in range(iters):
        if fb < fc:
            d, c, fc = c, b, fb
            b = d - phi * (d - a)
            fb = gap_at(b)
        else:
            a, b, fb = b, c, fc
            c = a + phi * (d - a)
            fc = gap_at(c)
        if abs(d - a) < 1e-7:
            break
    b_mid = 0.5 * (a + d)
    g_mid = gap_at(b_mid)
    if g_mid < g_best:
        return b_mid, g_mid
    return b_best, g_best
