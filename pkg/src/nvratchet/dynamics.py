"""Density-matrix propagation through swept-field ratchet protocols.

The field is stepped piecewise-constant; each step uses the exact
eigendecomposition propagator, so purely unitary stretches conserve trace,
hermiticity, and purity to numerical precision.  Dephasing, optical
repolarization, and P1 spin-lattice relaxation are instantaneous channels
applied between propagation stretches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import model
from .model import ClusterConfig, GapEstimate
from .spin_core import HilbertLayout, embed

# phase accumulated by H[MHz] over t[ms] is 2*pi*1e3*H*t
TWO_PI_MHZ_MS = 2.0 * math.pi * 1.0e3

TRACE_TOL = 1e-9
HERM_TOL = 1e-10
POSITIVITY_TOL = -1e-8


class StepSizeError(RuntimeError):
    """Raised when resolving the narrowest gap would exceed the step budget."""


@dataclass
class DensityMatrix:
    """Dense complex Hermitian unit-trace state of the cluster."""

    rho: np.ndarray
    layout: HilbertLayout

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=complex)
        if self.rho.shape != (self.layout.dim, self.layout.dim):
            raise ValueError("rho dimension does not match layout")

    @classmethod
    def maximally_mixed(cls, layout: HilbertLayout) -> "DensityMatrix":
        d = layout.dim
        return cls(np.eye(d, dtype=complex) / d, layout)

    @classmethod
    def from_populations(cls, populations, layout: HilbertLayout) -> "DensityMatrix":
        p = np.asarray(populations, dtype=float)
        return cls(np.diag(p).astype(complex), layout)

    def validate(self) -> None:
        tr = np.trace(self.rho).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise ValueError(f"trace deviates from 1 by {tr - 1.0:.2e}")
        herm = np.max(np.abs(self.rho - self.rho.conj().T))
        if herm > HERM_TOL:
            raise ValueError(f"hermiticity violated by {herm:.2e}")
        min_eig = float(np.linalg.eigvalsh(self.rho)[0])
        if min_eig < POSITIVITY_TOL:
            raise ValueError(f"negative eigenvalue {min_eig:.2e}")

    def purity(self) -> float:
        return float(np.trace(self.rho @ self.rho).real)

    def copy(self) -> "DensityMatrix":
        return DensityMatrix(self.rho.copy(), self.layout)


def ratchet_initial_state(cfg, kind: str = "thermal") -> DensityMatrix:
    """Pre-protocol state: NV pumped to m_S = 0, everything else unpolarized.

    ``kind="active"`` additionally puts the P1 proxy in its m_S' = +1/2
    projection, i.e. the manifold that actually participates in the
    crossings; this mirrors the four-state population cartoons used for
    the single-sweep and buildup figures.  ``kind="thermal"`` leaves the
    P1 maximally mixed.  Any further sites (hosts, bystander) start
    maximally mixed in both cases.
    """
    if kind not in ("thermal", "active"):
        raise ValueError(f"initial state kind must be 'thermal' or 'active', got {kind!r}")
    layout = cfg.layout
    rho = None
    for i, (label, s) in enumerate(layout.sites):
        d = int(round(2 * s + 1))
        if label == model.SITE_NV:
            block = np.zeros((d, d), dtype=complex)
            block[1, 1] = 1.0          # m ordering is +1, 0, -1
        elif label == model.SITE_P1 and kind == "active":
            block = np.zeros((d, d), dtype=complex)
            block[0, 0] = 1.0          # m = +1/2
        else:
            block = np.eye(d, dtype=complex) / d
        rho = block if rho is None else np.kron(rho, block)
    return DensityMatrix(rho, layout)


def expectation(rho: DensityMatrix, op_full: np.ndarray) -> float:
    return float(np.trace(op_full @ rho.rho).real)


def reduced_populations(rho: DensityMatrix, site: int | str) -> np.ndarray:
    """Diagonal of the reduced density matrix of one site (m = s, ..., -s)."""
    layout = rho.layout
    if isinstance(site, str):
        site = layout.site_index(site)
    dims = rho.layout.dims
    out = rho.rho.reshape(dims + dims)
    # trace out the other sites, highest index first so bra positions stay put
    for j in reversed(range(len(dims))):
        if j == site:
            continue
        out = np.trace(out, axis1=j, axis2=j + out.ndim // 2)
    return np.real(np.diag(out))


def polarization(rho: DensityMatrix, site: int | str) -> float:
    """Site polarization in [-1, 1].

    Spin-1/2 sites report 2<Sz>.  The spin-1 NV reports <Sz>; use
    :func:`nv_ms0_contrast` for the m_S = 0 population imbalance.
    """
    layout = rho.layout
    if isinstance(site, str):
        site = layout.site_index(site)
    ops = layout.operators(site)
    sz = expectation(rho, embed(ops.Sz, site, layout))
    if abs(ops.s - 0.5) < 1e-12:
        return 2.0 * sz
    return sz


def nv_ms0_contrast(rho: DensityMatrix) -> float:
    """NV population(m=0) minus the mean of the |+-1> populations."""
    pops = reduced_populations(rho, model.SITE_NV)  # order m = +1, 0, -1
    return float(pops[1] - 0.5 * (pops[0] + pops[2]))


# --- channels -------------------------------------------------------------

def apply_dephasing(rho: DensityMatrix, H: np.ndarray,
                    degeneracy_tol: float = 1e-6) -> DensityMatrix:
    """Project out coherences between non-degenerate eigenspaces of ``H``.

    Models dephasing much faster than the inter-sweep delay but slower
    than any level splitting: coherences between levels separated by
    more than ``degeneracy_tol`` (MHz) are dropped, while coherences
    inside a degenerate eigenspace carry no phase and are kept.  Keeping
    them matters when a decoupled spectator spin doubles every level:
    the channel must then act exactly as it would without the spectator.
    """
    H = np.asarray(H)
    if np.max(np.abs(H - H.conj().T)) > 1e-8 * max(1.0, np.max(np.abs(H))):
        raise ValueError("dephasing requires a Hermitian Hamiltonian")
    evals, v = np.linalg.eigh(H)
    rho_eig = v.conj().T @ rho.rho @ v
    keep = np.abs(evals[:, None] - evals[None, :]) <= degeneracy_tol
    rho_deph = v @ (rho_eig * keep) @ v.conj().T
    return DensityMatrix(rho_deph, rho.layout)


def apply_p1_relaxation(rho: DensityMatrix, layout: HilbertLayout, site: int | str) -> DensityMatrix:
    """Equalize populations across the two projections of a spin-1/2 site.

    Implemented as rho -> (rho + F rho F)/2 with F the embedded spin flip,
    which reproduces the population-averaging action of the T1 transfer
    matrix and leaves every other site's observables unchanged.
    """
    if isinstance(site, str):
        site = layout.site_index(site)
    ops = layout.operators(site)
    if abs(ops.s - 0.5) > 1e-12:
        raise ValueError("T1 channel is defined for spin-1/2 electron sites")
    F = embed(2.0 * ops.Sx, site, layout)
    return DensityMatrix(0.5 * (rho.rho + F @ rho.rho @ F.conj().T), rho.layout)


def optical_repolarize(rho: DensityMatrix, epsilon: float) -> DensityMatrix:
    """Reset the NV reduced state to the optically pumped mixture.

    epsilon = 2 pumps the NV fully into m_S = 0; epsilon = 0 leaves it
    maximally mixed.  The non-NV reduced state is untouched.
    """
    if not (0.0 <= epsilon <= 2.0):
        raise ValueError(f"epsilon must lie in [0, 2], got {epsilon}")
    layout = rho.layout
    site = layout.site_index(model.SITE_NV)
    if site != 0:
        raise ValueError("optical repolarization expects the NV at site 0")
    d_nv = layout.dims[0]
    d_rest = layout.dim // d_nv
    r = rho.rho.reshape(d_nv, d_rest, d_nv, d_rest)
    rho_rest = np.trace(r, axis1=0, axis2=2)
    # m ordering is +1, 0, -1
    p0 = (1.0 + epsilon) / 3.0
    p_pm = (1.0 - epsilon / 2.0) / 3.0
    rho_nv = np.diag([p_pm, p0, p_pm]).astype(complex)
    return DensityMatrix(np.kron(rho_nv, rho_rest), layout)


# --- swept-field propagation ---------------------------------------------

def propagate_piecewise(
    rho_mat: np.ndarray,
    Hc: np.ndarray,
    Hz: np.ndarray,
    b_start: float,
    b_end: float,
    duration: float,
    n_steps: int,
    chunk: int = 4096,
) -> np.ndarray:
    """Evolve rho under H(B(t)) = Hc + B(t) Hz with a linear field ramp.

    The ramp is split into ``n_steps`` equal piecewise-constant steps
    evaluated at the field midpoint of each step.
    """
    dt = duration / n_steps
    rho = rho_mat
    db = (b_end - b_start) / n_steps
    for start in range(0, n_steps, chunk):
        stop = min(start + chunk, n_steps)
        ks = np.arange(start, stop)
        b_mid = b_start + (ks + 0.5) * db
        H = Hc[None, :, :] + b_mid[:, None, None] * Hz[None, :, :]
        if not np.iscomplexobj(Hc) or (abs(Hc.imag).max() == 0.0 and abs(Hz.imag).max() == 0.0):
            evals, evecs = np.linalg.eigh(H.real)
            evecs = evecs.astype(complex)
        else:
            evals, evecs = np.linalg.eigh(H)
        phases = np.exp(-1j * TWO_PI_MHZ_MS * evals * dt)
        # U_k = V diag(phases) V^dagger
        U = evecs * phases[:, None, :]
        U = U @ np.conj(np.swapaxes(evecs, 1, 2))
        u = _ordered_product(U)
        rho = u @ rho @ u.conj().T
    return rho


def _ordered_product(U: np.ndarray) -> np.ndarray:
    """Time-ordered product U[n-1] @ ... @ U[1] @ U[0] of a stack of matrices.

    Reduces the stack pairwise so the work stays in batched matmuls rather
    than a long Python loop.
    """
    while U.shape[0] > 1:
        n = U.shape[0]
        half = n // 2
        paired = U[1 : 2 * half : 2] @ U[0 : 2 * half : 2]
        if n % 2:
            paired = np.concatenate([paired, U[-1:]], axis=0)
        U = paired
    return U[0]


@dataclass(frozen=True)
class SweepSegment:
    """One linear field ramp with optional end-of-sweep channel events."""

    b_start: float
    b_end: float
    beta: float                       # mT/ms, > 0
    dephase_at_end: bool = True
    t1_events: tuple[float, ...] = () # times (ms) within the segment

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("sweep rate beta must be positive")
        for t in self.t1_events:
            if not (0.0 <= t <= self.duration + 1e-12):
                raise ValueError(f"t1 event at {t} ms outside segment of {self.duration} ms")

    @property
    def duration(self) -> float:
        return abs(self.b_end - self.b_start) / self.beta

    @property
    def direction(self) -> str:
        return "up" if self.b_end >= self.b_start else "down"


def choose_step_count(
    seg: SweepSegment,
    gaps: GapEstimate,
    gamma_e: float,
    max_steps: int = 400_000,
    min_steps: int = 16,
) -> int:
    """Step count resolving the narrowest gap and the LZ crossing time.

    The per-step field drift must not exceed delta1/20 in energy, and the
    step must be shorter than tau_LZ/50.
    """
    duration = seg.duration
    limits = []
    if gaps.delta1 > 0:
        limits.append(gaps.delta1 / (20.0 * gamma_e * seg.beta))
    if gaps.delta0 > 0:
        tau_lz = gaps.delta0 / (2.0 * gamma_e * seg.beta)
        limits.append(tau_lz / 50.0)
    if not limits:
        return max(min_steps, 1)
    dt = min(limits)
    n = int(math.ceil(duration / dt))
    if n > max_steps:
        raise StepSizeError(
            f"segment needs {n} steps to resolve gap {gaps.delta1:.3e} MHz "
            f"(budget {max_steps}); narrow the sweep or relax the budget"
        )
    return max(n, min_steps)


def propagate_segment(
    rho: DensityMatrix,
    seg: SweepSegment,
    cfg: ClusterConfig,
    gaps: GapEstimate | None = None,
    terms: tuple[np.ndarray, np.ndarray] | None = None,
    t1_sites: tuple[str, ...] = (model.SITE_P1,),
    max_steps: int = 400_000,
) -> DensityMatrix:
    """Evolve through one sweep segment, firing T1 events and end dephasing."""
    if gaps is None:
        gaps = model.gap_estimates(cfg)
    if terms is None:
        terms = model.hamiltonian_terms(cfg)
    Hc, Hz = terms
    n_total = choose_step_count(seg, gaps, cfg.constants.gamma_e, max_steps=max_steps)
    duration = seg.duration
    sign = 1.0 if seg.b_end >= seg.b_start else -1.0

    events = sorted(t for t in seg.t1_events if t < duration - 1e-15)
    fire_at_end = any(t >= duration - 1e-15 for t in seg.t1_events)
    cuts = [0.0] + events + [duration]

    mat = rho.rho
    for t0, t1 in zip(cuts[:-1], cuts[1:]):
        if t1 > t0:
            n = max(1, int(round(n_total * (t1 - t0) / duration)))
            mat = propagate_piecewise(
                mat, Hc, Hz,
                seg.b_start + sign * seg.beta * t0,
                seg.b_start + sign * seg.beta * t1,
                t1 - t0, n,
            )
        if t1 < duration:
            state = DensityMatrix(mat, rho.layout)
            for label in t1_sites:
                state = apply_p1_relaxation(state, rho.layout, label)
            mat = state.rho

    out = DensityMatrix(mat, rho.layout)
    if seg.dephase_at_end:
        out = apply_dephasing(out, Hc + seg.b_end * Hz)
    if fire_at_end:
        for label in t1_sites:
            out = apply_p1_relaxation(out, rho.layout, label)
    return out


# --- protocols ------------------------------------------------------------

OPTICAL_PLACEMENTS = ("low-end", "high-end", "both-ends", "every-l-cycles")


@dataclass(frozen=True)
class Protocol:
    """Ordered schedule of sweeps, optical pulses, and relaxation events."""

    segments: tuple[SweepSegment, ...]
    optical_placement: str = "low-end"
    l_cycles: int = 1                 # repolarize every l cycles (every-l-cycles mode)
    epsilon: float = 2.0
    eta_nv: float = 1.0
    n_cycles: int = 1
    t1_sites: tuple[str, ...] = (model.SITE_P1,)
    t1_cycle_sites: tuple[str, ...] = ()  # relaxed once per cycle, at its end

    def __post_init__(self):
        if self.optical_placement not in OPTICAL_PLACEMENTS:
            raise ValueError(f"unknown optical placement {self.optical_placement!r}")
        if not (0.0 <= self.epsilon <= 2.0):
            raise ValueError("epsilon must lie in [0, 2]")
        if not (0.0 <= self.eta_nv <= 1.0):
            raise ValueError("eta_NV must lie in [0, 1]")
        if self.l_cycles < 1:
            raise ValueError("l_cycles must be >= 1")

    @property
    def effective_epsilon(self) -> float:
        return self.epsilon * self.eta_nv


@dataclass
class TimeSeriesRecord:
    t_ms: float
    B_mT: float
    pol_H: float
    pol_NV: float
    pol_P1: float
    cycle_index: int
    event_tag: str
    eigen_populations: np.ndarray


@dataclass
class TimeSeries:
    records: list[TimeSeriesRecord] = field(default_factory=list)

    def append(self, rec: TimeSeriesRecord):
        if self.records and rec.t_ms < self.records[-1].t_ms - 1e-12:
            raise ValueError("time must be monotone")
        self.records.append(rec)

    def final(self) -> TimeSeriesRecord:
        return self.records[-1]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_rows(self) -> list[dict]:
        rows = []
        for r in self.records:
            row = {
                "t_ms": r.t_ms, "B_mT": r.B_mT, "pol_H": r.pol_H,
                "pol_NV": r.pol_NV, "pol_P1": r.pol_P1,
                "cycle_index": r.cycle_index, "event_tag": r.event_tag,
            }
            rows.append(row)
        return rows


def make_ratchet_protocol(
    cfg: ClusterConfig,
    beta_up: float = 3.0,
    beta_down: float = 3.0,
    field_range: float = 0.5,
    optical_placement: str = "low-end",
    l_cycles: int = 1,
    epsilon: float = 2.0,
    eta_nv: float = 1.0,
    n_cycles: int = 1,
    dephase: bool = True,
    with_t1: bool = False,
    b_center: float | None = None,
    t1_sites: tuple[str, ...] | None = None,
    t1_cycle_sites: tuple[str, ...] = (),
) -> Protocol:
    """Up/down field cycle centered on the level anti-crossing.

    ``t1_sites`` relax after every sweep when ``with_t1`` is set;
    ``t1_cycle_sites`` relax only once per cycle, after the down sweep,
    which models a spin whose recycling time is comparable to the cycle
    period rather than to a single sweep.
    """
    if b_center is None:
        b_center = model.matching_field(cfg)
    lo, hi = b_center - field_range / 2.0, b_center + field_range / 2.0
    up = SweepSegment(lo, hi, beta_up, dephase_at_end=dephase,
                      t1_events=((hi - lo) / beta_up,) if with_t1 else ())
    down = SweepSegment(hi, lo, beta_down, dephase_at_end=dephase,
                        t1_events=((hi - lo) / beta_down,) if with_t1 else ())
    if t1_sites is None:
        t1_sites = (model.SITE_P1, model.SITE_B1) if cfg.include_bystander else (model.SITE_P1,)
    return Protocol(
        segments=(up, down),
        optical_placement=optical_placement,
        l_cycles=l_cycles,
        epsilon=epsilon,
        eta_nv=eta_nv,
        n_cycles=n_cycles,
        t1_sites=t1_sites,
        t1_cycle_sites=t1_cycle_sites if with_t1 else (),
    )


def run_protocol(
    cfg: ClusterConfig,
    proto: Protocol,
    rho0: DensityMatrix | None = None,
    max_steps: int = 400_000,
    validate_each: bool = False,
) -> TimeSeries:
    """Execute ``n_cycles`` of the protocol and record after every event."""
    layout = cfg.layout
    rho = rho0.copy() if rho0 is not None else DensityMatrix.maximally_mixed(layout)
    terms = model.hamiltonian_terms(cfg)
    gaps = model.gap_estimates(cfg)
    series = TimeSeries()
    t = 0.0

    def record(b: float, cycle: int, tag: str):
        Hb = terms[0] + b * terms[1]
        evals, evecs = np.linalg.eigh(Hb)
        pops = np.real(np.diag(evecs.conj().T @ rho.rho @ evecs))
        series.append(TimeSeriesRecord(
            t_ms=t, B_mT=b,
            pol_H=polarization(rho, model.SITE_H),
            pol_NV=nv_ms0_contrast(rho),
            pol_P1=polarization(rho, model.SITE_P1),
            cycle_index=cycle, event_tag=tag,
            eigen_populations=pops,
        ))
        if validate_each:
            rho.validate()

    def optical(b: float, cycle: int):
        nonlocal rho
        rho = optical_repolarize(rho, proto.effective_epsilon)
        record(b, cycle, "optical")

    if not proto.segments:
        return series

    for cycle in range(proto.n_cycles):
        for i_seg, seg in enumerate(proto.segments):
            if i_seg == 0:
                if proto.optical_placement in ("low-end", "both-ends"):
                    optical(seg.b_start, cycle)
                elif proto.optical_placement == "every-l-cycles" and cycle % proto.l_cycles == 0:
                    optical(seg.b_start, cycle)
            else:
                if proto.optical_placement in ("high-end", "both-ends"):
                    optical(seg.b_start, cycle)
            rho = propagate_segment(
                rho, seg, cfg, gaps=gaps, terms=terms,
                t1_sites=proto.t1_sites, max_steps=max_steps,
            )
            t += seg.duration
            tag = f"sweep_{seg.direction}"
            if seg.dephase_at_end:
                tag += "+dephase"
            if seg.t1_events:
                tag += "+t1"
            if i_seg == len(proto.segments) - 1 and proto.t1_cycle_sites:
                for label in proto.t1_cycle_sites:
                    rho = apply_p1_relaxation(rho, layout, label)
                tag += "+t1cycle"
            record(seg.b_end, cycle, tag)
    return series
