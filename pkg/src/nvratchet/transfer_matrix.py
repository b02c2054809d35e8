"""Classical transfer-matrix model of the sweep cycle.

Works on the eight product states of the crossing region, ordered

    |1> = |0,-1/2,up>    |2> = |0,-1/2,dn>
    |3> = |0,+1/2,up>    |4> = |0,+1/2,dn>
    |5> = |-1,-1/2,up>   |6> = |-1,-1/2,dn>
    |7> = |-1,+1/2,up>   |8> = |-1,+1/2,dn>

(NV projection, P1 projection, proton).  Proton-up states carry odd
labels, so the proton polarization of a population vector is the odd
minus the even index sum.  All matrices are column-stochastic: column j
lists the probabilities of ending in each state given a start in |j>.
No interference terms enter; multiple-passage coherence is outside this
model on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# proton-up state indices (0-based) in the fixed 8-state ordering
_UP_STATES = (0, 2, 4, 6)
_DOWN_STATES = (1, 3, 5, 7)

STOCHASTIC_TOL = 1e-12

# angular-unit bridge for the exponents: couplings in MHz, sweep rates in
# mT/ms, field slopes in MHz/mT.  See lz_prob.
_EXPONENT_SCALE = np.pi**2 * 1.0e3

#: energy-vs-field slope difference across each crossing type, MHz/mT
SLOPE_DELTA0 = 2 * 28.025
SLOPE_DELTA1 = 2 * 28.025 + 0.042577


def lz_prob(delta: float, beta: float, channel: str = "delta0") -> float:
    """Survival (diabatic-crossing) probability of a single passage.

    Parameters
    ----------
    delta : float
        Gap size in MHz (full splitting, twice the coupling element).
    beta : float
        Sweep rate in mT/ms, > 0.
    channel : {"delta0", "delta1"}
        Selects the relative slope of the crossing branches: the wide
        gap separates branches differing by an electron flip (slope
        2|gamma_e|), the narrow gap adds the proton flip (slope
        2|gamma_e| + gamma_H).

    Notes
    -----
    The standard exponent pi*delta^2 / (2*hbar*|d(E1-E2)/dt|) is stated
    in angular units.  With delta in MHz, the slope in MHz/mT and beta
    in mT/ms the bridge factor is pi^2 * 1e3, which is what the factor
    below carries.
    """
    if delta < 0:
        raise ValueError("gap must be non-negative")
    if beta <= 0:
        raise ValueError("sweep rate must be positive")
    slope = _channel_slope(channel)
    return float(np.exp(-_EXPONENT_SCALE * delta**2 / (slope * beta)))


def lz_prob_sd(delta: float, beta: float) -> float:
    """Crossing probability of the wide gap in the strong-dephasing limit.

    Dephasing much faster than the passage time replaces the coherent
    outcome with (1 + p^2)/2 where p is the coherent probability; as
    beta -> 0 this tends to 1/2 (diffusive splitting) instead of 0.
    """
    p = lz_prob(delta, beta, channel="delta0")
    return 0.5 * (1.0 + p * p)


def _channel_slope(channel: str) -> float:
    if channel == "delta0":
        return SLOPE_DELTA0
    if channel == "delta1":
        return SLOPE_DELTA1
    raise ValueError(f"unknown crossing channel {channel!r}")


@dataclass(frozen=True)
class LZParams:
    """Per-sweep crossing probabilities for one full cycle."""

    p0_up: float
    p1_up: float
    p0_down: float
    p1_down: float
    sd_mode: bool = False

    def __post_init__(self):
        for name in ("p0_up", "p1_up", "p0_down", "p1_down"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} = {v} outside [0, 1]")

    @classmethod
    def from_gaps(cls, delta0, delta1, beta_up, beta_down, sd_mode=False):
        """Evaluate the four probabilities from gap sizes and sweep rates."""
        p0f = lz_prob_sd if sd_mode else (lambda d, b: lz_prob(d, b, "delta0"))
        return cls(
            p0_up=p0f(delta0, beta_up),
            p1_up=lz_prob(delta1, beta_up, "delta1"),
            p0_down=p0f(delta0, beta_down),
            p1_down=lz_prob(delta1, beta_down, "delta1"),
            sd_mode=sd_mode,
        )


@dataclass(frozen=True)
class BranchPopulations:
    """Populations of the eight crossing-region states."""

    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if v.shape != (8,):
            raise ValueError("population vector must have 8 entries")
        if (v < -STOCHASTIC_TOL).any():
            raise ValueError("populations must be non-negative")
        if abs(v.sum() - 1.0) > 1e-12:
            raise ValueError(f"populations must sum to 1, got {v.sum()!r}")
        object.__setattr__(self, "v", v)

    @classmethod
    def thermal_ms0(cls) -> "BranchPopulations":
        """Equal weight on the four m_S = 0 states (post-light, unpolarized P1/H)."""
        return cls(np.array([0.25, 0.25, 0.25, 0.25, 0, 0, 0, 0]))

    @classmethod
    def active_manifold(cls) -> "BranchPopulations":
        """All weight on |3>, |4>: the P1 projection that participates in the crossings."""
        return cls(np.array([0, 0, 0.5, 0.5, 0, 0, 0, 0]))

    def proton_polarization(self) -> float:
        return float(self.v[list(_UP_STATES)].sum() - self.v[list(_DOWN_STATES)].sum())


@dataclass(frozen=True)
class CycleMatrix:
    """8x8 column-stochastic matrix with a provenance tag."""

    T: np.ndarray
    provenance: str = "composed"

    def __post_init__(self):
        T = np.asarray(self.T, dtype=float)
        if T.shape != (8, 8):
            raise ValueError("cycle matrix must be 8x8")
        if (T < -STOCHASTIC_TOL).any() or (T > 1 + STOCHASTIC_TOL).any():
            raise ValueError("matrix entries must lie in [0, 1]")
        cols = T.sum(axis=0)
        if np.abs(cols - 1.0).max() > STOCHASTIC_TOL:
            raise ValueError(f"columns must sum to 1, worst deviation {np.abs(cols-1).max():.2e}")
        object.__setattr__(self, "T", T)

    def __matmul__(self, other):
        if isinstance(other, CycleMatrix):
            return CycleMatrix(self.T @ other.T, provenance="composed")
        return self.T @ other


def build_tm_up(p0: float, p1: float) -> CycleMatrix:
    """Transfer matrix of one low-to-high sweep.

    States |1>, |2>, |7>, |8> sit outside the crossing region and are
    untouched.  The active block routes |3>..|6> through the wide gap
    (probability p0 of staying diabatic) and the two narrow gaps (p1
    each); the double narrow-gap passages of |4> and |5> pick up the
    two-path combinatorial weights 2 p1 (1-p1) and p1^2 + (1-p1)^2.
    """
    for name, v in (("p0", p0), ("p1", p1)):
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"{name} = {v} outside [0, 1]")
    q0 = 1.0 - p0
    q1 = 1.0 - p1
    T = np.zeros((8, 8))
    for k in (0, 1, 6, 7):
        T[k, k] = 1.0
    # columns are starting states |3>, |4>, |5>, |6> (indices 2..5)
    T[2, 2] = p0 * p1
    T[3, 2] = 0.0
    T[4, 2] = q0
    T[5, 2] = p0 * q1
    T[2, 3] = 2 * q0 * p1 * q1
    T[3, 3] = p1 * p0
    T[4, 3] = q1 * p0
    T[5, 3] = q0 * (p1**2 + q1**2)
    T[2, 4] = q0 * (p1**2 + q1**2)
    T[3, 4] = q1 * p0
    T[4, 4] = p1 * p0
    T[5, 4] = 2 * q0 * p1 * q1
    T[2, 5] = p0 * q1
    T[3, 5] = q0
    T[4, 5] = 0.0
    T[5, 5] = p0 * p1
    return CycleMatrix(T, provenance="composed")


def build_tm_down(p0: float, p1: float) -> CycleMatrix:
    """Transfer matrix of one high-to-low sweep: the transpose of the up sweep."""
    return CycleMatrix(build_tm_up(p0, p1).T.T.copy(), provenance="composed")


def tm_t1() -> CycleMatrix:
    """P1 spin-lattice relaxation: averages each pair of states differing
    only in the P1 projection, leaving the proton label alone."""
    T = np.zeros((8, 8))
    for a, b in ((0, 2), (1, 3), (4, 6), (5, 7)):
        T[a, a] = T[a, b] = T[b, a] = T[b, b] = 0.5
    return CycleMatrix(T, provenance="composed")


def tm_light() -> CycleMatrix:
    """Full optical repolarization of the NV: every m_S = -1 state is
    mapped onto the m_S = 0 state with the same P1 and proton labels."""
    T = np.zeros((8, 8))
    for k in range(4):
        T[k, k] = 1.0
        T[k, k + 4] = 1.0
    return CycleMatrix(T, provenance="composed")


def compose_cycle(params: LZParams, with_t1: bool = True,
                  light_placement: str = "start") -> CycleMatrix:
    """Full-cycle matrix: up sweep, (T1), down sweep, (T1), light.

    With ``light_placement="none"`` the final repolarization is omitted,
    which leaves the cycle without its entropy sink; useful only for
    inspecting the sweep pair itself.
    """
    if light_placement not in ("start", "none"):
        raise ValueError(f"light_placement must be 'start' or 'none', got {light_placement!r}")
    up = build_tm_up(params.p0_up, params.p1_up)
    down = build_tm_down(params.p0_down, params.p1_down)
    t1 = tm_t1()
    mats = [up]
    if with_t1:
        mats.append(t1)
    mats.append(down)
    if with_t1:
        mats.append(t1)
    if light_placement == "start":
        mats.append(tm_light())
    T = np.eye(8)
    for m in mats:
        T = m.T @ T
    return CycleMatrix(T, provenance="composed")


def analytic_cycle_t1(p1_up: float) -> CycleMatrix:
    """Closed-form cycle matrix for the slow-up / fast-down regime with T1.

    Assumes the wide gap is crossed in the strong-dephasing limit on the
    way up (probability 1/2) and the down sweep is fast enough that both
    narrow gaps are crossed diabatically.  The result depends only on
    the up-sweep narrow-gap probability.
    """
    p = p1_up
    q = 1.0 - p
    r13 = (p + 1) / 4
    r14 = p * q / 2 + q / 4
    r15 = p**2 / 2 + q / 4
    r16 = q / 4
    top = np.array([
        [0.5, 0.0, r13, r14, r15, r16, 0.5, 0.0],
        [0.0, 0.5, r16, r15, r14, r13, 0.0, 0.5],
    ])
    T = np.zeros((8, 8))
    T[0] = top[0]
    T[1] = top[1]
    T[2] = top[0]
    T[3] = top[1]
    return CycleMatrix(T, provenance="analytic-t1")


def analytic_cycle_no_t1(p1_up: float) -> CycleMatrix:
    """Closed-form cycle matrix without T1 for a fast down sweep.

    The down sweep is taken fully diabatic at the wide gap, so the m_S
    = -1 population returns unchanged and the light pulse folds it onto
    the matching m_S = 0 states.
    """
    p = p1_up
    q = 1.0 - p
    s = p**2 + q**2
    T = np.zeros((8, 8))
    T[0, 0] = 1.0
    T[1, 1] = 1.0
    T[0, 2] = 0.5
    T[0, 3] = q / 2
    T[0, 4] = p / 2
    T[1, 2] = q / 2
    T[1, 3] = s / 2
    T[1, 4] = q * p
    T[1, 5] = p / 2
    T[2, 2] = p / 2
    T[2, 3] = q * p
    T[2, 4] = s / 2
    T[2, 5] = q / 2
    T[2, 6] = 1.0
    T[3, 3] = p / 2
    T[3, 4] = q / 2
    T[3, 5] = 0.5
    T[3, 7] = 1.0
    return CycleMatrix(T, provenance="analytic-no-t1")


def iterate(T: CycleMatrix, v0: BranchPopulations, n: int,
            record_vectors: bool = False):
    """Apply the cycle matrix n times, returning per-cycle polarization.

    Returns a list of (cycle, proton polarization) pairs for cycles
    1..n, or (cycle, polarization, populations) triples when
    ``record_vectors`` is set.  Cycle 0 (the initial vector) is not
    included.
    """
    if n < 0:
        raise ValueError("cycle count must be non-negative")
    out = []
    v = v0.v.copy()
    for k in range(1, n + 1):
        v = T.T @ v
        pops = BranchPopulations(np.clip(v, 0.0, None) / v.sum())
        if record_vectors:
            out.append((k, pops.proton_polarization(), pops))
        else:
            out.append((k, pops.proton_polarization()))
    return out
