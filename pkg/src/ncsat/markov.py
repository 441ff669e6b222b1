"""Markov model of coded transmission over a slotted time-varying channel.

States are pairs (i, j): ``i`` degrees of freedom still missing, ``j`` the
current slot.  A packet sent in slot ``j`` moves the chain to (i-1, j+1) on
success and to (i, j+1) on erasure.  Delivery (i reaching 0) and running off
the last slot both land in a single absorbing state.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .channel import ChannelTrace
from .phy import BPSK, Modulation, PhyConfig, batch_duration
from .policies import ChannelView, Policy, PolicyState

__all__ = [
    "StateSpace",
    "TransitionMatrix",
    "DelayTable",
    "build_matrix",
    "n_step",
    "expected_delay",
    "dump_matrix",
    "TRUNCATION_TOL",
]

TRUNCATION_TOL = 1e-6


@dataclass(frozen=True)
class StateSpace:
    i_max: int = 4
    n_slots: int = 100

    def __post_init__(self):
        if self.i_max < 1 or self.n_slots < 1:
            raise ValueError("i_max and n_slots must be positive")

    @property
    def dim(self) -> int:
        return self.i_max * self.n_slots + 1

    @property
    def absorbing(self) -> int:
        return self.i_max * self.n_slots

    def index(self, i: int, j: int) -> int:
        if not (1 <= i <= self.i_max and 0 <= j < self.n_slots):
            raise IndexError(f"state ({i}, {j}) outside the state space")
        return (i - 1) * self.n_slots + j

    def state(self, index: int) -> tuple[int, int] | None:
        """Inverse of ``index``; None for the absorbing state."""
        if index == self.absorbing:
            return None
        if not 0 <= index < self.absorbing:
            raise IndexError(index)
        i, j = divmod(index, self.n_slots)
        return i + 1, j


@dataclass(frozen=True)
class TransitionMatrix:
    space: StateSpace
    matrix: sp.csr_matrix

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def prob(self, src: int, dst: int) -> float:
        return float(self.matrix[src, dst])

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def _trace_erasures(trace: ChannelTrace, phy: PhyConfig, mod: Modulation) -> np.ndarray:
    return ChannelView(trace, phy, (mod,)).pe[mod]


def build_matrix(trace: ChannelTrace, phy: PhyConfig, mod: Modulation = BPSK,
                 space: StateSpace = StateSpace()) -> TransitionMatrix:
    """One-step transition matrix for packets sent on ``mod`` over ``trace``."""
    if len(trace) < space.n_slots:
        raise ValueError(f"trace has {len(trace)} slots, horizon needs {space.n_slots}")
    return _matrix_from_erasures(_trace_erasures(trace, phy, mod)[:space.n_slots], space)


def _matrix_from_erasures(pe: np.ndarray, space: StateSpace) -> TransitionMatrix:
    J, absorb = space.n_slots, space.absorbing
    rows, cols, vals = [], [], []
    for i in range(1, space.i_max + 1):
        for j in range(J):
            src = space.index(i, j)
            p_erase = float(pe[j])
            if j + 1 == J:
                rows.append(src); cols.append(absorb); vals.append(1.0)
                continue
            success = absorb if i == 1 else space.index(i - 1, j + 1)
            rows += [src, src]
            cols += [success, space.index(i, j + 1)]
            vals += [1.0 - p_erase, p_erase]
    rows.append(absorb); cols.append(absorb); vals.append(1.0)
    m = sp.csr_matrix((vals, (rows, cols)), shape=(space.dim, space.dim))
    m.sum_duplicates()
    m.eliminate_zeros()
    return TransitionMatrix(space, m)


def n_step(matrix: TransitionMatrix, n: int) -> TransitionMatrix:
    """``n``-th power by repeated sparse multiplication."""
    if n < 1:
        raise ValueError("n must be >= 1")
    result = matrix.matrix
    for _ in range(n - 1):
        result = result @ matrix.matrix
    return TransitionMatrix(matrix.space, sp.csr_matrix(result))


def dump_matrix(matrix: TransitionMatrix) -> str:
    """Non-zero entries as ``row,col,prob`` CSV."""
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("row", "col", "prob"))
    coo = matrix.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    for k in order:
        w.writerow((int(coo.row[k]), int(coo.col[k]), repr(float(coo.data[k]))))
    return buf.getvalue()


@dataclass(frozen=True)
class DelayTable:
    """Expected delivery time from every (i, j) with a fresh policy state.

    ``undelivered`` is the probability of stopping without delivery, whether at
    the trial cap or at the horizon; ``horizon_mass`` counts the horizon part.
    """

    space: StateSpace
    delay: np.ndarray
    undelivered: np.ndarray
    horizon_mass: np.ndarray
    tol: float = field(default=TRUNCATION_TOL)

    def expected_delay(self, i: int, j: int = 0) -> float:
        return float(self.delay[i, j])

    def __getitem__(self, key: tuple[int, int]) -> float:
        return self.expected_delay(*key)

    @property
    def start_delay(self) -> float:
        return self.expected_delay(self.space.i_max, 0)

    @property
    def truncated(self) -> bool:
        return bool(self.undelivered[self.space.i_max, 0] > self.tol)


def _success_prob(pe: np.ndarray, need: int) -> float:
    """P(at least ``need`` successes) over independent slots."""
    dist = np.zeros(need + 1)
    dist[0] = 1.0
    for e in pe:
        shifted = np.empty_like(dist)
        shifted[0] = dist[0] * e
        shifted[1:] = dist[1:] * e + dist[:-1] * (1.0 - e)
        shifted[need] += dist[need] * (1.0 - e)
        dist = shifted
    return float(dist[need])


def expected_delay(trace: ChannelTrace, phy: PhyConfig, policy: Policy,
                   space: StateSpace = StateSpace(), t_w: float = 0.2388,
                   t_p: float | None = None, ack_slots: int = 1) -> DelayTable:
    """Backward recursion for the expected time to deliver ``i`` dof from slot ``j``.

    A transmitting round costs its batch airtime plus ``t_w`` and resumes
    ``ack_slots`` slots after the batch ends; a silent slot costs one slot
    duration.  The recursion also tracks the policy state (shortfall carry
    and round count), stopping at the trial cap exactly as the simulator does.
    Residual mass beyond the horizon contributes no further time.
    """
    if t_w < 0:
        raise ValueError("t_w must be non-negative")
    if t_p is not None and not t_p > 0:
        raise ValueError("t_p must be positive")
    J = space.n_slots
    need = J + policy.lookahead(space.i_max)
    if len(trace) < need:
        raise ValueError(f"trace has {len(trace)} slots, analysis needs {need}")
    view = ChannelView(trace, phy)
    max_trials = policy.config.max_trials
    matrices: dict[Modulation, TransitionMatrix] = {}

    @lru_cache(maxsize=None)
    def power(mod: Modulation, n: int) -> sp.csr_matrix:
        if mod not in matrices:
            matrices[mod] = _matrix_from_erasures(view.pe[mod][:J], space)
        if n == 1:
            return matrices[mod].matrix
        return sp.csr_matrix(power(mod, n - 1) @ matrices[mod].matrix)

    # memo[(i, j, delta, trials)] = (delay, undelivered, horizon)
    memo: dict[tuple[int, int, int, int], tuple[float, float, float]] = {}

    def solve(i: int, j: int, delta: int, trials: int) -> tuple[float, float, float]:
        key = (i, j, delta, trials)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if trials >= max_trials:
            out = (0.0, 1.0, 0.0)
            memo[key] = out
            return out
        decision, nxt = policy.decide(i, j, view, PolicyState(delta, trials))
        if decision.silent:
            if j + 1 < J:
                t, u, h = solve(i, j + 1, delta, trials)
                out = (trace.slot_duration + t, u, h)
            else:
                out = (trace.slot_duration, 1.0, 1.0)
            memo[key] = out
            return out
        n, mod = decision.batch_size, decision.modulation
        t = batch_duration(n, phy, mod, t_p) + t_w
        u = h = 0.0
        if j + n < J:
            P = power(mod, n)
            row = space.index(i, j)
            lo, hi = P.indptr[row], P.indptr[row + 1]
            resume = j + n + ack_slots
            for col, p in zip(P.indices[lo:hi].tolist(), P.data[lo:hi].tolist()):
                if col == space.absorbing or p == 0.0:
                    continue
                l, _ = space.state(col)
                if resume < J:
                    tl, ul, hl = solve(l, resume, nxt.delta, nxt.trial_count)
                    t += p * tl
                    u += p * ul
                    h += p * hl
                else:
                    u += p
                    h += p
        else:
            lost = 1.0 - _success_prob(view.pe[mod][j:j + n], i)
            u = h = lost
        out = (t, u, h)
        memo[key] = out
        return out

    shape = (space.i_max + 1, J)
    delay, undelivered, horizon = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    # Fill every policy state from the last slot backwards so each call only
    # looks up later, already solved slots.
    for j in range(J - 1, -1, -1):
        for trials in range(max_trials - 1, -1, -1):
            for delta in range(space.i_max):
                for i in range(1, space.i_max + 1):
                    solve(i, j, delta, trials)
        for i in range(1, space.i_max + 1):
            delay[i, j], undelivered[i, j], horizon[i, j] = solve(i, j, 0, 0)
    return DelayTable(space, delay, undelivered, horizon)
