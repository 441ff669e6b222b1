"""Land-mobile-satellite channel traces.

Slow shadowing follows a discrete Markov chain over states; inside each state
the received amplitude is Loo distributed (lognormal direct component plus a
Rayleigh diffuse component).  Traces hold one E_s/N0 value (dB) per slot.
"""

from __future__ import annotations

import bisect
import csv
import io
import math
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

__all__ = [
    "ShadowState",
    "LmsParameters",
    "ChannelTrace",
    "TraceParseError",
    "OPEN_AREA_GEO",
    "generate_trace",
    "constant_trace",
    "load_trace",
    "save_trace",
    "stationary_distribution",
]

TRACE_HEADER = ("slot", "esn0_db", "state")


class TraceParseError(ValueError):
    pass


@dataclass(frozen=True)
class ShadowState:
    """Loo parameters of one shadowing state, all in dB.

    ``loo_alpha_db`` and ``loo_psi_db`` are the mean and standard deviation of
    the direct component amplitude (20 log10 scale); ``loo_mp_db`` is the
    diffuse multipath power relative to the unit line-of-sight level.
    """

    loo_alpha_db: float
    loo_psi_db: float
    loo_mp_db: float

    def __post_init__(self):
        if not self.loo_psi_db >= 0:
            raise ValueError(f"loo_psi_db must be >= 0, got {self.loo_psi_db}")


@dataclass(frozen=True)
class LmsParameters:
    states: tuple[ShadowState, ...]
    state_transition: np.ndarray
    slot_duration: float = 0.2388
    mobile_speed: float = 10.0
    mean_esn0_db: float = 10.0
    initial_state: int = 0

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        P = np.array(self.state_transition, dtype=float)
        object.__setattr__(self, "state_transition", P)
        n = len(self.states)
        if n < 1:
            raise ValueError("at least one shadow state is required")
        if P.shape != (n, n):
            raise ValueError(f"state_transition must be {n}x{n}, got {P.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("state_transition must be row-stochastic")
        if not self.slot_duration > 0:
            raise ValueError("slot_duration must be positive")
        if not self.mobile_speed >= 0:
            raise ValueError("mobile_speed must be non-negative")
        if not 0 <= self.initial_state < n:
            raise ValueError("initial_state out of range")

    def with_mean(self, mean_esn0_db: float) -> "LmsParameters":
        return LmsParameters(self.states, self.state_transition, self.slot_duration,
                             self.mobile_speed, mean_esn0_db, self.initial_state)


# Representative three-state open-area GEO set (line of sight, moderate and
# deep shadowing), implementer-sourced after Fontan et al. (2001).  Not the
# published table; per-slot transitions assume 0.2388 s slots at 10 m/s.
OPEN_AREA_GEO = LmsParameters(
    states=(
        ShadowState(loo_alpha_db=0.1, loo_psi_db=0.4, loo_mp_db=-22.0),
        ShadowState(loo_alpha_db=-3.9, loo_psi_db=0.9, loo_mp_db=-20.0),
        ShadowState(loo_alpha_db=-12.0, loo_psi_db=3.0, loo_mp_db=-24.0),
    ),
    state_transition=np.array([
        [0.95, 0.04, 0.01],
        [0.06, 0.90, 0.04],
        [0.03, 0.07, 0.90],
    ]),
)


@dataclass(frozen=True)
class ChannelTrace:
    """Per-slot E_s/N0 (dB) and shadow-state labels.

    ``reference_esn0_db`` is the nominal transmit level the trace was built
    around; energy accounting uses it when present.
    """

    esn0_db: np.ndarray
    state_labels: np.ndarray
    slot_duration: float
    reference_esn0_db: float | None = field(default=None)

    def __post_init__(self):
        esn0 = np.asarray(self.esn0_db, dtype=float)
        labels = np.asarray(self.state_labels, dtype=int)
        if esn0.ndim != 1 or esn0.size < 1:
            raise ValueError("trace must contain at least one slot")
        if labels.shape != esn0.shape:
            raise ValueError("esn0_db and state_labels lengths differ")
        if not np.all(np.isfinite(esn0)):
            raise ValueError("trace values must be finite")
        if not self.slot_duration > 0:
            raise ValueError("slot_duration must be positive")
        esn0.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "esn0_db", esn0)
        object.__setattr__(self, "state_labels", labels)

    def __len__(self) -> int:
        return self.esn0_db.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChannelTrace):
            return NotImplemented
        return (np.array_equal(self.esn0_db, other.esn0_db)
                and np.array_equal(self.state_labels, other.state_labels)
                and self.slot_duration == other.slot_duration
                and self.reference_esn0_db == other.reference_esn0_db)

    __hash__ = None

    def shifted(self, offset_db: float) -> "ChannelTrace":
        ref = None if self.reference_esn0_db is None else self.reference_esn0_db + offset_db
        return ChannelTrace(self.esn0_db + offset_db, self.state_labels, self.slot_duration, ref)


def stationary_distribution(P: np.ndarray, tol: float = 1e-14, max_iter: int = 100_000) -> np.ndarray:
    """Stationary row vector of a row-stochastic matrix by power iteration."""
    P = np.asarray(P, dtype=float)
    pi = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(max_iter):
        nxt = pi @ P
        if np.max(np.abs(nxt - pi)) < tol:
            return nxt
        pi = nxt
    return pi


def _state_path(P: np.ndarray, start: int, n_slots: int, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    rows = [row.tolist() for row in cum]
    labels = np.empty(n_slots, dtype=int)
    s = start
    labels[0] = s
    for k, u in enumerate(rng.random(n_slots - 1).tolist(), start=1):
        s = bisect.bisect_right(rows[s], u)
        labels[k] = s
    return labels


def loo_amplitudes(state: ShadowState, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` Loo-distributed envelope samples for one shadow state."""
    direct_db = state.loo_alpha_db + state.loo_psi_db * rng.standard_normal(n)
    direct = 10.0 ** (direct_db / 20.0)
    if math.isinf(state.loo_mp_db) and state.loo_mp_db < 0:
        return direct
    sigma = math.sqrt(10.0 ** (state.loo_mp_db / 10.0) / 2.0)
    diffuse = sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return np.abs(direct + diffuse)


def generate_trace(params: LmsParameters, n_slots: int, seed: int) -> ChannelTrace:
    """Sample an LMS channel trace of ``n_slots`` slots.

    The shadow state advances one Markov step per slot.  Each slot's envelope
    is drawn from that state's Loo distribution and its power is added (in
    dB) to ``params.mean_esn0_db``.
    """
    if int(n_slots) != n_slots or n_slots < 1:
        raise ValueError(f"n_slots must be a positive integer, got {n_slots}")
    rng = np.random.default_rng(seed)
    labels = _state_path(params.state_transition, params.initial_state, int(n_slots), rng)
    amplitude = np.empty(int(n_slots))
    for k, state in enumerate(params.states):
        mask = labels == k
        amplitude[mask] = loo_amplitudes(state, int(mask.sum()), rng)
    with np.errstate(divide="ignore"):
        gain_db = 20.0 * np.log10(amplitude)
    # Zero envelope has probability zero but would break finiteness.
    gain_db = np.maximum(gain_db, -300.0)
    return ChannelTrace(params.mean_esn0_db + gain_db, labels, params.slot_duration,
                        params.mean_esn0_db)


def constant_trace(esn0_db: float, n_slots: int, slot_duration: float = 0.2388) -> ChannelTrace:
    if int(n_slots) != n_slots or n_slots < 1:
        raise ValueError(f"n_slots must be a positive integer, got {n_slots}")
    return ChannelTrace(np.full(int(n_slots), float(esn0_db)), np.zeros(int(n_slots), dtype=int),
                        slot_duration, float(esn0_db))


def load_trace(source: BinaryIO | bytes | str, slot_duration: float = 0.2388) -> ChannelTrace:
    """Parse a ``slot,esn0_db,state`` CSV trace.

    Raises TraceParseError naming the offending line.
    """
    if isinstance(source, (bytes, str)):
        data = source
    else:
        data = source.read()
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    rows = list(csv.reader(io.StringIO(text, newline="")))
    if not rows:
        raise TraceParseError("line 1: empty trace")
    if tuple(c.strip() for c in rows[0]) != TRACE_HEADER:
        raise TraceParseError(f"line 1: expected header {','.join(TRACE_HEADER)}")
    values, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise TraceParseError(f"line {lineno}: expected 3 fields, got {len(row)}")
        try:
            slot, esn0, state = int(row[0]), float(row[1]), int(row[2])
        except ValueError as exc:
            raise TraceParseError(f"line {lineno}: {exc}") from None
        if slot != lineno - 2:
            raise TraceParseError(f"line {lineno}: slot index {slot} out of sequence")
        if not math.isfinite(esn0):
            raise TraceParseError(f"line {lineno}: non-finite esn0_db")
        if state < 0:
            raise TraceParseError(f"line {lineno}: negative state label")
        values.append(esn0)
        labels.append(state)
    if not values:
        raise TraceParseError("line 2: trace has no slots")
    return ChannelTrace(np.array(values), np.array(labels, dtype=int), slot_duration)


def save_trace(trace: ChannelTrace, sink: BinaryIO | None = None) -> bytes:
    """Serialize a trace to CSV bytes; also writes them to ``sink`` if given."""
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for k, (value, label) in enumerate(zip(trace.esn0_db.tolist(), trace.state_labels.tolist())):
        writer.writerow((k, repr(float(value)), int(label)))
    data = buf.getvalue().encode("utf-8")
    if sink is not None:
        sink.write(data)
    return data


def trace_from_values(esn0_db: Sequence[float], slot_duration: float = 0.2388) -> ChannelTrace:
    values = np.asarray(esn0_db, dtype=float)
    return ChannelTrace(values, np.zeros(values.size, dtype=int), slot_duration)
