"""Batch-size and modulation policies.

Every scheme answers the same question: with ``i`` degrees of freedom still
missing at the receiver and the channel window starting at slot ``j``, how
many coded packets go out next, on which modulation, or should the
transmitter stay silent?

``nc``       fixed batch of ``i`` packets.
``anc``      smallest batch whose expected successes cover ``i``.
``ancef``    expected successes over the next ``i`` slots, silent below QoS.
``stancef``  ``ancef`` with the previous round's shortfall added to the window.
``ancmef``   ``ancef`` on the highest-order modulation meeting QoS, with the
             window stretched by the bits per symbol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .channel import ChannelTrace
from .phy import BPSK, MODULATIONS, Modulation, PhyConfig, bit_error_prob, erasure_prob

__all__ = [
    "SCHEMES",
    "CSI_MODES",
    "PolicyConfig",
    "PolicyDecision",
    "PolicyState",
    "SILENT",
    "ChannelView",
    "Policy",
    "round_half_up",
    "select_modulation",
    "effective_window",
    "decide_nc",
    "decide_anc",
    "decide_ancef",
    "decide_stancef",
    "decide_ancmef",
]

SCHEMES = ("nc", "anc", "ancef", "stancef", "ancmef")
CSI_MODES = ("genie", "hold")

# Absorbs summation round-off when comparing expected successes.
_EPS = 1e-9


@dataclass(frozen=True)
class PolicyConfig:
    batch_cap: int = 16
    max_trials: int = 10
    qos_pb_threshold: float = 1e-5
    csi_mode: str = "genie"

    def __post_init__(self):
        if self.batch_cap < 1:
            raise ValueError("batch_cap must be >= 1")
        if self.max_trials < 1:
            raise ValueError("max_trials must be >= 1")
        if not 0.0 < self.qos_pb_threshold < 1.0:
            raise ValueError("qos_pb_threshold must lie in (0, 1)")
        if self.csi_mode not in CSI_MODES:
            raise ValueError(f"csi_mode must be one of {CSI_MODES}, got {self.csi_mode!r}")


@dataclass(frozen=True)
class PolicyDecision:
    batch_size: int
    modulation: Modulation = BPSK

    def __post_init__(self):
        if self.batch_size < 0:
            raise ValueError("batch_size must be non-negative")

    @property
    def silent(self) -> bool:
        return self.batch_size == 0


SILENT = PolicyDecision(0)


@dataclass(frozen=True)
class PolicyState:
    """Round-to-round memory: shortfall carry and transmitted rounds so far."""

    delta: int = 0
    trial_count: int = 0


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + _EPS))


def _clamp(n: int, cfg: PolicyConfig) -> int:
    return max(0, min(n, cfg.batch_cap))


def _check_window(window, length: int) -> np.ndarray:
    w = np.asarray(window, dtype=float)
    if w.size < length:
        raise ValueError(f"window holds {w.size} slots, {length} required")
    return w


def select_modulation(pb_now: dict[Modulation, float], threshold: float,
                      modulations: Sequence[Modulation] = MODULATIONS) -> Modulation | None:
    """Highest-order modulation whose current bit error probability meets QoS."""
    best = None
    for mod in modulations:
        if pb_now[mod] <= threshold and (best is None or mod.order > best.order):
            best = mod
    return best


def decide_nc(i: int, window=None) -> PolicyDecision:
    if i < 1:
        raise ValueError("i must be >= 1")
    return PolicyDecision(i)


def decide_anc(i: int, window, cfg: PolicyConfig = PolicyConfig()) -> PolicyDecision:
    if i < 1:
        raise ValueError("i must be >= 1")
    w = _check_window(window, cfg.batch_cap)
    # cumsum accumulates left to right, like the running sum it replaces
    hit = np.flatnonzero(np.cumsum(1.0 - w[:cfg.batch_cap]) >= i - _EPS)
    return PolicyDecision(int(hit[0]) + 1 if hit.size else cfg.batch_cap)


def decide_ancef(i: int, window, p_b_now: float, cfg: PolicyConfig = PolicyConfig()) -> PolicyDecision:
    if i < 1:
        raise ValueError("i must be >= 1")
    if p_b_now > cfg.qos_pb_threshold:
        return SILENT
    w = _check_window(window, i)
    return PolicyDecision(_clamp(round_half_up(float(np.sum(1.0 - w[:i]))), cfg))


def decide_stancef(i: int, window, p_b_now: float, state: PolicyState = PolicyState(),
                   cfg: PolicyConfig = PolicyConfig()) -> tuple[PolicyDecision, PolicyState]:
    """Returns the decision and the carry for the following round.

    A silent decision leaves the state untouched.
    """
    if i < 1:
        raise ValueError("i must be >= 1")
    if p_b_now > cfg.qos_pb_threshold:
        return SILENT, state
    span = i + state.delta
    w = _check_window(window, span)
    n = _clamp(round_half_up(float(np.sum(1.0 - w[:span]))), cfg)
    if n == 0:
        return SILENT, state
    return PolicyDecision(n), replace(state, delta=max(0, i - n))


def decide_ancmef(i: int, esn0_now_db: float, window_esn0_db, phy: PhyConfig = PhyConfig(),
                  cfg: PolicyConfig = PolicyConfig(),
                  modulations: Sequence[Modulation] = MODULATIONS) -> PolicyDecision:
    if i < 1:
        raise ValueError("i must be >= 1")
    pb_now = {m: bit_error_prob(esn0_now_db, m) for m in modulations}
    mod = select_modulation(pb_now, cfg.qos_pb_threshold, modulations)
    if mod is None:
        return SILENT
    span = i * mod.bits_per_symbol
    w = _check_window(window_esn0_db, span)[:span]
    pe = erasure_prob(bit_error_prob(w, mod), phy.packet_bits)
    n = _clamp(round_half_up(float(np.sum(1.0 - pe))), cfg)
    return PolicyDecision(n, mod) if n else SILENT


def effective_window(trace: ChannelTrace, j: int, length: int, mode: str = "genie",
                     phy: PhyConfig = PhyConfig(), mod: Modulation = BPSK) -> np.ndarray:
    """Erasure probabilities the transmitter believes for slots ``j..j+length-1``.

    ``genie`` reads the true future slots; ``hold`` repeats the current one.
    """
    view = ChannelView(trace, phy)
    return view.window(j, length, mod, mode)


class ChannelView:
    """Per-slot bit and packet error tables of one trace, for every modulation."""

    def __init__(self, trace: ChannelTrace, phy: PhyConfig,
                 modulations: Sequence[Modulation] = MODULATIONS):
        self.trace = trace
        self.phy = phy
        self.pb = {m: np.atleast_1d(bit_error_prob(trace.esn0_db, m)) for m in modulations}
        self.pe = {m: np.atleast_1d(erasure_prob(self.pb[m], phy.packet_bits)) for m in modulations}
        self._success = {m: 1.0 - self.pe[m] for m in modulations}
        self._next_ok: dict[tuple[tuple[Modulation, ...], float], np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.trace)

    def window(self, j: int, length: int, mod: Modulation = BPSK, mode: str = "genie") -> np.ndarray:
        n = len(self.trace)
        if not 0 <= j < n:
            raise IndexError(f"slot {j} outside trace of {n} slots")
        if mode == "hold":
            return np.full(length, self.pe[mod][j])
        if mode != "genie":
            raise ValueError(f"unknown csi mode {mode!r}")
        if j + length > n:
            raise IndexError(f"window {j}..{j + length - 1} exceeds trace of {n} slots")
        return self.pe[mod][j:j + length]

    def next_qos_slot(self, j: int, threshold: float,
                      modulations: Sequence[Modulation] | None = None) -> int:
        """First slot >= ``j`` where some modulation meets ``threshold``
        (trace length if none does)."""
        mods = tuple(modulations or self.pb)
        key = (mods, threshold)
        nxt = self._next_ok.get(key)
        if nxt is None:
            ok = np.min([self.pb[m] for m in mods], axis=0) <= threshold
            n = ok.size
            idx = np.where(ok, np.arange(n), n)
            nxt = np.minimum.accumulate(idx[::-1])[::-1]
            self._next_ok[key] = nxt
        return int(nxt[j]) if j < nxt.size else nxt.size

    def _expected_successes(self, j: int, length: int, mod: Modulation, mode: str) -> float:
        if mode == "hold":
            return length * float(self._success[mod][j])
        if j + length > len(self.trace):
            raise IndexError(f"window {j}..{j + length - 1} exceeds trace of {len(self.trace)} slots")
        return float(self._success[mod][j:j + length].sum())


@dataclass(frozen=True)
class Policy:
    """A named scheme bound to its configuration.

    ``decide`` is pure: the returned state carries the STANCEF shortfall and
    the count of transmitted rounds.
    """

    name: str
    config: PolicyConfig = PolicyConfig()

    def __post_init__(self):
        if self.name not in SCHEMES:
            raise ValueError(f"unknown scheme {self.name!r}; expected one of {SCHEMES}")

    def lookahead(self, dof: int) -> int:
        """Upper bound on the slots read from the current one onwards for ``dof``
        missing degrees of freedom; also covers the longest batch."""
        return max(self.config.batch_cap, 4 * dof, 2 * dof)

    def resume_slot(self, j: int, view: ChannelView) -> int:
        """Earliest slot after a silent slot ``j`` at which the QoS rule can let
        this policy transmit; every slot in between is silent as well."""
        if self.name in ("nc", "anc"):
            return j + 1
        mods = tuple(view.pb) if self.name == "ancmef" else (BPSK,)
        return max(j + 1, view.next_qos_slot(j + 1, self.config.qos_pb_threshold, mods))

    def decide(self, i: int, j: int, view: ChannelView,
               state: PolicyState = PolicyState()) -> tuple[PolicyDecision, PolicyState]:
        cfg = self.config
        mode = cfg.csi_mode
        if self.name == "nc":
            decision = decide_nc(i)
        elif self.name == "anc":
            decision = decide_anc(i, view.window(j, cfg.batch_cap, BPSK, mode), cfg)
        else:
            if self.name == "ancmef":
                pb_now = {m: float(view.pb[m][j]) for m in view.pb}
                mod = select_modulation(pb_now, cfg.qos_pb_threshold, tuple(view.pb))
            else:
                mod = BPSK if view.pb[BPSK][j] <= cfg.qos_pb_threshold else None
            if mod is None:
                return SILENT, state
            if self.name == "stancef":
                span = i + state.delta
            else:
                span = i * mod.bits_per_symbol
            n = _clamp(round_half_up(view._expected_successes(j, span, mod, mode)), cfg)
            if n == 0:
                return SILENT, state
            decision = PolicyDecision(n, mod)
            if self.name == "stancef":
                return decision, PolicyState(max(0, i - n), state.trial_count + 1)
        return decision, PolicyState(state.delta, state.trial_count + 1)
