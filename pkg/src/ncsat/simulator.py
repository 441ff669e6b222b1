"""Monte-Carlo link simulation of network-coded batch transmission.

A run walks a channel trace slot by slot.  Each round the policy picks a
batch (or stays silent for one slot); packets of the batch occupy
consecutive slots and are erased independently with the slot's erasure
probability; the transmitter then waits for the acknowledgement before the
next round.  Each slot's uniform draw is fixed by the run seed, so two
schemes run with the same seed see the same channel realisation.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .channel import ChannelTrace, LmsParameters, constant_trace, generate_trace
from .phy import PhyConfig, batch_duration, batch_symbols, symbol_energy
from .policies import ChannelView, Policy, PolicyConfig, PolicyState
from .rlnc import Decoder, Generation, encode

__all__ = [
    "ACK_MODES",
    "SimConfig",
    "RunMetrics",
    "SweepPoint",
    "TraceExhaustedError",
    "ConstantSource",
    "LmsSource",
    "LoadedSource",
    "ideal_dof_channel",
    "run_once",
    "run_point",
    "run_sweep",
    "aggregate",
]

ACK_MODES = ("plus_one", "ceil")


class TraceExhaustedError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Everything a run needs besides the channel trace.

    ``t_p`` overrides the BPSK packet duration (seconds); by default it is
    ``packet_symbols / symbol_rate``.  ``horizon`` is the slot budget of a run;
    traces must extend past it by the policy lookahead.
    """

    policy: str = "nc"
    dof_target: int = 4
    t_w: float = 0.2388
    t_p: float | None = None
    horizon: int = 100
    ack_mode: str = "plus_one"
    policy_config: PolicyConfig = PolicyConfig()
    phy: PhyConfig = PhyConfig()
    n_runs: int = 1000
    seed: int = 0
    use_real_codec: bool = False
    workers: int = 1

    def __post_init__(self):
        Policy(self.policy, self.policy_config)
        if self.dof_target < 1:
            raise ValueError("dof_target must be >= 1")
        if self.t_w < 0:
            raise ValueError("t_w must be >= 0")
        if self.t_p is not None and not self.t_p > 0:
            raise ValueError("t_p must be > 0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.ack_mode not in ACK_MODES:
            raise ValueError(f"ack_mode must be one of {ACK_MODES}")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def make_policy(self) -> Policy:
        return Policy(self.policy, self.policy_config)

    def trace_length(self) -> int:
        return self.horizon + self.make_policy().lookahead(self.dof_target)

    def ack_slots(self, slot_duration: float) -> int:
        if self.ack_mode == "plus_one":
            return 1
        return max(1, math.ceil(self.t_w / slot_duration))


@dataclass(frozen=True)
class RunMetrics:
    packets_sent: int
    symbols_sent: int
    delivery_delay: float
    delivered: bool
    energy: float
    silent_slots: int
    trials_used: int
    innovative: int = 0
    batches: tuple[int, ...] = field(default=(), repr=False)

    @property
    def decisions(self) -> int:
        return self.silent_slots + self.trials_used

    @property
    def silent_fraction(self) -> float:
        return self.silent_slots / self.decisions if self.decisions else 0.0

    def throughput(self, dof_target: int, packet_bits: int) -> float:
        if not self.delivered or self.delivery_delay <= 0:
            return 0.0
        return dof_target * packet_bits / self.delivery_delay


def ideal_dof_channel(i: int, successes: int) -> int:
    """Remaining dof when every received packet is innovative."""
    if successes < 0:
        raise ValueError("successes must be >= 0")
    return max(0, i - successes)


def run_once(cfg: SimConfig, trace: ChannelTrace, seed, view: ChannelView | None = None) -> RunMetrics:
    """Simulate one delivery attempt of ``cfg.dof_target`` dof over ``trace``."""
    policy = cfg.make_policy()
    phy = cfg.phy
    if len(trace) < cfg.trace_length():
        raise TraceExhaustedError(f"trace has {len(trace)} slots, {cfg.trace_length()} needed")
    if view is None:
        view = ChannelView(trace, phy)
    rng = np.random.default_rng(seed)
    draws = rng.random(len(trace))
    ack = cfg.ack_slots(trace.slot_duration)
    max_trials = cfg.policy_config.max_trials

    decoder = generation = codec_rng = None
    if cfg.use_real_codec:
        codec_rng = np.random.default_rng(rng.integers(0, 2**63))
        payload = -(-phy.packet_bits // 8)
        generation = Generation([codec_rng.bytes(payload) for _ in range(cfg.dof_target)])
        decoder = Decoder(cfg.dof_target, payload)

    if trace.reference_esn0_db is not None:
        tx_energy = symbol_energy(trace.reference_esn0_db, phy.n0_dbm)
    else:
        tx_energy = None

    i, j = cfg.dof_target, 0
    state = PolicyState()
    elapsed = energy = 0.0
    packets = symbols = silent = innovative = 0
    batches = []
    while i > 0 and j < cfg.horizon and state.trial_count < max_trials:
        try:
            decision, state = policy.decide(i, j, view, state)
        except IndexError as exc:
            raise TraceExhaustedError(str(exc)) from None
        if decision.silent:
            # Jump over the whole silent stretch; nothing changes inside it.
            stop = min(policy.resume_slot(j, view), cfg.horizon)
            elapsed += (stop - j) * trace.slot_duration
            silent += stop - j
            j = stop
            continue
        n, mod = decision.batch_size, decision.modulation
        if j + n > len(trace):
            raise TraceExhaustedError(f"batch {j}..{j + n - 1} exceeds trace of {len(trace)} slots")
        received = draws[j:j + n] >= view.pe[mod][j:j + n]
        if decoder is not None:
            before = decoder.rank
            for pkt, ok in zip(encode(generation, n, codec_rng), received.tolist()):
                if ok:
                    decoder.absorb(pkt)
            innovative += decoder.rank - before
            i = decoder.missing
        else:
            got = int(received.sum())
            innovative += min(i, got)
            i = ideal_dof_channel(i, got)
        nsym = batch_symbols(n, phy.packet_bits, mod)
        es = tx_energy
        if es is None:
            es = float(np.mean(symbol_energy(trace.esn0_db[j:j + n], phy.n0_dbm)))
        energy += es * nsym / phy.symbol_rate
        packets += n
        symbols += nsym
        batches.append(n)
        elapsed += batch_duration(n, phy, mod, cfg.t_p) + cfg.t_w
        j += n + ack
    if decoder is not None and i == 0 and decoder.decode() != list(generation.packets):
        raise RuntimeError("decoded generation differs from the source packets")
    return RunMetrics(packets, symbols, elapsed, i == 0, energy, silent,
                      state.trial_count, innovative, tuple(batches))


class ConstantSource:
    """Flat traces at each sweep level."""

    per_run = False

    def __init__(self, slot_duration: float = 0.2388):
        self.slot_duration = slot_duration

    def make(self, esn0_db: float, n_slots: int, seed=None) -> ChannelTrace:
        return constant_trace(esn0_db, n_slots, self.slot_duration)


class LmsSource:
    """Fresh LMS trace per run, anchored at the sweep level."""

    per_run = True

    def __init__(self, params: LmsParameters):
        self.params = params

    def make(self, esn0_db: float, n_slots: int, seed=None) -> ChannelTrace:
        return generate_trace(self.params.with_mean(esn0_db), n_slots, seed)


class LoadedSource:
    """A fixed trace shifted so that its mean sits at the sweep level."""

    per_run = False

    def __init__(self, trace: ChannelTrace):
        self.trace = trace

    def make(self, esn0_db: float, n_slots: int, seed=None) -> ChannelTrace:
        if len(self.trace) < n_slots:
            raise TraceExhaustedError(f"loaded trace has {len(self.trace)} slots, {n_slots} needed")
        shifted = self.trace.shifted(esn0_db - float(np.mean(self.trace.esn0_db)))
        return ChannelTrace(shifted.esn0_db, shifted.state_labels, shifted.slot_duration, esn0_db)


@dataclass(frozen=True)
class SweepPoint:
    esn0_db: float
    n_runs: int
    seed: int
    avg_packets: float
    se_packets: float
    avg_delay: float
    se_delay: float
    avg_throughput: float
    se_throughput: float
    avg_energy: float
    se_energy: float
    delivery_rate: float
    silent_frac: float


def _run_seed(cfg: SimConfig, point_index: int, run: int, stream: int) -> list[int]:
    return [cfg.seed, point_index, run, stream]


def _run_chunk(args) -> list[RunMetrics]:
    cfg, source, esn0_db, point_index, start, stop = args
    n_slots = cfg.trace_length()
    out = []
    shared = None
    if not source.per_run:
        trace = source.make(esn0_db, n_slots)
        shared = (trace, ChannelView(trace, cfg.phy))
    for run in range(start, stop):
        if shared is None:
            trace = source.make(esn0_db, n_slots, _run_seed(cfg, point_index, run, 0))
            view = ChannelView(trace, cfg.phy)
        else:
            trace, view = shared
        out.append(run_once(cfg, trace, _run_seed(cfg, point_index, run, 1), view))
    return out


def run_point(cfg: SimConfig, esn0_db: float, source, point_index: int = 0) -> list[RunMetrics]:
    """All ``cfg.n_runs`` runs at one level, in run-index order."""
    if cfg.workers == 1 or cfg.n_runs < 2:
        return _run_chunk((cfg, source, esn0_db, point_index, 0, cfg.n_runs))
    bounds = np.linspace(0, cfg.n_runs, min(cfg.workers, cfg.n_runs) + 1).astype(int)
    jobs = [(cfg, source, esn0_db, point_index, int(a), int(b)) for a, b in zip(bounds, bounds[1:])]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        chunks = list(pool.map(_run_chunk, jobs))
    return [m for chunk in chunks for m in chunk]


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    # fsum keeps the reduction exact and independent of how runs were chunked.
    values = x.tolist()
    n = len(values)
    mean = math.fsum(values) / n
    # second pass removes the rounding of the division (identical samples
    # then give their own value back exactly)
    mean += math.fsum(v - mean for v in values) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def aggregate(cfg: SimConfig, esn0_db: float, runs: Sequence[RunMetrics]) -> SweepPoint:
    packets = np.array([r.packets_sent for r in runs], dtype=float)
    delay = np.array([r.delivery_delay for r in runs])
    thr = np.array([r.throughput(cfg.dof_target, cfg.phy.packet_bits) for r in runs])
    energy = np.array([r.energy for r in runs])
    delivered = np.array([r.delivered for r in runs], dtype=float)
    silent = np.array([r.silent_fraction for r in runs])
    return SweepPoint(float(esn0_db), len(runs), cfg.seed,
                      *_mean_se(packets), *_mean_se(delay), *_mean_se(thr), *_mean_se(energy),
                      _mean_se(delivered)[0], _mean_se(silent)[0])


def run_sweep(cfg: SimConfig, esn0_grid: Sequence[float], source=None) -> list[SweepPoint]:
    """Mean metrics with standard errors at every grid level.

    Run seeds depend on (seed, grid index, run index) only, so every scheme
    sees the same channel realisations.
    """
    if len(esn0_grid) == 0:
        raise ValueError("esn0 grid is empty")
    source = source or ConstantSource()
    return [aggregate(cfg, esn0, run_point(cfg, esn0, source, k)) for k, esn0 in enumerate(esn0_grid)]


def sweep_point_fields() -> list[str]:
    return [f.name for f in fields(SweepPoint)]
