"""Deterministic event-driven simulation core and run metrics.

One run wires together: bulk senders (one per flow), the trace-driven
bottleneck link with per-UE droptail queues, per-UE receivers, and the
network-side measurement entity that emits periodic feedback.  Everything
advances on a single integer-microsecond event heap; ties break in
scheduling order, so identical configurations replay identically.

Randomness: one generator seeded from the config drives air-interface loss
(and nothing else); synthetic walk traces derive their own generator from
the same seed at construction time.
"""

from __future__ import annotations

import heapq
import itertools
import math
import random
import statistics
from dataclasses import dataclass, field
from typing import Callable

from .cc import Controller, make_controller
from .config import SimConfig, resolve_schedule
from .emulink import BtsLink, Packet
from .netassist import FeedbackMsg, NetAssist
from .transport import Sender, UeReceiver

WATCHDOG_PERIODS = 3   # feedback silence tolerated before reverting


class EventLoop:
    """Minimal time-ordered callback heap (integer microseconds)."""

    def __init__(self) -> None:
        self._heap: list[tuple[int, int, Callable, tuple]] = []
        self._tick = itertools.count()
        self.now = 0
        self.processed = 0

    def schedule(self, t_us: int, fn: Callable, args: tuple = ()) -> None:
        heapq.heappush(self._heap, (t_us, next(self._tick), fn, args))

    def run_until(self, t_end_us: int) -> None:
        while self._heap and self._heap[0][0] <= t_end_us:
            t, _, fn, args = heapq.heappop(self._heap)
            self.now = t
            self.processed += 1
            fn(t, *args)


@dataclass
class FlowStats:
    flow_id: int
    ue_id: int
    scheme: str
    start_us: int
    sent_segments: int = 0
    retransmits: int = 0
    timeouts: int = 0
    delivered_bytes: int = 0
    unique_bytes: int = 0
    drops: int = 0
    fb_count: int = 0
    mode_log: list = field(default_factory=list)
    # (t_us, size, first_time) per arriving data packet
    deliveries: list = field(default_factory=list)


@dataclass
class RunResult:
    scheme: str
    trace: str
    duration_us: int
    seed: int
    flows: list[FlowStats]
    qdelay_samples_us: list[int]
    event_log: list[tuple]
    feedback_log: list[tuple]
    overhead_kbps: float
    queue_drops: int
    conservation_ok: bool

    # -- aggregate metrics ---------------------------------------------------

    @property
    def duration_s(self) -> float:
        return self.duration_us / 1e6

    def throughput_mbps(self) -> float:
        total = sum(f.delivered_bytes for f in self.flows)
        return total * 8 / self.duration_us

    def goodput_mbps(self) -> float:
        total = sum(f.unique_bytes for f in self.flows)
        return total * 8 / self.duration_us

    def avg_qdelay_ms(self) -> float | None:
        if not self.qdelay_samples_us:
            return None
        return statistics.fmean(self.qdelay_samples_us) / 1000

    def p95_qdelay_ms(self) -> float | None:
        if not self.qdelay_samples_us:
            return None
        return percentile(self.qdelay_samples_us, 0.95) / 1000

    def power(self) -> float | None:
        return compute_power(self.throughput_mbps(), self.avg_qdelay_ms())

    def power95(self) -> float | None:
        return compute_power(self.throughput_mbps(), self.p95_qdelay_ms())

    def retrans(self) -> int:
        return sum(f.retransmits for f in self.flows)

    def drops(self) -> int:
        return sum(f.drops for f in self.flows)

    def flow_goodput_mbps(self, flow_id: int, t0_us: int = 0, t1_us: int | None = None) -> float:
        """First-delivery rate for one flow over [t0, t1] (Mbit/s)."""
        if t1_us is None:
            t1_us = self.duration_us
        if t1_us <= t0_us:
            raise ValueError("window must have positive length")
        fs = self.flows[flow_id]
        total = sum(size for (t, size, first) in fs.deliveries
                    if first and t0_us <= t <= t1_us)
        return total * 8 / (t1_us - t0_us)

    def departures(self) -> list[tuple]:
        """Bottleneck departure log: (t_us, flow, seq, qdelay_us) rows."""
        return [(t, fl, seq, q) for (t, kind, fl, seq, q) in self.event_log
                if kind == "deq"]

    def summary_row(self) -> dict:
        return {
            "scheme": self.scheme,
            "trace": self.trace,
            "duration_s": self.duration_s,
            "throughput_mbps": self.throughput_mbps(),
            "goodput_mbps": self.goodput_mbps(),
            "avg_qdelay_ms": self.avg_qdelay_ms(),
            "p95_qdelay_ms": self.p95_qdelay_ms(),
            "power": self.power(),
            "power95": self.power95(),
            "retrans": self.retrans(),
            "drops": self.drops(),
            "feedback_overhead_kbps": self.overhead_kbps,
        }


SUMMARY_COLUMNS = (
    "scheme", "trace", "duration_s", "throughput_mbps", "goodput_mbps",
    "avg_qdelay_ms", "p95_qdelay_ms", "power", "power95", "retrans",
    "drops", "feedback_overhead_kbps",
)


def percentile(samples: list, q: float) -> float:
    """Nearest-rank percentile: smallest sample with at least q coverage."""
    if not samples:
        raise ValueError("no samples")
    if not (0 < q <= 1):
        raise ValueError("q must be in (0, 1]")
    ordered = sorted(samples)
    rank = max(1, math.ceil(q * len(ordered)))
    return ordered[rank - 1]


def compute_power(throughput_mbps: float, delay_ms: float | None) -> float | None:
    """Throughput/delay ratio; infinite when the path stayed queue-free."""
    if delay_ms is None:
        return None
    if delay_ms == 0:
        return math.inf
    return throughput_mbps / delay_ms


def normalize_to_reference(
    values: dict[tuple[str, str], float],
    reference_scheme: str,
) -> dict[str, float]:
    """Per-trace ratios to a reference scheme, averaged across traces.

    ``values`` maps (scheme, trace) to a metric.  Every trace must have an
    entry for the reference scheme.
    """
    traces = sorted({trace for (_, trace) in values})
    schemes = sorted({scheme for (scheme, _) in values})
    out: dict[str, float] = {}
    for scheme in schemes:
        ratios = []
        for trace in traces:
            if (scheme, trace) not in values:
                continue
            ref = values[(reference_scheme, trace)]
            val = values[(scheme, trace)]
            if ref == 0:
                ratios.append(1.0 if val == 0 else math.inf)
            else:
                ratios.append(val / ref)
        if ratios:
            out[scheme] = statistics.fmean(ratios)
    return out


class Simulation:
    """One configured run: wiring, event orchestration, result collection."""

    def __init__(self, cfg: SimConfig) -> None:
        cfg.require_valid()
        self.cfg = cfg
        self.schedule = resolve_schedule(cfg)
        self.loop = EventLoop()
        self.rng = random.Random(cfg.seed)
        self.event_log: list[tuple] = []
        self.feedback_log: list[tuple] = []

        self.link = BtsLink(self.schedule, cfg.path, self.rng,
                            self.loop.schedule, self._log)
        self.receivers: dict[int, UeReceiver] = {}
        self.senders: dict[int, Sender] = {}
        self.controllers: dict[int, Controller] = {}
        self.flow_ue: dict[int, int] = {}
        self.flows_on_ue: dict[int, list[int]] = {}
        self._deliveries: dict[int, list] = {}
        self._active: set[int] = set()

        for ue in cfg.ue_ids():
            recv = UeReceiver(ue, self._transmit_ack)
            self.receivers[ue] = recv
            self.link.register_ue(ue, cfg.queue_capacity_bytes,
                                  self._make_deliver(ue))
            self.flows_on_ue[ue] = []

        ue_ids = cfg.ue_ids()
        self.assist = NetAssist(cfg.assist, self.schedule, cfg.path,
                                ue_ids, self.link.probe_rtt)

        for spec in cfg.flows():
            ctl = make_controller(cfg.scheme, cfg.mtu, cfg.alpha,
                                  cfg.divide_pacing_by_beta, cfg.tg_horizon_us)
            snd = Sender(spec.flow_id, cfg.mtu, ctl,
                         self._make_transmit(spec.ue_id), self.loop.schedule)
            self.controllers[spec.flow_id] = ctl
            self.senders[spec.flow_id] = snd
            self.flow_ue[spec.flow_id] = spec.ue_id
            self.flows_on_ue[spec.ue_id].append(spec.flow_id)
            self._deliveries[spec.flow_id] = []

    # -- logging --------------------------------------------------------------

    def _log(self, t_us: int, kind: str, flow, seq: int, qdelay_us: int = -1) -> None:
        self.event_log.append((t_us, kind, flow, seq, qdelay_us))

    # -- wiring callbacks -------------------------------------------------------

    def _make_transmit(self, ue_id: int):
        def transmit(pkt: Packet, now: int) -> None:
            self._log(now, "snd", pkt.flow_id, pkt.seq)
            self.link.send_downlink(pkt, now, ue_id)
        return transmit

    def _make_deliver(self, ue_id: int):
        recv_holder = ue_id

        def deliver(now: int, pkt: Packet) -> None:
            recv = self.receivers[recv_holder]
            before = recv.unique_bytes.get(pkt.flow_id, 0)
            self._log(now, "dlv", pkt.flow_id, pkt.seq)
            recv.on_data(pkt, now)
            first = recv.unique_bytes.get(pkt.flow_id, 0) > before
            self._deliveries[pkt.flow_id].append((now, pkt.size, first))
        return deliver

    def _transmit_ack(self, pkt: Packet, now: int) -> None:
        self.link.send_uplink(pkt, now, self._on_ack_arrival)

    # -- event handlers ---------------------------------------------------------

    def _on_ack_arrival(self, now: int, pkt: Packet) -> None:
        sender = self.senders.get(pkt.flow_id)
        if sender is None:
            return
        self._log(now, "ack", pkt.flow_id, pkt.cum_ack)
        sender.process_ack(pkt, now)
        if pkt.feedback is not None:
            self._handle_feedback(pkt.flow_id, pkt.feedback, now)
        sender.try_send(now)

    def _emit_feedback(self, now: int) -> None:
        msgs = self.assist.emit(now)
        if self.cfg.assist.mode == "oob":
            for msg in msgs:
                self.loop.schedule(now + self.cfg.path.oob_delay_us,
                                   self._oob_arrive, (msg,))
        else:
            for msg in msgs:
                self.link.attach_ib(msg.ue_id, msg)

    def _oob_arrive(self, now: int, msg: FeedbackMsg) -> None:
        for fid in self.flows_on_ue[msg.ue_id]:
            if fid not in self._active:
                continue  # flow has not started; must not react, let alone send
            self._handle_feedback(fid, msg, now)
            self.senders[fid].try_send(now)

    def _handle_feedback(self, flow_id: int, msg: FeedbackMsg, now: int) -> None:
        ctl = self.controllers[flow_id]
        ctl.on_feedback(now, msg)
        self.feedback_log.append(
            (flow_id, msg.seq, msg.t_emitted, now, msg.bl_bw, msg.min_rtt))
        self.senders[flow_id].apply_decision()
        if ctl.uses_watchdog:
            deadline = now + WATCHDOG_PERIODS * self.cfg.assist.period_us
            self.loop.schedule(deadline, self._watchdog_check,
                               (flow_id, ctl.fb_count))

    def _watchdog_check(self, now: int, flow_id: int, snapshot: int) -> None:
        ctl = self.controllers[flow_id]
        if ctl.fb_count != snapshot:
            return  # fresher feedback arrived; this check is obsolete
        ctl.revert(now)
        sender = self.senders[flow_id]
        sender.apply_decision()
        sender.try_send(now)

    def _start_flow(self, now: int, flow_id: int) -> None:
        self._active.add(flow_id)
        self.senders[flow_id].try_send(now)

    # -- run --------------------------------------------------------------------

    def run(self) -> RunResult:
        duration = self.cfg.duration_us
        period = self.cfg.assist.period_us
        t = period
        while t <= duration:
            self.loop.schedule(t, self._emit_feedback)
            t += period
        for spec in self.cfg.flows():
            self.loop.schedule(spec.start_us, self._start_flow, (spec.flow_id,))
        self.loop.run_until(duration)
        return self._collect()

    def _collect(self) -> RunResult:
        flows = []
        for spec in self.cfg.flows():
            snd = self.senders[spec.flow_id]
            ctl = self.controllers[spec.flow_id]
            recv = self.receivers[spec.ue_id]
            flows.append(FlowStats(
                flow_id=spec.flow_id,
                ue_id=spec.ue_id,
                scheme=self.cfg.scheme,
                start_us=spec.start_us,
                sent_segments=snd.sent_segments,
                retransmits=snd.retransmits,
                timeouts=snd.timeouts,
                delivered_bytes=recv.delivered_bytes.get(spec.flow_id, 0),
                unique_bytes=recv.unique_bytes.get(spec.flow_id, 0),
                drops=self.link.drops_by_flow.get(spec.flow_id, 0),
                fb_count=ctl.fb_count,
                mode_log=list(ctl.mode_log),
                deliveries=self._deliveries[spec.flow_id],
            ))
        qdelay: list[int] = []
        queue_drops = 0
        for ue in self.cfg.ue_ids():
            q = self.link.queue_for(ue)
            qdelay.extend(q.qdelay_samples_us)
            queue_drops += q.drop_count
        if len(self.cfg.ue_ids()) > 1:
            qdelay.sort()
        return RunResult(
            scheme=self.cfg.scheme,
            trace=self.cfg.trace,
            duration_us=self.cfg.duration_us,
            seed=self.cfg.seed,
            flows=flows,
            qdelay_samples_us=qdelay,
            event_log=self.event_log,
            feedback_log=self.feedback_log,
            overhead_kbps=self.assist.overhead_kbps(self.cfg.duration_us),
            queue_drops=queue_drops,
            conservation_ok=self.link.conservation_ok(),
        )


def run_simulation(cfg: SimConfig) -> RunResult:
    return Simulation(cfg).run()
