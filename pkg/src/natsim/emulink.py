"""Emulated cellular path: base-station queue, downlink replay, uplink, probes.

The downlink is a per-UE droptail FIFO drained by the trace schedule: each
delivery opportunity transmits the head packet of one backlogged UE
(round-robin across UEs).  Unused opportunities are wasted, never banked.
The uplink (acks) is an ideal pipe: fixed one-way delay plus per-packet
serialization at a configured depletion rate, no queuing.  Measurement
probes bypass the UE queues entirely and observe only fixed network delay.

All times are integer microseconds.
"""

from __future__ import annotations

import enum
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .trace import TraceSchedule


class LinkError(ValueError):
    """Raised for invalid link operations (unknown UE, wrong packet kind)."""


class PacketKind(enum.Enum):
    DATA = "data"
    ACK = "ack"
    PROBE = "probe"
    FEEDBACK = "feedback"


UNSET = -1


@dataclass(slots=True)
class Packet:
    """A simulated packet; timestamps are filled in as it moves."""

    flow_id: str
    seq: int
    size: int
    kind: PacketKind
    t_sent: int = UNSET
    t_enqueued: int = UNSET
    t_dequeued: int = UNSET
    t_delivered: int = UNSET
    retransmission: bool = False
    cum_ack: int = UNSET          # acks only
    beta: int = 0                 # acks only: active-flow count at the UE
    feedback: object = None       # in-band feedback digest riding this packet


@dataclass
class PathConfig:
    """Fixed path parameters around the bottleneck queue.

    The defaults give an intrinsic (unloaded) end-to-end round trip of 10 ms
    at the 12 Mbit/s reference rate: 2.5 ms downlink propagation + 1 ms MTU
    service at the head of an empty queue + 6.457 ms uplink propagation +
    ~43 us ack serialization.
    """

    down_owd_us: int = 2500            # server -> BTS one-way network delay
    up_owd_us: int = 6457              # UE -> server one-way network delay
    uplink_rate_bps: float = 12_000_000.0  # ack depletion rate; 0 = ideal
    oob_delay_us: int = 2000           # measurement entity -> server
    loss_prob: float = 0.0             # post-dequeue air-interface loss
    probe_jitter_us: int = 0

    def serialization_us(self, size_bytes: int) -> int:
        if self.uplink_rate_bps <= 0:
            return 0
        return int(round(size_bytes * 8 * 1e6 / self.uplink_rate_bps))


@dataclass
class UeQueue:
    """Droptail FIFO in front of one UE, sized in bytes.

    A packet is accepted only when its full size fits; the byte conservation
    identity (enqueued = dequeued + dropped + occupancy) is re-checked on
    every mutation.
    """

    ue_id: str
    capacity_bytes: int
    fifo: deque = field(default_factory=deque)
    occupancy: int = 0
    enqueued_bytes: int = 0
    dequeued_bytes: int = 0
    dropped_bytes: int = 0
    drop_count: int = 0
    qdelay_samples_us: list = field(default_factory=list)

    def offer(self, pkt: Packet, now: int) -> bool:
        """Enqueue pkt, or drop it when it does not fit whole."""
        if self.occupancy + pkt.size > self.capacity_bytes:
            self.drop_count += 1
            self.dropped_bytes += pkt.size
            self._audit()
            return False
        pkt.t_enqueued = now
        self.fifo.append(pkt)
        self.occupancy += pkt.size
        self.enqueued_bytes += pkt.size
        self._audit()
        return True

    def pop(self, now: int) -> Packet:
        pkt = self.fifo.popleft()
        pkt.t_dequeued = now
        self.occupancy -= pkt.size
        self.dequeued_bytes += pkt.size
        self.qdelay_samples_us.append(now - pkt.t_enqueued)
        self._audit()
        return pkt

    def _audit(self) -> None:
        assert 0 <= self.occupancy <= self.capacity_bytes
        assert self.enqueued_bytes == self.dequeued_bytes + self.occupancy
        # dropped bytes never enter the queue, so they sit outside the identity
        # above; track them separately for the end-of-run conservation check.


class BtsLink:
    """Bottleneck link: trace-driven drain over per-UE droptail queues."""

    def __init__(
        self,
        schedule: TraceSchedule,
        path: PathConfig,
        rng: random.Random,
        schedule_event: Callable[[int, Callable, tuple], None],
        log: Callable,
    ) -> None:
        self.schedule = schedule
        self.path = path
        self.rng = rng
        self._schedule_event = schedule_event
        self._log = log
        self.queues: dict[str, UeQueue] = {}
        self._deliver: dict[str, Callable[[int, Packet], None]] = {}
        self._rr: list[str] = []
        self._rr_next = 0
        self._next_opp_index = 0
        self._drain_scheduled = False
        self._pending_ib: dict[str, object] = {}
        self.served_opportunities = 0
        self.air_drops = 0
        self.drops_by_flow: dict[str, int] = {}

    # -- wiring -----------------------------------------------------------

    def register_ue(
        self,
        ue_id: str,
        capacity_bytes: int,
        deliver: Callable[[int, Packet], None],
    ) -> UeQueue:
        if ue_id in self.queues:
            raise LinkError(f"UE {ue_id!r} already registered")
        q = UeQueue(ue_id, capacity_bytes)
        self.queues[ue_id] = q
        self._deliver[ue_id] = deliver
        self._rr.append(ue_id)
        return q

    def queue_for(self, ue_id: str) -> UeQueue:
        try:
            return self.queues[ue_id]
        except KeyError:
            raise LinkError(f"unknown UE {ue_id!r}") from None

    # -- downlink ---------------------------------------------------------

    def send_downlink(self, pkt: Packet, now: int, ue_id: str) -> None:
        """Launch a data packet toward the UE queue (arrives after the
        downlink one-way delay).  Probes never take this path."""
        if pkt.kind is not PacketKind.DATA:
            raise LinkError("send_downlink carries data packets only")
        self.queue_for(ue_id)  # validate early
        pkt.t_sent = now if pkt.t_sent == UNSET else pkt.t_sent
        self._schedule_event(now + self.path.down_owd_us, self._arrive, (pkt, ue_id))

    def _arrive(self, now: int, pkt: Packet, ue_id: str) -> None:
        q = self.queues[ue_id]
        if q.offer(pkt, now):
            self._log(now, "enq", pkt.flow_id, pkt.seq)
            self._ensure_drain(now)
        else:
            self.drops_by_flow[pkt.flow_id] = self.drops_by_flow.get(pkt.flow_id, 0) + 1
            self._log(now, "drop", pkt.flow_id, pkt.seq)

    def _ensure_drain(self, now: int) -> None:
        if self._drain_scheduled:
            return
        idx = max(self._next_opp_index, self.schedule.index_at_or_after(now))
        self._next_opp_index = idx
        self._drain_scheduled = True
        self._schedule_event(self.schedule.instant(idx), self._on_opportunity, (idx,))

    def _backlogged(self) -> bool:
        return any(q.fifo for q in self.queues.values())

    def _on_opportunity(self, now: int, idx: int) -> None:
        """Serve one packet from the next backlogged UE (round-robin)."""
        self._drain_scheduled = False
        if idx != self._next_opp_index:  # superseded scheduling; ignore
            return
        q = self._pick_backlogged()
        if q is None:
            return
        self._next_opp_index = idx + 1
        self.served_opportunities += 1
        pkt = q.pop(now)
        self._log(now, "deq", pkt.flow_id, pkt.seq, now - pkt.t_enqueued)
        ib = self._pending_ib.pop(q.ue_id, None)
        if ib is not None:
            pkt.feedback = ib
        if self.path.loss_prob > 0 and self.rng.random() < self.path.loss_prob:
            self.air_drops += 1
            self.drops_by_flow[pkt.flow_id] = self.drops_by_flow.get(pkt.flow_id, 0) + 1
            self._log(now, "airdrop", pkt.flow_id, pkt.seq)
        else:
            pkt.t_delivered = now  # zero residual radio-leg delay
            self._deliver[q.ue_id](now, pkt)
        if self._backlogged():
            self._ensure_drain(now)

    def _pick_backlogged(self) -> UeQueue | None:
        n = len(self._rr)
        for off in range(n):
            ue = self._rr[(self._rr_next + off) % n]
            q = self.queues[ue]
            if q.fifo:
                self._rr_next = (self._rr_next + off + 1) % n
                return q
        return None

    # -- in-band feedback -------------------------------------------------

    def attach_ib(self, ue_id: str, msg: object) -> None:
        """Stage a feedback digest on the next packet dequeued for this UE.

        A newer digest replaces an unattached older one (stale feedback is
        useless by the time a later one exists).
        """
        self.queue_for(ue_id)
        self._pending_ib[ue_id] = msg

    # -- uplink -----------------------------------------------------------

    def send_uplink(self, pkt: Packet, now: int, arrive: Callable[[int, Packet], None]) -> None:
        """Carry an ack (possibly with piggybacked feedback) to the server."""
        if pkt.kind is not PacketKind.ACK:
            raise LinkError("send_uplink carries acks only")
        delay = self.path.up_owd_us + self.path.serialization_us(pkt.size)
        self._schedule_event(now + delay, arrive, (pkt,))

    # -- probes -----------------------------------------------------------

    def probe_rtt(self, now: int) -> int:
        """Round-trip network delay seen by a priority probe at ``now``.

        Probes bypass the UE queues, so the sample excludes all queuing.
        """
        base = 2 * self.path.down_owd_us
        j = self.path.probe_jitter_us
        if j > 0:
            # Keyed by probe time so samples are reproducible regardless of
            # query order and independent of the loss RNG stream.
            base += random.Random(1_000_003 * now + 12345).randint(-j, j)
        return max(0, base)

    # -- accounting -------------------------------------------------------

    def idle_opportunities(self, horizon_us: int) -> int:
        elapsed = self.schedule.index_at_or_after(horizon_us + 1)
        return max(0, elapsed - self.served_opportunities)

    def conservation_ok(self) -> bool:
        for q in self.queues.values():
            if q.enqueued_bytes != q.dequeued_bytes + q.occupancy:
                return False
        return True
