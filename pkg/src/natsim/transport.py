"""Reliable byte-stream transport: paced sender and cumulative-ack receiver.

The sender models a bulk (always-backlogged) flow with MTU-sized segments:

* window gating on bytes in flight plus token-style pacing when the
  controller supplies a rate;
* duplicate-ack fast retransmit with NewReno-style partial-ack recovery
  (one window reduction per loss episode);
* retransmission timeout with exponential backoff, restarted whenever an
  ack advances the window;
* RTT estimation from acks of segments never retransmitted (srtt/rttvar
  with 1/8 and 1/4 gains).

The receiver keeps a per-flow cumulative/out-of-order reassembly map,
acks every data packet immediately, and reports how many flows were
recently active so senders can share capacity fairly.
"""

from __future__ import annotations

import math
from typing import Callable

from .cc import LOSS_DUPACK, LOSS_TIMEOUT, Controller
from .emulink import Packet, PacketKind

ACK_SIZE = 64
DUPACK_THRESHOLD = 3
RTO_MIN_US = 200_000
RTO_MAX_US = 60_000_000
SRTT_GAIN = 1 / 8
RTTVAR_GAIN = 1 / 4
# A flow counts toward the sharing denominator if it delivered data
# within this window.
ACTIVITY_WINDOW_US = 1_000_000


class Sender:
    """One bulk flow: segment tracking, pacing, recovery, RTO."""

    def __init__(
        self,
        flow_id: int,
        mtu: int,
        controller: Controller,
        transmit: Callable[[Packet, int], None],
        schedule_event: Callable[[int, Callable[[int], None]], None],
    ) -> None:
        self.flow_id = flow_id
        self.mtu = mtu
        self.controller = controller
        self.transmit = transmit
        self.schedule_event = schedule_event

        self.next_seq = 0                   # next new byte to send
        self.cum_acked = 0                  # all bytes below this are acked
        self.segments: dict[int, list] = {}  # seq -> [size, t_sent, retx]

        self.cwnd = controller.cwnd
        self.pacing_bps: float | None = controller.pacing_bps
        self._next_allowed_us = 0           # pacing release time
        self._pacer_scheduled = False

        self.dup_acks = 0
        self.in_recovery = False
        self.recover_seq = 0                # recovery ends when cum_acked >= this

        self.srtt_us: float | None = None
        self.rttvar_us: float = 0.0
        self.rto_us = RTO_MIN_US
        self._rto_deadline: int | None = None
        self._rto_event_at: int | None = None

        self.sent_segments = 0
        self.retransmits = 0
        self.timeouts = 0

    # ------------------------------------------------------------------
    @property
    def in_flight(self) -> int:
        return self.next_seq - self.cum_acked

    def apply_decision(self) -> None:
        """Adopt the controller's current window and pacing rate."""
        self.cwnd = self.controller.cwnd
        self.pacing_bps = self.controller.pacing_bps

    def _pacing_gap_us(self) -> int:
        assert self.pacing_bps is not None
        return max(1, math.ceil(self.mtu * 8 * 1e6 / self.pacing_bps))

    # sending -----------------------------------------------------------
    def try_send(self, now: int) -> None:
        """Send new segments while the window and pacer allow."""
        while self.in_flight + self.mtu <= self.cwnd:
            if self.pacing_bps is not None and now < self._next_allowed_us:
                self._schedule_pacer(self._next_allowed_us)
                return
            self._send_new(now)
            if self.pacing_bps is not None:
                base = max(now, self._next_allowed_us)
                self._next_allowed_us = base + self._pacing_gap_us()

    def _send_new(self, now: int) -> None:
        seq = self.next_seq
        self.segments[seq] = [self.mtu, now, False]
        self.next_seq += self.mtu
        self.sent_segments += 1
        if self._rto_deadline is None:
            self._arm_rto(now)
        self.transmit(
            Packet(flow_id=self.flow_id, seq=seq, size=self.mtu,
                   kind=PacketKind.DATA, t_sent=now),
            now,
        )

    def _schedule_pacer(self, at_us: int) -> None:
        if self._pacer_scheduled:
            return
        self._pacer_scheduled = True

        def fire(now: int) -> None:
            self._pacer_scheduled = False
            self.try_send(now)

        self.schedule_event(at_us, fire)

    def _retransmit(self, seq: int, now: int) -> None:
        """Resend one segment; bypasses both the window and the pacer."""
        entry = self.segments.get(seq)
        if entry is None:
            return
        entry[2] = True
        entry[1] = now
        self.retransmits += 1
        self.transmit(
            Packet(flow_id=self.flow_id, seq=seq, size=entry[0],
                   kind=PacketKind.DATA, t_sent=now, retransmission=True),
            now,
        )

    # acks ---------------------------------------------------------------
    def process_ack(self, pkt: Packet, now: int) -> None:
        ack = pkt.cum_ack
        if ack < self.cum_acked:
            return
        if ack == self.cum_acked:
            self._on_dupack(now)
            return

        newly_acked = ack - self.cum_acked
        rtt_sample = self._take_rtt_sample(ack, now)
        self.cum_acked = ack
        self.dup_acks = 0

        if self.in_recovery:
            if ack >= self.recover_seq:
                self.in_recovery = False
            else:
                # Partial ack: the next hole starts at the new cumulative
                # point; resend it without a second window reduction.
                self._retransmit(ack, now)

        if rtt_sample is not None:
            self._update_rtt(rtt_sample)
        # Progress was made: restart the timer from scratch at the base rto.
        self._rto_deadline = None
        if self.in_flight > 0:
            self._arm_rto(now)

        self.controller.on_ack(now, newly_acked, rtt_sample, max(1, pkt.beta))
        self.apply_decision()

    def _on_dupack(self, now: int) -> None:
        if self.in_flight <= 0:
            return
        self.dup_acks += 1
        if self.dup_acks == DUPACK_THRESHOLD and not self.in_recovery:
            self.in_recovery = True
            self.recover_seq = self.next_seq
            self.controller.on_loss(now, LOSS_DUPACK)
            self.apply_decision()
            self._retransmit(self.cum_acked, now)

    def _take_rtt_sample(self, ack: int, now: int) -> int | None:
        """RTT from the newest segment covered by this ack, skipping any
        that were retransmitted (their timing is ambiguous)."""
        sample: int | None = None
        seq = self.cum_acked
        while seq < ack:
            entry = self.segments.pop(seq, None)
            if entry is None:
                seq += self.mtu
                continue
            size, t_sent, retx = entry
            if not retx:
                sample = now - t_sent
            seq += size
        return sample

    def _update_rtt(self, sample_us: int) -> None:
        if self.srtt_us is None:
            self.srtt_us = float(sample_us)
            self.rttvar_us = sample_us / 2
        else:
            self.rttvar_us += RTTVAR_GAIN * (abs(self.srtt_us - sample_us) - self.rttvar_us)
            self.srtt_us += SRTT_GAIN * (sample_us - self.srtt_us)
        self.rto_us = min(
            RTO_MAX_US,
            max(RTO_MIN_US, int(round(self.srtt_us + 4 * self.rttvar_us))),
        )

    # timeout --------------------------------------------------------------
    def _arm_rto(self, now: int) -> None:
        self._rto_deadline = now + self.rto_us
        self._ensure_rto_event()

    def _ensure_rto_event(self) -> None:
        deadline = self._rto_deadline
        if deadline is None:
            return
        if self._rto_event_at is not None and self._rto_event_at <= deadline:
            return
        self._rto_event_at = deadline
        self.schedule_event(deadline, self._on_rto_event)

    def _on_rto_event(self, now: int) -> None:
        self._rto_event_at = None
        if self._rto_deadline is None or self.in_flight <= 0:
            return
        if now < self._rto_deadline:
            # The deadline moved while this event was in flight.
            self._ensure_rto_event()
            return
        self.timeouts += 1
        self.dup_acks = 0
        self.in_recovery = False
        self.controller.on_loss(now, LOSS_TIMEOUT)
        self.apply_decision()
        self.rto_us = min(RTO_MAX_US, self.rto_us * 2)
        self._retransmit(self.cum_acked, now)
        self._arm_rto(now)
        self.try_send(now)


class UeReceiver:
    """Per-UE receiver: reassembly, immediate acks, activity census."""

    def __init__(self, ue_id: int, transmit_ack: Callable[[Packet, int], None]) -> None:
        self.ue_id = ue_id
        self.transmit_ack = transmit_ack
        self.cum: dict[int, int] = {}            # flow -> next expected byte
        self.ooo: dict[int, dict[int, int]] = {}  # flow -> {seq: size}
        self.delivered_bytes: dict[int, int] = {}  # everything that arrived
        self.unique_bytes: dict[int, int] = {}     # first-time payload only
        self.last_data_us: dict[int, int] = {}

    def expected(self, flow_id: int) -> int:
        return self.cum.get(flow_id, 0)

    def active_flows(self, now: int) -> int:
        return sum(
            1 for t in self.last_data_us.values()
            if now - t <= ACTIVITY_WINDOW_US
        )

    def on_data(self, pkt: Packet, now: int) -> None:
        fid = pkt.flow_id
        self.delivered_bytes[fid] = self.delivered_bytes.get(fid, 0) + pkt.size
        self.last_data_us[fid] = now

        cum = self.cum.get(fid, 0)
        pending = self.ooo.setdefault(fid, {})
        if pkt.seq >= cum and pkt.seq not in pending:
            self.unique_bytes[fid] = self.unique_bytes.get(fid, 0) + pkt.size
            pending[pkt.seq] = pkt.size
        while cum in pending:
            cum += pending.pop(cum)
        self.cum[fid] = cum

        ack = Packet(
            flow_id=fid,
            seq=pkt.seq,
            size=ACK_SIZE,
            kind=PacketKind.ACK,
            t_sent=now,
            cum_ack=cum,
            beta=max(1, self.active_flows(now)),
            feedback=pkt.feedback,
        )
        self.transmit_ack(ack, now)
