"""Congestion controllers: cubic baseline plus three assisted schemes.

Schemes (config keys):
  cubic   - standard cubic window growth, loss-driven, unpaced.
  natcp   - fully feedback-driven: window = alpha * (1/beta) * minRTT * BL_Bw,
            pacing at the reported bottleneck capacity.  Falls back to an
            embedded cubic before the first feedback or after the watchdog
            fires, and re-engages on the next feedback.
  nacubic - unmodified cubic underneath, with the feedback window as a cap
            and pacing at the reported capacity while feedback is fresh.
  tg      - bandwidth-only guidance: pacing at the reported capacity and a
            window built from the sender's own distributed min-RTT estimate
            (running minimum of ack RTT samples over a sliding horizon).

Every controller exposes ``cwnd`` (bytes) and ``pacing_bps`` (None = unpaced);
the transport applies them after each callback.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .netassist import FeedbackMsg

CUBIC_C = 0.4
CUBIC_BETA = 0.7
INITIAL_WINDOW_SEGMENTS = 10
MIN_WINDOW_SEGMENTS = 2
# Floor pacing rate: one MTU packet per 100 ms (the probe cadence).
PACING_FLOOR_INTERVAL_US = 100_000

LOSS_DUPACK = "dupack"
LOSS_TIMEOUT = "timeout"

SCHEMES = ("natcp", "nacubic", "cubic", "tg")


def pacing_floor_bps(mtu: int) -> float:
    return mtu * 8 * 1e6 / PACING_FLOOR_INTERVAL_US


def cwnd_floor_bytes(mtu: int) -> int:
    return MIN_WINDOW_SEGMENTS * mtu


def assisted_cwnd_bytes(alpha: float, beta: int, min_rtt_us: int, bl_bw_bps: float) -> int:
    """Feedback-driven window: alpha * (1/beta) * minRTT * BL_Bw, in bytes."""
    return int(round(alpha * min_rtt_us * bl_bw_bps / (8e6 * beta)))


@dataclass
class CubicState:
    """Cubic curve parameters; window units are segments (MSS)."""

    w_max: float = 0.0
    k: float = 0.0
    c: float = CUBIC_C
    beta_cubic: float = CUBIC_BETA
    epoch_start_us: int | None = None
    ssthresh: int | None = None     # bytes; None = infinite
    in_slow_start: bool = True


def cubic_window(t_s: float, state: CubicState) -> float:
    """Cubic growth curve W(t) = C*(t-K)^3 + W_max, in segments."""
    return state.c * (t_s - state.k) ** 3 + state.w_max


def cubic_k(w_max: float, c: float = CUBIC_C, beta_cubic: float = CUBIC_BETA) -> float:
    """Time (s) for the curve to return to w_max after a loss reduction."""
    return (w_max * (1.0 - beta_cubic) / c) ** (1.0 / 3.0)


class Controller:
    """Base controller: window floor, pacing floor, bookkeeping."""

    uses_watchdog = False

    def __init__(self, mtu: int) -> None:
        self.mtu = mtu
        self.cwnd = INITIAL_WINDOW_SEGMENTS * mtu
        self.pacing_bps: float | None = None
        self.beta = 1
        self.fb_count = 0
        self.mode_log: list[tuple[int, str]] = []

    # callbacks ------------------------------------------------------------
    def on_ack(self, now: int, acked_bytes: int, rtt_us: int | None, beta: int) -> None:
        self.beta = max(1, beta)

    def on_loss(self, now: int, kind: str) -> None:
        pass

    def on_feedback(self, now: int, msg: FeedbackMsg) -> None:
        self.fb_count += 1

    def revert(self, now: int) -> None:
        pass

    # helpers --------------------------------------------------------------
    def _clamp_cwnd(self, cwnd_bytes: float) -> int:
        return max(cwnd_floor_bytes(self.mtu), int(round(cwnd_bytes)))

    def _clamp_pacing(self, bps: float) -> float:
        return max(pacing_floor_bps(self.mtu), bps)


class CubicController(Controller):
    """Loss-driven cubic with slow start; no pacing."""

    def __init__(self, mtu: int) -> None:
        super().__init__(mtu)
        self.state = CubicState()

    @classmethod
    def seeded(cls, mtu: int, cwnd_bytes: int, now: int) -> "CubicController":
        """Fresh instance continuing from an externally chosen window.

        Starts in congestion avoidance on the convex part of the curve with
        W(0) equal to the seed window.
        """
        ctl = cls(mtu)
        ctl.cwnd = max(cwnd_floor_bytes(mtu), cwnd_bytes)
        ctl.state = CubicState(
            w_max=ctl.cwnd / mtu,
            k=0.0,
            epoch_start_us=now,
            ssthresh=ctl.cwnd,
            in_slow_start=False,
        )
        return ctl

    def on_ack(self, now: int, acked_bytes: int, rtt_us: int | None, beta: int) -> None:
        super().on_ack(now, acked_bytes, rtt_us, beta)
        st = self.state
        if st.in_slow_start:
            self.cwnd += acked_bytes
            if st.ssthresh is not None and self.cwnd >= st.ssthresh:
                st.in_slow_start = False
                st.epoch_start_us = now
            return
        if st.epoch_start_us is None:
            # Entering congestion avoidance with no loss history: grow
            # convex from the current window.
            st.epoch_start_us = now
            st.w_max = self.cwnd / self.mtu
            st.k = 0.0
        t_s = (now - st.epoch_start_us) / 1e6
        target = cubic_window(t_s, st) * self.mtu
        if target > self.cwnd:
            self.cwnd = self._clamp_cwnd(target)

    def on_loss(self, now: int, kind: str) -> None:
        st = self.state
        st.w_max = self.cwnd / self.mtu
        st.k = cubic_k(st.w_max, st.c, st.beta_cubic)
        reduced = self._clamp_cwnd(self.cwnd * st.beta_cubic)
        if kind == LOSS_TIMEOUT:
            st.ssthresh = reduced
            self.cwnd = cwnd_floor_bytes(self.mtu)
            st.in_slow_start = True
            st.epoch_start_us = None
        else:
            self.cwnd = reduced
            st.ssthresh = reduced
            st.in_slow_start = False
            st.epoch_start_us = now


class NatcpController(Controller):
    """Fully network-assisted window and pacing with a cubic fallback."""

    uses_watchdog = True

    def __init__(
        self,
        mtu: int,
        alpha: float = 2.0,
        divide_pacing_by_beta: bool = False,
    ) -> None:
        super().__init__(mtu)
        self.alpha = alpha
        self.divide_pacing_by_beta = divide_pacing_by_beta
        self.assisted = False
        self.bl_bw = 0.0
        self.min_rtt_us = 0
        self._fallback = CubicController(mtu)
        self._sync_fallback()
        self.mode_log.append((0, "fallback"))

    def _sync_fallback(self) -> None:
        self.cwnd = self._fallback.cwnd
        self.pacing_bps = None

    def _recompute(self) -> None:
        self.cwnd = self._clamp_cwnd(
            assisted_cwnd_bytes(self.alpha, self.beta, self.min_rtt_us, self.bl_bw)
        )
        rate = self.bl_bw / self.beta if self.divide_pacing_by_beta else self.bl_bw
        self.pacing_bps = self._clamp_pacing(rate)

    def on_feedback(self, now: int, msg: FeedbackMsg) -> None:
        super().on_feedback(now, msg)
        self.bl_bw = msg.bl_bw
        self.min_rtt_us = msg.min_rtt
        if not self.assisted:
            self.assisted = True
            self.mode_log.append((now, "assisted"))
        self._recompute()

    def on_ack(self, now: int, acked_bytes: int, rtt_us: int | None, beta: int) -> None:
        beta_before = self.beta
        super().on_ack(now, acked_bytes, rtt_us, beta)
        if self.assisted:
            if self.beta != beta_before:
                self._recompute()
        else:
            self._fallback.on_ack(now, acked_bytes, rtt_us, beta)
            self._sync_fallback()

    def on_loss(self, now: int, kind: str) -> None:
        if not self.assisted:
            self._fallback.on_loss(now, kind)
            self._sync_fallback()

    def revert(self, now: int) -> None:
        """Watchdog expiry: resume loss-driven behavior from the current window."""
        if not self.assisted:
            return
        self.assisted = False
        self._fallback = CubicController.seeded(self.mtu, self.cwnd, now)
        self._sync_fallback()
        self.mode_log.append((now, "fallback"))


class NaCubicController(Controller):
    """Unmodified cubic capped by the feedback window while feedback is fresh."""

    uses_watchdog = True

    def __init__(
        self,
        mtu: int,
        alpha: float = 2.0,
        divide_pacing_by_beta: bool = False,
    ) -> None:
        super().__init__(mtu)
        self.alpha = alpha
        self.divide_pacing_by_beta = divide_pacing_by_beta
        self.assisted = False   # here: feedback considered fresh
        self.bl_bw = 0.0
        self.min_rtt_us = 0
        self.cubic = CubicController(mtu)
        self.mode_log.append((0, "fallback"))
        self._apply()

    def _cap_bytes(self) -> int:
        return self._clamp_cwnd(
            assisted_cwnd_bytes(self.alpha, self.beta, self.min_rtt_us, self.bl_bw)
        )

    def _apply(self) -> None:
        if self.assisted:
            self.cwnd = min(self.cubic.cwnd, self._cap_bytes())
            rate = self.bl_bw / self.beta if self.divide_pacing_by_beta else self.bl_bw
            self.pacing_bps = self._clamp_pacing(rate)
        else:
            self.cwnd = self.cubic.cwnd
            self.pacing_bps = None

    def on_feedback(self, now: int, msg: FeedbackMsg) -> None:
        super().on_feedback(now, msg)
        self.bl_bw = msg.bl_bw
        self.min_rtt_us = msg.min_rtt
        if not self.assisted:
            self.assisted = True
            self.mode_log.append((now, "assisted"))
        self._apply()

    def on_ack(self, now: int, acked_bytes: int, rtt_us: int | None, beta: int) -> None:
        super().on_ack(now, acked_bytes, rtt_us, beta)
        self.cubic.on_ack(now, acked_bytes, rtt_us, beta)
        self._apply()

    def on_loss(self, now: int, kind: str) -> None:
        self.cubic.on_loss(now, kind)
        self._apply()

    def revert(self, now: int) -> None:
        if not self.assisted:
            return
        self.assisted = False
        self.mode_log.append((now, "fallback"))
        self._apply()


class TgController(Controller):
    """Bandwidth-only guidance with a sender-side distributed min-RTT.

    The server keeps the minimum of its own ack RTT samples over a sliding
    horizon and sizes the window as alpha * est * fb_bw; pacing follows the
    reported capacity.  No fairness term and no network RTT assistance.
    """

    def __init__(self, mtu: int, alpha: float = 2.0, horizon_us: int = 10_000_000) -> None:
        super().__init__(mtu)
        self.alpha = alpha
        self.horizon_us = horizon_us
        self.fb_bw = 0.0
        self.have_feedback = False
        self._samples: deque[tuple[int, int]] = deque()  # (t, rtt) rtt ascending
        self._last_est_us: int | None = None
        self._bootstrap = CubicController(mtu)
        self.cwnd = self._bootstrap.cwnd

    def _note_rtt(self, now: int, rtt_us: int) -> None:
        while self._samples and self._samples[-1][1] >= rtt_us:
            self._samples.pop()
        self._samples.append((now, rtt_us))

    def rtt_estimate_us(self, now: int) -> int | None:
        horizon_start = now - self.horizon_us
        while self._samples and self._samples[0][0] <= horizon_start:
            self._samples.popleft()
        if self._samples:
            self._last_est_us = self._samples[0][1]
        return self._last_est_us

    def _recompute(self, now: int) -> None:
        est = self.rtt_estimate_us(now)
        if est is None:
            return
        self.cwnd = self._clamp_cwnd(
            assisted_cwnd_bytes(self.alpha, 1, est, self.fb_bw)
        )
        self.pacing_bps = self._clamp_pacing(self.fb_bw)

    def on_feedback(self, now: int, msg: FeedbackMsg) -> None:
        super().on_feedback(now, msg)
        self.fb_bw = msg.bl_bw
        self.have_feedback = True
        self._recompute(now)

    def on_ack(self, now: int, acked_bytes: int, rtt_us: int | None, beta: int) -> None:
        super().on_ack(now, acked_bytes, rtt_us, beta)
        if rtt_us is not None:
            self._note_rtt(now, rtt_us)
        if self.have_feedback:
            self._recompute(now)
        else:
            self._bootstrap.on_ack(now, acked_bytes, rtt_us, beta)
            self.cwnd = self._bootstrap.cwnd

    def on_loss(self, now: int, kind: str) -> None:
        if not self.have_feedback:
            self._bootstrap.on_loss(now, kind)
            self.cwnd = self._bootstrap.cwnd


def make_controller(
    scheme: str,
    mtu: int,
    alpha: float = 2.0,
    divide_pacing_by_beta: bool = False,
    tg_horizon_us: int = 10_000_000,
) -> Controller:
    if scheme == "cubic":
        return CubicController(mtu)
    if scheme == "natcp":
        return NatcpController(mtu, alpha, divide_pacing_by_beta)
    if scheme == "nacubic":
        return NaCubicController(mtu, alpha, divide_pacing_by_beta)
    if scheme == "tg":
        return TgController(mtu, alpha, tg_horizon_us)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
