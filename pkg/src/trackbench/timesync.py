"""Timestamp-offset protocol between device clocks and a reference clock.

A UDP server streams reference timestamps (8-byte big-endian unsigned
microseconds since the epoch); clients probe the round-trip time, register,
consume the stream, and average per-message offsets into a clock delta.
A simulated impairment channel reproduces the protocol offline for testing.

Offsets persist as a one-line text record ``delta_s,jitter_std_s,n_samples``.
"""

from __future__ import annotations

import math
import os
import socket
import struct
import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import EmptySamplesError, NoResponseError, SyncTimeoutError
from .geometry import Trajectory

__all__ = [
    "SyncSample",
    "ClockOffsetEstimate",
    "ChannelModel",
    "measure_rtt",
    "estimate_offset",
    "simulate_session",
    "SyncServer",
    "run_sync_session",
    "apply_offset",
    "save_offset",
    "load_offset",
    "DEFAULT_STREAM_RATE",
    "DEFAULT_SESSION_DURATION",
]

PROBE = b"PING"
PROBE_REPLY = b"PONG"
REGISTER = b"SYNC"
_TS_STRUCT = struct.Struct(">Q")
_REG_STRUCT = struct.Struct(">4sI")  # magic + duration in milliseconds

DEFAULT_STREAM_RATE = 100.0      # messages per second
DEFAULT_SESSION_DURATION = 10.0  # seconds


@dataclass(frozen=True)
class SyncSample:
    """One streamed timestamp: server send time vs. local receive time."""

    server_send_time: float
    client_recv_time: float

    def __post_init__(self):
        if not (math.isfinite(self.server_send_time) and math.isfinite(self.client_recv_time)):
            raise ValueError("non-finite sync sample")


@dataclass(frozen=True)
class ClockOffsetEstimate:
    """Estimated clock delta (client minus server clock) with jitter statistics."""

    delta: float
    jitter_std: float
    n_samples: int
    assumed_one_way_delay: float = 0.0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("offset estimate needs at least one sample")
        if self.jitter_std < 0.0:
            raise ValueError("jitter_std must be non-negative")


@dataclass(frozen=True)
class ChannelModel:
    """Simulated single-hop datagram link: fixed base delay, Gaussian jitter,
    independent per-datagram drops. Deterministic given rng_seed."""

    base_delay: float
    jitter_std: float = 0.0
    drop_probability: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.base_delay < 0.0 or self.jitter_std < 0.0:
            raise ValueError("delays must be non-negative")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must be in [0, 1]")

    def _sample(self, rng, n):
        """One-way delays (clamped at 0) and drop flags for n datagrams."""
        if self.jitter_std > 0.0:
            delays = self.base_delay + self.jitter_std * rng.standard_normal(n)
            delays = np.maximum(delays, 0.0)
        else:
            delays = np.full(n, self.base_delay)
        dropped = (rng.random(n) < self.drop_probability) if self.drop_probability > 0.0 \
            else np.zeros(n, dtype=bool)
        return delays, dropped


def _anchored_mean(values) -> float:
    """Mean via fsum anchored at the first value; exact when all values equal."""
    first = values[0]
    return first + math.fsum(v - first for v in values) / len(values)


def measure_rtt(channel: ChannelModel, n_probes: int = 10) -> tuple[float, float]:
    """Probe the simulated channel; returns (mean_rtt, one_way_delay = rtt/2)."""
    if n_probes < 1:
        raise ValueError("need at least one probe")
    rng = np.random.default_rng(channel.rng_seed)
    fwd, fwd_drop = channel._sample(rng, n_probes)
    back, back_drop = channel._sample(rng, n_probes)
    alive = ~(fwd_drop | back_drop)
    if not np.any(alive):
        raise NoResponseError(f"all {n_probes} probes dropped")
    rtts = (fwd[alive] + back[alive]).tolist()
    mean_rtt = _anchored_mean(rtts)
    return mean_rtt, mean_rtt / 2.0


def estimate_offset(samples, one_way_delay: float,
                    method: str = "mean") -> ClockOffsetEstimate:
    """Average per-sample offsets (recv - send - one_way_delay) into a delta.

    The default estimator is the plain mean; `method="median"` is available
    for heavy-tailed jitter. jitter_std is the sample standard deviation of
    the per-sample offsets (0 for a single sample).
    """
    if method not in ("mean", "median"):
        raise ValueError(f"unknown estimator {method!r}")
    samples = list(samples)
    if not samples:
        raise EmptySamplesError("no sync samples")
    offsets = [s.client_recv_time - s.server_send_time - one_way_delay for s in samples]
    delta = _anchored_mean(offsets) if method == "mean" else float(np.median(offsets))
    if len(offsets) > 1:
        var = math.fsum((o - delta) ** 2 for o in offsets) / (len(offsets) - 1)
        jitter = math.sqrt(max(var, 0.0))
    else:
        jitter = 0.0
    return ClockOffsetEstimate(delta, jitter, len(offsets), one_way_delay)


def simulate_session(channel: ChannelModel, true_offset: float,
                     duration: float = DEFAULT_SESSION_DURATION,
                     rate: float = DEFAULT_STREAM_RATE,
                     start_time: float = 0.0) -> list[SyncSample]:
    """Run the timestamp stream through the simulated channel.

    The client clock reads server time + true_offset; each surviving message
    arrives after a sampled one-way delay. Deterministic given the channel seed.
    """
    n = int(round(duration * rate))
    rng = np.random.default_rng(channel.rng_seed)
    delays, dropped = channel._sample(rng, n)
    send_times = start_time + np.arange(n) / rate
    samples = []
    for send, delay, drop in zip(send_times, delays, dropped):
        if drop:
            continue
        samples.append(SyncSample(float(send), float(send + delay + true_offset)))
    return samples


# ---------------------------------------------------------------------------
# live protocol
# ---------------------------------------------------------------------------

class SyncServer:
    """UDP reference-time server.

    Replies to PING probes immediately and answers registration datagrams with
    a timestamp stream at `rate` for the requested duration. Each client
    session runs on its own thread, so no client blocks another.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 rate: float = DEFAULT_STREAM_RATE, clock=time.time):
        self._host = host
        self._port = port
        self._rate = float(rate)
        self._clock = clock
        self._sock = None
        self._thread = None
        self._stop = threading.Event()

    @property
    def address(self) -> tuple[str, int]:
        if self._sock is None:
            raise RuntimeError("server not started")
        return self._sock.getsockname()[:2]

    def start(self) -> "SyncServer":
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((self._host, self._port))
        self._sock.settimeout(0.1)
        self._stop.clear()
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _serve(self):
        while not self._stop.is_set():
            try:
                data, addr = self._sock.recvfrom(64)
            except socket.timeout:
                continue
            except OSError:
                break
            if data == PROBE:
                try:
                    self._sock.sendto(PROBE_REPLY, addr)
                except OSError:
                    pass
            elif data[:4] == REGISTER:
                duration = DEFAULT_SESSION_DURATION
                if len(data) >= _REG_STRUCT.size:
                    _, duration_ms = _REG_STRUCT.unpack(data[:_REG_STRUCT.size])
                    duration = duration_ms / 1000.0
                threading.Thread(
                    target=self._stream, args=(addr, duration), daemon=True
                ).start()

    def _stream(self, addr, duration: float):
        n = int(round(duration * self._rate))
        period = 1.0 / self._rate
        deadline = time.perf_counter()
        for _ in range(n):
            if self._stop.is_set():
                return
            payload = _TS_STRUCT.pack(int(self._clock() * 1e6))
            try:
                self._sock.sendto(payload, addr)
            except OSError:
                return
            deadline += period
            pause = deadline - time.perf_counter()
            if pause > 0:
                time.sleep(pause)


def run_sync_session(host: str, port: int, *,
                     duration: float = DEFAULT_SESSION_DURATION,
                     n_probes: int = 10, timeout: float = 2.0,
                     clock=time.time, method: str = "mean") -> ClockOffsetEstimate:
    """Probe RTT, register with the server, consume the stream, estimate the
    local clock delta. Raises SyncTimeoutError when the server never answers
    and NoResponseError when the stream yields no samples."""
    addr = (host, port)
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.settimeout(timeout)
    try:
        rtts = []
        for _ in range(max(1, n_probes)):
            t0 = time.perf_counter()
            sock.sendto(PROBE, addr)
            try:
                data, _ = sock.recvfrom(64)
            except socket.timeout:
                continue
            if data == PROBE_REPLY:
                rtts.append(time.perf_counter() - t0)
        if not rtts:
            raise SyncTimeoutError(f"no probe reply from {host}:{port}")
        owd = _anchored_mean(rtts) / 2.0

        sock.sendto(_REG_STRUCT.pack(REGISTER, int(round(duration * 1000))), addr)
        samples = []
        stop_at = time.perf_counter() + duration + 2.0 * timeout
        while time.perf_counter() < stop_at:
            try:
                data, _ = sock.recvfrom(64)
            except socket.timeout:
                break
            recv_time = clock()
            if len(data) != _TS_STRUCT.size:
                continue  # stray probe replies
            (send_us,) = _TS_STRUCT.unpack(data)
            samples.append(SyncSample(send_us / 1e6, recv_time))
        if not samples:
            raise NoResponseError("registration sent but no stream messages arrived")
        return estimate_offset(samples, owd, method=method)
    finally:
        sock.close()


# ---------------------------------------------------------------------------
# offline application and persistence
# ---------------------------------------------------------------------------

def apply_offset(traj: Trajectory, estimate: ClockOffsetEstimate) -> Trajectory:
    """Shift timestamps by -delta so device time maps onto reference time."""
    return traj.shifted(-estimate.delta)


def save_offset(estimate: ClockOffsetEstimate, path) -> None:
    text = (f"{float(estimate.delta)!r},{float(estimate.jitter_std)!r},"
            f"{int(estimate.n_samples)}\n")
    path = os.fspath(path)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def load_offset(path) -> ClockOffsetEstimate:
    with open(path, "r", encoding="utf-8") as f:
        fields = f.read().strip().split(",")
    if len(fields) != 3:
        raise ValueError(f"offset record must have 3 fields, found {len(fields)}")
    return ClockOffsetEstimate(float(fields[0]), float(fields[1]), int(fields[2]))
