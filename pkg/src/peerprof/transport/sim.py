"""Deterministic in-process link with injectable delay, jitter, skew, and loss.

The network owns a single virtual timeline (integer ns). The client endpoint
reads that timeline directly; the server endpoint reads it shifted by the
configured clock skew, so raw one-way measurements reproduce exactly what two
unsynchronized wall clocks would show. All randomness (jitter, loss) comes
from one seeded generator, making every run bit-reproducible.

A frame sent at virtual time T is dispatched at max(T, link busy-until) and
arrives at dispatch + transmission (frame_bytes/bandwidth) + propagation
delay + jitter. Jitter is uniform on [-j, +j] and is applied unclamped: with
near-zero propagation an arrival can precede the send on the wire timeline,
which keeps the sweep-calibration noise symmetric and unbiased. Loss is
applied to client-to-server frames only; the reply direction is lossless, so
a loss probability of p drops a fraction p of request/response exchanges.

Both endpoints can be driven from one thread. When the client blocks in
recv() and a server handler is registered, pending server-bound frames are
delivered to the handler inline (the handler replies through the server
endpoint), which is how single-process benchmark runs interleave both roles
deterministically.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field

from ..errors import SequenceError, TransportTimeout
from .frame import Envelope, MsgType, decode_frame, encode_frame

UP = "up"      # client -> server
DOWN = "down"  # server -> client


@dataclass(frozen=True)
class SimLinkSpec:
    """Link parameters; the simulation is fully determined by these + seed."""

    up_delay_ns: int = 0
    down_delay_ns: int = 0
    jitter_ns: int = 0
    bandwidth_bytes_per_s: int | None = None
    loss_prob: float = 0.0
    clock_skew_ns: int = 0  # server clock minus client clock
    seed: int = 0

    def __post_init__(self):
        if self.up_delay_ns < 0 or self.down_delay_ns < 0 or self.jitter_ns < 0:
            raise ValueError("delays and jitter must be nonnegative")
        if self.bandwidth_bytes_per_s is not None and self.bandwidth_bytes_per_s <= 0:
            raise ValueError("bandwidth must be positive")
        if not 0.0 <= self.loss_prob < 1.0:
            raise ValueError("loss_prob must be in [0, 1)")

    def as_dict(self) -> dict:
        return {
            "up_delay_ns": self.up_delay_ns,
            "down_delay_ns": self.down_delay_ns,
            "jitter_ns": self.jitter_ns,
            "bandwidth_bytes_per_s": self.bandwidth_bytes_per_s,
            "loss_prob": self.loss_prob,
            "clock_skew_ns": self.clock_skew_ns,
            "seed": self.seed,
        }


@dataclass
class SimDelivery:
    """Ground-truth record of one transmitted frame (for test oracles)."""

    direction: str
    msg_type: int
    frame_bytes: int
    sent_ns: int        # virtual time of the send call
    arrival_ns: int | None  # None when the frame was lost
    lost: bool


class SimNetwork:
    """Virtual clock, two endpoints, and the event queue between them."""

    def __init__(self, spec: SimLinkSpec, epoch_ns: int = 1_700_000_000_000_000_000):
        self.spec = spec
        self.now_ns = epoch_ns
        self._rng = random.Random(spec.seed)
        self._inbox: dict[str, list] = {"client": [], "server": []}
        self._busy_until = {UP: 0, DOWN: 0}
        self._tick = 0
        self.deliveries: list[SimDelivery] = []
        self._handler = None
        self._client: SimChannel | None = None
        self._server: SimChannel | None = None

    # -- endpoints ----------------------------------------------------------

    def client_channel(self, name: str = "client", peer: str = "server") -> "SimChannel":
        if self._client is None:
            self._client = SimChannel(self, "client", name, peer)
        return self._client

    def server_channel(self, name: str = "server", peer: str = "client") -> "SimChannel":
        if self._server is None:
            self._server = SimChannel(self, "server", name, peer)
        return self._server

    def set_server_handler(self, handler) -> None:
        """Register ``handler(channel, env, recv_ts)`` for inline serving."""
        self._handler = handler

    # -- clock ---------------------------------------------------------------

    def clock(self, side: str) -> int:
        skew = self.spec.clock_skew_ns if side == "server" else 0
        return self.now_ns + skew

    def advance(self, ns: int) -> None:
        """Move virtual time forward (models time spent computing)."""
        if ns < 0:
            raise ValueError("cannot advance backwards")
        self.now_ns += ns

    # -- transmission ---------------------------------------------------------

    def transmit(self, from_side: str, frame: bytes) -> int:
        direction = UP if from_side == "client" else DOWN
        spec = self.spec
        lost = False
        if direction == UP and spec.loss_prob > 0.0:
            lost = self._rng.random() < spec.loss_prob
        jitter = self._rng.randint(-spec.jitter_ns, spec.jitter_ns) if spec.jitter_ns else 0

        prop = spec.up_delay_ns if direction == UP else spec.down_delay_ns
        if spec.bandwidth_bytes_per_s:
            tx = len(frame) * 1_000_000_000 // spec.bandwidth_bytes_per_s
        else:
            tx = 0
        dispatch = max(self.now_ns, self._busy_until[direction])
        self._busy_until[direction] = dispatch + tx
        arrival = dispatch + tx + prop + jitter

        if not lost:
            to_side = "server" if direction == UP else "client"
            self._tick += 1
            heapq.heappush(self._inbox[to_side], (arrival, self._tick, frame))
        self.deliveries.append(
            SimDelivery(
                direction=direction,
                msg_type=frame[5],
                frame_bytes=len(frame),
                sent_ns=self.now_ns,
                arrival_ns=None if lost else arrival,
                lost=lost,
            )
        )
        return len(frame)

    def receive(self, side: str, timeout_ms: float | None) -> tuple[bytes, int]:
        """Next frame for ``side`` plus its receive timestamp (side's clock)."""
        deadline = None if timeout_ms is None else self.now_ns + int(timeout_ms * 1e6)
        while True:
            inbox = self._inbox[side]
            if inbox and (deadline is None or inbox[0][0] <= deadline):
                arrival, _, frame = heapq.heappop(inbox)
                self.now_ns = max(self.now_ns, arrival)
                skew = self.spec.clock_skew_ns if side == "server" else 0
                return frame, arrival + skew
            # Nothing deliverable to us in time; give the inline server a
            # turn in case its reply is what we are waiting for.
            pumped = False
            if side == "client" and self._handler is not None:
                server_inbox = self._inbox["server"]
                if server_inbox and (deadline is None or server_inbox[0][0] <= deadline):
                    arrival, _, frame = heapq.heappop(server_inbox)
                    self.now_ns = max(self.now_ns, arrival)
                    recv_ts = arrival + self.spec.clock_skew_ns
                    env = decode_frame(frame)
                    self._handler(self.server_channel(), env, recv_ts)
                    pumped = True
            if pumped:
                continue
            if deadline is None:
                raise TransportTimeout("virtual link idle with no timeout")
            self.now_ns = deadline
            raise TransportTimeout(f"no frame within {timeout_ms} ms (virtual)")


@dataclass
class SimChannel:
    """Channel interface over one side of a SimNetwork."""

    network: SimNetwork
    side: str
    self_name: str
    peer_name: str
    virtual: bool = True
    _next_seq: int = 0
    _last_seen: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return "sim"

    def clock(self) -> int:
        return self.network.clock(self.side)

    def wait_ns(self, ns: int) -> None:
        self.network.advance(ns)

    def advance(self, ns: int) -> None:
        self.network.advance(ns)

    def send(self, env: Envelope) -> int:
        if not env.sender:
            env.sender = self.self_name
        if env.seq is None:
            env.seq = self._next_seq
        elif env.seq < self._next_seq:
            raise SequenceError(f"seq {env.seq} regresses below {self._next_seq}")
        self._next_seq = env.seq + 1
        env.send_ts = self.clock()
        return self.network.transmit(self.side, encode_frame(env))

    def recv(self, timeout_ms: float | None = None):
        frame, recv_ts = self.network.receive(self.side, timeout_ms)
        env = decode_frame(frame)
        last = self._last_seen.get(env.sender)
        if last is not None and env.seq <= last:
            raise SequenceError(
                f"seq {env.seq} from {env.sender!r} not above {last}"
            )
        self._last_seen[env.sender] = env.seq
        return env, recv_ts

    def close(self) -> None:
        pass
