"""TCP and UDP channels between named devices.

Devices are looked up in a NetworkConfig (JSON file: ``{"devices": {"name":
{"host": ..., "port": ...}}}``). TCP connections open with a framed HELLO
exchange carrying each side's name, so a version mismatch or a misdialed
peer fails fast. UDP is connectionless: no handshake, one frame per
datagram, and frames above the datagram limit are rejected before anything
hits the socket.

A channel is used by one thread at a time. ``send`` assigns the next
sequence number and stamps ``send_ts`` immediately before the write;
``recv`` stamps ``recv_ts`` right after the full frame is in and enforces
per-sender sequence monotonicity.
"""

from __future__ import annotations

import json
import socket
import time
from dataclasses import dataclass

from ..errors import (
    BindError,
    ChannelClosed,
    ConfigError,
    ConnectError,
    HandshakeError,
    MalformedError,
    PayloadTooLargeError,
    SequenceError,
    TransportTimeout,
    UnknownDeviceError,
)
from .frame import Envelope, MsgType, decode_frame, encode_frame, read_frame
from .sim import SimLinkSpec, SimNetwork

DEFAULT_MAX_DATAGRAM = 60_000
DEFAULT_TIMEOUT_MS = 10_000.0

HELLO = b"HELLO"


@dataclass(frozen=True)
class Endpoint:
    host: str
    port: int


@dataclass(frozen=True)
class NetworkConfig:
    """Named-device -> endpoint map plus which name is ours."""

    devices: dict
    self_name: str

    def __post_init__(self):
        if self.self_name not in self.devices:
            raise ConfigError(f"self name {self.self_name!r} not in devices")

    def endpoint(self, name: str) -> Endpoint:
        try:
            return self.devices[name]
        except KeyError:
            raise UnknownDeviceError(f"unknown device {name!r}") from None


def load_network_config(path, self_name: str) -> NetworkConfig:
    """Parse the JSON device map and bind it to our own device name."""
    try:
        with open(path, "rb") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read network config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"network config {path} is not valid JSON: {exc}") from exc
    devices_raw = raw.get("devices")
    if not isinstance(devices_raw, dict) or not devices_raw:
        raise ConfigError("network config needs a non-empty 'devices' object")
    devices = {}
    for name, entry in devices_raw.items():
        if not isinstance(name, str) or not name:
            raise ConfigError("device names must be non-empty strings")
        if not isinstance(entry, dict):
            raise ConfigError(f"device {name!r} entry must be an object")
        host = entry.get("host")
        port = entry.get("port")
        if not isinstance(host, str) or not host:
            raise ConfigError(f"device {name!r} needs a host")
        if not isinstance(port, int) or isinstance(port, bool) or not 1 <= port <= 65535:
            raise ConfigError(f"device {name!r} needs a port in 1..65535")
        devices[name] = Endpoint(host=host, port=port)
    return NetworkConfig(devices=devices, self_name=self_name)


class _SeqTracker:
    def __init__(self):
        self._next_seq = 0
        self._last_seen: dict[str, int] = {}

    def assign(self, env: Envelope) -> None:
        if env.seq is None:
            env.seq = self._next_seq
        elif env.seq < self._next_seq:
            raise SequenceError(f"seq {env.seq} regresses below {self._next_seq}")
        self._next_seq = env.seq + 1

    def check(self, env: Envelope) -> None:
        last = self._last_seen.get(env.sender)
        if last is not None and env.seq <= last:
            raise SequenceError(f"seq {env.seq} from {env.sender!r} not above {last}")
        self._last_seen[env.sender] = env.seq


class TcpChannel:
    """Framed stream channel over a connected TCP socket."""

    virtual = False
    kind = "tcp"

    def __init__(self, sock: socket.socket, self_name: str, peer_name: str = ""):
        self._sock = sock
        self.self_name = self_name
        self.peer_name = peer_name
        self._seq = _SeqTracker()
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def clock(self) -> int:
        return time.time_ns()

    def wait_ns(self, ns: int) -> None:
        time.sleep(ns / 1e9)

    def advance(self, ns: int) -> None:
        pass  # real clocks advance themselves

    def send(self, env: Envelope) -> int:
        if not env.sender:
            env.sender = self.self_name
        self._seq.assign(env)
        env.send_ts = time.time_ns()
        buf = encode_frame(env)
        try:
            self._sock.sendall(buf)
        except OSError as exc:
            raise ChannelClosed(f"send failed: {exc}") from exc
        return len(buf)

    def recv(self, timeout_ms: float | None = None):
        self._sock.settimeout(None if timeout_ms is None else timeout_ms / 1000.0)
        env = read_frame(self._read_exact)
        recv_ts = time.time_ns()
        self._seq.check(env)
        return env, recv_ts

    def _read_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining:
            try:
                chunk = self._sock.recv(min(remaining, 1 << 20))
            except socket.timeout as exc:
                raise TransportTimeout("receive timed out") from exc
            except OSError as exc:
                raise ChannelClosed(f"recv failed: {exc}") from exc
            if not chunk:
                if chunks or remaining != n:
                    raise MalformedError("connection closed mid-frame")
                raise ChannelClosed("peer closed the connection")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class UdpChannel:
    """One frame per datagram; oversize frames never touch the socket."""

    virtual = False
    kind = "udp"

    def __init__(
        self,
        sock: socket.socket,
        self_name: str,
        peer_addr=None,
        peer_name: str = "",
        max_datagram: int = DEFAULT_MAX_DATAGRAM,
    ):
        self._sock = sock
        self.self_name = self_name
        self.peer_name = peer_name
        self._peer_addr = peer_addr
        self.max_datagram = max_datagram
        self._seq = _SeqTracker()

    def clock(self) -> int:
        return time.time_ns()

    def wait_ns(self, ns: int) -> None:
        time.sleep(ns / 1e9)

    def advance(self, ns: int) -> None:
        pass

    def send(self, env: Envelope) -> int:
        if not env.sender:
            env.sender = self.self_name
        # Size check happens before seq/timestamp assignment so a rejected
        # frame leaves the channel state untouched.
        probe = Envelope(
            msg_type=env.msg_type,
            payload=env.payload,
            metadata=env.metadata,
            sender=env.sender,
            seq=0,
            send_ts=0,
        )
        if len(encode_frame(probe)) > self.max_datagram:
            raise PayloadTooLargeError(
                f"frame exceeds max datagram of {self.max_datagram} bytes"
            )
        if self._peer_addr is None:
            raise ChannelClosed("no peer address known yet")
        self._seq.assign(env)
        env.send_ts = time.time_ns()
        buf = encode_frame(env)
        try:
            self._sock.sendto(buf, self._peer_addr)
        except OSError as exc:
            raise ChannelClosed(f"send failed: {exc}") from exc
        return len(buf)

    def recv(self, timeout_ms: float | None = None):
        self._sock.settimeout(None if timeout_ms is None else timeout_ms / 1000.0)
        try:
            data, addr = self._sock.recvfrom(65_535)
        except socket.timeout as exc:
            raise TransportTimeout("receive timed out") from exc
        except OSError as exc:
            raise ChannelClosed(f"recv failed: {exc}") from exc
        recv_ts = time.time_ns()
        env = decode_frame(data)
        if self._peer_addr is None:
            self._peer_addr = addr
        if not self.peer_name:
            self.peer_name = env.sender
        self._seq.check(env)
        return env, recv_ts

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class TcpListener:
    def __init__(self, sock: socket.socket, self_name: str):
        self._sock = sock
        self.self_name = self_name

    @property
    def port(self) -> int:
        return self._sock.getsockname()[1]

    def accept(self, timeout_ms: float | None = None) -> TcpChannel:
        self._sock.settimeout(None if timeout_ms is None else timeout_ms / 1000.0)
        try:
            conn, _ = self._sock.accept()
        except socket.timeout as exc:
            raise TransportTimeout("accept timed out") from exc
        channel = TcpChannel(conn, self.self_name)
        # Server side of the HELLO: learn the client's name, answer with ours.
        env, _ = channel.recv(DEFAULT_TIMEOUT_MS)
        if env.msg_type is not MsgType.CONTROL or env.payload != HELLO:
            channel.close()
            raise HandshakeError("expected HELLO from client")
        channel.peer_name = env.sender
        channel.send(Envelope(MsgType.CONTROL, payload=HELLO))
        return channel

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class UdpListener:
    """UDP has no accept; this wraps the bound socket as a ready channel."""

    def __init__(self, channel: UdpChannel):
        self._channel = channel

    @property
    def port(self) -> int:
        return self._channel._sock.getsockname()[1]

    def accept(self, timeout_ms: float | None = None) -> UdpChannel:
        return self._channel

    def close(self) -> None:
        self._channel.close()


def connect(
    config: NetworkConfig,
    peer: str,
    kind="tcp",
    timeout_ms: float = DEFAULT_TIMEOUT_MS,
    max_datagram: int = DEFAULT_MAX_DATAGRAM,
):
    """Open a channel to ``peer``.

    ``kind`` is "tcp", "udp", or a SimLinkSpec (which builds a fresh virtual
    link and returns its client end; the server end is
    ``channel.network.server_channel()``).
    """
    if isinstance(kind, SimLinkSpec):
        net = SimNetwork(kind)
        return net.client_channel(name=config.self_name, peer=peer)
    ep = config.endpoint(peer)
    if kind == "tcp":
        try:
            sock = socket.create_connection((ep.host, ep.port), timeout=timeout_ms / 1000.0)
        except socket.timeout as exc:
            raise ConnectError(f"connect to {peer!r} timed out") from exc
        except OSError as exc:
            raise ConnectError(f"connect to {peer!r} failed: {exc}") from exc
        channel = TcpChannel(sock, config.self_name, peer_name=peer)
        channel.send(Envelope(MsgType.CONTROL, payload=HELLO))
        env, _ = channel.recv(timeout_ms)
        if env.msg_type is not MsgType.CONTROL or env.payload != HELLO:
            channel.close()
            raise HandshakeError("expected HELLO from server")
        if env.sender != peer:
            channel.close()
            raise HandshakeError(f"dialed {peer!r} but peer calls itself {env.sender!r}")
        return channel
    if kind == "udp":
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        return UdpChannel(
            sock,
            config.self_name,
            peer_addr=(ep.host, ep.port),
            peer_name=peer,
            max_datagram=max_datagram,
        )
    raise ValueError(f"unknown channel kind {kind!r}")


def serve(
    config: NetworkConfig,
    kind: str = "tcp",
    max_datagram: int = DEFAULT_MAX_DATAGRAM,
):
    """Bind our configured endpoint and return a listener."""
    ep = config.endpoint(config.self_name)
    if kind == "tcp":
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind((ep.host, ep.port))
        except OSError as exc:
            sock.close()
            raise BindError(f"cannot bind {ep.host}:{ep.port}: {exc}") from exc
        sock.listen(4)
        return TcpListener(sock, config.self_name)
    if kind == "udp":
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            sock.bind((ep.host, ep.port))
        except OSError as exc:
            sock.close()
            raise BindError(f"cannot bind {ep.host}:{ep.port}: {exc}") from exc
        return UdpListener(UdpChannel(sock, config.self_name, max_datagram=max_datagram))
    raise ValueError(f"unknown channel kind {kind!r}")
