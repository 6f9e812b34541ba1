"""Framed message transport: TCP, UDP, and a deterministic simulated link."""

from .frame import Envelope, MsgType, decode_frame, encode_frame
from .net import (
    DEFAULT_MAX_DATAGRAM,
    DEFAULT_TIMEOUT_MS,
    Endpoint,
    NetworkConfig,
    TcpChannel,
    TcpListener,
    UdpChannel,
    UdpListener,
    connect,
    load_network_config,
    serve,
)
from .sim import SimChannel, SimDelivery, SimLinkSpec, SimNetwork

__all__ = [
    "DEFAULT_MAX_DATAGRAM",
    "DEFAULT_TIMEOUT_MS",
    "Endpoint",
    "Envelope",
    "MsgType",
    "NetworkConfig",
    "SimChannel",
    "SimDelivery",
    "SimLinkSpec",
    "SimNetwork",
    "TcpChannel",
    "TcpListener",
    "UdpChannel",
    "UdpListener",
    "connect",
    "decode_frame",
    "encode_frame",
    "load_network_config",
    "serve",
]
