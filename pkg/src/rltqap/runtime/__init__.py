from .messages import Phase, PhaseMessage, decode, encode
from .partition import PartitionMap, build_partition
from .transport import (
    InProcessHub,
    InProcessTransport,
    LocalTransport,
    SocketTransport,
    Transport,
    exchange,
    load_hosts,
)

__all__ = [
    "Phase",
    "PhaseMessage",
    "decode",
    "encode",
    "PartitionMap",
    "build_partition",
    "InProcessHub",
    "InProcessTransport",
    "LocalTransport",
    "SocketTransport",
    "Transport",
    "exchange",
    "load_hosts",
]
