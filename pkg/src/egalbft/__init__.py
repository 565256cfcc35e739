"""Leaderless Byzantine fault-tolerant state machine replication."""
from .config import ReplicaConfig
from .core import DepSet, SlotId
from .replica import Replica

__version__ = "0.1.0"
__all__ = ["DepSet", "ReplicaConfig", "Replica", "SlotId"]
