"""Leader/follower orchestration over a line-delimited JSON TCP protocol."""

from .follower import Follower
from .leader import Leader, LeaderState
from .protocol import request

__all__ = ["Follower", "Leader", "LeaderState", "request"]
