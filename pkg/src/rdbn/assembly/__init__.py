"""Fault-injected assembly domain: simulator, declarative encoding and
vectorised filtering support."""

from . import domain, trajectory
from .domain import *  # noqa: F401,F403
from .trajectory import *  # noqa: F401,F403

__all__ = domain.__all__ + trajectory.__all__
