"""Particle filters, Rao-Blackwellised filters and smoothed estimators."""

from . import assembly, checkpoint, particles, rbpf, resampling, rkde, smoothing
from .assembly import *  # noqa: F401,F403
from .checkpoint import *  # noqa: F401,F403
from .particles import *  # noqa: F401,F403
from .rbpf import *  # noqa: F401,F403
from .resampling import *  # noqa: F401,F403
from .rkde import *  # noqa: F401,F403
from .smoothing import *  # noqa: F401,F403

__all__ = (resampling.__all__ + particles.__all__ + rbpf.__all__ + smoothing.__all__
           + rkde.__all__ + assembly.__all__ + checkpoint.__all__)
