"""Attention-map refinement: thin Python surface over the C++ core."""

from ._amref import *  # noqa: F401,F403
from ._amref import __doc__  # noqa: F401
