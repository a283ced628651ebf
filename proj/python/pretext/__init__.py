"""Desk-scale self-supervised pretext-task training."""

from pretext._core import *  # noqa: F401,F403
from pretext._core import __doc__  # noqa: F401
