"""Pulse-level variational quantum algorithms on simulated cross-resonance hardware."""

import logging
import os

__version__ = "0.1.0"

_level = os.environ.get("PULSEFORGE_LOG")
if _level:
    logging.basicConfig(
        level=getattr(logging, _level.upper(), logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
logging.getLogger(__name__).addHandler(logging.NullHandler())
