"""Second-order lifts of reversible diffusions: simulation, lift checks, spectral analysis and bounds."""

from __future__ import annotations

__version__ = "0.1.0"
