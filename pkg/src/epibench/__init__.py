"""Retrospective epidemic-forecast benchmarking.

Versioned truth store with as-of snapshots, bundled SIkJalpha forecasters,
hub-style submission codec, scoring rules, random-forest stacking, and a
rolling-origin command-line harness.
"""

__version__ = "0.1.0"
