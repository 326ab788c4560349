"""Random walks on F2 and the lamplighter group, record-driven randomized
stopping times and switching-element machinery."""

__version__ = "0.1.0"
