"""Indoor VLC channel simulation and AP / mirror allocation for mirror-array IRSs."""

__version__ = "0.1.0"
