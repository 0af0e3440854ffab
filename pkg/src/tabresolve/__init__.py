"""Tabular model learning, abstraction and depth-limited resolving for small simultaneous-move games."""
from .games import GameSpec, make_game

__all__ = ["GameSpec", "make_game"]
__version__ = "0.1.0"
