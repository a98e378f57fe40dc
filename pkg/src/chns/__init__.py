"""Taylor-Hood finite elements for Cahn-Hilliard-Navier-Stokes with a decoupled SAV scheme."""

from .mesh import Rect, UNIT_SQUARE, Mesh, build_rect_mesh
from .scheme import SchemeParams, State, advance, initial_state, run

__all__ = ["Rect", "UNIT_SQUARE", "Mesh", "build_rect_mesh", "SchemeParams", "State",
           "advance", "initial_state", "run"]
