from .geometry import Complex
