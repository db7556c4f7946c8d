"""Data-driven reduced models of spectral PDEs by Wiener projection."""

__version__ = "0.1.0"

from .core import (CascadeCoefficients, CascadeModel, ComplexSeries, InstabilityError,
                   ModelOrders, NoiseModel, WienerROMError)

__all__ = ["CascadeCoefficients", "CascadeModel", "ComplexSeries", "InstabilityError",
           "ModelOrders", "NoiseModel", "WienerROMError", "__version__"]
