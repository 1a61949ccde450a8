"""
Routers for the HiNeRV codec service.

This package contains all the routers for the different features of the API.
"""

__all__ = [
    "codec",
    "utility",
]
