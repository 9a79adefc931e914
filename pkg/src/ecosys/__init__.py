"""Desk-scale service ecosystem runtime.

An XML message bus connects simulated services; self-integration admits
them into a registry, an administrator command language steers them, a
resource unit adapts virtual host profiles, a security suite guards the
data path, and a per-service health machine recovers from faults.
"""

from .config import EcosystemConfig
from .ecosystem import Ecosystem

__version__ = "0.1.0"

__all__ = ["Ecosystem", "EcosystemConfig", "__version__"]
