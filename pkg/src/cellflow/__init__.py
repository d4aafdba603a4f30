"""cellflow: spatially conditional cellular-traffic generation.

Learns a three-level flow-matching generator over hourly base-station load,
fuses satellite/POI embeddings into the conditioning context, and drives
what-if site ranking and what-to-do energy control from the generated
672-hour sequences.
"""
from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
