"""Recover latent factors observed through three noisy linear blocks.

Loadings come from a CP decomposition of third-order cross-moments; factor
and error distributions come from Kotlarski-type characteristic-function
identities.
"""

__version__ = "0.1.0"
