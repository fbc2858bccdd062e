"""rdplab: a desk-scale laboratory for rate-distortion trade-offs under
strong realism constraints, with side information and limited common
randomness."""

__version__ = "0.1.0"
