"""hintloc: language-hint driven localization on synthetic city point clouds.

A query described by a handful of spatial hint sentences is first matched to a
map cell (coarse retrieval over a shared embedding space), then refined to a
metric position by a cross-attention regressor. Everything runs on float64
numpy with an optional numba kernel lane (HINTLOC_NUMBA=0 disables it).
"""

__version__ = "0.1.0"
