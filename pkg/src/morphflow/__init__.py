"""morphflow: morphological Hamilton-Jacobi layers inside a DDPM pipeline.

Subpackages:
  geometry   - hyperbolic ball distance/embedding, exact grid group actions
  morphpde   - multiscale erosion/dilation, convection, HJ solver oracles
  autodiff   - tape-based reverse-mode AD, Adam, EMA
  gmcunet    - the U-Net denoiser with convection-dilation-erosion blocks
  diffusion  - DDPM schedule, losses, reverse sampler
  data_io    - datasets, IDX, checkpoints, PGM grids, CSV, MMD
  kernels    - numba-accelerated hot loops with a NumPy fallback
"""

__version__ = "0.1.0"
