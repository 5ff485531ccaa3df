"""Standard normal helpers built on the scaled complementary error function.

All functions accept scalars or numpy arrays.
"""
import numpy as np
from scipy import special

SQRT2 = np.sqrt(2.0)
SQRT2PI = np.sqrt(2.0 * np.pi)
LOG_SQRT2PI = 0.5 * np.log(2.0 * np.pi)

def norm_pdf(x):
  return np.exp(-0.5 * np.square(x)) / SQRT2PI

def norm_cdf(x):
  return 0.5 * special.erfc(-np.asarray(x, dtype=float) / SQRT2)

def log_norm_cdf(x):
  return special.log_ndtr(x)

def mills_ratio(x):
  """Phi(x)/phi(x), finite for every real x."""
  return 0.5 * SQRT2PI * special.erfcx(-np.asarray(x, dtype=float) / SQRT2)

