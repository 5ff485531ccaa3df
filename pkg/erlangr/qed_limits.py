# Copyright (C) 2024 Restricted Erlang-R team
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

"""Heavy-traffic limits of the blocking model under two-fold square-root scaling.

With s = R1 + beta*sqrt(R1) and n = R1/r + gamma*sqrt(R1/r):
  g = lim P(delay), f = lim sqrt(R1) P(block), h = lim sqrt(R1) E[W].
"""
import math
import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate

from erlangr.libs.errors import DomainError
from erlangr.libs.gaussian import (
  norm_pdf, norm_cdf, log_norm_cdf, mills_ratio, SQRT2PI, LOG_SQRT2PI,
)

logger = logging.getLogger(__name__)

BETA_SMALL = 1e-3
QUAD_LOWER = -10.0
QUAD_TOL = 1e-12

QUADRATURE_METADATA = {
  'quadrature': 'scipy.integrate.quad (adaptive Gauss-Kronrod)',
  'quadrature_lower_limit': QUAD_LOWER,
  'quadrature_abs_tol': QUAD_TOL,
  'beta_small_threshold': BETA_SMALL,
}

@dataclass(frozen=True)
class LimitInputs:
  beta: float
  gamma: float
  r: float

  def __post_init__(self):
    if not 0.0 < self.r < 1.0:
      raise DomainError(f'r must lie strictly inside (0, 1), got {self.r}; use the loss-model limits for r = 1')
    if not (math.isfinite(self.beta) and math.isfinite(self.gamma)):
      raise DomainError('beta and gamma must be finite')

  @property
  def eta(self):
    return (self.gamma - self.beta * math.sqrt(self.r)) / math.sqrt(1.0 - self.r)

  @property
  def omega(self):
    return (self.gamma - self.beta / math.sqrt(self.r)) / math.sqrt(1.0 - self.r)

@dataclass(frozen=True)
class BlockingLimits:
  g: float
  f: float
  h: float

  def to_dict(self):
    return {'g_b': self.g, 'f_b': self.f, 'h_b': self.h}

def _kernel(t, gamma, r):
  return norm_cdf((gamma - t * math.sqrt(r)) / math.sqrt(1.0 - r)) * norm_pdf(t)

def gaussian_mix_integral(beta, gamma, r):
  """Integral of Phi((gamma - t*sqrt(r))/sqrt(1-r)) dPhi(t) over (-inf, beta]."""
  if not 0.0 < r < 1.0:
    raise DomainError(f'r must lie strictly inside (0, 1), got {r}')
  # the dropped tail is at most Phi(-10) < 1e-16
  if beta <= QUAD_LOWER:
    return 0.0
  value, _ = integrate.quad(
    _kernel, QUAD_LOWER, beta, args=(gamma, r), epsabs=QUAD_TOL, epsrel=1e-12, limit=200,
  )
  return value

def _log_tail_term(inputs: LimitInputs):
  """log of phi(sqrt(beta^2 + eta^2)) * exp(omega^2/2) * Phi(omega).

  beta^2 + eta^2 - omega^2 = (beta/sqrt(r)) * (2*gamma - beta/sqrt(r)), so the
  exponent is formed without the large squares cancelling.
  """
  scaled_beta = inputs.beta / math.sqrt(inputs.r)
  return -scaled_beta * (inputs.gamma - 0.5 * scaled_beta) - LOG_SQRT2PI + float(log_norm_cdf(inputs.omega))

def _limits_nonzero_beta(inputs: LimitInputs, mu):
  beta, gamma, r = inputs.beta, inputs.gamma, inputs.r
  eta, omega = inputs.eta, inputs.omega
  # every term is divided by exp(shift) so that the tail stays <= 1
  log_tail = _log_tail_term(inputs)
  shift = max(log_tail, 0.0)
  scale = math.exp(-shift)
  tail = math.exp(log_tail - shift)
  mix = gaussian_mix_integral(beta, gamma, r) * scale
  head = norm_pdf(beta) * norm_cdf(eta) * scale
  denom = mix + (head - tail) / beta

  g = ((head - tail) / beta) / denom
  f = (math.sqrt(r) * norm_pdf(gamma) * norm_cdf(-omega * math.sqrt(r)) * scale + tail) / denom
  h_num = (
    head / beta ** 2
    + (1.0 / r - gamma / (beta * math.sqrt(r)) - 1.0 / beta ** 2) * tail
    - math.sqrt((1.0 - r) / r) * norm_pdf(beta) * norm_pdf(eta) * scale / beta
  )
  h = h_num / denom / mu
  return BlockingLimits(g=float(g), f=float(f), h=float(h))

def _limits_zero_beta(inputs: LimitInputs, mu):
  """The beta -> 0 limit of the nonzero-beta expressions."""
  gamma, r = inputs.gamma, inputs.r
  eta = gamma / math.sqrt(1.0 - r)
  omega = eta
  mix = gaussian_mix_integral(0.0, gamma, r)
  bend = eta * norm_cdf(eta) + norm_pdf(eta)
  b_zero = math.sqrt((1.0 - r) / r) * bend / SQRT2PI
  denom = mix + b_zero

  g = b_zero / denom
  f = (math.sqrt(r) * norm_pdf(gamma) * norm_cdf(-omega * math.sqrt(r)) + norm_cdf(eta) / SQRT2PI) / denom
  h_num = ((1.0 - r) * eta * norm_pdf(eta) + (1.0 - r + gamma ** 2) * norm_cdf(eta)) / (2.0 * r * SQRT2PI)
  h = h_num / denom / mu
  return BlockingLimits(g=float(g), f=float(f), h=float(h))

def _limits_small_beta(inputs: LimitInputs, mu):
  """Linear blend of the beta = 0 limit and the nonzero form at +-BETA_SMALL.

  (head - tail)/beta^2 loses about eps/beta^2 in relative terms, so the
  nonzero form is only evaluated where that error is negligible.
  """
  at_zero = _limits_zero_beta(inputs, mu)
  if inputs.beta == 0.0:
    return at_zero
  edge = _limits_nonzero_beta(replace(inputs, beta=math.copysign(BETA_SMALL, inputs.beta)), mu)
  weight = abs(inputs.beta) / BETA_SMALL
  return BlockingLimits(
    g=at_zero.g + weight * (edge.g - at_zero.g),
    f=at_zero.f + weight * (edge.f - at_zero.f),
    h=at_zero.h + weight * (edge.h - at_zero.h),
  )

def limits_blocking(beta, gamma, r, mu=1.0) -> BlockingLimits:
  inputs = LimitInputs(beta=float(beta), gamma=float(gamma), r=float(r))
  if mu <= 0:
    raise DomainError(f'mu must be positive, got {mu}')
  if abs(inputs.beta) < BETA_SMALL:
    return _limits_small_beta(inputs, mu)
  return _limits_nonzero_beta(inputs, mu)

def halfin_whitt_delay(beta):
  if not beta > 0:
    raise DomainError(f'Halfin-Whitt delay needs beta > 0, got {beta}')
  return float(1.0 / (1.0 + beta * mills_ratio(beta)))

def loss_model_limits(beta, gamma):
  """(g_B, f_B) of the loss model, the r = 1 case; requires gamma > beta."""
  if not gamma > beta:
    raise DomainError(f'loss-model limits need gamma > beta, got beta={beta}, gamma={gamma}')
  decay = math.exp(-beta * (gamma - beta))
  denom = 1.0 - decay + beta * float(mills_ratio(beta))
  if beta == 0.0:
    # both numerators vanish linearly in beta
    denom_slope = gamma + float(mills_ratio(0.0))
    return gamma / denom_slope, 1.0 / denom_slope
  return (1.0 - decay) / denom, beta * decay / denom

def erlang_b_tail(gamma, r):
  if not 0.0 < r <= 1.0:
    raise DomainError(f'r must lie in (0, 1], got {r}')
  return float(math.sqrt(r) / mills_ratio(gamma))

def limit_curves(betas, gammas, r, mu=1.0):
  """Grid of limits over beta for each gamma, as plot-ready records."""
  records = []
  for gamma in gammas:
    for beta in np.asarray(betas, dtype=float):
      lim = limits_blocking(beta, gamma, r, mu)
      records.append({'beta': float(beta), 'gamma': gamma, 'r': r, **lim.to_dict()})
  return records
