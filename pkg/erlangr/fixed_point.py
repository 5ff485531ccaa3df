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

import math
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from erlangr.core_model import (
  ModelParams, DerivedLoads, CapacityPair, QedPair, PerformanceReport, CONVENTIONS,
  derive_loads, qed_capacity, invert_capacity,
)
from erlangr.qed_limits import limits_blocking, halfin_whitt_delay, QUADRATURE_METADATA
from erlangr.libs.errors import Infeasible, NoConvergence, InfeasibleTarget, DomainError

logger = logging.getLogger(__name__)

DAMPING = 0.5
ALPHA_TOL = 1e-10
ALPHA_MAX_ITER = 10_000
ROOT_AGREEMENT = 1e-8
BRACKET_START = 5.0
BRACKET_MAX = 40.0
FIXED_COORDINATES = ('beta', 'gamma', 'n')

@dataclass
class FixedPointSolution:
  alpha: float
  effective_beta: float
  effective_gamma: float
  iterations: int
  residual: float
  alpha_bisection: Optional[float] = None

  @property
  def effective_pair(self):
    return QedPair(self.effective_beta, self.effective_gamma)

def _blocked_volume(alpha, beta, gamma, r):
  eff_gamma = gamma - alpha / math.sqrt(r)
  if eff_gamma <= 0.0:
    raise Infeasible(
      f'effective bed hedge gamma - alpha/sqrt(r) = {eff_gamma:.6g} <= 0 (beta={beta}, gamma={gamma}, r={r})'
    )
  return limits_blocking(beta - alpha, eff_gamma, r).f

def _bisection_root(beta, gamma, r):
  upper = gamma * math.sqrt(r) * (1.0 - 1e-12)
  psi = lambda a: a - _blocked_volume(a, beta, gamma, r)
  if psi(upper) <= 0.0:
    return None
  return optimize.brentq(psi, 0.0, upper, xtol=1e-13)

def solve_alpha(beta, gamma, r, damping=DAMPING, tol=ALPHA_TOL, max_iter=ALPHA_MAX_ITER) -> FixedPointSolution:
  """Damped iteration of alpha = f_b(beta - alpha, gamma - alpha/sqrt(r)) from alpha = 0."""
  if not 0.0 < r < 1.0:
    raise DomainError(f'r must lie strictly inside (0, 1), got {r}')
  if gamma <= 0.0:
    raise Infeasible(f'gamma={gamma} leaves no room for re-admitted volume')

  alpha = 0.0
  for it in range(1, max_iter + 1):
    blocked = _blocked_volume(alpha, beta, gamma, r)
    residual = abs(alpha - blocked)
    if residual < tol:
      break
    alpha = (1.0 - damping) * alpha + damping * blocked
  else:
    raise NoConvergence(f'alpha iteration did not converge in {max_iter} iterations', iterations=max_iter,
                        residual=residual)

  solution = FixedPointSolution(
    alpha=alpha, effective_beta=beta - alpha, effective_gamma=gamma - alpha / math.sqrt(r),
    iterations=it, residual=residual,
  )
  root = _bisection_root(beta, gamma, r)
  solution.alpha_bisection = root
  if root is None or abs(root - alpha) > ROOT_AGREEMENT:
    logger.warning('fixed-point iterate %.12g and bracketed root %s disagree (beta=%g, gamma=%g, r=%g)',
                   alpha, root, beta, gamma, r)
  return solution

@dataclass
class HoldingApprox:
  g_h: float
  h_h: float
  alpha: float
  solution: FixedPointSolution

def holding_approx(beta, gamma, r, mu=1.0) -> HoldingApprox:
  solution = solve_alpha(beta, gamma, r)
  limits = limits_blocking(solution.effective_beta, solution.effective_gamma, r, mu)
  return HoldingApprox(g_h=limits.g, h_h=limits.h, alpha=solution.alpha, solution=solution)

def batch_limits(rows, mu=1.0):
  """Evaluate (g_b, f_b, h_b) and the holding heuristic on (beta, gamma, r) rows."""
  out = []
  for beta, gamma, r in rows:
    limits = limits_blocking(beta, gamma, r, mu)
    record = {'beta': beta, 'gamma': gamma, 'r': r, **limits.to_dict()}
    try:
      approx = holding_approx(beta, gamma, r, mu)
      record.update({'g_h': approx.g_h, 'h_h': approx.h_h, 'alpha': approx.alpha})
    except (Infeasible, NoConvergence) as e:
      logger.info('holding heuristic unavailable at beta=%g gamma=%g r=%g: %s', beta, gamma, r, e)
      record.update({'g_h': math.nan, 'h_h': math.nan, 'alpha': math.nan})
    out.append(record)
  return out

# ---------------------------------------------------------------------------
# Dimensioning

@dataclass
class DimensioningResult:
  pair: QedPair
  star_pair: QedPair
  cap: CapacityPair
  predicted: PerformanceReport
  alpha: float = 0.0
  model: str = 'blocking'
  metadata: dict = field(default_factory=dict)

  def to_dict(self):
    return {
      'model': self.model,
      'beta_star': self.star_pair.beta,
      'gamma_star': self.star_pair.gamma,
      'alpha': self.alpha,
      'beta': self.pair.beta,
      'gamma': self.pair.gamma,
      's': self.cap.s,
      'n': self.cap.n,
      'predicted': self.predicted.to_dict(),
      'metadata': dict(self.metadata),
    }

def _parse_fixed(fixed, allowed):
  if not isinstance(fixed, dict) or len(fixed) != 1:
    raise DomainError(f'pin exactly one of {allowed}, got {fixed!r}')
  (key, value), = fixed.items()
  if key not in allowed:
    raise DomainError(f'cannot pin "{key}"; expected one of {allowed}')
  return key, value

def _check_target(eps):
  if not 0.0 < eps < 1.0:
    raise DomainError(f'target delay probability must lie in (0, 1), got {eps}')

def _find_root(objective, what):
  """Root of a monotone objective, bracket grown geometrically from [-5, 5] up to [-40, 40]."""
  width = BRACKET_START
  while width <= BRACKET_MAX:
    lo, hi = -width, width
    with np.errstate(all='ignore'):
      f_lo, f_hi = objective(lo), objective(hi)
    if not (math.isfinite(f_lo) and math.isfinite(f_hi)):
      raise InfeasibleTarget(f'{what}: limit evaluation broke down on [{lo}, {hi}]')
    if f_lo == 0.0:
      return lo
    if f_hi == 0.0:
      return hi
    if (f_lo < 0.0) != (f_hi < 0.0):
      return optimize.brentq(objective, lo, hi, xtol=1e-12)
    width *= 2.0
  raise InfeasibleTarget(f'{what}: no sign change on [{-BRACKET_MAX}, {BRACKET_MAX}]')

def _solve_star_pair(eps, key, value, r):
  if key == 'beta':
    if value > 0 and eps >= halfin_whitt_delay(value):
      raise InfeasibleTarget(
        f'target {eps} is not below the Halfin-Whitt delay {halfin_whitt_delay(value):.6g} at beta={value}'
      )
    gamma = _find_root(lambda x: limits_blocking(value, x, r).g - eps, f'solving gamma at beta={value}')
    return QedPair(value, gamma)
  beta = _find_root(lambda x: limits_blocking(x, value, r).g - eps, f'solving beta at gamma={value}')
  return QedPair(beta, value)

def predicted_report(limits_g, limits_f, limits_h, loads: DerivedLoads, cap: CapacityPair, model, holding_queue=0.0):
  sqrt_r1 = math.sqrt(loads.r1)
  p_boundary = min(limits_f / sqrt_r1, 1.0)
  return PerformanceReport(
    p_delay=limits_g,
    p_boundary=p_boundary,
    e_wait=limits_h / sqrt_r1,
    e_holding_queue=holding_queue,
    rho_s=min(loads.r1 * (1.0 - p_boundary) / cap.s, 1.0),
    rho_n=min(loads.bed_load * (1.0 - p_boundary) / cap.n, 1.0),
    metadata={'model': model, 'source': 'QED limits', **CONVENTIONS, **QUADRATURE_METADATA},
  )

def dimension_blocking(target_delay, fixed, loads: DerivedLoads, mu=1.0) -> DimensioningResult:
  """Solve g_b(beta, gamma) = target with one coordinate pinned, then size (s, n)."""
  _check_target(target_delay)
  key, value = _parse_fixed(fixed, ('beta', 'gamma'))
  r = loads.r
  pair = _solve_star_pair(target_delay, key, float(value), r)
  cap = qed_capacity(loads.r1, r, pair)
  limits = limits_blocking(pair.beta, pair.gamma, r, mu)
  return DimensioningResult(
    pair=pair, star_pair=pair, cap=cap, alpha=0.0, model='blocking',
    predicted=predicted_report(limits.g, limits.f, limits.h, loads, cap, 'blocking'),
    metadata={'pinned': key, 'target_delay': target_delay},
  )

def _holding_delay(beta, gamma, r):
  try:
    return holding_approx(beta, gamma, r).g_h
  except Infeasible:
    return 1.0

def dimension_holding(target_delay, fixed, params: ModelParams) -> DimensioningResult:
  """Stationary dimensioning for the holding model.

  Pinning beta* or gamma* inflates the blocking solution by the blocked volume:
  beta = beta* + f_b(beta*, gamma*), gamma = gamma* + f_b(beta*, gamma*)/sqrt(r).
  Pinning the final bed count n instead solves g_h(beta, gamma_n) = target.
  """
  _check_target(target_delay)
  key, value = _parse_fixed(fixed, FIXED_COORDINATES)
  loads = derive_loads(params)
  r = loads.r
  if not r < 1.0:
    raise DomainError('holding dimensioning needs r < 1 (returns must occur)')

  if key == 'n':
    gamma = invert_capacity(CapacityPair(s=1, n=int(value)), loads.r1, r).gamma
    beta = _find_root(lambda x: _holding_delay(x, gamma, r) - target_delay,
                      f'solving beta at n={int(value)}')
    pair = QedPair(beta, gamma)
    approx = holding_approx(beta, gamma, r, params.mu)
    star = approx.solution.effective_pair
    alpha = approx.alpha
    limits = limits_blocking(star.beta, star.gamma, r, params.mu)
  else:
    star = _solve_star_pair(target_delay, key, float(value), r)
    limits = limits_blocking(star.beta, star.gamma, r, params.mu)
    alpha = limits.f
    pair = QedPair(star.beta + alpha, star.gamma + alpha / math.sqrt(r))

  # prediction: blocking limits at the effective pair
  cap = qed_capacity(loads.r1, r, pair)
  predicted = predicted_report(limits.g, limits.f, limits.h, loads, cap, 'holding', holding_queue=math.nan)
  return DimensioningResult(
    pair=pair, star_pair=star, cap=cap, alpha=alpha, model='holding', predicted=predicted,
    metadata={'pinned': key, 'target_delay': target_delay},
  )
