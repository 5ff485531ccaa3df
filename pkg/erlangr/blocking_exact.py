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

import logging
from functools import cached_property

import numpy as np
from scipy.special import gammaln, logsumexp

from erlangr.core_model import (
  ModelParams, CapacityPair, PerformanceReport, CONVENTIONS, derive_loads,
)
from erlangr.libs.utils import compensated_sum, write_csv

logger = logging.getLogger(__name__)

def log_kappa(j, s):
  """log of j! for j <= s and s! * s**(j-s) beyond."""
  j = np.asarray(j, dtype=float)
  return np.where(j <= s, gammaln(j + 1.0), gammaln(s + 1.0) + (j - s) * np.log(s))

def _log_powers(load, count):
  k = np.arange(count, dtype=float)
  if load == 0.0:
    out = np.full(count, -np.inf)
    out[0] = 0.0
    return out
  return k * np.log(load)

class BlockingDistribution:
  """Product-form law pi(j,k) ~ R1^j R2^k / (kappa(j) k!) on j+k <= n.

  Stored factorized: log a_j = j log R1 - log kappa(j) and log b_k = k log R2 - log k!,
  so marginals and boundary sums are O(n) and the dense triangle is only built on request.
  """

  def __init__(self, params: ModelParams, cap: CapacityPair, population=None):
    self.params = params
    self.cap = cap
    self.s = cap.s
    self.n = cap.n if population is None else population
    loads = derive_loads(params)
    self.r1, self.r2 = loads.r1, loads.r2

    size = self.n + 1
    self.log_a = _log_powers(self.r1, size) - log_kappa(np.arange(size), self.s)
    self.log_b = _log_powers(self.r2, size) - gammaln(np.arange(size) + 1.0)
    # log sum_{k <= m} b_k
    self.log_cum_b = np.logaddexp.accumulate(self.log_b)

    j = np.arange(size)
    self._log_marginal_unnorm = self.log_a + self.log_cum_b[self.n - j]
    self.log_norm = logsumexp(self._log_marginal_unnorm)

  @cached_property
  def needy_marginal(self):
    return np.exp(self._log_marginal_unnorm - self.log_norm)

  @cached_property
  def content_given_needy_mean(self):
    """E[k | j] = R2 * F(n-j-1)/F(n-j), with F the cumulative b-sums."""
    rem = self.n - np.arange(self.n + 1)
    out = np.zeros(self.n + 1)
    mask = rem >= 1
    if self.r2 > 0:
      out[mask] = self.r2 * np.exp(self.log_cum_b[rem[mask] - 1] - self.log_cum_b[rem[mask]])
    return out

  @cached_property
  def boundary_terms(self):
    j = np.arange(self.n + 1)
    return np.exp(self.log_a + self.log_b[self.n - j] - self.log_norm)

  def prob(self, j, k):
    if j < 0 or k < 0 or j + k > self.n:
      return 0.0
    return float(np.exp(self.log_a[j] + self.log_b[k] - self.log_norm))

  @cached_property
  def probs(self):
    """Dense (n+1)x(n+1) array, zero outside the triangle j+k <= n."""
    size = self.n + 1
    log_grid = self.log_a[:, None] + self.log_b[None, :] - self.log_norm
    j, k = np.indices((size, size))
    return np.where(j + k <= self.n, np.exp(log_grid), 0.0)

  def total_mass(self):
    return compensated_sum(self.needy_marginal)

  def iter_states(self):
    for j in range(self.n + 1):
      for k in range(self.n - j + 1):
        yield j, k, float(np.exp(self.log_a[j] + self.log_b[k] - self.log_norm))

  def to_csv(self, fn=None):
    return write_csv(
      fn, ['j', 'k', 'prob'],
      ((j, k, prob) for j, k, prob in self.iter_states()),
      float_format=lambda v: f'{v:.16e}' if isinstance(v, float) else str(v),
    )

def stationary_blocking(params: ModelParams, cap: CapacityPair) -> BlockingDistribution:
  return BlockingDistribution(params, cap)

def _delay_and_wait(dist: BlockingDistribution, mu):
  marginal = dist.needy_marginal
  j = np.arange(dist.n + 1)
  s = dist.s
  delayed = j >= s
  p_delay = compensated_sum(marginal[delayed])
  e_wait = compensated_sum(marginal[delayed] * (j[delayed] - s + 1) / (s * mu))
  return p_delay, e_wait

def perf_blocking(dist: BlockingDistribution, arrival_theorem=True) -> PerformanceReport:
  """Delay and wait seen by an arrival, blocking probability by PASTA, utilizations by time average.

  With `arrival_theorem` the delay/wait use the population n-1 law, which is what an
  admitted arrival sees in this closed-form network.
  """
  mu = dist.params.mu
  s, n = dist.s, dist.n
  if arrival_theorem:
    seen = BlockingDistribution(dist.params, dist.cap, population=n - 1)
  else:
    seen = dist
  p_delay, e_wait = _delay_and_wait(seen, mu)

  marginal = dist.needy_marginal
  j = np.arange(n + 1)
  rho_s = compensated_sum(marginal * np.minimum(j, s)) / s
  census = compensated_sum(marginal * (j + dist.content_given_needy_mean))
  rho_n = census / n

  return PerformanceReport(
    p_delay=min(max(p_delay, 0.0), 1.0),
    p_boundary=min(compensated_sum(dist.boundary_terms), 1.0),
    e_wait=max(e_wait, 0.0),
    e_holding_queue=0.0,
    rho_s=min(rho_s, 1.0),
    rho_n=min(rho_n, 1.0),
    metadata={
      'model': 'blocking',
      'arrival_theorem': bool(arrival_theorem),
      **CONVENTIONS,
    },
  )
