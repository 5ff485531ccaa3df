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
from functools import cached_property
from typing import List

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import spsolve
from scipy.special import gammaln, logsumexp

from erlangr.core_model import (
  ModelParams, CapacityPair, PerformanceReport, CONVENTIONS, derive_loads,
)
from erlangr.libs.errors import NotStable, MaxIterations, SingularSystem, DomainError
from erlangr.libs.utils import compensated_sum, write_csv

logger = logging.getLogger(__name__)

G_TOL = 1e-12
G_MAX_ITER = 1_000_000
UNSTABLE_RADIUS = 1.0 - 1e-6
DENSE_BOUNDARY_LIMIT = 2500
SCHEMES = ('functional', 'logarithmic')

# ---------------------------------------------------------------------------
# Closed ward and the stability bound

class ClosedWardDistribution:
  """Needy-count law of the closed ward: n patients, each departure replaced at once.

  Needy count i is a birth-death chain with up-rate (n-i)*delta and down-rate
  p*min(i,s)*mu, giving pi_i ~ C(n,i) * b^i * i!/kappa(i), b = delta/(p*mu).
  """

  def __init__(self, params: ModelParams, cap: CapacityPair):
    self.params = params
    self.s, self.n = cap.s, cap.n
    i = np.arange(self.n + 1, dtype=float)
    if params.p == 0.0:
      probs = np.zeros(self.n + 1)
      probs[-1] = 1.0
      self.probs = probs
      return
    log_b = np.log(params.delta) - np.log(params.p * params.mu)
    s = self.s
    log_w = gammaln(self.n + 1.0) - gammaln(self.n - i + 1.0) + i * log_b
    log_w -= np.where(i <= s, gammaln(i + 1.0), gammaln(s + 1.0) + (i - s) * np.log(s))
    self.probs = np.exp(log_w - logsumexp(log_w))

  @cached_property
  def utilization(self):
    i = np.arange(self.n + 1)
    return compensated_sum(self.probs * np.minimum(i, self.s)) / self.s

  @property
  def p_delay(self):
    return compensated_sum(self.probs[self.s:])

  @property
  def mean_needy(self):
    return compensated_sum(self.probs * np.arange(self.n + 1))

  @property
  def throughput(self):
    """Rate of final departures, each immediately replaced."""
    return (1.0 - self.params.p) * self.params.mu * self.s * self.utilization

  @property
  def mean_wait(self):
    """Mean needy wait per service, by Little's law on the needy queue."""
    i = np.arange(self.n + 1)
    queue = compensated_sum(self.probs * np.maximum(i - self.s, 0))
    return queue / (self.params.mu * self.s * self.utilization)

  def report(self) -> PerformanceReport:
    # no external arrivals: blocking and the holding queue are undefined
    return PerformanceReport(
      p_delay=self.p_delay, p_boundary=math.nan, e_wait=self.mean_wait, e_holding_queue=math.nan,
      rho_s=self.utilization, rho_n=1.0, metadata={'model': 'closed_ward', **CONVENTIONS},
    )

  def to_csv(self, fn=None):
    return write_csv(fn, ['i', 'prob'], zip(range(self.n + 1), self.probs))

def closed_ward_distribution(params: ModelParams, cap: CapacityPair) -> ClosedWardDistribution:
  return ClosedWardDistribution(params, cap)

@dataclass(frozen=True)
class UtilizationBound:
  rho_max: float
  r_max: float

def rho_max(params: ModelParams, cap: CapacityPair) -> UtilizationBound:
  rho = closed_ward_distribution(params, cap).utilization
  return UtilizationBound(rho_max=rho, r_max=cap.s * rho)

def check_stability(params: ModelParams, cap: CapacityPair):
  """Raise NotStable unless R1 < R_max(s,n)."""
  bound = rho_max(params, cap)
  rho = derive_loads(params, cap.s).rho
  if rho >= bound.rho_max:
    raise NotStable(
      f'holding model unstable: rho={rho:.10g} >= rho_max={bound.rho_max:.10g} (s={cap.s}, n={cap.n})',
      rho=rho, rho_max=bound.rho_max,
    )
  return rho, bound

# ---------------------------------------------------------------------------
# QBD blocks

def _service_rates(size, s, mu):
  return np.minimum(np.arange(size), s) * mu

def _local_block(census, params: ModelParams, s):
  """Within-level block for a level whose admitted census is `census`."""
  size = census + 1
  j = np.arange(size)
  nu = _service_rates(size, s, params.mu)
  wake = (census - j) * params.delta
  block = np.zeros((size, size))
  block[j[:-1], j[:-1] + 1] = wake[:-1]
  block[j[1:], j[1:] - 1] = params.p * nu[1:]
  block[j, j] = -(params.lam + wake + nu)
  return block

@dataclass
class QbdBlocks:
  boundary_diag: List[np.ndarray]
  boundary_up: List[np.ndarray]
  boundary_down: List[np.ndarray]
  a0: np.ndarray
  a1: np.ndarray
  a2: np.ndarray
  s: int
  n: int
  params: ModelParams

  def level_size(self, i):
    return min(i, self.n) + 1

  def up(self, i):
    """Block from level i to i+1."""
    return self.boundary_up[i] if i < self.n else self.a0

  def down(self, i):
    """Block from level i to i-1."""
    return self.boundary_down[i - 1] if i <= self.n else self.a2

  def local(self, i):
    return self.boundary_diag[i] if i <= self.n else self.a1

  def offsets(self, levels):
    sizes = [self.level_size(i) for i in range(levels + 1)]
    return np.concatenate([[0], np.cumsum(sizes)]), sizes

  def truncated_generator(self, levels):
    """Generator on levels 0..levels with the upward rate of the top level removed."""
    offsets, sizes = self.offsets(levels)
    rows, cols, vals = [], [], []

    def put(i, k, block):
      r, c = np.nonzero(block)
      rows.append(offsets[i] + r)
      cols.append(offsets[k] + c)
      vals.append(block[r, c])

    for i in range(levels + 1):
      local = self.local(i).copy()
      if i == levels:
        local[np.diag_indices_from(local)] += self.params.lam
      put(i, i, local)
      if i < levels:
        put(i, i + 1, self.up(i))
      if i > 0:
        put(i, i - 1, self.down(i))
    dim = offsets[-1]
    return sparse.csr_matrix(
      (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim),
    )

  def to_csv(self, fn=None):
    rows = []
    for name, block in (('A0', self.a0), ('A1', self.a1), ('A2', self.a2)):
      r, c = np.nonzero(block)
      rows.extend((name, int(a), int(b), float(block[a, b])) for a, b in zip(r, c))
    return write_csv(fn, ['block', 'row', 'col', 'value'], rows)

def build_qbd_blocks(params: ModelParams, cap: CapacityPair) -> QbdBlocks:
  s, n = cap.s, cap.n
  lam = params.lam
  diag = [_local_block(i, params, s) for i in range(n + 1)]
  up, down = [], []
  for i in range(1, n + 1):
    b_up = np.zeros((i, i + 1))
    b_up[np.arange(i), np.arange(i) + 1] = lam
    up.append(b_up)
    b_down = np.zeros((i + 1, i))
    nu = _service_rates(i + 1, s, params.mu)
    b_down[np.arange(1, i + 1), np.arange(i)] = (1.0 - params.p) * nu[1:]
    down.append(b_down)
  size = n + 1
  a0 = lam * np.eye(size)
  a2 = np.diag((1.0 - params.p) * _service_rates(size, s, params.mu))
  return QbdBlocks(
    boundary_diag=diag, boundary_up=up, boundary_down=down,
    a0=a0, a1=diag[n], a2=a2, s=s, n=n, params=params,
  )

# ---------------------------------------------------------------------------
# Rate matrix

@dataclass
class RateMatrixG:
  g: np.ndarray
  iterations: int
  residual: float
  scheme: str = 'functional'
  tol: float = G_TOL

  @cached_property
  def spectral_radius(self):
    return float(np.max(np.abs(np.linalg.eigvals(self.g))))

  def metadata(self):
    return {
      'g_scheme': self.scheme,
      'g_norm': 'max-abs of successive iterates',
      'g_tol': self.tol,
      'g_iterations': self.iterations,
      'g_residual': self.residual,
    }

def rate_matrix_residual(blocks: QbdBlocks, g):
  res = blocks.a0 + g @ blocks.a1 + g @ g @ blocks.a2
  return float(np.max(np.sum(np.abs(res), axis=1)))

def iterate_functional(blocks: QbdBlocks):
  """Yield G_1, G_2, ... of G <- -(A0 + G^2 A2) A1^{-1} from G_0 = 0."""
  lu = linalg.lu_factor(blocks.a1.T)
  g = np.zeros_like(blocks.a0)
  while True:
    rhs = -(blocks.a0 + g @ g @ blocks.a2)
    g = linalg.lu_solve(lu, rhs.T).T
    yield g

def _solve_functional(blocks: QbdBlocks, tol, max_iter):
  g_prev = np.zeros_like(blocks.a0)
  for it, g in enumerate(iterate_functional(blocks), start=1):
    diff = float(np.max(np.abs(g - g_prev)))
    if diff < tol:
      return g, it
    if it % 10000 == 0:
      logger.debug('G iteration %d: increment %.3e', it, diff)
    if it >= max_iter:
      raise MaxIterations(
        f'functional iteration did not converge in {max_iter} iterations (increment {diff:.3e})',
        iterations=it, residual=diff,
      )
    g_prev = g

def _solve_logarithmic(blocks: QbdBlocks, tol, max_iter):
  """Logarithmic reduction for the first-passage matrix, then R = A0 (-A1 - A0 G)^{-1}."""
  size = blocks.a0.shape[0]
  eye = np.eye(size)
  neg_a1 = -blocks.a1
  h = linalg.solve(neg_a1, blocks.a0)
  low = linalg.solve(neg_a1, blocks.a2)
  first_passage = low.copy()
  t = h.copy()
  ones = np.ones(size)
  it = 0
  for it in range(1, min(int(max_iter), 200) + 1):
    u = h @ low + low @ h
    inv = linalg.lu_factor(eye - u)
    h = linalg.lu_solve(inv, h @ h)
    low = linalg.lu_solve(inv, low @ low)
    step = t @ low
    first_passage += step
    t = t @ h
    if np.max(np.abs(ones - first_passage @ ones)) < tol or np.max(np.abs(step)) < tol:
      break
  else:
    raise MaxIterations(f'logarithmic reduction did not converge in {it} steps', iterations=it)
  g = blocks.a0 @ linalg.inv(neg_a1 - blocks.a0 @ first_passage)
  return g, it

def solve_rate_matrix(blocks: QbdBlocks, tol=G_TOL, max_iter=G_MAX_ITER, scheme='functional',
                      stability_check=True) -> RateMatrixG:
  """Minimal nonnegative solution of A0 + G A1 + G^2 A2 = 0 (tail: pi_{n+i} = pi_n G^i)."""
  if scheme not in SCHEMES:
    raise DomainError(f'unknown rate-matrix scheme "{scheme}", expected one of {SCHEMES}')
  if stability_check:
    check_stability(blocks.params, CapacityPair(blocks.s, blocks.n))

  try:
    if scheme == 'functional':
      g, iterations = _solve_functional(blocks, tol, max_iter)
    else:
      g, iterations = _solve_logarithmic(blocks, tol, max_iter)
  except MaxIterations:
    if not stability_check:
      raise NotStable('rate-matrix iteration failed to converge; instance appears unstable')
    raise
  except linalg.LinAlgError as e:
    raise SingularSystem(f'rate-matrix iteration hit a singular matrix: {e}')

  g = np.maximum(g, 0.0)
  result = RateMatrixG(g=g, iterations=iterations, residual=rate_matrix_residual(blocks, g),
                       scheme=scheme, tol=tol)
  logger.debug('G converged: scheme=%s iterations=%d residual=%.3e', scheme, iterations, result.residual)
  if result.spectral_radius >= UNSTABLE_RADIUS:
    bound = rho_max(blocks.params, CapacityPair(blocks.s, blocks.n))
    rho = derive_loads(blocks.params, blocks.s).rho
    raise NotStable(
      f'spectral radius of G is {result.spectral_radius:.10g} >= {UNSTABLE_RADIUS}',
      rho=rho, rho_max=bound.rho_max,
    )
  if result.spectral_radius > 0.999:
    logger.warning('spectral radius %.6f is close to 1; tail measures converge slowly', result.spectral_radius)
  return result

# ---------------------------------------------------------------------------
# Stationary distribution

@dataclass
class HoldingDistribution:
  boundary: List[np.ndarray]
  g: RateMatrixG
  s: int
  n: int
  params: ModelParams
  metadata: dict = field(default_factory=dict)

  @cached_property
  def _i_minus_g(self):
    return linalg.lu_factor(np.eye(self.n + 1) - self.g.g)

  @cached_property
  def tail_aggregate(self):
    """pi_n (I-G)^{-1}: needy-count mass summed over all levels >= n."""
    return linalg.lu_solve(self._i_minus_g, self.boundary[self.n], trans=1)

  def level(self, i):
    if i <= self.n:
      return self.boundary[i]
    return self.boundary[self.n] @ np.linalg.matrix_power(self.g.g, i - self.n)

  @cached_property
  def needy_marginal(self):
    out = np.zeros(self.n + 1)
    for i in range(self.n):
      out[:i + 1] += self.boundary[i]
    out += self.tail_aggregate
    return out

  def total_mass(self):
    below = sum(compensated_sum(self.boundary[i]) for i in range(self.n))
    return below + compensated_sum(self.tail_aggregate)

  @property
  def p_census_full(self):
    return compensated_sum(self.tail_aggregate)

  def census_distribution(self, extra_levels=0):
    probs = [compensated_sum(self.boundary[i]) for i in range(self.n)]
    v = self.boundary[self.n]
    for _ in range(extra_levels + 1):
      probs.append(compensated_sum(v))
      v = v @ self.g.g
    return np.array(probs)

  def to_csv(self, fn=None, extra_levels=0):
    def rows():
      for i in range(self.n + extra_levels + 1):
        vec = self.level(i)
        for j, prob in enumerate(vec):
          yield i, j, float(prob)
    return write_csv(fn, ['level', 'j', 'prob'], rows(),
                     float_format=lambda v: f'{v:.16e}' if isinstance(v, float) else str(v))

def _boundary_matrix(blocks: QbdBlocks, g):
  n = blocks.n
  grid = [[None] * (n + 1) for _ in range(n + 1)]
  for i in range(n + 1):
    grid[i][i] = blocks.boundary_diag[i] if i < n else blocks.a1 + g @ blocks.a2
    if i < n:
      grid[i][i + 1] = blocks.boundary_up[i]
    if i > 0:
      grid[i][i - 1] = blocks.boundary_down[i - 1]
  offsets, _ = blocks.offsets(n)
  return sparse.bmat(grid, format='csr'), offsets

def stationary_holding(blocks: QbdBlocks, g: RateMatrixG, dense_limit=DENSE_BOUNDARY_LIMIT) -> HoldingDistribution:
  """Solve the boundary levels 0..n with one balance equation swapped for normalization."""
  n = blocks.n
  dim = (n + 1) * (n + 2) // 2
  fmt = 'dense' if dim <= dense_limit else 'sparse'
  mat, offsets = _boundary_matrix(blocks, g.g)

  norm = np.ones(dim)
  try:
    norm[offsets[n]:] = linalg.solve(np.eye(n + 1) - g.g, np.ones(n + 1))
  except linalg.LinAlgError as e:
    raise SingularSystem(f'I - G is singular: {e}')
  rhs = np.zeros(dim)
  rhs[0] = 1.0

  # x M = 0 is M^T x^T = 0; the first equation becomes the normalization
  if fmt == 'dense':
    system = mat.T.toarray()
    system[0, :] = norm
    try:
      x = linalg.solve(system, rhs)
    except linalg.LinAlgError as e:
      raise SingularSystem(f'boundary system is singular: {e}')
  else:
    system = mat.T.tolil()
    system[0, :] = norm
    x = spsolve(system.tocsc(), rhs)

  if not np.all(np.isfinite(x)):
    raise SingularSystem('boundary system produced non-finite probabilities')
  if np.min(x) < -1e-10:
    logger.warning('boundary solve produced negative mass %.3e; clipping', np.min(x))
  x = np.maximum(x, 0.0)
  boundary = [x[offsets[i]:offsets[i + 1]] for i in range(n + 1)]
  return HoldingDistribution(
    boundary=boundary, g=g, s=blocks.s, n=n, params=blocks.params,
    metadata={'boundary_solver': f'{fmt} LU', **g.metadata()},
  )

def perf_holding(dist: HoldingDistribution) -> PerformanceReport:
  s, n = dist.s, dist.n
  mu = dist.params.mu
  marginal = dist.needy_marginal
  j = np.arange(n + 1)
  delayed = j >= s

  p_delay = compensated_sum(marginal[delayed])
  e_wait = compensated_sum(marginal[delayed] * (j[delayed] - s + 1) / (s * mu))
  p_full = dist.p_census_full

  inv_one = linalg.lu_solve(dist._i_minus_g, np.ones(n + 1))
  inv2_one = linalg.lu_solve(dist._i_minus_g, inv_one)
  e_holding = float(dist.boundary[n] @ dist.g.g @ inv2_one)

  rho_s = compensated_sum(marginal * np.minimum(j, s)) / s
  census_below = compensated_sum([i * compensated_sum(dist.boundary[i]) for i in range(n)])
  rho_n = (census_below + n * p_full) / n

  return PerformanceReport(
    p_delay=min(max(p_delay, 0.0), 1.0),
    p_boundary=min(max(p_full, 0.0), 1.0),
    e_wait=max(e_wait, 0.0),
    e_holding_queue=max(e_holding, 0.0),
    rho_s=min(rho_s, 1.0),
    rho_n=min(rho_n, 1.0),
    metadata={'model': 'holding', 'arrival_theorem': False, **CONVENTIONS, **dist.metadata},
  )

def analyze_holding(params: ModelParams, cap: CapacityPair, scheme='functional', tol=G_TOL,
                    max_iter=G_MAX_ITER):
  blocks = build_qbd_blocks(params, cap)
  g = solve_rate_matrix(blocks, tol=tol, max_iter=max_iter, scheme=scheme)
  dist = stationary_holding(blocks, g)
  return dist, perf_holding(dist)
