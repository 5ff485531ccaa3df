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
from dataclasses import dataclass, field, asdict
from typing import Optional

from erlangr.libs.errors import DomainError

logger = logging.getLogger(__name__)

# Guards ceil/floor against representation noise such as 4.000000000000001.
ROUNDING_SLACK = 1e-9

ROUNDING_CONSERVATIVE = 'conservative'
ROUNDING_NEAREST = 'nearest'
ROUNDINGS = (ROUNDING_CONSERVATIVE, ROUNDING_NEAREST)

CONVENTIONS = {
  'scaling_denominator': 'sqrt(R1)',
  'server_rounding': 'ceil',
  'bed_rounding': 'floor',
  'wait_weight': '(j-s+1)/(s*mu)',
  'bed_utilization': 'E[min(N,n)]/n',
}

def _require_finite(name, value):
  if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
    raise DomainError(f'{name} must be a finite real, got {value!r}')

@dataclass(frozen=True)
class ModelParams:
  lam: float
  mu: float
  delta: float
  p: float

  def __post_init__(self):
    for name in ('lam', 'mu', 'delta', 'p'):
      value = getattr(self, name)
      _require_finite(name, value)
      object.__setattr__(self, name, float(value))
    if self.lam <= 0:
      raise DomainError(f'lambda must be positive, got {self.lam}')
    if self.mu <= 0:
      raise DomainError(f'mu must be positive, got {self.mu}')
    if self.delta <= 0:
      raise DomainError(f'delta must be positive, got {self.delta}')
    if self.p == 1.0:
      raise DomainError('p = 1 gives an infinite offered load')
    if not 0.0 <= self.p < 1.0:
      raise DomainError(f'p must lie in [0, 1), got {self.p}')

  @classmethod
  def from_mapping(cls, d):
    """Accepts either `lambda` or `lam` as the arrival-rate key."""
    lam = d['lambda'] if 'lambda' in d else d.get('lam')
    return cls(lam=lam, mu=d.get('mu'), delta=d.get('delta'), p=d.get('p'))

  def with_lambda(self, lam):
    return ModelParams(lam=lam, mu=self.mu, delta=self.delta, p=self.p)

  def to_dict(self):
    return {'lambda': self.lam, 'mu': self.mu, 'delta': self.delta, 'p': self.p}

@dataclass(frozen=True)
class DerivedLoads:
  r1: float
  r2: float
  r: float
  rho: Optional[float] = None

  @property
  def bed_load(self):
    return self.r1 + self.r2

  def to_dict(self):
    return asdict(self)

@dataclass(frozen=True)
class CapacityPair:
  s: int
  n: int

  def __post_init__(self):
    for name in ('s', 'n'):
      value = getattr(self, name)
      if isinstance(value, bool) or not float(value).is_integer():
        raise DomainError(f'{name} must be an integer, got {value!r}')
      object.__setattr__(self, name, int(value))
      if getattr(self, name) < 1:
        raise DomainError(f'{name} must be at least 1, got {value}')

  def to_dict(self):
    return {'s': self.s, 'n': self.n}

@dataclass(frozen=True)
class QedPair:
  beta: float
  gamma: float

  def __post_init__(self):
    _require_finite('beta', self.beta)
    _require_finite('gamma', self.gamma)
    object.__setattr__(self, 'beta', float(self.beta))
    object.__setattr__(self, 'gamma', float(self.gamma))

  def to_dict(self):
    return {'beta': self.beta, 'gamma': self.gamma}

@dataclass
class PerformanceReport:
  p_delay: float
  p_boundary: float
  e_wait: float
  e_holding_queue: float
  rho_s: float
  rho_n: float
  metadata: dict = field(default_factory=dict)

  MEASURES = ('p_delay', 'p_boundary', 'e_wait', 'e_holding_queue', 'rho_s', 'rho_n')

  def measures(self):
    return {k: getattr(self, k) for k in self.MEASURES}

  def to_dict(self):
    return {**self.measures(), 'metadata': dict(self.metadata)}

def derive_loads(params: ModelParams, s: Optional[int] = None) -> DerivedLoads:
  if params.p >= 1.0:
    raise DomainError('p = 1 gives an infinite offered load')
  r1 = params.lam / ((1.0 - params.p) * params.mu)
  r2 = params.p * params.lam / ((1.0 - params.p) * params.delta)
  r = params.delta / (params.delta + params.p * params.mu)
  rho = r1 / s if s is not None else None
  return DerivedLoads(r1=r1, r2=r2, r=r, rho=rho)

def _check_loads(r1, r):
  if not (math.isfinite(r1) and r1 > 0):
    raise DomainError(f'R1 must be positive, got {r1}')
  if not (0.0 < r <= 1.0):
    raise DomainError(f'r must lie in (0, 1], got {r}')

def square_root_capacity(load_servers, load_beds, pair: QedPair, rounding=ROUNDING_CONSERVATIVE) -> CapacityPair:
  """Two-fold square-root rule, both capacities at least 1.

  'conservative' takes s = ceil(R + beta*sqrt(R)) and n = floor(B + gamma*sqrt(B));
  'nearest' rounds both half up, which is how the accuracy tables are laid out.
  """
  servers = load_servers + pair.beta * math.sqrt(load_servers)
  beds = load_beds + pair.gamma * math.sqrt(load_beds)
  if rounding == ROUNDING_CONSERVATIVE:
    s = math.ceil(servers - ROUNDING_SLACK)
    n = math.floor(beds + ROUNDING_SLACK)
  elif rounding == ROUNDING_NEAREST:
    s = math.floor(servers + 0.5 + ROUNDING_SLACK)
    n = math.floor(beds + 0.5 + ROUNDING_SLACK)
  else:
    raise DomainError(f'unknown rounding "{rounding}"; expected one of {ROUNDINGS}')
  return CapacityPair(s=max(s, 1), n=max(n, 1))

def qed_capacity(r1, r, pair: QedPair, rounding=ROUNDING_CONSERVATIVE) -> CapacityPair:
  _check_loads(r1, r)
  return square_root_capacity(r1, r1 / r, pair, rounding)

def invert_capacity(cap: CapacityPair, r1, r) -> QedPair:
  _check_loads(r1, r)
  bed_load = r1 / r
  return QedPair(
    beta=(cap.s - r1) / math.sqrt(r1),
    gamma=(cap.n - bed_load) / math.sqrt(bed_load),
  )

def warn_if_servers_exceed_beds(cap: CapacityPair):
  if cap.s > cap.n:
    logger.warning('s=%d exceeds n=%d; at most n servers can ever be busy', cap.s, cap.n)
    return True
  return False
