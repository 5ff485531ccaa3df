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
from scipy import integrate

from erlangr.core_model import ModelParams, QedPair, square_root_capacity
from erlangr.libs.config_loader import CFG
from erlangr.libs.errors import DomainError, ScheduleGap
from erlangr.libs.utils import write_csv

logger = logging.getLogger(__name__)

WARMUP_PERIODS = 3
MAX_WARMUP_PERIODS = 50
PERIODIC_TOL = 1e-10
DEFAULT_INTERVAL = 0.5
DEFAULT_STEP = 0.001
CASE_STUDY_PROFILE = 'case_study_profile.json'

@dataclass
class ArrivalProfile:
  """Piecewise-linear arrival rate; a periodic profile wraps from its last breakpoint to the first."""
  breakpoints: np.ndarray
  rates: np.ndarray
  period: Optional[float] = None

  def __post_init__(self):
    self.breakpoints = np.asarray(self.breakpoints, dtype=float)
    self.rates = np.asarray(self.rates, dtype=float)
    if self.breakpoints.ndim != 1 or self.breakpoints.shape != self.rates.shape or len(self.breakpoints) < 1:
      raise DomainError('breakpoints and rates must be equally long, non-empty lists')
    if np.any(np.diff(self.breakpoints) <= 0):
      raise DomainError('breakpoints must be strictly ascending')
    if np.any(self.rates < 0) or not np.all(np.isfinite(self.rates)):
      raise DomainError('rates must be finite and nonnegative')
    if self.period is not None:
      self.period = float(self.period)
      if self.period <= 0 or self.breakpoints[0] < 0 or self.breakpoints[-1] >= self.breakpoints[0] + self.period:
        raise DomainError('a periodic profile needs breakpoints inside one period')
      # knots for one full cycle, closed by the wrap segment
      self._knots = np.append(self.breakpoints, self.breakpoints[0] + self.period)
      self._values = np.append(self.rates, self.rates[0])

  @classmethod
  def constant(cls, lam, period=24.0):
    return cls(breakpoints=[0.0], rates=[lam], period=period)

  @classmethod
  def from_mapping(cls, d):
    return cls(breakpoints=d['breakpoints'], rates=d['rates'], period=d.get('period'))

  @classmethod
  def load(cls, fn):
    return cls.from_mapping(CFG.load_config(fn, schema='profile'))

  @classmethod
  def case_study(cls):
    """Illustrative daily ED arrival pattern, hourly resolution, period 24 hours."""
    return cls.load(CFG.data_path(CASE_STUDY_PROFILE))

  def to_dict(self):
    return {'breakpoints': self.breakpoints.tolist(), 'rates': self.rates.tolist(), 'period': self.period}

  def scaled(self, factor):
    return ArrivalProfile(self.breakpoints, self.rates * factor, self.period)

  @property
  def start(self):
    return float(self.breakpoints[0])

  def covers(self, t):
    return self.period is not None or t <= self.breakpoints[-1] + 1e-12

  def rate(self, t):
    t = np.asarray(t, dtype=float)
    if self.period is None:
      if np.any(t < self.breakpoints[0] - 1e-12) or np.any(t > self.breakpoints[-1] + 1e-12):
        raise ScheduleGap(f'arrival profile defined on [{self.breakpoints[0]}, {self.breakpoints[-1]}] only')
      return np.interp(t, self.breakpoints, self.rates)
    phase = self.breakpoints[0] + np.mod(t - self.breakpoints[0], self.period)
    return np.interp(phase, self._knots, self._values)

  @property
  def max_rate(self):
    return float(np.max(self.rates))

  @property
  def mean_rate(self):
    if self.period is not None:
      return float(integrate.trapezoid(self._values, self._knots) / self.period)
    if len(self.breakpoints) == 1:
      return float(self.rates[0])
    span = self.breakpoints[-1] - self.breakpoints[0]
    return float(integrate.trapezoid(self.rates, self.breakpoints) / span)

@dataclass
class LoadTrajectory:
  grid: np.ndarray
  r1_t: np.ndarray
  r2_t: np.ndarray
  step: float = DEFAULT_STEP

  def at(self, t):
    t = np.asarray(t, dtype=float)
    return np.interp(t, self.grid, self.r1_t), np.interp(t, self.grid, self.r2_t)

  @property
  def bed_load(self):
    return self.r1_t + self.r2_t

  def to_csv(self, fn=None, every=1):
    idx = range(0, len(self.grid), every)
    return write_csv(fn, ['t', 'r1', 'r2', 'r1_plus_r2'],
                     ((self.grid[i], self.r1_t[i], self.r2_t[i], self.r1_t[i] + self.r2_t[i]) for i in idx))

def _rhs(t, y, profile: ArrivalProfile, params: ModelParams):
  r1, r2 = y
  lam = float(profile.rate(t))
  return np.array([
    lam + params.delta * r2 - params.mu * r1,
    params.p * params.mu * r1 - params.delta * r2,
  ])

def _rk4(profile, params, y0, t0, t1, step):
  steps = max(int(round((t1 - t0) / step)), 1)
  h = (t1 - t0) / steps
  grid = t0 + h * np.arange(steps + 1)
  out = np.empty((steps + 1, 2))
  y = np.asarray(y0, dtype=float)
  out[0] = y
  for k in range(steps):
    t = grid[k]
    k1 = _rhs(t, y, profile, params)
    k2 = _rhs(t + 0.5 * h, y + 0.5 * h * k1, profile, params)
    k3 = _rhs(t + 0.5 * h, y + 0.5 * h * k2, profile, params)
    k4 = _rhs(t + h, y + h * k3, profile, params)
    y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[k + 1] = y
  return grid, out

def stationary_loads(lam, params: ModelParams):
  q = 1.0 - params.p
  return np.array([lam / (q * params.mu), params.p * lam / (q * params.delta)])

def _periodic_start(profile: ArrivalProfile, params: ModelParams, t0, step):
  if profile.period is None:
    return stationary_loads(float(profile.rate(t0)), params)
  y = stationary_loads(profile.mean_rate, params)
  for cycle in range(1, MAX_WARMUP_PERIODS + 1):
    _, path = _rk4(profile, params, y, t0, t0 + profile.period, step)
    drift = float(np.max(np.abs(path[-1] - y)))
    y = path[-1]
    if cycle >= WARMUP_PERIODS and drift < PERIODIC_TOL:
      break
  else:
    logger.warning('periodic warm start still drifting by %.3e after %d periods', drift, MAX_WARMUP_PERIODS)
  return y

def integrate_offered_load(profile: ArrivalProfile, params: ModelParams, horizon, step=DEFAULT_STEP,
                           t0=None) -> LoadTrajectory:
  """Fixed-step RK4 solution of dR1/dt = lam(t) + delta R2 - mu R1, dR2/dt = p mu R1 - delta R2.

  Starts from the periodic steady state of a periodic profile, else from the stationary
  loads at the first rate.
  """
  if not step > 0:
    raise DomainError(f'step must be positive, got {step}')
  t0 = profile.start if t0 is None else float(t0)
  if not profile.covers(t0 + horizon):
    raise ScheduleGap(f'arrival profile does not cover [{t0}, {t0 + horizon}]')
  y0 = _periodic_start(profile, params, t0, step)
  grid, path = _rk4(profile, params, y0, t0, t0 + horizon, step)
  return LoadTrajectory(grid=grid, r1_t=np.maximum(path[:, 0], 0.0), r2_t=np.maximum(path[:, 1], 0.0), step=step)

@dataclass
class StaffingSchedule:
  interval: float
  t_start: np.ndarray
  s_t: np.ndarray
  n_t: np.ndarray
  pair: QedPair
  period: Optional[float] = None
  metadata: dict = field(default_factory=dict)

  @classmethod
  def constant(cls, s, n, horizon, interval=DEFAULT_INTERVAL, pair=None):
    count = max(int(math.ceil(horizon / interval - 1e-9)), 1)
    return cls(
      interval=interval, t_start=interval * np.arange(count),
      s_t=np.full(count, int(s)), n_t=np.full(count, int(n)),
      pair=pair or QedPair(0.0, 0.0),
    )

  @classmethod
  def from_mapping(cls, d):
    rows = d['intervals']
    return cls(
      interval=float(d['interval']),
      t_start=np.array([row['t_start'] for row in rows], dtype=float),
      s_t=np.array([row['s'] for row in rows], dtype=int),
      n_t=np.array([row['n'] for row in rows], dtype=int),
      pair=QedPair(d.get('beta', 0.0), d.get('gamma', 0.0)),
      period=d.get('period'),
    )

  @property
  def t_end(self):
    return self.t_start + self.interval

  @property
  def span(self):
    return float(self.t_end[-1] - self.t_start[0])

  def covers(self, t_end):
    return self.period is not None or t_end <= self.t_end[-1] + 1e-9

  def index_at(self, t):
    if self.period is not None:
      t = self.t_start[0] + math.fmod(t - self.t_start[0], self.period)
    idx = int(math.floor((t - self.t_start[0]) / self.interval + 1e-12))
    if idx < 0 or idx >= len(self.t_start):
      raise ScheduleGap(f'no staffing defined at t={t}')
    return idx

  def capacity_at(self, t):
    idx = self.index_at(t)
    return int(self.s_t[idx]), int(self.n_t[idx])

  def next_change(self, t):
    """First interval boundary strictly after t."""
    base = self.t_start[0]
    k = math.floor((t - base) / self.interval + 1e-12) + 1
    return base + k * self.interval

  def to_dict(self):
    return {
      'interval': self.interval,
      'beta': self.pair.beta,
      'gamma': self.pair.gamma,
      'period': self.period,
      'intervals': [
        {'t_start': float(a), 't_end': float(b), 's': int(s), 'n': int(n)}
        for a, b, s, n in zip(self.t_start, self.t_end, self.s_t, self.n_t)
      ],
      'metadata': dict(self.metadata),
    }

  def to_csv(self, fn=None):
    return write_csv(fn, ['t_start', 't_end', 's', 'n'],
                     zip(self.t_start, self.t_end, self.s_t.tolist(), self.n_t.tolist()))

def mol_schedule(traj: LoadTrajectory, pair: QedPair, interval=DEFAULT_INTERVAL, period=None) -> StaffingSchedule:
  """s(t) = R1 + beta sqrt(R1) and n(t) = R1+R2 + gamma sqrt(R1+R2) at each interval midpoint."""
  if not interval > 0:
    raise DomainError(f'interval must be positive, got {interval}')
  t0, t1 = float(traj.grid[0]), float(traj.grid[-1])
  count = int(math.floor((t1 - t0) / interval + 1e-9))
  if count < 1:
    raise DomainError(f'trajectory span {t1 - t0} is shorter than one interval {interval}')
  starts = t0 + interval * np.arange(count)
  r1, r2 = traj.at(starts + 0.5 * interval)
  s_t = np.empty(count, dtype=int)
  n_t = np.empty(count, dtype=int)
  for k in range(count):
    cap = square_root_capacity(float(r1[k]), float(r1[k] + r2[k]), pair)
    s_t[k], n_t[k] = cap.s, cap.n
  return StaffingSchedule(
    interval=interval, t_start=starts, s_t=s_t, n_t=n_t, pair=pair, period=period,
    metadata={'evaluation_point': 'interval midpoint', 'server_rounding': 'ceil', 'bed_rounding': 'floor'},
  )

def mol_staffing(profile: ArrivalProfile, params: ModelParams, pair: QedPair, interval=DEFAULT_INTERVAL,
                 horizon=None, step=DEFAULT_STEP):
  """Offered-load trajectory and schedule over one period (or the given horizon)."""
  if horizon is None:
    if profile.period is not None:
      horizon = profile.period
    else:
      horizon = float(profile.breakpoints[-1] - profile.breakpoints[0])
  traj = integrate_offered_load(profile, params, horizon, step)
  schedule = mol_schedule(traj, pair, interval, period=profile.period if horizon == profile.period else None)
  return traj, schedule
