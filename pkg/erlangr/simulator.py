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

"""Exponential-race simulation of the blocking, holding and closed-ward models.

Every replication owns a counter-based Philox stream keyed by (seed, replication),
so replications are reproducible one by one and can run in any process.
"""
import math
import logging
import multiprocessing
from collections import deque
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy import stats

from erlangr.core_model import ModelParams, CapacityPair, PerformanceReport, derive_loads
from erlangr.holding_qbd import rho_max, closed_ward_distribution
from erlangr.mol_staffing import ArrivalProfile, StaffingSchedule
from erlangr.libs.errors import DomainError, ScheduleGap
from erlangr.libs.utils import write_csv

logger = logging.getLogger(__name__)

MODELS = ('blocking', 'holding', 'closed_ward')
WARMUP_FRACTION = 0.2
DEFAULT_BATCHES = 30
CONFIDENCE = 0.95
_CHUNK = 1 << 14

# time-integrated quantities, per cell
T_DUR, T_DELAY, T_HOLD, T_BUSY, T_BEDS, T_Q1, T_QUEUE, T_CENSUS, T_PER_NURSE = range(9)
N_TIME = 9
# event counts, per cell
C_ARR, C_BOUND, C_REQ, C_DELAYED, C_STARTS, C_WAIT = range(6)
N_COUNT = 6

@dataclass
class SimConfig:
  horizon: float
  warmup: Optional[float] = None
  replications: int = 1
  seed: int = 0
  model: str = 'holding'
  record_paths: bool = False
  batches: int = DEFAULT_BATCHES
  bin_width: Optional[float] = None
  workers: int = 1

  def __post_init__(self):
    if self.model not in MODELS:
      raise DomainError(f'unknown model "{self.model}", expected one of {MODELS}')
    if not self.horizon > 0:
      raise DomainError(f'horizon must be positive, got {self.horizon}')
    if self.warmup is None:
      self.warmup = WARMUP_FRACTION * self.horizon
    if not 0 <= self.warmup < self.horizon:
      raise DomainError(f'warmup {self.warmup} must lie in [0, horizon={self.horizon})')
    if int(self.replications) < 1:
      raise DomainError(f'replications must be at least 1, got {self.replications}')
    if int(self.batches) < 2:
      raise DomainError(f'batches must be at least 2, got {self.batches}')
    if self.bin_width is not None and not self.bin_width > 0:
      raise DomainError(f'bin_width must be positive, got {self.bin_width}')
    self.replications = int(self.replications)
    self.batches = int(self.batches)
    self.workers = max(int(self.workers), 1)
    self.seed = int(self.seed)

  @classmethod
  def from_mapping(cls, d, model=None):
    known = {k: d[k] for k in cls.__dataclass_fields__ if k in d and d[k] is not None}
    if model is not None:
      known['model'] = model
    return cls(**known)

  def with_model(self, model):
    return SimConfig(**{**asdict(self), 'model': model})

  def to_dict(self):
    return asdict(self)

class RandomStream:
  """Buffered draws from a Philox generator dedicated to one replication."""

  def __init__(self, seed, replication, p):
    seq = np.random.SeedSequence(seed, spawn_key=(replication,))
    self.rng = np.random.Generator(np.random.Philox(seq))
    self.success = 1.0 - p
    self._exp, self._i_exp = [], 0
    self._uni, self._i_uni = [], 0
    self._geo, self._i_geo = [], 0

  def exponential(self):
    if self._i_exp >= len(self._exp):
      self._exp, self._i_exp = self.rng.standard_exponential(_CHUNK).tolist(), 0
    self._i_exp += 1
    return self._exp[self._i_exp - 1]

  def uniform(self):
    if self._i_uni >= len(self._uni):
      self._uni, self._i_uni = self.rng.random(_CHUNK).tolist(), 0
    self._i_uni += 1
    return self._uni[self._i_uni - 1]

  def visits(self):
    """Total number of needy visits, Geometric(1-p) on {1, 2, ...}."""
    if self._i_geo >= len(self._geo):
      self._geo, self._i_geo = self.rng.geometric(self.success, _CHUNK).tolist(), 0
    self._i_geo += 1
    return self._geo[self._i_geo - 1]

class Patient:
  __slots__ = ('pid', 'arrived', 'admitted', 'visits', 'visits_left', 'needy_wait', 'queued_at')

  def __init__(self, pid, arrived, visits):
    self.pid = pid
    self.arrived = arrived
    self.admitted = None
    self.visits = visits
    self.visits_left = visits
    self.needy_wait = 0.0
    self.queued_at = arrived

@dataclass
class _Scenario:
  params: ModelParams
  model: str
  cap: Optional[CapacityPair] = None
  schedule: Optional[StaffingSchedule] = None
  profile: Optional[ArrivalProfile] = None
  bin_width: Optional[float] = None
  bin_period: Optional[float] = None

  def capacity_bound(self):
    if self.schedule is None:
      return self.cap.n
    return int(np.max(self.schedule.n_t))

class _Ward:
  """One replication: state, event handlers and accumulators."""

  def __init__(self, sc: _Scenario, cfg: SimConfig, replication):
    self.sc = sc
    self.model = sc.model
    self.mu, self.delta = sc.params.mu, sc.params.delta
    self.rand = RandomStream(cfg.seed, replication, sc.params.p)
    self.horizon, self.warmup = float(cfg.horizon), float(cfg.warmup)
    self.batches = cfg.batches
    self.batch_len = (self.horizon - self.warmup) / cfg.batches
    self.record = cfg.record_paths

    if sc.schedule is None:
      self.s, self.n = sc.cap.s, sc.cap.n
      self.next_change = math.inf
    else:
      self.s, self.n = sc.schedule.capacity_at(0.0)
      self.next_change = sc.schedule.next_change(0.0)
    if self.model == 'closed_ward':
      self.lam_max = 0.0
    elif sc.profile is None:
      self.lam_max = sc.params.lam
    else:
      self.lam_max = sc.profile.max_rate
    self.profile = sc.profile

    self.in_service, self.content = [], []
    self.queue, self.holding = deque(), deque()
    self.arrived = self.admitted = self.departed = self.rejected = 0
    self.next_pid = 0
    self.t = 0.0

    self.batch_time = [[0.0] * N_TIME for _ in range(self.batches)]
    self.batch_count = [[0.0] * N_COUNT for _ in range(self.batches)]
    self.batch_k = 0
    self.batch_edge = self.warmup + self.batch_len

    self.bin_width = sc.bin_width
    if self.bin_width is not None:
      span = sc.bin_period if sc.bin_period is not None else self.horizon
      self.n_bins = int(math.ceil(span / self.bin_width - 1e-9))
      self.bin_time = [[0.0] * N_TIME for _ in range(self.n_bins)]
      self.bin_count = [[0.0] * N_COUNT for _ in range(self.n_bins)]
      self.bin_abs = int(math.floor(self.warmup / self.bin_width + 1e-12))
      self.bin_edge = (self.bin_abs + 1) * self.bin_width

    size = sc.capacity_bound() + 1
    self.hist_census = [0.0] * size
    self.hist_q1 = [0.0] * size
    self.visit_counts = {}
    self.strata = {}
    self.events = [] if self.record else None
    self.paths = [] if self.record else None
    self.sample_every = self.bin_width or self.horizon / 2000.0
    self.next_sample = 0.0

  # -- bookkeeping -----------------------------------------------------------

  def _bin_index(self):
    if self.sc.bin_period is None:
      return min(self.bin_abs, self.n_bins - 1)
    return self.bin_abs % self.n_bins

  def _refresh(self):
    busy = len(self.in_service)
    queued = len(self.queue)
    q1 = busy + queued
    census = q1 + len(self.content)
    self.q1, self.census = q1, census
    self.state = (
      1.0 if q1 >= self.s else 0.0,
      len(self.holding),
      busy / self.s,
      min(census, self.n) / self.n,
      q1,
      queued,
      census,
      census / self.s,
    )

  @staticmethod
  def _add_time(row, dt, st):
    row[T_DUR] += dt
    row[T_DELAY] += dt * st[0]
    row[T_HOLD] += dt * st[1]
    row[T_BUSY] += dt * st[2]
    row[T_BEDS] += dt * st[3]
    row[T_Q1] += dt * st[4]
    row[T_QUEUE] += dt * st[5]
    row[T_CENSUS] += dt * st[6]
    row[T_PER_NURSE] += dt * st[7]

  def _integrate(self, t_end):
    t = self.t
    while t < t_end:
      if t < self.warmup:
        t = min(t_end, self.warmup)
        continue
      seg_end = t_end
      if self.batch_k < self.batches - 1 and seg_end > self.batch_edge:
        seg_end = self.batch_edge
      if self.bin_width is not None and seg_end > self.bin_edge:
        seg_end = self.bin_edge
      dt = seg_end - t
      self._add_time(self.batch_time[self.batch_k], dt, self.state)
      if self.bin_width is not None:
        self._add_time(self.bin_time[self._bin_index()], dt, self.state)
      self.hist_census[self.census] += dt
      self.hist_q1[self.q1] += dt
      t = seg_end
      if self.batch_k < self.batches - 1 and t >= self.batch_edge:
        self.batch_k += 1
        self.batch_edge = self.warmup + (self.batch_k + 1) * self.batch_len
      if self.bin_width is not None and t >= self.bin_edge:
        self.bin_abs += 1
        self.bin_edge = (self.bin_abs + 1) * self.bin_width
    self.t = t_end

  def _count(self, idx, amount=1.0):
    if self.t < self.warmup:
      return
    self.batch_count[self.batch_k][idx] += amount
    if self.bin_width is not None:
      self.bin_count[self._bin_index()][idx] += amount

  def _log(self, patient, event):
    if self.events is not None:
      self.events.append((patient.pid, event, self.t))

  def _sample_paths(self, t_end):
    while self.next_sample <= t_end and self.next_sample <= self.horizon:
      self.paths.append((self.next_sample, self.state[1], self.q1, self.census))
      self.next_sample += self.sample_every

  def _new_patient(self):
    patient = Patient(self.next_pid, self.t, self.rand.visits())
    self.next_pid += 1
    if self.t >= self.warmup:
      self.visit_counts[patient.visits] = self.visit_counts.get(patient.visits, 0) + 1
    return patient

  # -- event handlers --------------------------------------------------------

  def _request(self, patient):
    self._count(C_REQ)
    if len(self.in_service) < self.s:
      self._start(patient, 0.0)
    else:
      self._count(C_DELAYED)
      patient.queued_at = self.t
      self.queue.append(patient)

  def _start(self, patient, wait):
    self.in_service.append(patient)
    patient.needy_wait += wait
    self._count(C_STARTS)
    self._count(C_WAIT, wait)
    self._log(patient, 'service_start')

  def _admit(self, patient):
    patient.admitted = self.t
    self.admitted += 1
    census = len(self.in_service) + len(self.queue) + len(self.content) + 1
    if census > self.n:
      raise RuntimeError(f'census {census} exceeds bed capacity n={self.n} at t={self.t}')
    self._log(patient, 'admit')
    self._request(patient)

  def _arrival(self):
    patient = self._new_patient()
    self.arrived += 1
    self._count(C_ARR)
    self._log(patient, 'arrive')
    census = len(self.in_service) + len(self.queue) + len(self.content)
    if census >= self.n:
      self._count(C_BOUND)
      if self.model == 'blocking':
        self.rejected += 1
        self._log(patient, 'block')
      else:
        self.holding.append(patient)
        self._log(patient, 'hold')
      return
    self._admit(patient)

  def _serve_queue(self):
    while self.queue and len(self.in_service) < self.s:
      patient = self.queue.popleft()
      self._start(patient, self.t - patient.queued_at)

  def _fill_beds(self):
    while self.holding and len(self.in_service) + len(self.queue) + len(self.content) < self.n:
      self._admit(self.holding.popleft())

  def _service_end(self, idx):
    busy = self.in_service
    idx = min(idx, len(busy) - 1)
    patient = busy[idx]
    busy[idx] = busy[-1]
    busy.pop()
    self._log(patient, 'service_end')
    self._serve_queue()
    patient.visits_left -= 1
    if patient.visits_left > 0:
      self.content.append(patient)
    else:
      self._depart(patient)

  def _content_end(self, idx):
    content = self.content
    idx = min(idx, len(content) - 1)
    patient = content[idx]
    content[idx] = content[-1]
    content.pop()
    self._log(patient, 'content_end')
    self._request(patient)

  def _depart(self, patient):
    self.departed += 1
    self._log(patient, 'depart')
    if self.record and patient.arrived >= self.warmup:
      hold_wait = patient.admitted - patient.arrived
      row = self.strata.setdefault(patient.visits, [0, 0.0, 0.0, 0.0])
      row[0] += 1
      row[1] += hold_wait
      row[2] += patient.needy_wait
      row[3] += hold_wait + patient.needy_wait
    if self.model == 'holding':
      self._fill_beds()
    elif self.model == 'closed_ward':
      self._admit(self._new_patient())

  def _apply_capacity(self):
    self.s, self.n = self.sc.schedule.capacity_at(self.t)
    self.next_change = self.sc.schedule.next_change(self.t)
    # servers above the new s finish their current patient before withdrawing
    self._serve_queue()
    if self.model == 'holding':
      self._fill_beds()

  # -- main loop -------------------------------------------------------------

  def run(self):
    if self.model == 'closed_ward':
      for _ in range(self.n):
        self._admit(self._new_patient())
    self._refresh()
    rand = self.rand
    mu, delta, lam_max = self.mu, self.delta, self.lam_max
    while True:
      busy = len(self.in_service)
      total = lam_max + busy * mu + len(self.content) * delta
      t_next = self.t + rand.exponential() / total if total > 0 else math.inf
      stop = min(self.next_change, self.horizon)
      if t_next >= stop:
        if self.paths is not None:
          self._sample_paths(stop)
        self._integrate(stop)
        if stop >= self.horizon:
          break
        self._apply_capacity()
        self._refresh()
        continue
      if self.paths is not None:
        self._sample_paths(t_next)
      self._integrate(t_next)
      u = rand.uniform() * total
      if u < lam_max:
        # u is uniform on [0, lam_max) here, so it doubles as the thinning draw
        if self.profile is not None and u > float(self.profile.rate(self.t)):
          continue
        self._arrival()
      elif u < lam_max + busy * mu:
        self._service_end(int((u - lam_max) / mu))
      else:
        self._content_end(int((u - lam_max - busy * mu) / delta))
      self._refresh()
    return self._summary()

  def _summary(self):
    in_system = len(self.in_service) + len(self.queue) + len(self.content)
    if self.admitted != self.departed + in_system:
      raise RuntimeError(f'flow mismatch: admitted {self.admitted} != departed {self.departed} + in system {in_system}')
    if self.model != 'closed_ward' and self.arrived != self.rejected + self.admitted + len(self.holding):
      raise RuntimeError('flow mismatch: arrivals are not all accounted for')
    out = {
      'batch_time': self.batch_time,
      'batch_count': self.batch_count,
      'hist_census': self.hist_census,
      'hist_q1': self.hist_q1,
      'visit_counts': self.visit_counts,
      'strata': self.strata,
      'flow': {
        'arrived': self.arrived, 'admitted': self.admitted, 'departed': self.departed,
        'rejected': self.rejected, 'in_system': in_system, 'holding': len(self.holding),
      },
      'events': self.events,
      'paths': self.paths,
    }
    if self.bin_width is not None:
      out['bin_time'] = self.bin_time
      out['bin_count'] = self.bin_count
    return out

def _run_replication(task):
  scenario, cfg, replication = task
  logger.info('replication %d of %s started', replication, scenario.model)
  result = _Ward(scenario, cfg, replication).run()
  logger.info('replication %d of %s finished', replication, scenario.model)
  return result

# ---------------------------------------------------------------------------
# Estimation

ESTIMATES = (
  'p_delay', 'p_delay_customer', 'p_boundary', 'e_wait', 'e_holding_queue', 'rho_s', 'rho_n',
  'mean_q1', 'mean_needy_queue', 'mean_census', 'needy_throughput', 'patients_per_nurse',
)

def _ratio(num, den):
  return num / den if den > 0 else math.nan

def _metrics(time_row, count_row):
  dur = time_row[T_DUR]
  return {
    'p_delay': _ratio(time_row[T_DELAY], dur),
    'p_delay_customer': _ratio(count_row[C_DELAYED], count_row[C_REQ]),
    'p_boundary': _ratio(count_row[C_BOUND], count_row[C_ARR]),
    'e_wait': _ratio(count_row[C_WAIT], count_row[C_STARTS]),
    'e_holding_queue': _ratio(time_row[T_HOLD], dur),
    'rho_s': _ratio(time_row[T_BUSY], dur),
    'rho_n': _ratio(time_row[T_BEDS], dur),
    'mean_q1': _ratio(time_row[T_Q1], dur),
    'mean_needy_queue': _ratio(time_row[T_QUEUE], dur),
    'mean_census': _ratio(time_row[T_CENSUS], dur),
    'needy_throughput': _ratio(count_row[C_STARTS], dur),
    'patients_per_nurse': _ratio(time_row[T_PER_NURSE], dur),
  }

@dataclass
class Estimate:
  mean: float
  half_width: float
  std_error: float
  samples: int

  def to_dict(self):
    return asdict(self)

def _estimate(values):
  values = np.asarray([v for v in values if not math.isnan(v)], dtype=float)
  m = len(values)
  if m == 0:
    return Estimate(math.nan, math.nan, math.nan, 0)
  mean = float(np.mean(values))
  if m < 2:
    return Estimate(mean, math.nan, math.nan, m)
  se = float(np.std(values, ddof=1) / math.sqrt(m))
  return Estimate(mean, float(stats.t.ppf(0.5 + CONFIDENCE / 2, m - 1) * se), se, m)

def _sum_rows(rows):
  return [math.fsum(col) for col in zip(*rows)]

def visit_chisquare(visit_counts, p):
  """Chi-square test of realized visit counts against Geometric(1-p); None when p = 0."""
  total = sum(visit_counts.values())
  if p == 0.0 or total * p < 5 or total * (1.0 - p) < 5:
    return None
  # last category pools the tail; every expected count stays >= 5
  k_max = 1
  while total * (1.0 - p) * p ** k_max >= 5 and total * p ** (k_max + 1) >= 5:
    k_max += 1
  observed = [visit_counts.get(k, 0) for k in range(1, k_max + 1)]
  observed.append(total - sum(observed))
  probs = [(1.0 - p) * p ** (k - 1) for k in range(1, k_max + 1)]
  probs.append(p ** k_max)
  expected = np.array(probs) * total
  result = stats.chisquare(np.array(observed, dtype=float), expected)
  return {'statistic': float(result.statistic), 'p_value': float(result.pvalue), 'categories': len(observed)}

@dataclass
class SimResult:
  model: str
  estimates: dict
  histograms: dict
  flow: dict
  visit_strata: list = field(default_factory=list)
  visit_chisquare: Optional[dict] = None
  time_series: list = field(default_factory=list)
  sample_paths: list = field(default_factory=list)
  event_log: list = field(default_factory=list)
  metadata: dict = field(default_factory=dict)

  def __getitem__(self, name):
    return self.estimates[name]

  def tail(self, which='census'):
    """P(X >= k) for k = 0, 1, ... from the time-weighted histogram."""
    probs = np.asarray(self.histograms[which], dtype=float)
    return np.cumsum(probs[::-1])[::-1]

  def report(self):
    est = self.estimates
    return PerformanceReport(
      p_delay=est['p_delay'].mean, p_boundary=est['p_boundary'].mean, e_wait=est['e_wait'].mean,
      e_holding_queue=est['e_holding_queue'].mean, rho_s=est['rho_s'].mean, rho_n=est['rho_n'].mean,
      metadata={'model': self.model, 'source': 'simulation'},
    )

  def to_dict(self):
    return {
      'model': self.model,
      'estimates': {k: v.to_dict() for k, v in self.estimates.items()},
      'histograms': self.histograms,
      'flow': self.flow,
      'visit_strata': self.visit_strata,
      'visit_chisquare': self.visit_chisquare,
      'time_series': self.time_series,
      'metadata': self.metadata,
    }

  def time_series_csv(self, fn=None):
    rows = []
    for row in self.time_series:
      for metric, value in row.items():
        if metric not in ('t_start', 't_end'):
          rows.append((row['t_start'], metric, value))
    return write_csv(fn, ['t', 'metric', 'value'], rows)

  def event_log_csv(self, fn=None):
    return write_csv(fn, ['patient_id', 'event', 't'], self.event_log)

  def sample_paths_csv(self, fn=None):
    return write_csv(fn, ['t', 'holding', 'q1', 'q1_plus_q2'], self.sample_paths)

def _combine(scenario: _Scenario, cfg: SimConfig, runs):
  if cfg.replications == 1:
    run = runs[0]
    per_sample = [_metrics(t, c) for t, c in zip(run['batch_time'], run['batch_count'])]
    method = f'batch means ({cfg.batches} batches)'
  else:
    per_sample = [_metrics(_sum_rows(r['batch_time']), _sum_rows(r['batch_count'])) for r in runs]
    method = f'independent replications ({cfg.replications})'
  estimates = {name: _estimate([m[name] for m in per_sample]) for name in ESTIMATES}

  hist = {}
  for which in ('census', 'q1'):
    total = np.sum([r[f'hist_{which}'] for r in runs], axis=0)
    hist[which] = (total / total.sum()).tolist() if total.sum() > 0 else total.tolist()

  flow = {k: int(sum(r['flow'][k] for r in runs)) for k in runs[0]['flow']}

  visit_counts = {}
  for r in runs:
    for k, v in r['visit_counts'].items():
      visit_counts[k] = visit_counts.get(k, 0) + v

  strata = []
  if cfg.record_paths:
    merged = {}
    for r in runs:
      for k, row in r['strata'].items():
        acc = merged.setdefault(k, [0, 0.0, 0.0, 0.0])
        for i in range(4):
          acc[i] += row[i]
    for k in sorted(merged):
      count, hold, needy, total = merged[k]
      strata.append({
        'visits': int(k), 'patients': int(count),
        'mean_holding_wait': hold / count, 'mean_needy_wait': needy / count, 'mean_total_wait': total / count,
      })

  series = []
  if scenario.bin_width is not None:
    width = scenario.bin_width
    n_bins = len(runs[0]['bin_time'])
    for b in range(n_bins):
      time_row = _sum_rows([r['bin_time'][b] for r in runs])
      count_row = _sum_rows([r['bin_count'][b] for r in runs])
      if time_row[T_DUR] <= 0:
        continue
      m = _metrics(time_row, count_row)
      series.append({
        't_start': b * width, 't_end': (b + 1) * width,
        'p_delay': m['p_delay'], 'p_delay_customer': m['p_delay_customer'], 'p_boundary': m['p_boundary'],
        'patients_per_nurse': m['patients_per_nurse'], 'mean_holding': m['e_holding_queue'],
        'mean_q1': m['mean_q1'], 'mean_census': m['mean_census'],
      })

  return SimResult(
    model=scenario.model,
    estimates=estimates,
    histograms=hist,
    flow=flow,
    visit_strata=strata,
    visit_chisquare=visit_chisquare(visit_counts, scenario.params.p),
    time_series=series,
    sample_paths=(runs[0]['paths'] or []) if cfg.record_paths else [],
    event_log=(runs[0]['events'] or []) if cfg.record_paths else [],
    metadata={
      'ci_method': method, 'confidence': CONFIDENCE, 'warmup': cfg.warmup, 'horizon': cfg.horizon,
      'seed': cfg.seed, 'delay_estimator': 'time average of 1{Q1 >= s}',
      'rng': 'Philox, SeedSequence(seed, spawn_key=(replication,))',
    },
  )

def _execute(scenario: _Scenario, cfg: SimConfig):
  tasks = [(scenario, cfg, rep) for rep in range(cfg.replications)]
  if cfg.workers > 1 and cfg.replications > 1:
    with multiprocessing.Pool(min(cfg.workers, cfg.replications)) as pool:
      runs = pool.map(_run_replication, tasks)
  else:
    runs = [_run_replication(task) for task in tasks]
  return _combine(scenario, cfg, runs)

def simulate(params: ModelParams, cap: CapacityPair, cfg: SimConfig) -> SimResult:
  if cfg.model == 'holding':
    bound = rho_max(params, cap)
    rho = derive_loads(params, cap.s).rho
    if rho >= bound.rho_max:
      logger.warning('simulating an unstable holding instance: rho=%.6g >= rho_max=%.6g', rho, bound.rho_max)
  scenario = _Scenario(params=params, model=cfg.model, cap=cap, bin_width=cfg.bin_width)
  return _execute(scenario, cfg)

def time_varying_simulate(profile: ArrivalProfile, schedule: StaffingSchedule, params: ModelParams,
                          cfg: SimConfig) -> SimResult:
  """Thinned nonhomogeneous arrivals with (s, n) following the schedule.

  Bins fold over the profile period when the run spans several periods.
  """
  if not schedule.covers(cfg.horizon):
    raise ScheduleGap(f'schedule ends at {schedule.t_end[-1]} before the horizon {cfg.horizon}')
  if not profile.covers(cfg.horizon):
    raise ScheduleGap(f'arrival profile ends at {profile.breakpoints[-1]} before the horizon {cfg.horizon}')
  bin_width = cfg.bin_width or schedule.interval
  scenario = _Scenario(
    params=params, model=cfg.model, schedule=schedule, profile=profile,
    bin_width=bin_width, bin_period=profile.period,
  )
  return _execute(scenario, cfg)

# ---------------------------------------------------------------------------
# Ordering experiment

def _not_above(a: Estimate, b: Estimate):
  """a <= b up to one confidence half-width."""
  slack = max(np.nan_to_num(a.half_width), np.nan_to_num(b.half_width))
  return bool(a.mean <= b.mean + slack)

def ordering_experiment(params: ModelParams, cap: CapacityPair, cfg: SimConfig):
  """Run the three models on matched parameters and check the orderings between them."""
  results = {model: simulate(params, cap, cfg.with_model(model)) for model in MODELS}
  b, h, c = results['blocking'], results['holding'], results['closed_ward']

  q1_tails = {m: r.tail('q1') for m, r in results.items()}
  size = min(len(t) for t in q1_tails.values())
  violation_bh = float(np.max(q1_tails['blocking'][:size] - q1_tails['holding'][:size]))
  violation_hc = float(np.max(q1_tails['holding'][:size] - q1_tails['closed_ward'][:size]))
  census_tails = {m: r.tail('census').tolist() for m, r in results.items()}

  checks = {
    'census_blocking_le_holding': _not_above(b['mean_census'], h['mean_census']),
    'census_holding_le_n': bool(h['mean_census'].mean <= cap.n),
    'hold_blocking_le_holding': _not_above(b['p_boundary'], h['p_boundary']),
    'rho_n_blocking_le_holding': _not_above(b['rho_n'], h['rho_n']),
    'delay_blocking_le_holding': _not_above(b['p_delay'], h['p_delay']),
    'delay_holding_le_closed_ward': _not_above(h['p_delay'], c['p_delay']),
    'q1_tail_blocking_le_holding_max_violation': violation_bh,
    'q1_tail_holding_le_closed_ward_max_violation': violation_hc,
  }
  return {
    'params': params.to_dict(),
    'capacity': cap.to_dict(),
    'estimates': {m: {k: v.to_dict() for k, v in r.estimates.items()} for m, r in results.items()},
    'census_tails': census_tails,
    'q1_tails': {m: t.tolist() for m, t in q1_tails.items()},
    'closed_ward_exact_delay': closed_ward_distribution(params, cap).p_delay,
    'checks': checks,
  }
