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

"""Plot-ready tables: exact-vs-limit accuracy tables and the curves behind the figures."""
import os
import math
import logging

import numpy as np

from erlangr.core_model import (
  ModelParams, CapacityPair, QedPair, ROUNDING_NEAREST, derive_loads, qed_capacity, invert_capacity,
)
from erlangr.blocking_exact import stationary_blocking, perf_blocking
from erlangr.holding_qbd import rho_max, check_stability
from erlangr.qed_limits import limits_blocking, halfin_whitt_delay, erlang_b_tail
from erlangr.fixed_point import holding_approx
from erlangr.mol_staffing import ArrivalProfile, mol_staffing
from erlangr.simulator import SimConfig, simulate, ordering_experiment
from erlangr.libs.errors import Infeasible, NoConvergence, NotStable
from erlangr.libs.utils import write_csv

logger = logging.getLogger(__name__)

# (mu, delta, p); r = delta / (delta + p mu) gives 0.1, 0.25, 0.5
CASES = {
  'case1': (1.0, 0.10, 0.90),
  'case2': (1.0, 0.25, 0.75),
  'case3': (1.0, 0.50, 0.50),
}
TABLE_LOADS = (5, 10, 25, 50, 100, 250)
TABLE_PAIRS = ((1.0, 1.0), (1.0, 2.0), (2.0, 1.0), (2.0, 2.0))
CURVE_GAMMAS = (-1.0, 0.0, 1.0, 2.0)

def case_params(case, r1=1.0) -> ModelParams:
  """Parameters of a named case with arrival rate chosen so that R1 = r1."""
  mu, delta, p = CASES[case]
  return ModelParams(lam=r1 * (1.0 - p) * mu, mu=mu, delta=delta, p=p)

def blocking_table(case, pairs=TABLE_PAIRS, loads=TABLE_LOADS):
  """Exact P(d), sqrt(R1) P(b), sqrt(R1) E[W] per R1, followed by the limit row (r1 = None)."""
  rows = []
  for beta, gamma in pairs:
    for r1 in loads:
      params = case_params(case, r1)
      r = derive_loads(params).r
      cap = qed_capacity(r1, r, QedPair(beta, gamma), rounding=ROUNDING_NEAREST)
      report = perf_blocking(stationary_blocking(params, cap))
      scale = math.sqrt(r1)
      rows.append({
        'case': case, 'beta': beta, 'gamma': gamma, 'r1': r1, 's': cap.s, 'n': cap.n,
        'p_delay': report.p_delay, 'scaled_p_block': scale * report.p_boundary, 'scaled_e_wait': scale * report.e_wait,
      })
    params = case_params(case)
    lim = limits_blocking(beta, gamma, derive_loads(params).r, params.mu)
    rows.append({
      'case': case, 'beta': beta, 'gamma': gamma, 'r1': None, 's': None, 'n': None,
      'p_delay': lim.g, 'scaled_p_block': lim.f, 'scaled_e_wait': lim.h,
    })
  return rows

def holding_table(case, pairs=TABLE_PAIRS):
  """Fixed-point heuristic rows (g_h, h_h) for the holding model."""
  params = case_params(case)
  r = derive_loads(params).r
  rows = []
  for beta, gamma in pairs:
    approx = holding_approx(beta, gamma, r, params.mu)
    rows.append({'case': case, 'beta': beta, 'gamma': gamma, 'g_h': approx.g_h, 'h_h': approx.h_h, 'alpha': approx.alpha})
  return rows

def utilization_bound_grid(case='case2', servers=range(1, 21), max_beds=60):
  """R_max(s, n) = s rho_max(s, n) for s <= n <= max_beds."""
  params = case_params(case)
  rows = []
  for s in servers:
    for n in range(s, max_beds + 1):
      bound = rho_max(params, CapacityPair(s, n))
      rows.append({'s': s, 'n': n, 'rho_max': bound.rho_max, 'r_max': bound.r_max})
  return rows

def limits_vs_beta(case='case2', gammas=CURVE_GAMMAS, betas=None):
  params = case_params(case)
  r = derive_loads(params).r
  betas = np.linspace(-2.0, 3.0, 51) if betas is None else betas
  rows = []
  for gamma in gammas:
    for beta in betas:
      lim = limits_blocking(float(beta), gamma, r, params.mu)
      rows.append({'gamma': gamma, 'beta': float(beta), **lim.to_dict()})
  return rows

def delay_vs_gamma(case='case2', betas=(0.5, 1.0), gammas=None):
  """g_b, the holding heuristic g_h and the Halfin-Whitt delay against gamma."""
  params = case_params(case)
  r = derive_loads(params).r
  gammas = np.linspace(-1.0, 4.0, 51) if gammas is None else gammas
  rows = []
  for beta in betas:
    g_hw = halfin_whitt_delay(beta)
    for gamma in gammas:
      gamma = float(gamma)
      try:
        g_h = holding_approx(beta, gamma, r, params.mu).g_h
      except (Infeasible, NoConvergence):
        g_h = math.nan
      rows.append({
        'beta': beta, 'gamma': gamma, 'g_b': limits_blocking(beta, gamma, r, params.mu).g,
        'g_h': g_h, 'g_hw': g_hw,
      })
  return rows

def exact_vs_limit_servers(case='case2', r1=8.0, gamma=1.0, servers=range(1, 21)):
  """Exact blocking measures against their limits as s varies at a fixed bed hedge."""
  params = case_params(case, r1)
  r = derive_loads(params).r
  n = qed_capacity(r1, r, QedPair(0.0, gamma), rounding=ROUNDING_NEAREST).n
  rows = []
  for s in servers:
    cap = CapacityPair(s, n)
    report = perf_blocking(stationary_blocking(params, cap))
    beta = (s - r1) / math.sqrt(r1)
    lim = limits_blocking(beta, gamma, r, params.mu)
    scale = math.sqrt(r1)
    rows.append({
      's': s, 'n': n, 'beta': beta,
      'p_delay': report.p_delay, 'g_b': lim.g,
      'scaled_p_block': scale * report.p_boundary, 'f_b': lim.f,
      'scaled_e_wait': scale * report.e_wait, 'h_b': lim.h,
    })
  return rows

def r_sweep(beta=8.0, gammas=(0.0, 1.0, 2.0), rs=None):
  """f_b at a large server hedge against the Erlang-B tail sqrt(r) phi(gamma)/Phi(gamma)."""
  rs = np.linspace(0.05, 0.95, 19) if rs is None else rs
  rows = []
  for gamma in gammas:
    for r in rs:
      lim = limits_blocking(beta, gamma, float(r))
      rows.append({'gamma': gamma, 'r': float(r), 'f_b': lim.f, 'erlang_b_tail': erlang_b_tail(gamma, float(r))})
  return rows

def mol_curves(profile=None, params=None, pair=QedPair(0.5, 0.5), interval=0.5):
  """Offered loads and MOL capacities over one period of the case-study profile."""
  profile = ArrivalProfile.case_study() if profile is None else profile
  params = ModelParams(lam=1.0, mu=6.67, delta=2.18, p=0.76) if params is None else params
  traj, schedule = mol_staffing(profile, params, pair, interval)
  r1, r2 = traj.at(schedule.t_start + 0.5 * interval)
  return [
    {'t_start': float(t), 'lambda': float(profile.rate(t + 0.5 * interval)), 'r1': float(a), 'r2': float(b),
     'bed_load': float(a + b), 's': int(s), 'n': int(n)}
    for t, a, b, s, n in zip(schedule.t_start, r1, r2, schedule.s_t, schedule.n_t)
  ]

# ---------------------------------------------------------------------------
# Simulation-based figure data

SIM_SEED = 2024
ESTIMATE_COLUMNS = ('p_delay', 'p_boundary', 'e_wait', 'rho_s', 'mean_census')

def _estimate_columns(estimates, names=ESTIMATE_COLUMNS):
  row = {}
  for name in names:
    est = estimates[name]
    row[name] = est['mean']
    row[f'{name}_hw'] = est['half_width']
  return row

def sample_path_rows(loads=(5, 25, 100), pair=QedPair(1.0, 1.0), horizon=200.0, seed=SIM_SEED):
  """H, Q1 and Q1 + Q2 of the Case 2 holding model along one run per R1."""
  rows = []
  for r1 in loads:
    params = case_params('case2', r1)
    cap = qed_capacity(r1, derive_loads(params).r, pair)
    cfg = SimConfig(horizon=horizon, warmup=0.0, seed=seed, model='holding', record_paths=True)
    result = simulate(params, cap, cfg)
    rows.extend(
      {'r1': r1, 's': cap.s, 'n': cap.n, 't': t, 'holding': h, 'q1': q1, 'q1_plus_q2': census}
      for t, h, q1, census in result.sample_paths
    )
  return rows

def ordering_rows(lams=(25, 50, 100), params=None, pair=QedPair(0.5, 0.5), horizon=400.0, seed=SIM_SEED):
  """Blocking, holding and closed ward side by side as lambda grows."""
  params = ModelParams(lam=1.0, mu=1.0, delta=0.2, p=0.8) if params is None else params
  rows = []
  for lam in lams:
    scaled = params.with_lambda(float(lam))
    loads = derive_loads(scaled)
    cap = qed_capacity(loads.r1, loads.r, pair)
    out = ordering_experiment(scaled, cap, SimConfig(horizon=horizon, seed=seed))
    for model, estimates in out['estimates'].items():
      rows.append({
        'lambda': float(lam), 'r1': loads.r1, 's': cap.s, 'n': cap.n, 'model': model,
        **_estimate_columns(estimates),
        'closed_ward_exact_delay': out['closed_ward_exact_delay'],
      })
  return rows

def holding_sim_vs_approx(case='case2', r1=8.0, servers=range(9, 17), beds=(36, 40, 44), horizon=2000.0,
                          seed=SIM_SEED):
  """Simulated P(delay) and P(hold) of the holding model against the fixed-point heuristic."""
  params = case_params(case, r1)
  r = derive_loads(params).r
  sqrt_r1 = math.sqrt(r1)
  rows = []
  for n in beds:
    for s in servers:
      cap = CapacityPair(s, n)
      try:
        check_stability(params, cap)
      except NotStable as e:
        logger.info('skipping s=%d n=%d: %s', s, n, e)
        continue
      pair = invert_capacity(cap, r1, r)
      try:
        approx = holding_approx(pair.beta, pair.gamma, r, params.mu)
        g_h, hold_h = approx.g_h, min(approx.alpha / sqrt_r1, 1.0)
      except (Infeasible, NoConvergence):
        g_h = hold_h = math.nan
      result = simulate(params, cap, SimConfig(horizon=horizon, seed=seed, model='holding'))
      rows.append({
        's': s, 'n': n, 'beta': pair.beta, 'gamma': pair.gamma,
        'p_delay': result['p_delay'].mean, 'p_delay_hw': result['p_delay'].half_width,
        'p_hold': result['p_boundary'].mean, 'p_hold_hw': result['p_boundary'].half_width,
        'g_h': g_h, 'p_hold_approx': hold_h,
      })
  return rows

def visit_strata_rows(case='case2', r1=8.0, s=9, beds=range(34, 61, 2), horizon=5000.0, seed=SIM_SEED):
  """Mean holding, needy and total wait per number of needy visits, as n varies."""
  params = case_params(case, r1)
  rows = []
  for n in beds:
    cfg = SimConfig(horizon=horizon, seed=seed, model='holding', record_paths=True)
    result = simulate(params, CapacityPair(s, n), cfg)
    rows.extend({'s': s, 'n': n, **stratum} for stratum in result.visit_strata)
  return rows

def medical_unit_curves(params=None, beds=(30, 35, 40, 45), betas=None):
  """g_b, P(block) and g_h against beta on the small medical unit, one curve per bed count."""
  params = ModelParams(lam=0.32, mu=4.0, delta=0.4, p=0.975) if params is None else params
  loads = derive_loads(params)
  betas = np.linspace(-2.0, 2.0, 81) if betas is None else betas
  sqrt_r1 = math.sqrt(loads.r1)
  rows = []
  for n in beds:
    gamma = invert_capacity(CapacityPair(1, n), loads.r1, loads.r).gamma
    for beta in betas:
      beta = float(beta)
      lim = limits_blocking(beta, gamma, loads.r, params.mu)
      try:
        g_h = holding_approx(beta, gamma, loads.r, params.mu).g_h
      except (Infeasible, NoConvergence):
        g_h = math.nan
      rows.append({
        'n': n, 'gamma': gamma, 'beta': beta, 's_exact': loads.r1 + beta * sqrt_r1,
        'g_b': lim.g, 'p_block': min(lim.f / sqrt_r1, 1.0), 'g_h': g_h,
      })
  return rows

def _to_csv(fn, rows):
  header = list(rows[0].keys()) if rows else []
  return write_csv(fn, header, ([row[k] if row[k] is not None else '' for k in header] for row in rows))

TABLES = {
  'blocking_{case}.csv': lambda case: blocking_table(case),
  'holding_{case}.csv': lambda case: holding_table(case),
}
FIGURES = {
  'utilization_bound.csv': utilization_bound_grid,
  'limits_vs_beta.csv': limits_vs_beta,
  'delay_vs_gamma.csv': delay_vs_gamma,
  'exact_vs_limit_servers.csv': exact_vs_limit_servers,
  'r_sweep.csv': r_sweep,
  'mol_curves.csv': mol_curves,
  'medical_unit_curves.csv': medical_unit_curves,
}
SIM_FIGURES = {
  'sample_paths.csv': sample_path_rows,
  'model_ordering.csv': ordering_rows,
  'holding_sim_vs_approx.csv': holding_sim_vs_approx,
  'visit_strata.csv': visit_strata_rows,
}

def write_tables(out_dir, cases=tuple(CASES), figures=True, simulations=False, horizon=None, seed=SIM_SEED):
  """Write every table and figure CSV into out_dir; returns the written paths.

  Simulation figures are written only when asked for; `horizon` overrides each builder's default run length.
  """
  written = []

  def emit(name, rows):
    fn = os.path.join(out_dir, name)
    _to_csv(fn, rows)
    logger.info('wrote %s', fn)
    written.append(fn)

  for pattern, build in TABLES.items():
    for case in cases:
      emit(pattern.format(case=case), build(case))
  if figures:
    for name, build in FIGURES.items():
      emit(name, build())
  if simulations:
    run = {'seed': seed} if horizon is None else {'seed': seed, 'horizon': horizon}
    for name, build in SIM_FIGURES.items():
      emit(name, build(**run))
  return written
