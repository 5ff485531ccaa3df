import unittest
import math

import numpy as np

from erlangr.core_model import ModelParams, CapacityPair, QedPair, derive_loads, qed_capacity
from erlangr.blocking_exact import stationary_blocking, perf_blocking
from erlangr.holding_qbd import (
  build_qbd_blocks, solve_rate_matrix, stationary_holding, analyze_holding,
  rho_max, check_stability, closed_ward_distribution, rate_matrix_residual, iterate_functional,
)
from erlangr.libs.errors import NotStable, DomainError
from tests import oracles

CASE2 = dict(mu=1.0, delta=0.25, p=0.75)

def stable_params(s, n, fraction, case=CASE2):
  """Parameters whose R1 sits at `fraction` of R_max(s, n)."""
  unit = ModelParams(lam=1.0, **case)
  bound = rho_max(unit, CapacityPair(s, n))
  return unit.with_lambda(fraction * bound.r_max * (1.0 - case['p']) * case['mu'])

def level_stack(dist, levels):
  return np.concatenate([dist.level(i) for i in range(levels + 1)])

class TestUtilizationBound(unittest.TestCase):
  def test_single_server_two_beds(self):
    bound = rho_max(ModelParams(lam=1, **CASE2), CapacityPair(1, 2))
    self.assertAlmostEqual(bound.rho_max, 8 / 17, places=12)
    self.assertAlmostEqual(bound.r_max, 8 / 17, places=12)

  def test_matches_birth_death_law(self):
    params = ModelParams(lam=1, mu=1.7, delta=0.3, p=0.55)
    for s, n in [(1, 4), (3, 7), (5, 30)]:
      with self.subTest(s=s, n=n):
        law = oracles.closed_ward(params, s, n)
        np.testing.assert_allclose(closed_ward_distribution(params, CapacityPair(s, n)).probs, law, atol=1e-12)
        expected = float(np.sum(law * np.minimum(np.arange(n + 1), s))) / s
        self.assertAlmostEqual(rho_max(params, CapacityPair(s, n)).rho_max, expected, places=12)

  def test_all_servers_gives_needy_fraction(self):
    for delta, p in [(0.25, 0.75), (0.1, 0.9), (2.0, 0.3)]:
      params = ModelParams(lam=1, mu=1, delta=delta, p=p)
      r = derive_loads(params).r
      for n in (1, 5, 20):
        with self.subTest(delta=delta, p=p, n=n):
          self.assertAlmostEqual(rho_max(params, CapacityPair(n, n)).rho_max, r, delta=1e-10)

  def test_bounded_by_servers_and_beds(self):
    params = ModelParams(lam=1, **CASE2)
    for s in range(1, 21):
      for n in range(s, 101, 7):
        bound = rho_max(params, CapacityPair(s, n))
        self.assertLessEqual(bound.r_max, s + 1e-12)
        self.assertLessEqual(bound.r_max, 0.25 * n + 1e-9)

  def test_tends_to_one_under_qed_scaling(self):
    gaps = []
    for r1 in (10, 25, 50, 100, 250):
      cap = qed_capacity(r1, 0.25, QedPair(1, 1))
      gaps.append(1.0 - rho_max(ModelParams(lam=r1 * 0.25, **CASE2), cap).rho_max)
    self.assertLess(gaps[3], 0.15)
    self.assertTrue(all(b < a for a, b in zip(gaps, gaps[1:])), gaps)

  def test_closed_ward_report(self):
    report = closed_ward_distribution(ModelParams(lam=1, **CASE2), CapacityPair(2, 6)).report()
    self.assertTrue(math.isnan(report.p_boundary))
    self.assertEqual(report.rho_n, 1.0)
    self.assertGreater(report.p_delay, 0.0)

  def test_check_stability(self):
    with self.assertRaises(NotStable) as ctx:
      check_stability(ModelParams(lam=2, **CASE2), CapacityPair(8, 32))
    self.assertAlmostEqual(ctx.exception.rho, 1.0)
    self.assertLess(ctx.exception.rho_max, 1.0)
    self.assertEqual(ctx.exception.exit_code, 2)

class TestQbdBlocks(unittest.TestCase):
  def test_single_bed(self):
    params = ModelParams(lam=0.3, mu=1.0, delta=0.5, p=0.6)
    blocks = build_qbd_blocks(params, CapacityPair(1, 1))
    np.testing.assert_allclose(blocks.a0, np.diag([0.3, 0.3]))
    np.testing.assert_allclose(blocks.a2, np.diag([0.0, 0.4]))
    np.testing.assert_allclose(blocks.a1, [[-0.8, 0.5], [0.6, -1.3]])
    np.testing.assert_allclose(blocks.boundary_diag[0], [[-0.3]])

  def test_rows_sum_to_zero(self):
    rng = np.random.default_rng(7)
    for _ in range(5):
      params = ModelParams(lam=float(rng.uniform(0.1, 3)), mu=float(rng.uniform(0.5, 2)),
                           delta=float(rng.uniform(0.1, 1)), p=float(rng.uniform(0, 0.95)))
      s = int(rng.integers(1, 5))
      n = int(rng.integers(s, 9))
      blocks = build_qbd_blocks(params, CapacityPair(s, n))
      with self.subTest(params=params, s=s, n=n):
        np.testing.assert_allclose((blocks.a0 + blocks.a1 + blocks.a2).sum(axis=1), 0.0, atol=1e-12)
        for i in range(n + 1):
          total = blocks.local(i).sum(axis=1) + blocks.up(i).sum(axis=1)
          if i > 0:
            total += blocks.down(i).sum(axis=1)
          np.testing.assert_allclose(total, 0.0, atol=1e-12)

  def test_interior_rates(self):
    params = ModelParams(lam=0.9, mu=1.1, delta=0.3, p=0.4)
    blocks = build_qbd_blocks(params, CapacityPair(2, 5))
    level, j = 3, 1
    self.assertAlmostEqual(blocks.up(level)[j, j + 1], 0.9)
    self.assertAlmostEqual(blocks.local(level)[j, j + 1], (level - j) * 0.3)
    self.assertAlmostEqual(blocks.local(level)[j, j - 1], 0.4 * 1.1)
    self.assertAlmostEqual(blocks.down(level)[j, j - 1], 0.6 * 1.1)

  def test_csv_dump(self):
    text = build_qbd_blocks(ModelParams(lam=1, **CASE2), CapacityPair(1, 1)).to_csv()
    self.assertTrue(text.startswith('block,row,col,value'))
    self.assertIn('A2,1,1,', text)

class TestRateMatrix(unittest.TestCase):
  def test_residual(self):
    blocks = build_qbd_blocks(ModelParams(lam=2, **CASE2), CapacityPair(9, 40))
    g = solve_rate_matrix(blocks)
    self.assertLess(g.residual, 1e-10)
    self.assertLess(rate_matrix_residual(blocks, g.g), 1e-10)
    self.assertLess(g.spectral_radius, 1.0)
    self.assertEqual(g.metadata()['g_scheme'], 'functional')

  def test_vanishes_without_arrivals(self):
    blocks = build_qbd_blocks(ModelParams(lam=1e-9, **CASE2), CapacityPair(2, 6))
    self.assertLess(np.max(solve_rate_matrix(blocks).g), 1e-8)

  def test_iterates_increase(self):
    blocks = build_qbd_blocks(stable_params(2, 6, 0.7), CapacityPair(2, 6))
    iterates = iterate_functional(blocks)
    previous = next(iterates)
    for _ in range(50):
      current = next(iterates)
      self.assertTrue(np.all(current >= previous - 1e-14))
      previous = current

  def test_radius_grows_toward_boundary(self):
    radii = []
    for fraction in (0.5, 0.9):
      blocks = build_qbd_blocks(stable_params(3, 10, fraction), CapacityPair(3, 10))
      radii.append(solve_rate_matrix(blocks).spectral_radius)
    self.assertLess(radii[0], radii[1])
    self.assertLess(radii[1], 1.0)

  def test_schemes_agree(self):
    blocks = build_qbd_blocks(stable_params(3, 10, 0.6), CapacityPair(3, 10))
    functional = solve_rate_matrix(blocks, scheme='functional')
    logarithmic = solve_rate_matrix(blocks, scheme='logarithmic')
    np.testing.assert_allclose(functional.g, logarithmic.g, atol=1e-9)
    self.assertLess(logarithmic.iterations, functional.iterations)

  def test_unstable_instance(self):
    with self.assertRaises(NotStable):
      analyze_holding(ModelParams(lam=2, **CASE2), CapacityPair(8, 32))

  def test_unknown_scheme(self):
    blocks = build_qbd_blocks(ModelParams(lam=0.05, **CASE2), CapacityPair(1, 2))
    with self.assertRaises(DomainError):
      solve_rate_matrix(blocks, scheme='cyclic')

class TestStationaryHolding(unittest.TestCase):
  def test_matches_truncated_ctmc(self):
    instances = [
      (1, 2, ModelParams(lam=0.05, **CASE2)),
      (2, 4, stable_params(2, 4, 0.5)),
      (2, 3, stable_params(2, 3, 0.4, case=dict(mu=1.3, delta=0.6, p=0.5))),
    ]
    for s, n, params in instances:
      with self.subTest(s=s, n=n):
        dist, _ = analyze_holding(params, CapacityPair(s, n))
        brute = oracles.holding_ctmc(params, s, n)
        for level in range(n + 30):
          for j, prob in enumerate(dist.level(level)):
            self.assertAlmostEqual(prob, brute[(level, j)], delta=1e-8)

  def test_normalized(self):
    dist, _ = analyze_holding(ModelParams(lam=2, **CASE2), CapacityPair(9, 40))
    self.assertAlmostEqual(dist.total_mass(), 1.0, delta=1e-8)
    self.assertAlmostEqual(dist.needy_marginal.sum(), 1.0, delta=1e-8)
    self.assertTrue(all(np.all(v >= 0) for v in dist.boundary))
    self.assertEqual(dist.metadata['boundary_solver'], 'dense LU')

  def test_full_chain_balance(self):
    params = stable_params(2, 5, 0.5)
    blocks = build_qbd_blocks(params, CapacityPair(2, 5))
    dist = stationary_holding(blocks, solve_rate_matrix(blocks))
    levels = blocks.n + 80
    x = level_stack(dist, levels)
    residual = x @ blocks.truncated_generator(levels)
    self.assertLess(np.max(np.abs(residual)), 1e-8)
    self.assertEqual(dist.metadata['boundary_solver'], 'dense LU')

  def test_no_returns_is_erlang_c(self):
    s, n = 3, 75
    dist, report = analyze_holding(ModelParams(lam=2, mu=1, delta=1, p=0), CapacityPair(s, n))
    np.testing.assert_allclose(dist.needy_marginal[:50], oracles.erlang_c_marginal(s, 2.0, 50), atol=1e-6)
    self.assertAlmostEqual(report.p_delay, oracles.erlang_c(s, 2.0), delta=1e-6)

  def test_csv_export(self):
    dist, _ = analyze_holding(ModelParams(lam=0.05, **CASE2), CapacityPair(1, 2))
    lines = dist.to_csv(extra_levels=2).strip().split('\n')
    self.assertEqual(lines[0], 'level,j,prob')
    # levels 0..4 with sizes 1, 2, 3, 3, 3
    self.assertEqual(len(lines) - 1, 12)

class TestPerfHolding(unittest.TestCase):
  def test_light_traffic(self):
    _, report = analyze_holding(ModelParams(lam=1e-6, **CASE2), CapacityPair(2, 6))
    self.assertLess(report.p_delay, 1e-5)
    self.assertLess(report.p_boundary, 1e-10)
    self.assertLess(report.e_holding_queue, 1e-10)
    self.assertLess(report.rho_s, 1e-4)

  def test_holding_queue_series(self):
    dist, report = analyze_holding(stable_params(3, 10, 0.6), CapacityPair(3, 10))
    v = dist.boundary[dist.n]
    series = 0.0
    for i in range(1, 201):
      v = v @ dist.g.g
      series += i * v.sum()
    self.assertAlmostEqual(report.e_holding_queue, series, delta=1e-8)
    self.assertAlmostEqual(report.p_boundary, dist.census_distribution(extra_levels=300)[dist.n:].sum(), delta=1e-10)

  def test_moderate_ward(self):
    r1 = 25
    cap = qed_capacity(r1, 0.25, QedPair(1, 1))
    self.assertEqual(cap, CapacityPair(30, 110))
    dist, report = analyze_holding(ModelParams(lam=r1 * 0.25, **CASE2), cap)
    self.assertEqual(dist.metadata['boundary_solver'], 'sparse LU')
    self.assertAlmostEqual(report.p_delay, 0.2340, delta=0.02)
    self.assertEqual(report.metadata['model'], 'holding')

  def test_holding_congests_more_than_blocking(self):
    for s, n in [(2, 4), (2, 7), (3, 8), (4, 12), (5, 20)]:
      for fraction in (0.3, 0.6, 0.85):
        params = stable_params(s, n, fraction)
        with self.subTest(s=s, n=n, fraction=fraction):
          _, held = analyze_holding(params, CapacityPair(s, n))
          blocked = perf_blocking(stationary_blocking(params, CapacityPair(s, n)))
          self.assertLessEqual(blocked.p_boundary, held.p_boundary + 1e-10)
          self.assertLessEqual(blocked.rho_n, held.rho_n + 1e-10)
