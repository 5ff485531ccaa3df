import unittest
import math

import numpy as np

from erlangr.core_model import ModelParams, CapacityPair, QedPair, ROUNDING_NEAREST, derive_loads, qed_capacity
from erlangr.blocking_exact import stationary_blocking, perf_blocking, log_kappa
from tests import oracles

CASE1 = dict(mu=1.0, delta=0.10, p=0.90)
CASE2 = dict(mu=1.0, delta=0.25, p=0.75)

def case_params(case, r1):
  return ModelParams(lam=r1 * (1 - case['p']) * case['mu'], **case)

class TestStationaryBlocking(unittest.TestCase):
  def test_three_states(self):
    params = ModelParams(lam=0.7, mu=1.3, delta=0.4, p=0.6)
    loads = derive_loads(params)
    dist = stationary_blocking(params, CapacityPair(1, 1))
    p00 = 1 / (1 + loads.r1 + loads.r2)
    self.assertAlmostEqual(dist.prob(0, 0), p00, places=14)
    self.assertAlmostEqual(dist.prob(1, 0), loads.r1 * p00, places=14)
    self.assertAlmostEqual(dist.prob(0, 1), loads.r2 * p00, places=14)
    self.assertEqual(dist.prob(1, 1), 0.0)

  def test_matches_ctmc(self):
    rng = np.random.default_rng(20240611)
    instances = [(2, 3, ModelParams(lam=1, mu=1, delta=0.5, p=0.5))]
    for _ in range(10):
      s = int(rng.integers(1, 4))
      n = int(rng.integers(s, 7))
      instances.append((s, n, ModelParams(
        lam=float(rng.uniform(0.2, 3)), mu=float(rng.uniform(0.5, 2)),
        delta=float(rng.uniform(0.1, 1)), p=float(rng.uniform(0, 0.9)),
      )))
    for s, n, params in instances:
      with self.subTest(s=s, n=n, params=params):
        exact = stationary_blocking(params, CapacityPair(s, n))
        brute = oracles.blocking_ctmc(params, s, n)
        for (j, k), prob in brute.items():
          self.assertAlmostEqual(exact.prob(j, k), prob, delta=1e-10)

  def test_normalized_for_large_n(self):
    params = case_params(CASE1, 900)
    cap = qed_capacity(900, derive_loads(params).r, QedPair(1, 1))
    self.assertGreater(cap.n, 9000)
    dist = stationary_blocking(params, cap)
    self.assertAlmostEqual(dist.total_mass(), 1.0, delta=1e-10)
    self.assertTrue(np.all(np.isfinite(dist.needy_marginal)))

  def test_product_form_ratio(self):
    params = ModelParams(lam=2, mu=1, delta=0.25, p=0.75)
    loads = derive_loads(params)
    s = 3
    dist = stationary_blocking(params, CapacityPair(s, 8))
    kappa = lambda j: math.exp(float(log_kappa(j, s)))
    for (j, k), (jj, kk) in [((0, 0), (5, 2)), ((4, 1), (2, 6)), ((3, 3), (8, 0))]:
      left = dist.prob(j, k) * kappa(j) * math.factorial(k) * loads.r1 ** jj * loads.r2 ** kk
      right = dist.prob(jj, kk) * kappa(jj) * math.factorial(kk) * loads.r1 ** j * loads.r2 ** k
      self.assertAlmostEqual(left / right, 1.0, places=10)

  def test_dense_and_marginal_agree(self):
    dist = stationary_blocking(ModelParams(lam=2, mu=1, delta=0.25, p=0.75), CapacityPair(4, 12))
    np.testing.assert_allclose(dist.probs.sum(axis=1), dist.needy_marginal, atol=1e-14)
    self.assertAlmostEqual(dist.probs.sum(), 1.0, places=12)

  def test_csv_export(self):
    dist = stationary_blocking(ModelParams(lam=1, mu=1, delta=0.5, p=0.5), CapacityPair(2, 3))
    text = dist.to_csv()
    lines = text.strip().split('\n')
    self.assertEqual(lines[0], 'j,k,prob')
    self.assertEqual(len(lines) - 1, 10)
    j, k, prob = lines[1].split(',')
    self.assertIn('e', prob)
    self.assertAlmostEqual(float(prob), dist.prob(int(j), int(k)), places=15)

class TestPerfBlocking(unittest.TestCase):
  def test_single_bed_never_waits(self):
    report = perf_blocking(stationary_blocking(ModelParams(lam=1, mu=1, delta=1, p=0.5), CapacityPair(1, 1)))
    self.assertEqual(report.p_delay, 0.0)
    self.assertEqual(report.e_wait, 0.0)
    self.assertEqual(report.e_holding_queue, 0.0)

  def test_appendix_rows(self):
    rows = [
      (CASE2, 250, (1, 1), 0.1459, 0.1524, 0.0957),
      (CASE1, 250, (2, 2), 0.0267, 0.0179, None),
    ]
    for case, r1, (beta, gamma), delay, block, wait in rows:
      with self.subTest(case=case, r1=r1, beta=beta, gamma=gamma):
        params = case_params(case, r1)
        cap = qed_capacity(r1, derive_loads(params).r, QedPair(beta, gamma), rounding=ROUNDING_NEAREST)
        report = perf_blocking(stationary_blocking(params, cap))
        scale = math.sqrt(r1)
        self.assertAlmostEqual(report.p_delay, delay, delta=1e-3)
        self.assertAlmostEqual(scale * report.p_boundary, block, delta=1e-3)
        if wait is not None:
          self.assertAlmostEqual(scale * report.e_wait, wait, delta=1e-3)

  def test_arrival_theorem_gap_shrinks(self):
    params = case_params(CASE2, 100)
    cap = qed_capacity(100, 0.25, QedPair(1, 1))
    dist = stationary_blocking(params, cap)
    with_theorem = perf_blocking(dist, arrival_theorem=True)
    without = perf_blocking(dist, arrival_theorem=False)
    self.assertLess(abs(with_theorem.p_delay - without.p_delay), 0.01)
    self.assertTrue(with_theorem.metadata['arrival_theorem'])
    self.assertFalse(without.metadata['arrival_theorem'])

  def test_no_returns_is_mmsn(self):
    for s, n, lam in [(2, 5, 1.5), (3, 3, 4.0), (4, 9, 3.2)]:
      with self.subTest(s=s, n=n, lam=lam):
        params = ModelParams(lam=lam, mu=1, delta=1, p=0)
        dist = stationary_blocking(params, CapacityPair(s, n))
        law = oracles.mm_s_n(lam, s, n)
        np.testing.assert_allclose(dist.needy_marginal, law, atol=1e-10)
        report = perf_blocking(dist, arrival_theorem=False)
        self.assertAlmostEqual(report.p_boundary, law[n], delta=1e-10)
        self.assertAlmostEqual(report.p_delay, law[s:].sum(), delta=1e-10)

  def test_blocking_nonincreasing_in_beds(self):
    params = ModelParams(lam=2, mu=1, delta=0.25, p=0.75)
    for s in (4, 9):
      values = [perf_blocking(stationary_blocking(params, CapacityPair(s, n))).p_boundary for n in range(s, 50)]
      with self.subTest(s=s):
        self.assertTrue(all(b <= a + 1e-15 for a, b in zip(values, values[1:])))

  def test_measures_in_range(self):
    report = perf_blocking(stationary_blocking(ModelParams(lam=2, mu=1, delta=0.25, p=0.75), CapacityPair(9, 40)))
    for name in ('p_delay', 'p_boundary', 'rho_s', 'rho_n'):
      self.assertGreaterEqual(getattr(report, name), 0.0)
      self.assertLessEqual(getattr(report, name), 1.0)
    self.assertGreater(report.e_wait, 0.0)
    self.assertEqual(report.metadata['wait_weight'], '(j-s+1)/(s*mu)')

  def test_bed_utilization_is_mean_census(self):
    params = ModelParams(lam=1, mu=1, delta=0.5, p=0.5)
    dist = stationary_blocking(params, CapacityPair(2, 3))
    brute = oracles.blocking_ctmc(params, 2, 3)
    census = sum((j + k) * prob for (j, k), prob in brute.items())
    self.assertAlmostEqual(perf_blocking(dist).rho_n, census / 3, places=10)
