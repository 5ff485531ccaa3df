import unittest
import math

from erlangr.core_model import (
  ModelParams, CapacityPair, QedPair, PerformanceReport, derive_loads, qed_capacity, invert_capacity,
  square_root_capacity, warn_if_servers_exceed_beds, ROUNDING_NEAREST, ROUNDING_CONSERVATIVE,
)
from erlangr.libs.errors import DomainError

class TestDeriveLoads(unittest.TestCase):
  def test_reference_instances(self):
    loads = derive_loads(ModelParams(lam=2, mu=1, delta=0.25, p=0.75))
    self.assertAlmostEqual(loads.r1, 8.0, places=12)
    self.assertAlmostEqual(loads.r2, 24.0, places=12)
    self.assertAlmostEqual(loads.r, 0.25, places=12)

    loads = derive_loads(ModelParams(lam=0.32, mu=4, delta=0.4, p=0.975))
    self.assertAlmostEqual(loads.r1, 3.2, places=10)
    self.assertAlmostEqual(loads.r1 / loads.r, 34.4, places=8)
    self.assertAlmostEqual(loads.r, 0.093, places=3)

    loads = derive_loads(ModelParams(lam=1, mu=1, delta=1, p=0))
    self.assertEqual((loads.r1, loads.r2, loads.r), (1.0, 0.0, 1.0))

    for lam in (0.5, 3.0, 40.0):
      with self.subTest(lam=lam):
        self.assertAlmostEqual(derive_loads(ModelParams(lam=lam, mu=6.67, delta=2.18, p=0.76)).r, 0.301, places=3)

  def test_bed_load_identity(self):
    for lam, mu, delta, p in [(2, 1, 0.25, 0.75), (0.32, 4, 0.4, 0.975), (7.5, 6.67, 2.18, 0.76), (1, 3, 0.1, 0.9)]:
      with self.subTest(lam=lam, p=p):
        loads = derive_loads(ModelParams(lam=lam, mu=mu, delta=delta, p=p))
        self.assertLess(abs(loads.r1 / loads.r - loads.bed_load) / loads.bed_load, 1e-12)

  def test_rho_with_servers(self):
    self.assertAlmostEqual(derive_loads(ModelParams(lam=2, mu=1, delta=0.25, p=0.75), s=10).rho, 0.8)

class TestModelParams(unittest.TestCase):
  def test_rejects_bad_values(self):
    with self.assertRaisesRegex(DomainError, 'infinite offered load'):
      ModelParams(lam=1, mu=1, delta=1, p=1)
    bad = [
      dict(lam=0, mu=1, delta=1, p=0.5),
      dict(lam=1, mu=-1, delta=1, p=0.5),
      dict(lam=1, mu=1, delta=0, p=0.5),
      dict(lam=1, mu=1, delta=1, p=-0.1),
      dict(lam=math.nan, mu=1, delta=1, p=0.5),
      dict(lam=1, mu=math.inf, delta=1, p=0.5),
    ]
    for kwargs in bad:
      with self.subTest(**kwargs):
        with self.assertRaises(DomainError):
          ModelParams(**kwargs)

  def test_domain_error_is_value_error(self):
    with self.assertRaises(ValueError):
      ModelParams(lam=1, mu=1, delta=1, p=2)

  def test_from_mapping_accepts_both_keys(self):
    a = ModelParams.from_mapping({'lambda': 2, 'mu': 1, 'delta': 0.25, 'p': 0.75})
    b = ModelParams.from_mapping({'lam': 2, 'mu': 1, 'delta': 0.25, 'p': 0.75})
    self.assertEqual(a, b)
    self.assertDictEqual(a.to_dict(), {'lambda': 2.0, 'mu': 1.0, 'delta': 0.25, 'p': 0.75})
    self.assertEqual(a.with_lambda(4).lam, 4.0)

class TestCapacity(unittest.TestCase):
  def test_qed_capacity_examples(self):
    self.assertEqual(qed_capacity(3.2, 0.093, QedPair(0.36, 1)), CapacityPair(4, 40))
    self.assertEqual(qed_capacity(3.2, 0.093, QedPair(0.46, 2)), CapacityPair(5, 46))
    self.assertEqual(qed_capacity(4, 1, QedPair(0, 0)), CapacityPair(4, 4))

  def test_clamped_to_one(self):
    self.assertEqual(qed_capacity(0.5, 0.5, QedPair(-3, -3)), CapacityPair(1, 1))

  def test_monotone_in_hedges(self):
    r1, r = 25.0, 0.25
    caps = [qed_capacity(r1, r, QedPair(b, b)) for b in (-1.0, -0.5, 0.0, 0.5, 1.0, 2.0)]
    for a, b in zip(caps, caps[1:]):
      self.assertLessEqual(a.s, b.s)
      self.assertLessEqual(a.n, b.n)

  def test_ratio_tends_to_r(self):
    beta, gamma, r = 1.0, -0.5, 0.25
    for r1 in (1e2, 1e4, 1e6):
      with self.subTest(r1=r1):
        cap = qed_capacity(r1, r, QedPair(beta, gamma))
        self.assertLess(abs(cap.s / cap.n - r), 2 * (abs(beta) + abs(gamma) + 1) / math.sqrt(r1))

  def test_invert_capacity(self):
    pair = invert_capacity(CapacityPair(8, 32), 8, 0.25)
    self.assertAlmostEqual(pair.beta, 0.0, places=12)
    self.assertAlmostEqual(pair.gamma, 0.0, places=12)

    pair = invert_capacity(CapacityPair(4, 40), 3.2, 0.093)
    self.assertAlmostEqual(pair.beta, 0.447, places=3)
    self.assertAlmostEqual(pair.gamma, 0.955, delta=3e-3)

  def test_round_trip_within_rounding(self):
    r1, r = 17.3, 0.3
    for beta, gamma in [(0.2, 0.7), (-1.0, 1.5), (2.3, -0.4)]:
      with self.subTest(beta=beta, gamma=gamma):
        back = invert_capacity(qed_capacity(r1, r, QedPair(beta, gamma)), r1, r)
        self.assertLessEqual(abs(back.beta - beta), 1 / math.sqrt(r1))
        self.assertLessEqual(abs(back.gamma - gamma), 1 / math.sqrt(r1 / r))

  def test_rounding_slack(self):
    # 4.000000000000001 servers must not round up to 5
    self.assertEqual(square_root_capacity(4.000000000000001, 10.0, QedPair(0, 0)).s, 4)

  def test_nearest_rounding(self):
    # Case 2 at R1 = 250: 1031.6 beds
    self.assertEqual(qed_capacity(250, 0.25, QedPair(1, 1), rounding=ROUNDING_NEAREST), CapacityPair(266, 1032))
    self.assertEqual(qed_capacity(250, 0.25, QedPair(1, 1), rounding=ROUNDING_CONSERVATIVE), CapacityPair(266, 1031))
    self.assertEqual(square_root_capacity(4.0, 9.0, QedPair(0.2, 0.5), rounding=ROUNDING_NEAREST), CapacityPair(4, 11))
    self.assertEqual(square_root_capacity(4.0, 9.0, QedPair(0.2, 0.5)), CapacityPair(5, 10))
    with self.assertRaises(DomainError):
      qed_capacity(250, 0.25, QedPair(1, 1), rounding='round')

  def test_capacity_validation(self):
    for s, n in [(0, 3), (2, 0), (1.5, 3), (True, 2)]:
      with self.subTest(s=s, n=n):
        with self.assertRaises(DomainError):
          CapacityPair(s, n)
    with self.assertRaises(DomainError):
      QedPair(math.inf, 0)

  def test_servers_exceed_beds_warning(self):
    with self.assertLogs('erlangr.core_model', level='WARNING'):
      self.assertTrue(warn_if_servers_exceed_beds(CapacityPair(5, 3)))
    self.assertFalse(warn_if_servers_exceed_beds(CapacityPair(3, 5)))

class TestPerformanceReport(unittest.TestCase):
  def test_to_dict(self):
    report = PerformanceReport(0.1, 0.2, 0.3, 0.0, 0.5, 0.6, metadata={'model': 'blocking'})
    d = report.to_dict()
    self.assertEqual(list(d)[:6], list(PerformanceReport.MEASURES))
    self.assertEqual(d['metadata'], {'model': 'blocking'})
