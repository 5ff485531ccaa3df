import os
import sys
import logging
import argparse

import numpy as np

from erlangr.core_model import (
  ModelParams, CapacityPair, QedPair, CONVENTIONS, derive_loads, qed_capacity, warn_if_servers_exceed_beds,
)
from erlangr.blocking_exact import stationary_blocking, perf_blocking
from erlangr.holding_qbd import analyze_holding, closed_ward_distribution, SCHEMES
from erlangr.qed_limits import limits_blocking, loss_model_limits, QUADRATURE_METADATA
from erlangr.fixed_point import holding_approx, batch_limits, dimension_blocking, dimension_holding
from erlangr.mol_staffing import ArrivalProfile, mol_staffing, DEFAULT_INTERVAL, DEFAULT_STEP
from erlangr.simulator import SimConfig, simulate, time_varying_simulate, ordering_experiment
from erlangr.tables import CASES, SIM_SEED, write_tables
from erlangr.libs.config_loader import CFG
from erlangr.libs.errors import ErlangRError, NotStable, UsageError
from erlangr.libs.utils import ObjDict, dump_json, write_csv, read_csv_rows, round_significant, format_exception

logger = logging.getLogger('erlangr')

SEED_ENV = 'ERLANGR_SEED'

class ArgumentParser(argparse.ArgumentParser):
  """Usage errors exit with code 1 instead of argparse's 2, which is reserved for instability."""

  def error(self, message):
    self.print_usage(sys.stderr)
    self.exit(1, f'{self.prog}: error: {message}\n')

def _add_params(parser, with_lambda=True):
  if with_lambda:
    parser.add_argument("--lambda", dest="lam", type=float, required=True, help="Arrival rate.")
  parser.add_argument("--mu", type=float, required=True, help="Service rate at the needy station.")
  parser.add_argument("--delta", type=float, required=True, help="Rate of leaving the content state.")
  parser.add_argument("--p", type=float, required=True, help="Return probability after a service.")

def _add_output(parser, formats=('json', 'csv')):
  parser.add_argument("--format", choices=formats, default=formats[0], help="Output format.")
  parser.add_argument("-o", "--output", type=str, help="The destination file; stdout when omitted.")

def parse_args(argv=sys.argv[1:]):
  parser = ArgumentParser(prog='erlangr', description="Restricted Erlang-R models: analysis, limits, dimensioning, simulation and MOL staffing.")
  parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logging on stderr.")
  sub = parser.add_subparsers(dest="command", metavar="command")
  sub.required = True

  p = sub.add_parser("analyze", help="Exact stationary measures of a model with given (s, n).")
  p.add_argument("--model", choices=('blocking', 'holding', 'closed_ward'), required=True)
  _add_params(p)
  p.add_argument("--s", type=int, required=True, help="Number of servers (nurses).")
  p.add_argument("--n", type=int, required=True, help="Number of beds.")
  p.add_argument("--scheme", choices=SCHEMES, default='functional', help="Iteration for the holding rate matrix.")
  p.add_argument("--no-arrival-theorem", action="store_true", help="Blocking model: delay seen at population n, not n-1.")
  p.add_argument("--dist", type=str, help="Also write the stationary distribution as CSV here.")
  _add_output(p)

  p = sub.add_parser("limits", help="QED limits of the blocking model and the holding heuristic.")
  p.add_argument("--beta", type=float)
  p.add_argument("--gamma", type=float)
  p.add_argument("--r", type=float, help="Needy fraction delta/(delta + p mu).")
  p.add_argument("--mu", type=float, default=1.0)
  p.add_argument("--loss", action="store_true", help="Loss-model limits (the r = 1 case).")
  p.add_argument("--batch", type=str, help="CSV with columns beta,gamma,r; one output row per input row.")
  _add_output(p)

  p = sub.add_parser("dimension", help="Size (s, n) for a target delay probability.")
  p.add_argument("--model", choices=('blocking', 'holding'), default='blocking')
  p.add_argument("--epsilon", type=float, required=True, help="Target delay probability.")
  pin = p.add_mutually_exclusive_group(required=True)
  pin.add_argument("--beta", type=float, help="Pin beta*.")
  pin.add_argument("--gamma", type=float, help="Pin gamma*.")
  pin.add_argument("--n", type=int, help="Pin the bed count (holding model only).")
  _add_params(p)
  _add_output(p, formats=('json',))

  p = sub.add_parser("simulate", help="Simulate from a JSON/YAML config file.")
  p.add_argument(dest="config", type=str, help="The simulation config file.")
  p.add_argument("--seed", type=int, help=f"Base seed; ${SEED_ENV} takes precedence.")
  p.add_argument("--replications", type=int)
  p.add_argument("--horizon", type=float)
  p.add_argument("--workers", type=int)
  p.add_argument("--ordering", action="store_true", help="Run all three models and check their orderings.")
  p.add_argument("--out", type=str, help="Directory for result.json and the CSV outputs.")

  p = sub.add_parser("mol", help="Modified-offered-load staffing schedule.")
  p.add_argument("--profile", type=str, help="Arrival profile file; the bundled case-study profile when omitted.")
  p.add_argument("--scale", type=float, default=1.0, help="Multiply every arrival rate.")
  _add_params(p, with_lambda=False)
  p.add_argument("--beta", type=float, required=True)
  p.add_argument("--gamma", type=float, required=True)
  p.add_argument("--interval", type=float, default=DEFAULT_INTERVAL)
  p.add_argument("--horizon", type=float)
  p.add_argument("--step", type=float, default=DEFAULT_STEP)
  p.add_argument("--loads", type=str, help="Also write the offered-load trajectory CSV here.")
  _add_output(p, formats=('csv', 'json'))

  p = sub.add_parser("tables", help="Regenerate accuracy tables and figure data as CSV.")
  p.add_argument("--out", type=str, required=True, help="Output directory.")
  p.add_argument("--case", action="append", choices=tuple(CASES), help="Restrict to these cases.")
  p.add_argument("--no-figures", action="store_true")
  p.add_argument("--simulations", action="store_true", help="Also write the simulation-based figure data.")
  p.add_argument("--sim-horizon", type=float, help="Run length of each simulation figure.")
  p.add_argument("--seed", type=int, help=f"Simulation seed; ${SEED_ENV} takes precedence.")

  args = parser.parse_args(argv)
  return args

def setup_logging(verbose):
  level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
  logging.basicConfig(level=level, stream=sys.stderr, format='%(levelname)s %(name)s: %(message)s', force=True)

def _emit_text(text, output):
  if output is None:
    sys.stdout.write(text)
  else:
    with open(output, 'w', newline='') as f:
      f.write(text)

def emit_json(obj, output, schema=None):
  obj = round_significant(obj)
  if schema is not None:
    CFG.validate(obj, schema)
  text = dump_json(obj, output)
  if output is None:
    sys.stdout.write(text + '\n')

def _params(args):
  return ModelParams(lam=args.lam, mu=args.mu, delta=args.delta, p=args.p)

def cmd_analyze(args):
  params = _params(args)
  cap = CapacityPair(args.s, args.n)
  warn_if_servers_exceed_beds(cap)
  if args.model == 'blocking':
    dist = stationary_blocking(params, cap)
    report = perf_blocking(dist, arrival_theorem=not args.no_arrival_theorem)
  elif args.model == 'holding':
    dist, report = analyze_holding(params, cap, scheme=args.scheme)
  else:
    dist = closed_ward_distribution(params, cap)
    report = dist.report()
  if args.dist is not None:
    dist.to_csv(args.dist)

  if args.format == 'csv':
    _emit_text(write_csv(None, ['measure', 'value'], report.measures().items()), args.output)
    return
  emit_json({
    'model': args.model,
    'params': params.to_dict(),
    'capacity': cap.to_dict(),
    'loads': derive_loads(params, cap.s).to_dict(),
    **report.to_dict(),
  }, args.output, schema='report')

def _limit_record(beta, gamma, r, mu):
  lim = limits_blocking(beta, gamma, r, mu)
  approx = holding_approx(beta, gamma, r, mu)
  return {'beta': beta, 'gamma': gamma, 'r': r, **lim.to_dict(), 'g_h': approx.g_h, 'h_h': approx.h_h, 'alpha': approx.alpha}

def cmd_limits(args):
  if args.batch is not None:
    rows = [(float(row['beta']), float(row['gamma']), float(row['r'])) for row in read_csv_rows(args.batch)]
    records = batch_limits(rows, args.mu)
  elif args.beta is None or args.gamma is None:
    raise UsageError('limits needs --beta and --gamma (or --batch FILE)')
  elif args.loss:
    g, f = loss_model_limits(args.beta, args.gamma)
    records = [{'beta': args.beta, 'gamma': args.gamma, 'g_loss': g, 'f_loss': f}]
  elif args.r is None:
    raise UsageError('limits needs --r')
  elif args.r == 1.0:
    raise UsageError('r = 1 is the loss model; use "limits --loss --beta B --gamma G"')
  else:
    records = [_limit_record(args.beta, args.gamma, args.r, args.mu)]

  if args.format == 'csv':
    header = list(records[0].keys())
    _emit_text(write_csv(None, header, ([rec[k] for k in header] for rec in records)), args.output)
    return
  meta = {**QUADRATURE_METADATA, 'scaling_denominator': CONVENTIONS['scaling_denominator']}
  emit_json({'results': records, 'metadata': meta}, args.output, schema='limits')

def cmd_dimension(args):
  params = _params(args)
  if args.n is not None:
    fixed = {'n': args.n}
    if args.model != 'holding':
      raise UsageError('pinning --n is only available with --model holding')
  elif args.beta is not None:
    fixed = {'beta': args.beta}
  else:
    fixed = {'gamma': args.gamma}
  if args.model == 'blocking':
    result = dimension_blocking(args.epsilon, fixed, derive_loads(params), params.mu)
  else:
    result = dimension_holding(args.epsilon, fixed, params)
  warn_if_servers_exceed_beds(result.cap)
  emit_json(result.to_dict(), args.output, schema='dimension')

def _seed(args, cfg_seed):
  env = os.environ.get(SEED_ENV)
  if env is not None:
    try:
      return int(env)
    except ValueError:
      raise UsageError(f'{SEED_ENV} must be an integer, got "{env}"')
  if args.seed is not None:
    return args.seed
  return cfg_seed

def _load_profile(source, base_dir):
  if isinstance(source, dict):
    return ArrivalProfile.from_mapping(source)
  if source == 'case_study':
    return ArrivalProfile.case_study()
  fn = source if os.path.isabs(source) else os.path.join(base_dir, source)
  return ArrivalProfile.load(fn)

def load_sim_config(fn):
  """Sim config as an ObjDict, merged over the SimConfig defaults."""
  configs = CFG.load_config_as_objdict(fn, schema='simulate_config')
  configs = ObjDict.set_defaults(configs, ObjDict({
    'model': 'holding',
    'sim': {'replications': 1, 'seed': 0, 'record_paths': False, 'batches': 30, 'workers': 1},
    'output': {},
  }))
  return configs

def _stationary_setup(configs):
  raw = dict(configs.params)
  if 'qed' in configs:
    qed = configs.qed
    mu, p = raw['mu'], raw['p']
    raw['lambda'] = qed.r1 * (1.0 - p) * mu
    params = ModelParams.from_mapping(raw)
    cap = qed_capacity(qed.r1, derive_loads(params).r, QedPair(qed.beta, qed.gamma))
  elif 'capacity' in configs:
    params = ModelParams.from_mapping(raw)
    cap = CapacityPair(configs.capacity.s, configs.capacity.n)
  else:
    raise UsageError('config needs "capacity" or "qed" (or a "time_varying" section)')
  return params, cap

def apply_sim_overrides(configs, args):
  """Command-line values win over the config file; the seed follows _seed."""
  overrides = {key: getattr(args, key) for key in ('replications', 'horizon', 'workers')
               if getattr(args, key) is not None}
  overrides['seed'] = _seed(args, configs.sim.get('seed', 0))
  return ObjDict.merge_recursively(configs, {'sim': overrides})

def cmd_simulate(args):
  configs = apply_sim_overrides(load_sim_config(args.config), args)
  cfg = SimConfig.from_mapping(dict(configs.sim), model=configs.model)
  out_dir = args.out or configs.output.get('dir')
  if out_dir is not None and not os.path.isabs(out_dir) and args.out is None:
    out_dir = os.path.join(os.path.dirname(os.path.abspath(args.config)), out_dir)

  if 'time_varying' in configs:
    tv = configs.time_varying
    profile = _load_profile(tv.profile, os.path.dirname(os.path.abspath(args.config)))
    raw = dict(configs.params)
    raw.setdefault('lambda', profile.mean_rate)
    params = ModelParams.from_mapping(raw)
    pair = QedPair(tv.beta, tv.gamma)
    # a periodic profile yields a one-period schedule that wraps over multi-day runs
    _, schedule = mol_staffing(profile, params, pair, tv.get('interval', DEFAULT_INTERVAL),
                               horizon=profile.period if profile.period is not None else cfg.horizon)
    result = time_varying_simulate(profile, schedule, params, cfg)
    summary = {'params': params.to_dict(), 'schedule': schedule.to_dict(), **result.to_dict()}
  else:
    params, cap = _stationary_setup(configs)
    warn_if_servers_exceed_beds(cap)
    if args.ordering:
      emit_json(ordering_experiment(params, cap, cfg), None if out_dir is None else os.path.join(out_dir, 'ordering.json'))
      return
    result = simulate(params, cap, cfg)
    summary = {'params': params.to_dict(), 'capacity': cap.to_dict(), **result.to_dict()}
  summary['config'] = cfg.to_dict()

  if out_dir is None:
    emit_json(summary, None, schema='simulation')
    return
  emit_json(summary, os.path.join(out_dir, 'result.json'), schema='simulation')
  if result.time_series:
    result.time_series_csv(os.path.join(out_dir, 'time_series.csv'))
  if cfg.record_paths:
    result.event_log_csv(os.path.join(out_dir, 'events.csv'))
    result.sample_paths_csv(os.path.join(out_dir, 'paths.csv'))
  logger.info('simulation outputs written to %s', out_dir)

def cmd_mol(args):
  profile = ArrivalProfile.case_study() if args.profile is None else ArrivalProfile.load(args.profile)
  if args.scale != 1.0:
    profile = profile.scaled(args.scale)
  # the load equations do not use lambda itself
  params = ModelParams(lam=max(profile.mean_rate, 1e-12), mu=args.mu, delta=args.delta, p=args.p)
  traj, schedule = mol_staffing(profile, params, QedPair(args.beta, args.gamma), args.interval,
                                horizon=args.horizon, step=args.step)
  if args.loads is not None:
    traj.to_csv(args.loads, every=max(int(round(args.interval / traj.step / 10)), 1))
  if args.format == 'csv':
    _emit_text(schedule.to_csv(), args.output)
  else:
    emit_json(schedule.to_dict(), args.output, schema='schedule')

def cmd_tables(args):
  cases = tuple(args.case) if args.case else tuple(CASES)
  written = write_tables(args.out, cases=cases, figures=not args.no_figures, simulations=args.simulations,
                         horizon=args.sim_horizon, seed=_seed(args, SIM_SEED))
  for fn in written:
    print(fn)

COMMANDS = {
  'analyze': cmd_analyze,
  'limits': cmd_limits,
  'dimension': cmd_dimension,
  'simulate': cmd_simulate,
  'mol': cmd_mol,
  'tables': cmd_tables,
}

def main(argv=None):
  """Run one subcommand and return its exit code: 0 ok, 1 usage, 2 unstable, 3 infeasible, 4 numerical."""
  try:
    args = parse_args(sys.argv[1:] if argv is None else argv)
  except SystemExit as e:
    return e.code if isinstance(e.code, int) else 1
  setup_logging(args.verbose)
  try:
    COMMANDS[args.command](args)
  except NotStable as e:
    print(format_exception(e), file=sys.stderr)
    print(f'rho={e.rho} rho_max={e.rho_max}', file=sys.stderr)
    return e.exit_code
  except ErlangRError as e:
    print(format_exception(e), file=sys.stderr)
    return e.exit_code
  except (ArithmeticError, np.linalg.LinAlgError) as e:
    logger.debug('numerical failure', exc_info=True)
    print(format_exception(e), file=sys.stderr)
    return ErlangRError.exit_code
  return 0

def run():
  sys.exit(main())

if __name__ == "__main__":
  run()
