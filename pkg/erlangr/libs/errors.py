# Exit codes follow the CLI contract: 0 ok, 1 usage, 2 unstable, 3 infeasible, 4 numerical.

class ErlangRError(Exception):
  exit_code = 4

class UsageError(ErlangRError):
  exit_code = 1

class DomainError(ErlangRError, ValueError):
  exit_code = 1

class ScheduleGap(ErlangRError):
  exit_code = 1

class NotStable(ErlangRError):
  exit_code = 2

  def __init__(self, msg, rho=None, rho_max=None):
    super().__init__(msg)
    self.rho = rho
    self.rho_max = rho_max

class Infeasible(ErlangRError):
  exit_code = 3

class InfeasibleTarget(ErlangRError):
  exit_code = 3

class MaxIterations(ErlangRError):
  exit_code = 4

  def __init__(self, msg, iterations=None, residual=None):
    super().__init__(msg)
    self.iterations = iterations
    self.residual = residual

class NoConvergence(MaxIterations):
  pass

class SingularSystem(ErlangRError):
  exit_code = 4
