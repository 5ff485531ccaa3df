from erlangr.core_model import ModelParams, CapacityPair, QedPair, PerformanceReport, derive_loads, qed_capacity, invert_capacity
from erlangr.blocking_exact import stationary_blocking, perf_blocking
from erlangr.holding_qbd import build_qbd_blocks, solve_rate_matrix, stationary_holding, perf_holding, analyze_holding, rho_max
from erlangr.qed_limits import limits_blocking, halfin_whitt_delay, loss_model_limits
from erlangr.fixed_point import solve_alpha, holding_approx, dimension_blocking, dimension_holding
from erlangr.mol_staffing import ArrivalProfile, StaffingSchedule, integrate_offered_load, mol_schedule, mol_staffing
from erlangr.simulator import SimConfig, SimResult, simulate, time_varying_simulate, ordering_experiment
