"""Learning stage costs and active constraints of optimal control problems
from finite trajectory segments, with a forward solver for validation."""

from .candidates import (CandidateRow, CandidateSet, SignalSpec,
                         build_box_candidates, build_hull_candidates_2d,
                         evaluate_activity)
from .cost import (ParametricCost, cost_gradients, cost_value, lqr_cost,
                   pendulum_cost, project_parameters, tracking_cost)
from .dynamics import (DynamicsModel, LinearModel, PendulumModel,
                       PlanarArmModel, arm_step, model_jacobians,
                       pendulum_step)
from .forward import (ForwardProblem, ForwardSolution, SolverSettings,
                      predict_and_rms, solve_forward, solve_long_horizon,
                      solve_shortest_path)
from .learner import (LearnOptions, LearnProblem, LearnResult,
                      assemble_stationarity, identify_constraints,
                      learn_finite_horizon_baseline, solve_relaxed,
                      solve_relaxed_multi)
from .rollout import (RolloutSensitivities, Trajectory, read_csv, rollout,
                      rollout_sensitivities, write_csv)

__version__ = "0.1.0"
