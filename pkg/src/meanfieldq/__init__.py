"""Q-learning with wide single-layer networks and their limit ODEs."""

from .activations import activation
from .backend import active_backend_name, get_kernels
from .limit import (
    KernelTensor,
    LyapunovTrace,
    OdeSolution,
    bellman_residual,
    draw_gaussian_table,
    estimate_A,
    estimate_initial_cov,
    identity_kernel,
    integrate,
    lyapunov_trace,
    ode_rhs_finite,
    ode_rhs_infinite,
    ode_rhs_regression,
    pd_check,
    solve_limit_finite,
    solve_limit_infinite,
    solve_limit_regression,
)
from .mdp import (
    MdpSpec,
    StateActionDist,
    ValidatedMdp,
    ValueTable,
    bellman_solve_finite,
    bellman_solve_infinite,
    load_mdp_spec,
    mdp_spec_from_dict,
    sample_chain,
    sample_episode,
    stationary_state_distribution,
    time_marginals,
    validate_mdp,
)
from .network import (
    InitLaw,
    NetworkParams,
    forward,
    forward_table,
    init_params,
    measure_moments,
    param_gradient,
)
from .training import (
    RegressionDataset,
    TrainConfig,
    TrainRecord,
    load_regression_dataset,
    q_step_finite,
    q_step_infinite,
    sgd_step_regression,
    train,
    training_loss,
)

__version__ = "0.1.0"
