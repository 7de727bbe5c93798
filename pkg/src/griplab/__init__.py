"""griplab: a policy-learning laboratory for slip-safe in-hand reorientation.

A simulated underactuated hand holds an object that can irreversibly fall.
The package combines a Gaussian-process dynamics model and gradient-based
linear-policy search with a tactile reflex loop that corrects the grip every
tick, and provides an experiment harness that compares learning with and
without the reflexes in the loop.
"""

__version__ = "0.1.0"

from .gp import (  # noqa: F401
    DynamicsModel,
    GaussianProcess,
    GPHyper,
    StateDistribution,
    fit_dynamics,
    fit_gp,
    log_marginal_likelihood,
    propagate,
    se_kernel,
)
from .harness import (  # noqa: F401
    ExperimentConfig,
    ExperimentReport,
    RolloutTrace,
    TrialOutcome,
    TrialVerdict,
    compare_conditions,
    make_experiment_config,
    run_experiment,
    run_rollout,
    run_trial,
)
from .plant import (  # noqa: F401
    Event,
    Plant,
    PlantConfig,
    PlantState,
    State,
    default_plant_config,
)
from .policy import (  # noqa: F401
    Condition,
    CostSpec,
    Policy,
    expected_return,
    improve_policy,
    policy_action,
    random_policy,
    step_cost,
)
from .reactive import (  # noqa: F401
    LabeledForceSample,
    ReactiveGain,
    ReactiveLoop,
    SlipCalibration,
    SlipClass,
    calibrate,
    combine,
    control_error,
    count_interventions,
    default_calibration,
    default_gain,
    reactive_correction,
    reactive_energy,
    slip_class,
    slipping_coefficient,
)
