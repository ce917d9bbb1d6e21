"""Learnable activations built from Hermite, Fourier and tropical bases."""

from .activations import (
    Activation,
    ClassicalActivation,
    FourierActivation,
    HermiteActivation,
    TropicalActivation,
    TropicalRationalActivation,
    activation_from_dict,
    deriv_batch,
    eval_batch,
    flops_per_eval,
    from_json,
    to_json,
)
from .basis import (
    HermiteTable,
    build_hermite_table,
    hermite_explicit,
    hermite_recursive,
    iter_hermite,
    overflow_counter,
)
from .bench import BenchResult, run_bench
from .data import Dataset, generate
from .errors import (
    ConditioningFailure,
    DegenerateActivation,
    NonConvergent,
    NonFiniteLoss,
    OrthoactError,
    RankDeficient,
    UnsupportedFamily,
)
from .fitting import FitGrid, FitResult, fit, fit_tropical_rational
from .gains import (
    GainReport,
    InputDist,
    analytic_gains,
    analytic_second_moment,
    init_theorem,
    monte_carlo_gains,
)
from .nn import (
    MlpModel,
    TrainConfig,
    finetune,
    make_activation,
    polynomial_network,
    train,
    verify_polynomial_mapping,
)

__version__ = "0.1.0"
