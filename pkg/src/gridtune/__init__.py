"""Perceive-and-optimize tuning of dynamic ancillary-service response curves.

Pipeline: encode grid-code capability curves as a parametric transfer-function
matrix, identify a local grid dynamic equivalent from data, and tune the curve
parameters by projected gradient descent on a closed-loop H2 cost under
grid-code and device-level constraints.
"""

from .errors import (
    GridTuneError,
    IdentificationError,
    InfeasibleError,
    NumericalError,
    StabilityError,
    ValidationError,
)
from .gridsim import GridScenario, OscillatoryMode, make_nominal_grid, make_oscillatory_grid
from .lti import ClosedLoop, PerfWeights, augment_grid, close_loop, h2_gradient, h2_norm_sq
from .optimizer import OptimizerConfig, OptRun, compare_baseline, optimize, sequential_po
from .pwl import PwlCurve, RationalTf, StateSpace, pade_delay, pwl_step_tf
from .services import (
    AlphaParams,
    AuxParams,
    Droops,
    FcrParams,
    FfrParams,
    LimitSet,
    VqParams,
    baseline_alpha,
    build_tdes,
    check_feasible,
    project,
)
from .sysid import ArxModel, TimeSeriesDataset, fit_arx, identify, rbs

__version__ = "0.1.0"
