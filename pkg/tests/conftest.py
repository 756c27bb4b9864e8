import numpy as np
import pytest

from gridtune.gridsim import GridScenario, OscillatoryMode, make_nominal_grid, make_oscillatory_grid
from gridtune.lti import PerfWeights
from gridtune.optimizer import OptimizerConfig, optimize
from gridtune.services import Droops, LimitSet, baseline_alpha


@pytest.fixture(scope="session")
def droops():
    return Droops()


@pytest.fixture(scope="session")
def limits():
    return LimitSet()


@pytest.fixture(scope="session")
def weights():
    return PerfWeights()


@pytest.fixture(scope="session")
def nominal_grid():
    return make_nominal_grid(GridScenario())


@pytest.fixture(scope="session")
def oscillatory_grid():
    return make_oscillatory_grid(GridScenario(mode=OscillatoryMode()))


@pytest.fixture(scope="session")
def alpha0(limits):
    return baseline_alpha(limits)


@pytest.fixture(scope="session")
def nominal_run(nominal_grid, droops, limits, weights, alpha0):
    return optimize(nominal_grid, droops, limits, weights, OptimizerConfig(), alpha0)


@pytest.fixture(scope="session")
def oscillatory_run(oscillatory_grid, droops, limits, weights, alpha0):
    return optimize(oscillatory_grid, droops, limits, weights, OptimizerConfig(), alpha0)


@pytest.fixture(scope="session")
def rbs_excitation():
    from gridtune.sysid import rbs

    n = 40000
    return np.column_stack(
        [rbs(n, 0.03, 0.1, seed=1), rbs(n, 0.03, 0.1, seed=2)]
    )
