import numpy as np
import pytest

from ammexec import (
    ConstantProductPool,
    ExecutionProblem,
    GbmDynamics,
    KernelSet,
)


@pytest.fixture
def base_dynamics():
    return GbmDynamics(f0=1.0, mu=0.0, sigma=0.3)


@pytest.fixture
def base_problem():
    return ExecutionProblem(horizon=1.0, steps=10, order_size=1.0)


@pytest.fixture
def base_pool():
    return ConstantProductPool(1000.0)


@pytest.fixture
def single_kernel():
    return KernelSet.single(3.0)


@pytest.fixture
def permanent_kernels():
    return KernelSet(np.array([0.99, 0.01]), np.array([0.0, 5.0]))
