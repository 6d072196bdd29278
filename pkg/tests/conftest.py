import pytest

from hashpoint import bench


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # compile the jitted kernels once so individual tests measure logic, not jit
    bench.warm_kernels()
