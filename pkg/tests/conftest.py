import numpy as np
import pytest

import cfkin


@pytest.fixture(scope="session")
def ref_kernel():
    return cfkin.reference_kernel()


@pytest.fixture(scope="session")
def ref_db(ref_kernel):
    return cfkin.build_db(ref_kernel, 2048)


@pytest.fixture(scope="session")
def ref_tables(ref_kernel):
    return ref_kernel.tables(200)


@pytest.fixture(scope="session")
def bd_db():
    """Unit Becker-Doring kernel: Q_i = 1, z_s = 1, rho_s divergent."""
    return cfkin.build_db(cfkin.becker_doring_unit(), 1024)


@pytest.fixture(scope="session")
def half_table_db():
    """Table kernel with a = 1, b = 2: Q_i = 2^(1-i), z_s = 2."""
    n = 256
    a = np.ones((n + 1, n + 1))
    b = np.full((n + 1, n + 1), 2.0)
    kernel = cfkin.TableKernel(a, b)
    return cfkin.build_db(kernel, n)


def rng(seed=0):
    return np.random.default_rng(seed)
