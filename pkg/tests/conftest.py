import pytest

from fbkit.experiments import PRESETS, gen_instance, reference_solution


def _setup(name):
    problem, x_ob = gen_instance(PRESETS[name])
    x_star, sig_star = reference_solution(problem)
    return problem, x_ob, x_star, sig_star


@pytest.fixture(scope="session")
def lasso_setup():
    return _setup("lasso")


@pytest.fixture(scope="session")
def group_setup():
    return _setup("group_lasso")


@pytest.fixture(scope="session")
def linf_setup():
    return _setup("linf")


@pytest.fixture(scope="session")
def tv_setup():
    return _setup("tv1d")


@pytest.fixture(scope="session")
def nuclear_setup():
    return _setup("nuclear")
