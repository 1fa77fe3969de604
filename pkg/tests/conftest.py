import numpy as np
import pytest

from coevgan.nn_core import Activation, init_params, mlp_layers


def make_generator(rng, sizes=(2, 4, 2)):
    return init_params(mlp_layers(sizes, Activation.TANH, Activation.IDENTITY), rng)


def make_discriminator(rng, sizes=(2, 4, 1)):
    return init_params(mlp_layers(sizes, Activation.TANH, Activation.SIGMOID), rng)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        status, title, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"[{status}] {n:>2}. {title}" + (f" -- {detail}" if detail else ""))
