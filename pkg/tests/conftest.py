import numpy as np

from stocg.benchmarks import QuadraticSpec, build_quadratic
from stocg.composition import exact_gradient
from stocg.sets import FeasibleSet

SET_SPECS = ("l1:1.5", "l2:1", "simplex:1", "box:-1:2")


def random_quadratic_instance(rng):
    """Random quadratic problem, feasible point, beta and perturbed gradient estimate."""
    d = int(rng.integers(2, 7))
    spec = SET_SPECS[int(rng.integers(len(SET_SPECS)))]
    B = rng.standard_normal((d, d))
    Q = 0.5 * (B + B.T)
    c = rng.standard_normal(d)
    problem, _ = build_quadratic(QuadraticSpec(Q, c, spec))
    fs = FeasibleSet.parse(spec, d)
    x = fs.sample(rng, 1)[0]
    beta = float(np.exp(rng.uniform(np.log(0.1), np.log(10.0))))
    grad = exact_gradient(problem, x)
    z = grad + rng.standard_normal(d) * rng.uniform(0, 2)
    return problem, fs, x, beta, grad, z


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
