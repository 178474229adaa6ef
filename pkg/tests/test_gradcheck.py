import numpy as np

from hcft import gradcheck
from hcft import tensor as T
from hcft.gradcheck import OP_CHECKS, check_function, run_suite, summarize
from hcft.tensor import Tensor


def broken_tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return T._node(t, (a,), lambda g: (g * (1.0 - t),), "tanh")       # forgot to square


def test_every_op_passes_on_a_few_seeds():
    for name, worst, passed in summarize(run_suite(range(3), checks=OP_CHECKS)):
        assert passed, f"{name}: {worst:.3e}"


def test_injected_wrong_rule_is_reported_by_name():
    def build(rng):
        return (lambda x: broken_tanh(x)), {"x": Tensor(rng.standard_normal(6), requires_grad=True)}

    rows = summarize(run_suite(range(2), checks={"tanh_bad": build, "tanh": OP_CHECKS["tanh"]}))
    status = {name: passed for name, _, passed in rows}
    assert status == {"tanh_bad": False, "tanh": True}


def test_report_is_deterministic_per_seed():
    a = check_function("cft_block_dyt", gradcheck.MODEL_CHECKS["cft_block_dyt"], 5, 1)
    b = check_function("cft_block_dyt", gradcheck.MODEL_CHECKS["cft_block_dyt"], 5, 1)
    assert a.worst == b.worst and a.passed and a.zero_grad_inputs == []


def test_directional_difference_of_a_quadratic():
    x = Tensor(np.array([1.0, -2.0, 0.5]))
    u = np.array([0.3, 0.1, -1.0])
    d = gradcheck.directional_difference(lambda t: (t * t).sum(), x, u, 1e-5)
    assert abs(d - 2 * np.dot(x.data, u)) < 1e-9
