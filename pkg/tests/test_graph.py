import numpy as np
import pytest

from potflow import graph as gr
from helpers import finite_diff_check, random_expression


def test_build_const_leaf():
    g = gr.Graph()
    c = g.build(gr.CONST, (), 2.0)
    assert g.evaluate(c, {}) == 2.0


def test_build_shared_operand():
    g = gr.Graph()
    a = g.const(3.0)
    s = g.build(gr.ADD, (a, a))
    assert g.evaluate(s, {}) == 6.0


def test_build_tanh_zero():
    g = gr.Graph()
    assert g.evaluate(g.build(gr.TANH, (g.const(0.0),)), {}) == 0.0


def test_build_arity_mismatch():
    g = gr.Graph()
    a = g.const(1.0)
    with pytest.raises(gr.GraphError):
        g.build(gr.ADD, (a,))
    with pytest.raises(gr.GraphError):
        g.build(gr.TANH, (a, a))
    with pytest.raises(gr.GraphError):
        g.build(gr.ADD, (a, 99))


def test_evaluate_square_and_tanh():
    g = gr.Graph()
    x = g.var()
    assert g.evaluate(g.mul(x, x), {x: 3.0}) == 9.0
    assert g.evaluate(g.tanh(x), {x: 1.0}) == pytest.approx(np.tanh(1.0), abs=0)


def test_evaluate_stop_gradient_is_identity_forward():
    g = gr.Graph()
    x = g.var()
    f = g.mul(g.stop_gradient(x), x)
    assert g.evaluate(f, {x: 2.0}) == 4.0


def test_evaluate_unbound_variable():
    g = gr.Graph()
    x = g.var()
    with pytest.raises(gr.EvaluationError, match="unbound"):
        g.evaluate(g.square(x), {})


def test_evaluate_division_by_zero_reported():
    g = gr.Graph()
    x = g.var()
    f = g.div(g.const(1.0), x)
    with pytest.raises(gr.EvaluationError, match="division"):
        g.evaluate(f, {x: 0.0})


def test_grad_square():
    g = gr.Graph()
    x = g.var()
    (d,) = g.grad(g.square(x), [x])
    assert g.evaluate(d, {x: 3.0}) == 6.0


def test_grad_grad_quartic():
    g = gr.Graph()
    x = g.var()
    x4 = g.square(g.square(x))
    (d1,) = g.grad(x4, [x])
    (d2,) = g.grad(d1, [x])
    assert g.evaluate(d2, {x: 2.0}) == 48.0


def test_grad_stop_gradient_blocks_adjoint():
    g = gr.Graph()
    x = g.var()
    f = g.mul(g.stop_gradient(x), x)
    (d,) = g.grad(f, [x])
    assert g.evaluate(d, {x: 2.0}) == 2.0
    sg_only = g.stop_gradient(g.square(x))
    (d0,) = g.grad(sg_only, [x])
    assert g.evaluate(d0, {x: 2.0}) == 0.0


def test_grad_requires_leaf_variables():
    g = gr.Graph()
    x = g.var()
    s = g.square(x)
    with pytest.raises(gr.GraphError):
        g.grad(s, [s])


@pytest.mark.parametrize("kind,point", [
    (gr.ADD, [1.3, -0.8]), (gr.SUB, [1.3, -0.8]), (gr.MUL, [1.3, -0.8]),
    (gr.DIV, [1.3, 0.9]), (gr.NEG, [0.6]), (gr.TANH, [0.6]),
    (gr.SQUARE, [0.6]), (gr.SQRT, [1.7]),
])
def test_every_op_kind_against_finite_differences(kind, point):
    g = gr.Graph()
    xs = [g.var() for _ in point]
    out = g.build(kind, tuple(xs))
    finite_diff_check(g, out, xs, point)


def test_random_compositions_against_finite_differences():
    rng = np.random.default_rng(42)
    for trial in range(200):
        g = gr.Graph()
        xs = [g.var() for _ in range(3)]
        out = random_expression(g, xs, rng, depth=4)
        point = rng.uniform(-2.0, 2.0, size=3)
        finite_diff_check(g, out, xs, list(point))


def test_second_derivative_of_polynomial_exact():
    # p(x) = 3 x^4 - 2 x^2 + 5 x; p''(x) = 36 x^2 - 4
    g = gr.Graph()
    x = g.var()
    p = g.add(g.sub(g.mul(g.const(3.0), g.square(g.square(x))),
                    g.mul(g.const(2.0), g.square(x))),
              g.mul(g.const(5.0), x))
    (d1,) = g.grad(p, [x])
    (d2,) = g.grad(d1, [x])
    for v in (-1.7, 0.0, 0.3, 2.0):
        assert abs(g.evaluate(d2, {x: v}) - (36 * v * v - 4)) <= 1e-12


def test_nested_differentiation_depth_six():
    # d^6/dx^6 of x^8 = 20160 x^2, via repeated grad
    g = gr.Graph()
    x = g.var()
    f = g.square(g.square(g.square(x)))
    for _ in range(6):
        (f,) = g.grad(f, [x])
    assert g.evaluate(f, {x: 1.5}) == pytest.approx(20160 * 1.5 ** 2, abs=1e-9)


def test_determinism_bit_identical():
    def run():
        g = gr.Graph()
        x, y = g.var(), g.var()
        out = g.mul(g.tanh(g.add(x, g.square(y))), g.div(x, g.add(g.square(y),
                                                                  g.const(0.5))))
        (d,) = g.grad(out, [x])
        return g.evaluate([out, d], {x: 0.8274619, y: -1.4142135})
    a = run()
    b = run()
    assert a[0] == b[0] and a[1] == b[1]


def test_dedup_does_not_change_values():
    rng = np.random.default_rng(7)
    for trial in range(20):
        vals = {}
        for dedup in (True, False):
            g = gr.Graph(dedup=dedup)
            xs = [g.var() for _ in range(2)]
            out = random_expression(g, xs, np.random.default_rng(trial), depth=3)
            (d,) = g.grad(out, [xs[0]])
            vals[dedup] = g.evaluate([out, d], {xs[0]: 0.37, xs[1]: -1.1})
        assert vals[True] == vals[False]
    # and dedup actually shares structure
    g = gr.Graph(dedup=True)
    x = g.var()
    assert g.square(x) == g.square(x)


def test_vector_bindings_broadcast():
    g = gr.Graph()
    x, y = g.var(), g.var()
    out = g.add(g.square(x), g.mul(g.const(2.0), y))
    xv = np.array([1.0, 2.0, 3.0])
    res = g.evaluate(out, {x: xv, y: 0.5})
    assert np.array_equal(res, xv ** 2 + 1.0)


def test_substitute_composes_expressions():
    g = gr.Graph()
    x = g.var()
    f = g.add(g.square(x), g.const(1.0))      # x^2 + 1
    inner = g.mul(g.const(3.0), x)            # 3x
    (comp,) = g.substitute([f], {x: inner})   # 9x^2 + 1
    assert g.evaluate(comp, {x: 2.0}) == 37.0
    # nodes independent of the mapping are reused
    c = g.const(5.0)
    (same,) = g.substitute([c], {x: inner})
    assert same == c


def test_grad_of_substituted_expression():
    g = gr.Graph()
    x = g.var()
    f = g.square(x)
    (comp,) = g.substitute([f], {x: g.tanh(x)})   # tanh(x)^2
    (d,) = g.grad(comp, [x])
    t = np.tanh(0.4)
    assert g.evaluate(d, {x: 0.4}) == pytest.approx(2 * t * (1 - t * t), rel=1e-12)
