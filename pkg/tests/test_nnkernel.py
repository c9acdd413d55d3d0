import numpy as np
import pytest

from dpad import nnkernel as nk
from dpad.morph import SEKernel

from helpers import max_rel_err, numeric_grad

RNG = np.random.default_rng(20240817)


def check_grads(build, *arrays, tol=1e-4, seed_shape=None):
    """Analytic grads of sum(build(...) * r) vs central finite differences."""
    nodes = [nk.parameter(a) for a in arrays]
    out = build(*nodes)
    r = RNG.normal(0, 1, out.data.shape if seed_shape is None else seed_shape)
    out.backward(seed=r)

    for node, arr in zip(nodes, arrays):
        def scalar():
            with nk.no_grad():
                return float((build(*nodes).data * r).sum())
        err = max_rel_err(node.grad, numeric_grad(scalar, arr))
        assert err < tol, f"rel err {err:.2e}"


class TestMatmul:
    def test_identity(self):
        b = RNG.normal(0, 1, (3, 4))
        out = nk.matmul(nk.constant(np.eye(3)), nk.constant(b))
        assert np.allclose(out.data, b)

    def test_hand_case(self):
        out = nk.matmul(nk.constant([[1.0, 2.0], [3.0, 4.0]]), nk.constant([[1.0], [1.0]]))
        assert np.array_equal(out.data, [[3.0], [7.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            nk.matmul(nk.constant(np.ones((2, 3))), nk.constant(np.ones((2, 3))))

    def test_gradient(self):
        check_grads(nk.matmul, RNG.normal(0, 1, (3, 3)), RNG.normal(0, 1, (3, 3)), tol=1e-5)


class TestSoftmaxRows:
    def test_uniform(self):
        out = nk.softmax_rows(nk.constant(np.full((2, 4), 3.7)))
        assert np.allclose(out.data, 0.25)

    def test_hand_case(self):
        out = nk.softmax_rows(nk.constant([[0.0, np.log(3.0)]]))
        assert np.allclose(out.data, [[0.25, 0.75]], atol=1e-12)

    def test_rows_sum_to_one(self):
        out = nk.softmax_rows(nk.constant(RNG.normal(0, 5, (6, 7))))
        assert np.abs(out.data.sum(axis=1) - 1.0).max() < 1e-9

    def test_stability_large_values(self):
        out = nk.softmax_rows(nk.constant([[1e6, 1e6 + 1.0]]))
        assert np.all(np.isfinite(out.data))

    def test_gradient(self):
        check_grads(nk.softmax_rows, RNG.normal(0, 1, (4, 5)), tol=1e-5)


class TestConv2dComponents:
    def test_zero_kernels(self):
        x = RNG.normal(0, 1, (10, 4))
        out = nk.conv2d_components(nk.constant(x), nk.constant(np.zeros((4, 3, 4))),
                                   nk.constant(np.zeros(4)))
        assert np.array_equal(out.data, np.zeros((10, 4)))

    def test_delta_kernel_identity(self):
        x = RNG.normal(0, 1, (12, 3))
        kernels = np.zeros((3, 3, 3))
        for j in range(3):
            kernels[j, 1, j] = 1.0  # center tap on own channel
        out = nk.conv2d_components(nk.constant(x), nk.constant(kernels), nk.constant(np.zeros(3)))
        assert np.allclose(out.data, x)

    def test_matches_naive_loops(self):
        x = RNG.normal(0, 1, (8, 3))
        kernels = RNG.normal(0, 1, (3, 3, 3))
        bias = RNG.normal(0, 1, 3)
        out = nk.conv2d_components(nk.constant(x), nk.constant(kernels), nk.constant(bias)).data
        xp = np.pad(x, ((1, 1), (0, 0)), mode="edge")
        expected = np.empty((8, 3))
        for t in range(8):
            for j in range(3):
                acc = bias[j]
                for u in range(3):
                    for v in range(3):
                        acc += xp[t + u, v] * kernels[j, u, v]
                expected[t, j] = acc
        assert np.allclose(out, expected, atol=1e-12)

    def test_even_span_rejected(self):
        with pytest.raises(ValueError):
            nk.conv2d_components(nk.constant(np.ones((5, 2))),
                                 nk.constant(np.ones((2, 2, 2))), nk.constant(np.zeros(2)))

    def test_gradient(self):
        check_grads(nk.conv2d_components, RNG.normal(0, 1, (8, 3)),
                    RNG.normal(0, 1, (3, 3, 3)), RNG.normal(0, 1, (3,)), tol=1e-5)


class TestMlp:
    def test_zero_parameters(self):
        x = nk.constant(RNG.normal(0, 1, 5))
        layers = [(nk.constant(np.zeros((5, 4))), nk.constant(np.zeros(4))),
                  (nk.constant(np.zeros((4, 2))), nk.constant(np.zeros(2)))]
        assert np.array_equal(nk.mlp(x, layers).data, np.zeros(2))

    def test_single_affine_identity(self):
        x = RNG.normal(0, 1, 4)
        out = nk.mlp(nk.constant(x), [(nk.constant(np.eye(4)), nk.constant(np.zeros(4)))])
        assert np.array_equal(out.data, x)

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            nk.affine(nk.constant(np.ones(3)), nk.constant(np.ones((4, 2))),
                      nk.constant(np.zeros(2)))

    def test_gradient(self):
        check_grads(lambda x, w1, b1, w2, b2: nk.mlp(x, [(w1, b1), (w2, b2)]),
                    RNG.normal(0, 1, 6), RNG.normal(0, 1, (6, 4)), RNG.normal(0, 1, 4),
                    RNG.normal(0, 1, (4, 2)), RNG.normal(0, 1, 2), tol=1e-5)

    def test_gradient_row_batch(self):
        check_grads(lambda x, w, b: nk.affine(x, w, b),
                    RNG.normal(0, 1, (5, 3)), RNG.normal(0, 1, (3, 2)),
                    RNG.normal(0, 1, 2), tol=1e-5)


class TestEnvelopeRouting:
    def test_increasing_series_routes_to_right_edge(self):
        x = nk.parameter(np.arange(12.0))
        out = nk.dilate(x, SEKernel.zero(2))
        out.backward()
        expected = np.bincount(np.minimum(np.arange(12) + 2, 11), minlength=12).astype(float)
        assert np.array_equal(x.grad, expected)

    def test_constant_ties_route_to_first_index(self):
        x = nk.parameter(np.zeros(9))
        out = nk.dilate(x, SEKernel.zero(1))
        out.backward()
        expected = np.bincount(np.maximum(np.arange(9) - 1, 0), minlength=9).astype(float)
        assert np.array_equal(x.grad, expected)

    def test_finite_difference_at_non_tie_points(self):
        # distinct values with comfortable margins so eps cannot flip a winner
        x = RNG.permutation(np.linspace(-3.0, 3.0, 20)) * 1.0
        check_grads(lambda v: nk.dilate(v, SEKernel.zero(2)), x.copy(), tol=1e-5)
        check_grads(lambda v: nk.erode(v, SEKernel.zero(2)), x.copy(), tol=1e-5)
        check_grads(lambda v: nk.mean_envelope(v, SEKernel.zero(2)), x.copy(), tol=1e-5)

    def test_mean_envelope_matches_dilate_erode(self):
        x = nk.constant(RNG.normal(0, 1, 30))
        k = SEKernel.zero(3)
        fused = nk.mean_envelope(x, k)
        manual = nk.scale(nk.add(nk.dilate(x, k), nk.erode(x, k)), 0.5)
        assert np.array_equal(fused.data, manual.data)


class TestElementwiseOps:
    def test_scalar_broadcast_gradients(self):
        check_grads(nk.add, RNG.normal(0, 1, 7), RNG.normal(0, 1, ()), tol=1e-5)
        check_grads(nk.sub, RNG.normal(0, 1, 7), RNG.normal(0, 1, ()), tol=1e-5)
        check_grads(nk.mul, RNG.normal(0, 1, 7), np.asarray(1.7), tol=1e-5)
        check_grads(nk.div, RNG.normal(0, 1, 7), np.asarray(2.3), tol=1e-5)

    def test_same_shape_gradients(self):
        check_grads(nk.mul, RNG.normal(0, 1, (3, 4)), RNG.normal(0, 1, (3, 4)), tol=1e-5)
        check_grads(nk.div, RNG.normal(1, 0.1, 5), RNG.normal(3, 0.1, 5), tol=1e-5)

    def test_incompatible_shapes(self):
        with pytest.raises(ValueError):
            nk.add(nk.constant(np.ones(3)), nk.constant(np.ones(4)))

    def test_misc_gradients(self):
        check_grads(nk.neg, RNG.normal(0, 1, 6), tol=1e-5)
        check_grads(lambda x: nk.scale(x, 0.3), RNG.normal(0, 1, 6), tol=1e-5)
        check_grads(lambda x: nk.add_const(x, -1.2), RNG.normal(0, 1, 6), tol=1e-5)
        check_grads(nk.demean, RNG.normal(0, 1, 11), tol=1e-5)
        check_grads(nk.absolute, RNG.normal(0, 1, 9) + 0.5, tol=1e-5)
        check_grads(nk.mean_all, RNG.normal(0, 1, (3, 5)), tol=1e-5)
        check_grads(nk.sum_axis1, RNG.normal(0, 1, (4, 6)), tol=1e-5)
        check_grads(nk.transpose, RNG.normal(0, 1, (3, 5)), tol=1e-5)
        check_grads(lambda x, w, b: nk.affine_cols(x, w, b), RNG.normal(0, 1, (4, 5)),
                    RNG.normal(0, 1, (3, 4)), RNG.normal(0, 1, 3), tol=1e-5)

    def test_structural_gradients(self):
        check_grads(lambda a, b, c: nk.stack_cols([a, b, c]),
                    RNG.normal(0, 1, 6), RNG.normal(0, 1, 6), RNG.normal(0, 1, 6), tol=1e-5)
        check_grads(lambda a, b: nk.concat_cols([a, b]),
                    RNG.normal(0, 1, (5, 2)), RNG.normal(0, 1, (5, 3)), tol=1e-5)
        check_grads(lambda a, b: nk.concat_rows([a, b]),
                    RNG.normal(0, 1, (2, 4)), RNG.normal(0, 1, (3, 4)), tol=1e-5)
        check_grads(lambda a: nk.col(a, 1), RNG.normal(0, 1, (6, 3)), tol=1e-5)


class TestEngine:
    def test_backward_visits_nodes_once(self):
        x = nk.parameter(np.asarray(3.0))
        y = nk.add(x, x)       # diamond: two edges to the same parent
        z = nk.mul(y, y)
        z.backward()
        assert x.grad == pytest.approx(4 * 2 * 3.0)  # d(4x^2)/dx = 8x

    def test_diamond_with_intermediate_node(self):
        # x feeds both add() directly and through relu(); the shared
        # intermediate must collect both contributions before propagating
        base = nk.parameter(np.asarray(1.5))
        x = nk.scale(base, 2.0)
        out = nk.add(x, nk.relu(x))  # parent order (x, relu(x)) is the trap
        out.backward()
        assert float(base.grad) == pytest.approx(4.0)  # d(2v + relu(2v))/dv at v>0

    def test_sift_step_diamond(self):
        # the sifting pattern sub(s, mean_envelope(s)) shares s two ways
        rng = np.random.default_rng(3)
        arr = rng.permutation(np.linspace(-2, 2, 15))
        check_grads(lambda s: nk.sub(s, nk.mean_envelope(s, SEKernel.zero(2))),
                    arr, tol=1e-5)

    def test_gradient_accumulates_across_backwards(self):
        x = nk.parameter(np.ones(3))
        nk.scale(x, 2.0).backward()
        nk.scale(x, 3.0).backward()
        assert np.array_equal(x.grad, np.full(3, 5.0))

    def test_linearity_of_accumulation(self):
        a = RNG.normal(0, 1, 4)
        x1 = nk.parameter(a.copy())
        nk.mean_all(nk.mul(x1, x1)).backward()
        combined = x1.grad.copy()

        x2 = nk.parameter(a.copy())
        half = nk.scale(nk.mean_all(nk.mul(x2, x2)), 0.5)
        half.backward()
        half2 = nk.scale(nk.mean_all(nk.mul(x2, x2)), 0.5)
        half2.backward()
        assert np.allclose(x2.grad, combined, atol=1e-12)

    def test_no_grad_blocks_recording(self):
        x = nk.parameter(np.ones(3))
        with nk.no_grad():
            y = nk.scale(x, 2.0)
        assert not y.requires_grad and y._parents == ()

    def test_constants_record_no_graph(self):
        y = nk.add(nk.constant(np.ones(2)), nk.constant(np.ones(2)))
        assert not y.requires_grad and y._bwd is None

    def test_relu_subgradient_at_zero(self):
        x = nk.parameter(np.array([-1.0, 0.0, 2.0]))
        nk.mean_all(nk.relu(x)).backward()
        assert np.array_equal(x.grad, np.array([0.0, 0.0, 1.0]) / 3)


class TestParameterSet:
    def test_duplicate_name_rejected(self):
        ps = nk.ParameterSet()
        ps.create("w", np.ones(2))
        with pytest.raises(ValueError, match="already registered"):
            ps.create("w", np.ones(2))

    def test_state_round_trip(self):
        ps = nk.ParameterSet()
        ps.create("a", RNG.normal(0, 1, (2, 3)))
        ps.create("b", RNG.normal(0, 1, 4))
        state = ps.state()
        ps["a"].data[:] = 0.0
        ps.load_state(state)
        assert np.array_equal(ps["a"].data, state["a"])

    def test_load_state_missing_key(self):
        ps = nk.ParameterSet()
        ps.create("a", np.ones(2))
        with pytest.raises(ValueError, match="missing"):
            ps.load_state({})

    def test_load_state_shape_mismatch(self):
        ps = nk.ParameterSet()
        ps.create("a", np.ones(2))
        with pytest.raises(ValueError, match="shape"):
            ps.load_state({"a": np.ones(3)})

    def test_zero_grads(self):
        ps = nk.ParameterSet()
        p = ps.create("a", np.ones(2))
        nk.mean_all(p).backward()
        assert p.grad is not None
        ps.zero_grads()
        assert p.grad is None


def test_uniform_init_bounds():
    vals = nk.uniform_init(np.random.default_rng(0), (1000,), 16)
    assert np.all(np.abs(vals) <= 0.25 + 1e-12)
    assert vals.std() > 0.05
