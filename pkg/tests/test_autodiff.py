import numpy as np
import pytest

from l2i import autodiff as ad


def test_matmul_identity():
    a = ad.Tensor([[1.0, 0.0], [0.0, 1.0]])
    b = ad.Tensor([[3.0, 4.0], [5.0, 6.0]])
    assert np.array_equal(ad.matmul(a, b).values, b.values)


def test_matmul_hand_computed():
    out = ad.matmul(ad.Tensor([[1.0, 2.0]]), ad.Tensor([[3.0], [4.0]]))
    assert out.values.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 2\)"):
        ad.matmul(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((2, 2))))


def test_matmul_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    b_vals = rng.normal(size=(4, 2))

    def f(a):
        return ad.sum_all(ad.square(ad.matmul(a, ad.Tensor(b_vals))))

    err = ad.finite_difference_check(f, ad.Tensor(rng.normal(size=(3, 4))), eps=1e-5)
    assert err < 1e-4

    a_vals = rng.normal(size=(3, 4))

    def g(b):
        return ad.sum_all(ad.square(ad.matmul(ad.Tensor(a_vals), b)))

    assert ad.finite_difference_check(g, ad.Tensor(b_vals), eps=1e-5) < 1e-4


def test_relu_values():
    out = ad.relu(ad.Tensor([-1.0, 0.0, 2.0]))
    assert out.values.tolist() == [0.0, 0.0, 2.0]


def test_max_with_scalar_clamp():
    out = ad.max_with_scalar(ad.Tensor([-0.1, 0.3]), 0.0)
    assert out.values.tolist() == [0.0, 0.3]


def test_max_with_scalar_tie_subgradient_is_zero():
    x = ad.Tensor([1.0], requires_grad=True)
    ad.backward(ad.sum_all(ad.max_with_scalar(x, 1.0)))
    assert x.grad.tolist() == [0.0]


def test_square_gradient_at_three():
    x = ad.Tensor([3.0], requires_grad=True)
    ad.backward(ad.sum_all(ad.square(x)))
    assert x.grad[0] == pytest.approx(6.0, abs=1e-12)
    err = ad.finite_difference_check(lambda t: ad.sum_all(ad.square(t)), ad.Tensor([3.0]), eps=1e-5)
    assert err < 1e-6


def test_log_domain_error():
    with pytest.raises(ValueError, match="log domain"):
        ad.log(ad.Tensor([1.0, 0.0]))


def test_exp_overflow_is_an_error():
    with pytest.raises(ad.NumericalError):
        ad.exp(ad.Tensor([1000.0]))


def test_scalar_broadcast_only():
    x = ad.Tensor([1.0, 2.0])
    assert ad.add(x, 1.0).values.tolist() == [2.0, 3.0]
    with pytest.raises(ValueError, match="scalar broadcast"):
        ad.add(ad.Tensor(np.zeros((2, 2))), ad.Tensor(np.zeros(2)))


def test_scalar_operand_receives_summed_gradient():
    c = ad.Tensor(2.0, requires_grad=True)
    x = ad.Tensor([1.0, 2.0, 3.0])
    ad.backward(ad.sum_all(ad.mul(x, c)))
    assert c.grad.reshape(()) == pytest.approx(6.0)


def test_l2_normalize_three_four_five():
    out = ad.l2_normalize(ad.Tensor([3.0, 4.0]))
    assert np.allclose(out.values, [0.6, 0.8], atol=1e-12)


def test_l2_normalize_unit_vector_fixed_point_and_gradient():
    v = np.array([1.0, 0.0, 0.0])
    out = ad.l2_normalize(ad.Tensor(v))
    assert np.allclose(out.values, v, atol=1e-12)

    rng = np.random.default_rng(1)
    x = ad.Tensor(rng.normal(size=5))
    coeffs = ad.Tensor(rng.normal(size=5))
    err = ad.finite_difference_check(lambda t: ad.sum_all(ad.mul(ad.l2_normalize(t), coeffs)), x)
    assert err < 1e-4


def test_l2_normalize_zero_vector_raises():
    with pytest.raises(ad.DegenerateVectorError):
        ad.l2_normalize(ad.Tensor([0.0, 0.0]))


def test_l2_normalize_rowwise_norms():
    rng = np.random.default_rng(2)
    out = ad.l2_normalize(ad.Tensor(rng.normal(size=(6, 4))))
    norms = np.linalg.norm(out.values, axis=1)
    assert np.max(np.abs(norms - 1.0)) < 1e-9


def test_cross_entropy_uniform_logits():
    out = ad.softmax_cross_entropy(ad.Tensor([0.0, 0.0]), 0)
    assert out.item() == pytest.approx(np.log(2.0), abs=1e-12)


def test_cross_entropy_extreme_logits_no_overflow():
    # oracle: stable closed form log(1 + e^-20)
    expected = np.log1p(np.exp(-20.0))
    out = ad.softmax_cross_entropy(ad.Tensor([10.0, -10.0]), 0)
    assert out.item() == pytest.approx(expected, rel=1e-12)


def test_cross_entropy_gradient_matches_finite_differences():
    err = ad.finite_difference_check(
        lambda t: ad.softmax_cross_entropy(t, 1), ad.Tensor([1.0, 2.0, 3.0]), eps=1e-5
    )
    assert err < 1e-6


def test_cross_entropy_label_out_of_range():
    with pytest.raises(IndexError):
        ad.softmax_cross_entropy(ad.Tensor([0.0, 0.0]), 2)


def test_cross_entropy_mean_matches_per_sample_ops():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(5, 3))
    labels = [0, 2, 1, 1, 0]
    per_sample = [ad.softmax_cross_entropy(ad.Tensor(logits[i]), labels[i]).item() for i in range(5)]
    batched = ad.softmax_cross_entropy_mean(ad.Tensor(logits), labels)
    assert batched.item() == pytest.approx(np.mean(per_sample), rel=1e-12)
    err = ad.finite_difference_check(lambda t: ad.softmax_cross_entropy_mean(t, labels), ad.Tensor(logits))
    assert err < 1e-4


def test_backward_sum_of_squares():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    ad.backward(ad.sum_all(ad.square(x)))
    assert x.grad.tolist() == [2.0, 4.0]


def test_backward_accumulates_across_losses():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    ad.backward(ad.sum_all(ad.square(x)))
    ad.backward(ad.sum_all(ad.mul(x, 3.0)))
    assert x.grad.tolist() == [5.0, 7.0]


def test_backward_twice_on_same_result_is_an_error():
    x = ad.Tensor([1.0], requires_grad=True)
    loss = ad.sum_all(ad.square(x))
    ad.backward(loss)
    with pytest.raises(RuntimeError, match="already ran"):
        ad.backward(loss)


def test_backward_rejects_non_scalar():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(ad.square(x))


def test_shared_subexpression_gradient():
    # y = x + x doubles the gradient; guards the flow-buffer aliasing path
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    y = ad.add(x, x)
    ad.backward(ad.sum_all(ad.mul(y, y)))
    assert x.grad.tolist() == [8.0, 16.0]


def test_detach_blocks_gradient():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    ad.backward(ad.sum_all(ad.square(ad.detach(x))))
    assert x.grad.tolist() == [0.0, 0.0]


def test_row_and_take_rows_gradients():
    m = ad.Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    ad.backward(ad.sum_all(ad.square(ad.row(m, 1))))
    assert m.grad.tolist() == [[0, 0], [4, 6], [0, 0]]

    m2 = ad.Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    ad.backward(ad.sum_all(ad.take_rows(m2, [0, 0, 2])))
    assert m2.grad.tolist() == [[2, 2], [0, 0], [1, 1]]


def test_sum_rows_gradient():
    err = ad.finite_difference_check(
        lambda t: ad.sum_all(ad.square(ad.sum_rows(t))), ad.Tensor(np.random.default_rng(4).normal(size=(3, 4)))
    )
    assert err < 1e-6


def test_sqrt_gradient_and_zero_convention():
    err = ad.finite_difference_check(
        lambda t: ad.sum_all(ad.sqrt(t)), ad.Tensor([1.0, 4.0, 9.0])
    )
    assert err < 1e-6
    x = ad.Tensor([0.0], requires_grad=True)
    ad.backward(ad.sum_all(ad.sqrt(x)))
    assert x.grad.tolist() == [0.0]


def test_finite_difference_check_quadratic_is_tight():
    err = ad.finite_difference_check(
        lambda t: ad.sum_all(ad.mul(t, t)), ad.Tensor([1.0, 2.0, 3.0])
    )
    assert err < 1e-7


def test_finite_difference_check_eps_bounds():
    with pytest.raises(ValueError):
        ad.finite_difference_check(lambda t: ad.sum_all(t), ad.Tensor([1.0]), eps=1e-2)


@pytest.mark.parametrize("seed", range(10))
def test_every_op_passes_gradient_check_away_from_kinks(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=6) + 3.5  # strictly positive, away from relu/max kinks and log/sqrt domain edges
    m = rng.normal(size=(3, 4))
    c1 = ad.Tensor(rng.normal(size=6))
    c2 = ad.Tensor(rng.normal(size=6))
    c3 = ad.Tensor(rng.normal(size=6))
    w = ad.Tensor(rng.normal(size=(4, 2)))
    cases = [
        (lambda t: ad.sum_all(ad.add(t, c1)), ad.Tensor(v)),
        (lambda t: ad.sum_all(ad.sub(c2, t)), ad.Tensor(v)),
        (lambda t: ad.sum_all(ad.mul(t, c3)), ad.Tensor(v)),
        (lambda t: ad.sum_all(ad.relu(t)), ad.Tensor(v)),
        (lambda t: ad.sum_all(ad.exp(ad.mul(t, 0.3))), ad.Tensor(v)),
        (lambda t: ad.sum_all(ad.log(t)), ad.Tensor(v)),
        (lambda t: ad.sum_all(ad.square(t)), ad.Tensor(v)),
        (lambda t: ad.sum_all(ad.sqrt(t)), ad.Tensor(v)),
        (lambda t: ad.sum_all(ad.max_with_scalar(t, 3.0)), ad.Tensor(v + 1.0)),
        (lambda t: ad.sum_all(ad.square(ad.matmul(t, w))), ad.Tensor(m)),
        (lambda t: ad.mean_all(ad.square(t)), ad.Tensor(m)),
        (lambda t: ad.sum_all(ad.mul(ad.l2_normalize(t), c1)), ad.Tensor(v)),
        (lambda t: ad.softmax_cross_entropy(t, 2), ad.Tensor(rng.normal(size=5))),
    ]
    for f, x in cases:
        assert ad.finite_difference_check(f, x) < 1e-4


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(7)
        x = ad.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        w = ad.Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        h = ad.l2_normalize(ad.relu(ad.matmul(x, w)))
        loss = ad.softmax_cross_entropy_mean(h, [0, 1, 0, 1])
        ad.backward(loss)
        return loss.values.tobytes(), x.grad.tobytes(), w.grad.tobytes()

    assert run() == run()


def test_grad_buffer_shape_matches_values():
    t = ad.Tensor(np.zeros((2, 3)), requires_grad=True)
    assert t.grad.shape == t.values.shape
    assert ad.Tensor(np.zeros(3)).grad is None
