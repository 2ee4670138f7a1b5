"""Tests for tensor operations, the tape and the reverse pass."""
import math

import numpy as np
import pytest

from core.exceptions import NonFiniteError, ShapeError, TapeError, VocabularyError
from core.tensor import (
    ComputationTape,
    Tensor,
    activation,
    add,
    backward,
    constant,
    cross_entropy,
    gather_rows,
    matmul,
    max_over_first_axis,
    mul,
    no_tape,
    parameter,
    softmax_rows,
    sum_all,
    tape_stage,
)


class TestTensor:
    """Test tensor construction rules."""

    def test_rejects_non_finite_values(self):
        """NaN and Inf are refused at construction."""
        with pytest.raises(NonFiniteError):
            constant([1.0, float("nan")])
        with pytest.raises(NonFiniteError):
            parameter([[float("inf")]])

    def test_rejects_empty_dimension(self):
        """Every dimension must be positive."""
        with pytest.raises(ShapeError):
            constant(np.zeros((0, 3)))

    def test_constants_are_read_only(self):
        """Non-trainable tensors cannot be modified in place."""
        x = constant([1.0, 2.0])
        with pytest.raises(ValueError):
            x.data[0] = 5.0

    def test_numpy_returns_copy(self):
        """numpy() hands out a caller-owned copy."""
        p = parameter([1.0, 2.0])
        copy = p.numpy()
        copy[0] = 9.0
        assert p.data[0] == 1.0


class TestOperations:
    """Test forward values of the basic operations."""

    def test_matmul_identity(self):
        """I2 times a matrix leaves it unchanged."""
        m = constant([[1.0, 2.0], [3.0, 4.0]])
        out = matmul(constant(np.eye(2)), m)
        np.testing.assert_array_equal(out.data, m.data)

    def test_matmul_shape_mismatch(self):
        """Disagreeing inner dimensions are reported."""
        with pytest.raises(ShapeError, match="inner dimensions"):
            matmul(constant(np.ones((2, 3))), constant(np.ones((2, 3))))

    def test_matmul_counts_macs(self):
        """A [2x3]@[3x2] product adds 12 multiply-accumulates."""
        with ComputationTape() as tape:
            matmul(constant(np.ones((2, 3))), constant(np.ones((3, 2))))
        assert tape.mac_counter == 12

    def test_softmax_examples(self):
        """Known rows normalize as expected, large logits do not overflow."""
        out = softmax_rows(constant([[0.0, 0.0], [math.log(2.0), 0.0], [1000.0, 0.0]]))
        np.testing.assert_allclose(out.data[0], [0.5, 0.5])
        np.testing.assert_allclose(out.data[1], [2.0 / 3.0, 1.0 / 3.0])
        np.testing.assert_allclose(out.data[2], [1.0, 0.0], atol=1e-12)

    def test_softmax_rows_sum_to_one(self, rng):
        """Rows sum to 1 for arbitrary finite input."""
        for _ in range(50):
            out = softmax_rows(constant(rng.normal(scale=20.0, size=(4, 7))))
            np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-6)
            assert (out.data >= 0).all()

    def test_activation_values(self):
        """tanh(0)=0, sigmoid(0)=0.5, relu clips negatives."""
        assert activation(constant([0.0]), "tanh").item() == 0.0
        assert activation(constant([0.0]), "sigmoid").item() == 0.5
        np.testing.assert_array_equal(activation(constant([-1.0, 2.0]), "relu").data, [0.0, 2.0])

    def test_sigmoid_far_tail_stays_positive(self):
        """sigmoid(-40) is about 4.2e-18, not 0."""
        y = activation(constant([-40.0, -700.0, 40.0]), "sigmoid").data
        assert y[0] == pytest.approx(math.exp(-40.0), rel=1e-9)
        assert y[1] > 0.0
        assert y[2] <= 1.0

    def test_sigmoid_gradient_at_zero(self):
        """d sigmoid / dx at 0 is 0.25."""
        x = parameter([0.0])
        with ComputationTape() as tape:
            loss = sum_all(activation(x, "sigmoid"))
        backward(tape, loss)
        assert x.grad[0] == pytest.approx(0.25)

    def test_relu_gradient_at_zero_is_zero(self):
        """The relu subgradient at 0 is 0."""
        x = parameter([0.0, 1.0])
        with ComputationTape() as tape:
            loss = sum_all(activation(x, "relu"))
        backward(tape, loss)
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_max_ties_pick_first(self):
        """Ties send the gradient to the first maximal position."""
        x = parameter([[2.0, 1.0], [2.0, 3.0]])
        with ComputationTape() as tape:
            loss = sum_all(max_over_first_axis(x))
        backward(tape, loss)
        np.testing.assert_array_equal(x.grad, [[1.0, 0.0], [0.0, 1.0]])

    def test_gather_rows_out_of_range(self):
        """Ids outside the table are rejected."""
        with pytest.raises(VocabularyError):
            gather_rows(constant(np.eye(3)), [0, 3])


class TestBackward:
    """Test gradient accumulation on the tape."""

    def test_sum_gradient(self):
        """grad of sum(x) is all ones."""
        x = parameter([1.0, 2.0, 3.0])
        with ComputationTape() as tape:
            loss = sum_all(x)
        backward(tape, loss)
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_square_gradient(self):
        """grad of sum(x*x) is 2x."""
        x = parameter([1.0, 2.0])
        with ComputationTape() as tape:
            loss = sum_all(mul(x, x))
        backward(tape, loss)
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_shared_input_accumulates(self):
        """A tensor used by two operations gets the sum of both paths."""
        x = parameter([[0.5, -1.0]])
        w = constant([[2.0], [3.0]])
        with ComputationTape() as tape:
            loss = sum_all(add(matmul(x, w), matmul(mul(x, x), w)))
        backward(tape, loss)
        expected = np.array([[2.0, 3.0]]) + 2.0 * x.data * np.array([[2.0, 3.0]])
        np.testing.assert_allclose(x.grad, expected)

    def test_gradients_accumulate_across_calls(self):
        """A second backward pass adds to the stored gradient."""
        x = parameter([1.0])
        for _ in range(2):
            with ComputationTape() as tape:
                loss = sum_all(x)
            backward(tape, loss)
        np.testing.assert_array_equal(x.grad, [2.0])

    def test_non_scalar_loss_rejected(self):
        """backward needs a scalar."""
        x = parameter([1.0, 2.0])
        with ComputationTape() as tape:
            y = mul(x, x)
        with pytest.raises(TapeError, match="scalar"):
            backward(tape, y)

    def test_loss_not_on_tape_rejected(self):
        """A loss computed outside the tape cannot be differentiated."""
        x = parameter([1.0])
        tape = ComputationTape()
        with no_tape():
            loss = sum_all(x)
        with pytest.raises(TapeError):
            backward(tape, loss)

    def test_cross_entropy_zero_weight_rows(self):
        """Rows with weight 0 get an exactly zero gradient."""
        logits = parameter([[1.0, 2.0], [0.5, -0.5], [3.0, 0.0]])
        with ComputationTape() as tape:
            loss = cross_entropy(logits, [0, 1, 1], [1.0, 0.0, 1.0])
        backward(tape, loss)
        assert (logits.grad[1] == 0.0).all()
        assert (logits.grad[0] != 0.0).all()


class TestTapeStages:
    """Test per-stage operation counting."""

    def test_stage_attribution(self):
        """MACs inside a stage are attributed to it and to the total."""
        a = constant(np.ones((2, 2)))
        with ComputationTape() as tape:
            matmul(a, a)
            with tape_stage("inner"):
                matmul(a, a)
        assert tape.mac_counter == 16
        assert tape.stage_macs["inner"] == 8

    def test_no_tape_records_nothing(self):
        """Operations under no_tape leave the tape empty."""
        a = constant(np.ones((2, 2)))
        with ComputationTape() as tape:
            with no_tape():
                matmul(a, a)
        assert len(tape) == 0
        assert tape.mac_counter == 0

    def test_counts_are_deterministic(self, rng):
        """Identical shapes give identical counts."""
        x = rng.normal(size=(3, 4))

        def run() -> int:
            with ComputationTape() as tape:
                softmax_rows(matmul(constant(x), constant(x.T)))
            return tape.mac_counter

        assert run() == run() == 36

    def test_tensor_membership(self):
        """A tape knows which tensors it produced."""
        x = parameter([1.0])
        with ComputationTape() as tape:
            y = mul(x, x)
        assert y in tape
        assert x not in tape
        assert isinstance(y, Tensor)
