"""Unit and property tests for the tensor/autograd core."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdaqa import autograd as ag
from cdaqa.errors import ContractError, ShapeError
from cdaqa.seeding import derive_rng


def fd_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x; the oracle for backward()."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        hi = f(x)
        flat[i] = keep - h
        lo = f(x)
        flat[i] = keep
        out[i] = (hi - lo) / (2.0 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray, guard: float = 1e-4) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), guard)
    return float(np.max(np.abs(a - b) / denom))


def check_grads(build, params: dict[str, np.ndarray], tol: float = 1e-4) -> None:
    """build(tensors) -> scalar Tensor; compares backward against fd_grad."""
    tensors = {k: ag.Tensor(v.copy(), requires_grad=True) for k, v in params.items()}
    with ag.record() as g:
        loss = build(tensors)
    grads = ag.backward(loss, g)
    for name, t in tensors.items():
        if t not in grads:
            continue

        def f(x, _name=name):
            probe = {k: ag.Tensor(v.data if k != _name else x) for k, v in tensors.items()}
            return float(build(probe).data)

        numeric = fd_grad(f, params[name].copy())
        assert rel_err(grads[t], numeric) < tol, f"gradient mismatch for {name}"


def test_tensor_is_float64_and_contiguous():
    t = ag.Tensor(np.arange(6, dtype=np.int32).reshape(2, 3))
    assert t.data.dtype == np.float64
    assert t.data.flags["C_CONTIGUOUS"]


def test_ops_outside_record_leave_no_tape():
    a = ag.Tensor([1.0, 2.0], requires_grad=True)
    out = ag.add(a, a)
    assert out.node_id is None
    assert ag.active_graph() is None


def test_backward_requires_scalar():
    a = ag.Tensor([1.0, 2.0], requires_grad=True)
    with ag.record() as g:
        out = ag.add(a, a)
    with pytest.raises(ContractError):
        ag.backward(out, g)


def test_backward_accumulates_across_calls():
    a = ag.Tensor([1.0, 2.0], requires_grad=True)
    for _ in range(2):
        with ag.record() as g:
            loss = ag.sum_all(ag.mul(a, a))
        ag.backward(loss, g)
    assert np.allclose(a.grad, 2 * 2 * a.data)


def test_matmul_shape_errors():
    a = ag.Tensor(np.ones((2, 3)))
    b = ag.Tensor(np.ones((4, 2)))
    with pytest.raises(ShapeError):
        ag.matmul(a, b)
    with pytest.raises(ShapeError):
        ag.matmul(ag.Tensor(np.ones(3)), b)


def test_grad_add_mul_broadcast():
    rng = derive_rng(0, "t-broadcast")
    check_grads(
        lambda t: ag.sum_all(ag.mul(ag.add(t["a"], t["b"]), t["a"])),
        {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4,))},
    )


def test_grad_matmul_linear_transpose():
    rng = derive_rng(0, "t-linalg")
    check_grads(
        lambda t: ag.sum_all(ag.matmul(t["x"], ag.transpose(t["y"]))),
        {"x": rng.normal(size=(3, 5)), "y": rng.normal(size=(4, 5))},
    )
    check_grads(
        lambda t: ag.sum_all(ag.linear(t["x"], t["w"], t["b"])),
        {"x": rng.normal(size=(3, 5)), "w": rng.normal(size=(2, 5)), "b": rng.normal(size=(2,))},
    )


def test_grad_softmax_rows_sum_to_one():
    rng = derive_rng(0, "t-softmax")
    x = rng.normal(size=(5, 7)) * 3
    y = ag.softmax(ag.Tensor(x), axis=-1)
    assert np.max(np.abs(y.data.sum(axis=-1) - 1.0)) < 1e-12
    check_grads(
        lambda t: ag.sum_all(ag.mul(ag.softmax(t["x"], axis=-1), t["c"])),
        {"x": x, "c": rng.normal(size=(5, 7))},
    )


def test_softmax_survives_masked_rows():
    x = np.full((2, 4), ag.MASK_NEG)
    x[0, 1] = 0.0
    x[1, 2] = 3.0
    y = ag.softmax(ag.Tensor(x), axis=-1).data
    assert np.isfinite(y).all()
    assert y[0, 1] == 1.0 and y[1, 2] == 1.0
    assert y[0, 0] == 0.0


def test_grad_layer_norm_and_gelu():
    rng = derive_rng(0, "t-ln")
    check_grads(
        lambda t: ag.sum_all(ag.mul(ag.layer_norm(t["x"], t["g"], t["b"]), t["c"])),
        {"x": rng.normal(size=(4, 6)), "g": 1 + 0.1 * rng.normal(size=(6,)),
         "b": 0.1 * rng.normal(size=(6,)), "c": rng.normal(size=(4, 6))},
        tol=2e-4,
    )
    check_grads(
        lambda t: ag.sum_all(ag.gelu(t["x"])),
        {"x": rng.normal(size=(5, 3)) * 2},
    )


def test_layer_norm_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        ag.layer_norm(ag.Tensor(np.ones((2, 3))), ag.Tensor(np.ones(4)), ag.Tensor(np.ones(4)))


def test_grad_cross_entropy_matches_softmax_minus_onehot():
    rng = derive_rng(0, "t-ce")
    x = rng.normal(size=7)
    t = ag.Tensor(x, requires_grad=True)
    with ag.record() as g:
        loss = ag.cross_entropy(t, 3)
    ag.backward(loss, g)
    p = np.exp(x - x.max())
    p /= p.sum()
    p[3] -= 1.0
    assert np.allclose(t.grad, p, atol=1e-12)
    with pytest.raises(IndexError):
        ag.cross_entropy(ag.Tensor(x), 7)


def test_grad_embedding_scatter_adds_repeats():
    table = ag.Tensor(np.arange(12, dtype=np.float64).reshape(4, 3), requires_grad=True)
    with ag.record() as g:
        got = ag.embedding(table, [1, 1, 3])
        loss = ag.sum_all(got)
    ag.backward(loss, g)
    expect = np.zeros((4, 3))
    expect[1] = 2.0
    expect[3] = 1.0
    assert np.array_equal(table.grad, expect)


def test_grad_concat_getcol_add_n():
    rng = derive_rng(0, "t-concat")
    check_grads(
        lambda t: ag.sum_all(ag.mul(ag.concat([t["a"], t["b"]], axis=1), t["c"])),
        {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=(2, 2)), "c": rng.normal(size=(2, 5))},
    )
    check_grads(
        lambda t: ag.sum_all(ag.mul(ag.getcol(t["a"], 1), t["v"])),
        {"a": rng.normal(size=(4, 3)), "v": rng.normal(size=(4,))},
    )
    check_grads(
        lambda t: ag.sum_all(ag.add_n([t["a"], t["a"], t["b"]])),
        {"a": rng.normal(size=(2, 2)), "b": rng.normal(size=(2, 2))},
    )


def test_dropout_inverted_scaling_and_grad():
    rng = derive_rng(0, "t-drop")
    x = ag.Tensor(np.ones((200, 50)), requires_grad=True)
    with ag.record() as g:
        y = ag.dropout(x, 0.3, derive_rng(1, "mask"))
        loss = ag.sum_all(y)
    ag.backward(loss, g)
    kept = y.data != 0.0
    assert np.allclose(y.data[kept], 1.0 / 0.7)
    assert np.array_equal(x.grad != 0.0, kept)
    assert abs(kept.mean() - 0.7) < 0.02
    with pytest.raises(ContractError):
        ag.dropout(x, 1.0, rng)


def test_backward_is_bit_identical_across_runs():
    rng = derive_rng(0, "t-deterministic")
    x = rng.normal(size=(6, 8))
    w = rng.normal(size=(8, 8))

    def run():
        tx = ag.Tensor(x, requires_grad=True)
        tw = ag.Tensor(w, requires_grad=True)
        with ag.record() as g:
            h = ag.gelu(ag.matmul(tx, tw))
            h = ag.softmax(h, axis=-1)
            loss = ag.sum_all(ag.mul(h, h))
        ag.backward(loss, g)
        return tx.grad.tobytes(), tw.grad.tobytes()

    assert run() == run()


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_property_softmax_rows_sum_to_one(rows, cols, seed):
    x = derive_rng(seed, "prop-softmax").normal(size=(rows, cols)) * 10
    y = ag.softmax(ag.Tensor(x), axis=-1).data
    assert np.max(np.abs(y.sum(axis=-1) - 1.0)) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_property_layer_norm_output_standardized(d, seed):
    x = derive_rng(seed, "prop-ln").normal(size=(3, d)) * 5
    y = ag.layer_norm(ag.Tensor(x), ag.Tensor(np.ones(d)), ag.Tensor(np.zeros(d))).data
    assert np.max(np.abs(y.mean(axis=-1))) < 1e-10
    if d > 1:
        assert np.max(np.abs((y * y).mean(axis=-1) - 1.0)) < 1e-6
