import numpy as np
import pytest

from cvfcn.optim import Adam, adam_step, sgd_step


def test_adam_zero_grad():
    p = {"w": np.array([1 + 2j, -3j], np.complex64)}
    opt = Adam()
    opt.step(p, {"w": np.zeros(2, np.complex64)})
    np.testing.assert_array_equal(p["w"], [1 + 2j, -3j])
    assert opt.t == 1


def test_adam_first_step_is_sign():
    p = {"w": np.zeros(3, np.complex128), "g": np.zeros((2, 2))}
    grads = {"w": np.array([0.3 - 2j, -5 + 1e-3j, 1j]), "g": np.array([[4.0, -1], [0, 2]])}
    adam_step(p, grads, Adam(lr=0.01))
    np.testing.assert_allclose(p["w"], [-0.01 + 0.01j, 0.01 - 0.01j, -0.01j], rtol=1e-4)
    np.testing.assert_allclose(p["g"], [[-0.01, 0.01], [0, -0.01]], rtol=1e-4)


def test_adam_deterministic():
    def run():
        rng = np.random.default_rng(0)
        p = {"w": np.zeros(5, np.complex64)}
        opt = Adam(lr=0.1)
        for _ in range(10):
            g = rng.standard_normal(5) + 1j * rng.standard_normal(5)
            opt.step(p, {"w": g.astype(np.complex64)})
        return p["w"].tobytes()
    assert run() == run()


def test_adam_converges_on_quadratic():
    p = {"w": np.zeros(1, np.complex128)}
    opt = Adam(lr=0.05)
    target = 1.5 - 0.5j
    for _ in range(500):
        opt.step(p, {"w": 2 * (p["w"] - target)})
    assert abs(p["w"][0] - target) < 1e-2


def test_sgd():
    w = {"w": np.zeros(1, np.complex128)}
    sgd_step(w, {"w": np.array([-2.0 + 0j])}, 0.5)  # grad of |re(w) - 1|^2 at 0
    assert w["w"][0] == 1
    w2 = {"w": np.array([1 + 1j])}
    sgd_step(w2, {"w": np.array([1 + 1j])}, 0.0)
    assert w2["w"][0] == 1 + 1j
    a, b = {"w": np.zeros(1)}, {"w": np.zeros(1)}
    sgd_step(a, {"w": np.ones(1)}, 0.1)
    sgd_step(b, {"w": np.ones(1)}, 0.2)
    assert b["w"][0] == pytest.approx(2 * a["w"][0])


def test_shape_mismatch():
    with pytest.raises(ValueError):
        Adam().step({"w": np.zeros(2)}, {"w": np.zeros(3)})
    with pytest.raises(ValueError):
        sgd_step({"w": np.zeros(2)}, {}, 0.1)
