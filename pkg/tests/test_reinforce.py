import numpy as np
import pytest

from archsearch import reinforce as R
from archsearch.policy import AdamState, NonFiniteGradient, adam_step


def test_returns_are_suffix_sums():
    assert R.returns([[1.0, 1.0, 1.0]]).tolist() == [[3.0, 2.0, 1.0]]
    assert R.returns([[0.0, 0.0]]).tolist() == [[0.0, 0.0]]
    got = R.returns([[0.5, 0.2, 0.9]])[0]
    assert np.allclose(got, [1.6, 1.1, 0.9])


def test_baseline_initializes_to_batch_mean():
    state = R.BaselineState(None, 0.9)
    rets = np.array([[1.6, 1.1, 0.9], [1.6, 1.1, 0.9]])
    state = R.update_baseline(state, rets)
    assert np.allclose(state.values, [1.6, 1.1, 0.9])


def test_baseline_single_ema_step():
    state = R.BaselineState(np.array([1.0, 1.0]), 0.9)
    state = R.update_baseline(state, np.array([[2.0, 0.0]]))
    assert np.allclose(state.values, [1.1, 0.9])


def test_baseline_converges_to_constant_returns():
    state = R.BaselineState(None, 0.9)
    rets = np.full((4, 3), 0.42)
    for _ in range(80):
        state = R.update_baseline(state, R.returns(rets))
    assert np.allclose(state.values, R.returns(rets)[0], atol=1e-4)


def micro_grad(weight):
    def grad_fn(state, action):
        return {"w": np.array([float(weight)])}
    return grad_fn


def test_policy_gradient_degenerate_single_step():
    traj = R.Trajectory([[None]], [[0]], np.array([[0.7]]))
    g = R.policy_gradient(traj, np.array([0.2]), micro_grad(2.0))
    assert g["w"][0] == pytest.approx(2.0 * (0.7 - 0.2))


def test_policy_gradient_zero_advantages_is_none():
    traj = R.Trajectory([[None]], [[0]], np.array([[0.5]]))
    assert R.policy_gradient(traj, np.array([0.5]), micro_grad(1.0)) is None


def test_policy_gradient_linear_in_advantages():
    rewards = np.array([[0.5, 0.25], [0.0, 0.125]])
    traj1 = R.Trajectory([[None] * 2] * 2, [[0] * 2] * 2, rewards)
    traj2 = R.Trajectory([[None] * 2] * 2, [[0] * 2] * 2, rewards * 0.5)
    g1 = R.policy_gradient(traj1, np.zeros(2), micro_grad(1.5))
    g2 = R.policy_gradient(traj2, np.zeros(2), micro_grad(1.5))
    # power-of-two scaling keeps float products exact
    assert g1["w"][0] == 2.0 * g2["w"][0]


def test_policy_gradient_averages_over_rollouts():
    rewards = np.array([[1.0], [0.0]])
    traj = R.Trajectory([[None], [None]], [[0], [1]], rewards)

    def grad_fn(state, action):
        return {"w": np.array([1.0 if action == 0 else -1.0])}

    g = R.policy_gradient(traj, np.zeros(1), grad_fn)
    # (1 * (1-0) + (-1) * 0) / 2
    assert g["w"][0] == pytest.approx(0.5)


def test_policy_gradient_rejects_non_finite():
    traj = R.Trajectory([[None]], [[0]], np.array([[1.0]]))
    with pytest.raises(NonFiniteGradient):
        R.policy_gradient(traj, np.zeros(1),
                          lambda s, a: {"w": np.array([np.inf])})


def test_trajectory_validation():
    with pytest.raises(ValueError):
        R.Trajectory([[None]], [[0], [1]], np.array([[0.5]]))
    with pytest.raises(ValueError):
        R.Trajectory([[None]], [[0]], np.array([[1.5]]))


def test_clip_gradient():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = R.clip_gradient(g, max_norm=2.5)
    assert norm == pytest.approx(5.0)
    total = np.sqrt(sum(float(np.sum(v * v)) for v in clipped.values()))
    assert total == pytest.approx(2.5)
    same, norm2 = R.clip_gradient(g, max_norm=10.0)
    assert norm2 == pytest.approx(5.0) and same is g


# --- two-armed bandit: the full estimator + baseline + Adam loop -------------


def softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def run_bandit(seed, updates=200, batch=8, lr=0.1):
    rng = np.random.default_rng(seed)
    params = {"logits": np.zeros(2)}
    adam = AdamState.for_params(params)
    ema = R.BaselineState(None, 0.9)
    for _ in range(updates):
        probs = softmax(params["logits"])
        arms = [int(rng.random() > probs[0]) for _ in range(batch)]
        rewards = np.array([[1.0 if a == 0 else 0.0] for a in arms])

        def grad_fn(state, arm, probs=probs):
            g = -probs.copy()
            g[arm] += 1.0
            return {"logits": g}

        traj = R.Trajectory([[None]] * batch, [[a] for a in arms], rewards)
        rets = R.returns(rewards)
        first = ema.values is None
        if first:
            ema = R.update_baseline(ema, rets)
        g = R.policy_gradient(traj, ema.values, grad_fn)
        if not first:
            ema = R.update_baseline(ema, rets)
        if g is not None:
            adam_step(params, g, adam, lr=lr)
        if softmax(params["logits"])[0] > 0.95:
            return True
    return softmax(params["logits"])[0] > 0.95


@pytest.mark.parametrize("seed", range(5))
def test_bandit_converges_within_200_updates(seed):
    assert run_bandit(seed)


def test_baseline_leaves_gradient_expectation_unchanged():
    """With a frozen policy, the baselined and plain estimators agree in
    expectation (Monte Carlo over 10k single-step trajectories)."""
    rng = np.random.default_rng(42)
    logits = np.array([0.3, -0.2])
    probs = softmax(logits)
    b = 0.37
    n = 10_000
    with_b = np.zeros((n, 2))
    without = np.zeros((n, 2))
    for i in range(n):
        arm = int(rng.random() > probs[0])
        r = 1.0 if arm == 0 else 0.2
        g = -probs.copy()
        g[arm] += 1.0
        with_b[i] = g * (r - b)
        without[i] = g * r
    diff = with_b.mean(axis=0) - without.mean(axis=0)
    # E[diff] = -b * E[grad log pi] = 0; allow 3 sigma of the MC error
    sigma = (with_b - without).std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(diff) <= 3 * sigma + 1e-12)
