import numpy as np
import pytest

from metaexplore.envs import make_env
from metaexplore.nn import ConfigurationError
from metaexplore.policies import DeterministicActor, GaussianPolicy, GaussianNoise, NoisyActor
from metaexplore.rollout import RolloutRequest, RolloutWorker, collect


def actor(rng):
    return DeterministicActor.create(3, [-2.0], [2.0], rng, hidden=(8,))


def test_step_budget_and_layout(rng):
    env = make_env("pendulum", np.random.default_rng(0), max_episode_steps=30)
    traj = RolloutWorker(env).collect(actor(rng), rng, n_steps=75)
    assert len(traj) == 75
    assert traj.states.shape == (75, 3) and traj.actions.shape == (75, 1)
    assert list(np.flatnonzero(traj.episode_starts)) == [0, 30, 60]
    assert list(np.flatnonzero(traj.episode_ends)) == [29, 59]
    np.testing.assert_array_equal(traj.states[1:30], traj.next_states[:29])
    assert [c for _, _, c in traj.episodes()] == [True, True, False]


def test_episode_budget(rng):
    env = make_env("pendulum", np.random.default_rng(0), max_episode_steps=20)
    traj = RolloutWorker(env).collect(actor(rng), rng, n_episodes=3)
    assert len(traj) == 60 and len(traj.episode_returns()) == 3


def test_pre_clip_recorded_for_teacher_only(rng):
    env = make_env("pendulum", np.random.default_rng(0))
    a = actor(rng)
    teacher = GaussianPolicy.adaptive_variance(a, [1.5])
    t_traj = RolloutWorker(env).collect(teacher, rng, n_steps=50)
    assert t_traj.pre_clip.shape == (50, 1)
    np.testing.assert_array_equal(t_traj.actions, np.clip(t_traj.pre_clip, -2, 2))
    assert t_traj.behavior == "teacher"
    assert RolloutWorker(env).collect(a, rng, n_steps=5).pre_clip is None


def test_zero_budget(rng):
    env = make_env("pendulum", np.random.default_rng(0))
    teacher = GaussianPolicy.adaptive_variance(actor(rng))
    traj = RolloutWorker(env).collect(teacher, rng, n_steps=0)
    assert len(traj) == 0 and traj.pre_clip.shape == (0, 1)


def test_budget_validation(rng):
    worker = RolloutWorker(make_env("pendulum"))
    with pytest.raises(ConfigurationError):
        worker.collect(actor(rng), rng)
    with pytest.raises(ConfigurationError):
        worker.collect(actor(rng), rng, n_steps=3, n_episodes=1)
    with pytest.raises(ConfigurationError):
        worker.collect(actor(rng), rng, n_steps=-1)


def test_persistent_worker_continues_episode(rng):
    env = make_env("pendulum", np.random.default_rng(0), max_episode_steps=30)
    worker = RolloutWorker(env, persistent=True)
    a = actor(rng)
    first = worker.collect(a, rng, n_steps=20)
    second = worker.collect(a, rng, n_steps=20)
    assert not second.episode_starts[0]
    np.testing.assert_array_equal(second.states[0], first.next_states[-1])
    assert second.episode_ends[9] and second.episode_starts[10]


def test_goal_count_on_point_mass():
    env = make_env("point_mass", np.random.default_rng(0))
    toward_goal = DeterministicActor.create(2, [-1.0, -1.0], [1.0, 1.0], np.random.default_rng(0), hidden=(4,))
    toward_goal.net.weights[-1][:] = 0.0
    toward_goal.net.biases[-1][:] = 50.0  # always (+1, +1)
    traj = RolloutWorker(env).collect(toward_goal, np.random.default_rng(0), n_episodes=20)
    assert 0 < traj.n_goal() <= 20
    ends = np.flatnonzero(traj.episode_ends)
    assert all(traj.rewards[e] == 1.0 for e in ends if traj.terminals[e])


def test_request_is_reproducible(rng):
    policy = NoisyActor(actor(rng), GaussianNoise(1, 0.3))
    req = RolloutRequest(policy, "pendulum", seed=17, n_steps=40)
    a, b = collect(req), collect(req)
    np.testing.assert_array_equal(a.actions, b.actions)
    np.testing.assert_array_equal(a.states, b.states)
    c = collect(RolloutRequest(policy, "pendulum", seed=18, n_steps=40))
    assert not np.array_equal(a.states, c.states)


def test_request_validation(rng):
    with pytest.raises(ConfigurationError):
        RolloutRequest(actor(rng), "pendulum", 0)
