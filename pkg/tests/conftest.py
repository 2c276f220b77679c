import numpy as np
import pytest

import oracles

from spoagent import doc_env, kernels
from spoagent.policy import PolicyParams
from spoagent.trajectory import RolloutGroup, Trajectory, Turn


@pytest.fixture(params=sorted(kernels.backends()))
def kernel(request):
    """Each available kernel backend module in turn."""
    return kernels.backends()[request.param]


def make_traj(actions, reward=0.0, prompt="p", tid=None, features=None, finished=True, cap=None):
    turns = []
    for k, a in enumerate(actions):
        feats = None if features is None else tuple(features[k])
        turns.append(Turn(state_text=f"s{k}", action_tokens=(k,), action_text=a, feedback_text=f"fb{k}", features=feats))
    return Trajectory(tid or f"{prompt}/{'-'.join(actions)}", prompt, tuple(turns), reward, finished, cap)


def make_group(rewards, embeddings=None, prompt="p"):
    trajs = []
    for i, r in enumerate(rewards):
        t = make_traj([f"a{i}"], r, prompt, tid=f"{prompt}/{i}")
        if embeddings is not None:
            t = t.with_embedding(embeddings[i])
        trajs.append(t)
    return RolloutGroup(prompt, tuple(trajs))


@pytest.fixture(scope="session")
def corpus():
    return doc_env.generate_corpus(7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_instance(rng, n_traj=3, feat=3, vocab=3, spread=0.3):
    """Trajectories with features, plus params near an old policy."""
    names = tuple(f"a{k}" for k in range(vocab))
    old = PolicyParams(rng.normal(size=(feat, vocab)), names, 0.8)
    ref = PolicyParams(rng.normal(size=(feat, vocab)), names, 0.8)
    new = PolicyParams(old.weights + spread * rng.normal(size=(feat, vocab)), names, 0.8)
    trajs = []
    for i in range(n_traj):
        length = int(rng.integers(1, 5))
        feats = rng.normal(size=(length, feat))
        t = make_traj([f"x{k}" for k in range(length)], 0.0, tid=f"t{i}", features=feats)
        # overwrite action tokens with random actions
        turns = tuple(
            type(tt)(tt.state_text, (int(rng.integers(vocab)),), tt.action_text, tt.feedback_text, tt.features)
            for tt in t.turns
        )
        trajs.append(type(t)(t.id, t.prompt_id, turns, 0.0))
    adv = rng.normal(size=n_traj)
    return trajs, adv, new, old, ref


def steps_of(trajs):
    return [(i, list(tt.features), tt.action_tokens[0]) for i, t in enumerate(trajs) for tt in t.turns]


def oracle_loss(trajs, adv, W, old, ref, eps, beta):
    return oracles.surrogate_loss(
        steps_of(trajs), list(adv), [len(t.turns) for t in trajs], W, old.weights.tolist(), ref.weights.tolist(),
        eps, beta, old.temperature,
    )


# ---------------------------------------------------------------------------
# acceptance report


def pytest_configure(config):
    config.acceptance = {}


@pytest.fixture
def acceptance(request):
    """Dict of criterion number -> status line, printed at the end of the run."""
    return request.config.acceptance


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance:
        terminalreporter.section("acceptance criteria")
        for n in sorted(config.acceptance):
            terminalreporter.write_line(config.acceptance[n])
