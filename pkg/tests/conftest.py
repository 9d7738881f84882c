import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gopo.core import (
    BusinessContext,
    CsaState,
    ExpertState,
    Response,
    Skill,
    SkillSequence,
    TurnSummary,
    response_markers,
)
from gopo.simenv import EnvConfig, default_env_config, validate_env_config


@pytest.fixture(scope="session")
def env_cfg():
    return default_env_config()


def make_tiny_env_cfg(horizon=4):
    """A 4-skill, 2-intent, 2-emotion world; small enough for exhaustive and
    finite-difference tests."""
    pool = (
        Skill(0, "open", frozenset({0, 5})),
        Skill(1, "ask", frozenset({1})),
        Skill(2, "offer", frozenset({2})),
        Skill(3, "done", frozenset({3, 5})),
    )
    intents = ("buy", "gripe")
    emotions = ("calm", "mad")
    scenario = {}
    for intent in intents:
        for emotion in emotions:
            scenario[(intent, emotion, 1)] = (0, 1)
            scenario[(intent, emotion, 2)] = (1, 2) if intent == "buy" else (2, 1)
            scenario[(intent, emotion, 3)] = (2, 3)
    return EnvConfig(
        skill_pool=pool,
        intents=intents,
        emotions=emotions,
        vocab_size=10,
        horizon=horizon,
        history_window=2,
        marker_count=6,
        token_markers=tuple(
            frozenset({t % 6}) if t < 8 else frozenset() for t in range(10)
        ),
        politeness_markers=frozenset({5}),
        phase_markers=(frozenset({0, 1, 5}), frozenset({1, 2}), frozenset({2, 3, 5})),
        emotion_transition={
            "compliant": ((0.9, 0.1), (0.6, 0.4)),
            "noncompliant": ((0.5, 0.5), (0.1, 0.9)),
        },
        intent_transition=(
            ((0.8, 0.2), (0.3, 0.7)),
            ((0.7, 0.3), (0.4, 0.6)),
            ((0.9, 0.1), (0.5, 0.5)),
        ),
        initial_intent_dist=(0.7, 0.3),
        initial_emotion_dist=(0.8, 0.2),
        scenario_table=scenario,
        milestone_rules=((1,), (2,), (3,)),
        max_response_len=6,
        seed=0,
    )


@pytest.fixture(scope="session")
def tiny_env_cfg():
    cfg = make_tiny_env_cfg()
    validate_env_config(cfg)
    return cfg


def random_expert_state(spec, rng):
    history = tuple(
        TurnSummary(
            intent=spec.intents[rng.integers(len(spec.intents))],
            emotion=spec.emotions[rng.integers(len(spec.emotions))],
            skills=tuple(
                int(s)
                for s in rng.choice(
                    spec.n_skills, size=rng.integers(0, 3), replace=False
                )
            ),
            markers=frozenset(
                int(m)
                for m in rng.choice(
                    spec.n_markers, size=rng.integers(0, 4), replace=False
                )
            ),
        )
        for _ in range(rng.integers(0, spec.history_window + 1))
    )
    prev = None
    if rng.random() < 0.5:
        k = int(rng.integers(1, 4))
        prev = SkillSequence(
            tuple(int(s) for s in rng.choice(spec.n_skills, size=k, replace=False))
        )
    return ExpertState(
        history=history,
        intent=spec.intents[rng.integers(len(spec.intents))],
        emotion=spec.emotions[rng.integers(len(spec.emotions))],
        prev_skills=prev,
        phase=int(rng.integers(1, 4)),
        turn=int(rng.integers(1, spec.horizon + 1)),
    )


def random_csa_state(spec, rng, allow_null_constraint=True):
    constraint = None
    if not allow_null_constraint or rng.random() < 0.8:
        k = int(rng.integers(1, 4))
        constraint = SkillSequence(
            tuple(int(s) for s in rng.choice(spec.n_skills, size=k, replace=False))
        )
    utterance = tuple(int(t) for t in rng.integers(0, spec.vocab_size, rng.integers(1, 4)))
    return CsaState(
        utterance=utterance,
        constraint=constraint,
        business_ctx=BusinessContext(
            order_status=int(rng.integers(0, 3)), stock_level=int(rng.integers(0, 3))
        ),
    )


def random_response(spec, rng, min_len=1):
    n = int(rng.integers(min_len, spec.max_response_len + 1))
    tokens = tuple(int(t) for t in rng.integers(0, spec.vocab_size, n))
    return Response(tokens=tokens, markers=response_markers(tokens, spec.token_markers))


def write_tiny_config(path, out_dir, **train_overrides):
    """A complete config file over the tiny world, small enough that CLI
    round trips run in a second or two."""
    import dataclasses
    import json

    from gopo.metrics import TseConfig
    from gopo.rewards import RewardConfig
    from gopo.trainer import TrainConfig

    train = dict(
        horizon=4,
        episodes=16,
        batch_size=8,
        critic_warmup=1,
        eval_every=100,
        eval_episodes=5,
        hidden_size=16,
        seed=3,
    )
    train.update(train_overrides)
    data = {
        "env": make_tiny_env_cfg().to_dict(),
        "reward": dataclasses.asdict(RewardConfig()),
        "tse": dataclasses.asdict(TseConfig()),
        "train": dataclasses.asdict(TrainConfig(**train)),
        "output_dir": str(out_dir),
    }
    path.write_text(json.dumps(data, indent=2), encoding="utf-8")
    return path
