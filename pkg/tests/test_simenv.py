import dataclasses

import pytest

from gopo.core import Response, SkillSequence, make_response, response_markers
from gopo.simenv import (
    ConfigError,
    DialogueEnv,
    EnvConfig,
    TERMINAL_ALL_MILESTONES,
    TERMINAL_HORIZON,
    default_env_config,
    reference_responses,
    validate_env_config,
)


def _response(cfg, tokens):
    return make_response(tokens, cfg.token_markers, cfg.max_response_len)


def _full_marker_response(cfg, skills):
    markers = sorted(set().union(*(cfg.skill_pool[s].required_markers for s in skills)))
    return _response(cfg, markers)


def _junk_response(cfg):
    # tokens from the markerless tail of the vocabulary
    t = cfg.vocab_size - 1
    assert not cfg.token_markers[t]
    return _response(cfg, [t])


class TestReset:
    def test_same_seed_same_observation(self, env_cfg):
        a = DialogueEnv(env_cfg).reset(seed=5)
        b = DialogueEnv(env_cfg).reset(seed=5)
        assert a == b

    def test_point_mass_initial_intent(self, env_cfg):
        dist = tuple(1.0 if i == env_cfg.intents.index("inquire") else 0.0 for i in range(6))
        cfg = dataclasses.replace(env_cfg, initial_intent_dist=dist)
        for seed in range(10):
            assert DialogueEnv(cfg).reset(seed=seed).expert_state.intent == "inquire"

    def test_seed_sweep_varies_observations(self, env_cfg):
        env = DialogueEnv(env_cfg)
        seen = {
            (
                env.reset(seed=s).expert_state.intent,
                env.reset(seed=s).expert_state.emotion,
                env.reset(seed=s).csa_utterance,
            )
            for s in range(100)
        }
        assert len(seen) > 1

    def test_fresh_episode_state(self, env_cfg):
        obs = DialogueEnv(env_cfg).reset(seed=0)
        s = obs.expert_state
        assert s.phase == 1 and s.turn == 1
        assert s.history == () and s.prev_skills is None


class TestStep:
    def test_teacher_match_fires_first_milestone(self, env_cfg):
        env = DialogueEnv(env_cfg)
        obs = env.reset(seed=3)
        teacher = env.teacher_sequence(obs.expert_state)
        resp = _full_marker_response(env_cfg, teacher.skills)
        _, scores, delta, _ = env.step(teacher, resp)
        assert scores[1] == 1.0
        assert delta == (True, False, False)

    def test_empty_marker_response_scores_zero_compliance(self, env_cfg):
        env = DialogueEnv(env_cfg)
        obs = env.reset(seed=1)
        teacher = env.teacher_sequence(obs.expert_state)
        _, scores, delta, _ = env.step(teacher, _junk_response(env_cfg))
        assert scores[1] == 0.0
        assert delta == (False, False, False)

    def test_horizon_termination_without_milestones(self, env_cfg):
        env = DialogueEnv(env_cfg)
        env.reset(seed=2)
        done = False
        steps = 0
        while not done:
            _, _, _, done = env.step(SkillSequence((3,)), _junk_response(env_cfg))
            steps += 1
        assert steps == env_cfg.horizon
        assert env.terminal_reason == TERMINAL_HORIZON
        assert env.milestone_record().completed == (False, False, False)

    def test_all_milestones_terminates_early(self, env_cfg):
        env = DialogueEnv(env_cfg)
        obs = env.reset(seed=4)
        done = False
        while not done:
            teacher = env.teacher_sequence(obs.expert_state)
            obs, _, _, done = env.step(teacher, _full_marker_response(env_cfg, teacher.skills))
        assert env.terminal_reason == TERMINAL_ALL_MILESTONES
        record = env.milestone_record()
        assert record.completed == (True, True, True)
        assert record.turns == (1, 2, 3)

    def test_step_after_done_raises(self, env_cfg):
        cfg = dataclasses.replace(env_cfg, horizon=1)
        env = DialogueEnv(cfg)
        env.reset(seed=0)
        env.step(SkillSequence((0,)), _junk_response(cfg))
        with pytest.raises(RuntimeError):
            env.step(SkillSequence((0,)), _junk_response(cfg))

    def test_step_before_reset_raises(self, env_cfg):
        with pytest.raises(RuntimeError):
            DialogueEnv(env_cfg).step(SkillSequence((0,)), _junk_response(env_cfg))

    def test_milestones_never_unset_and_phase_advances(self, env_cfg):
        env = DialogueEnv(env_cfg)
        obs = env.reset(seed=9)
        teacher = env.teacher_sequence(obs.expert_state)
        obs, _, delta, _ = env.step(teacher, _full_marker_response(env_cfg, teacher.skills))
        assert delta[0] and obs.expert_state.phase == 2
        # junk turn: milestone 1 stays completed
        obs, _, delta, _ = env.step(SkillSequence((0,)), _junk_response(env_cfg))
        assert delta == (False, False, False)
        assert env.milestone_record().completed[0]

    def test_null_constraint_waives_skill_condition(self, env_cfg):
        env = DialogueEnv(env_cfg)
        env.reset(seed=6)
        milestone_skill = env_cfg.milestone_rules[0][0]
        resp = _full_marker_response(env_cfg, (milestone_skill,))
        _, scores, delta, _ = env.step(None, resp)
        assert delta[0]
        assert scores[1] == 1.0  # null constraint is vacuously compliant

    def test_wrong_skill_with_right_markers_does_not_fire(self, env_cfg):
        env = DialogueEnv(env_cfg)
        env.reset(seed=6)
        milestone_skill = env_cfg.milestone_rules[0][0]
        other = SkillSequence((0,))
        assert milestone_skill not in other
        resp = _full_marker_response(env_cfg, (milestone_skill,))
        _, _, delta, _ = env.step(other, resp)
        assert not delta[0]


class TestDeterminism:
    def test_identical_streams(self, env_cfg):
        def run(seed):
            env = DialogueEnv(env_cfg)
            obs = env.reset(seed=seed)
            trace = [obs]
            done = False
            k = 0
            while not done:
                skills = SkillSequence(((k % 3) + 1,))
                resp = _response(env_cfg, [k % env_cfg.vocab_size, 12])
                obs, scores, delta, done = env.step(skills, resp)
                trace.append((obs, scores, delta, done))
                k += 1
            return trace

        assert run(11) == run(11)

    def test_compliance_shifts_emotions_toward_anger(self, env_cfg):
        def next_emotions(compliant):
            out = []
            for seed in range(250):
                env = DialogueEnv(env_cfg)
                obs = env.reset(seed=seed)
                teacher = env.teacher_sequence(obs.expert_state)
                if compliant:
                    resp = _full_marker_response(env_cfg, teacher.skills)
                else:
                    resp = _junk_response(env_cfg)
                obs, _, _, _ = env.step(teacher, resp)
                out.append(obs.expert_state.emotion)
            return out

        good = next_emotions(True)
        bad = next_emotions(False)
        upset = lambda xs: sum(1 for e in xs if e in ("frustrated", "angry"))
        assert upset(bad) > upset(good)


class TestTeacher:
    def test_known_entry(self, env_cfg):
        # phase-1 calm inquiry: recommend leads, then probe the need, greet
        env = DialogueEnv(env_cfg)
        obs = env.reset(seed=0)
        state = dataclasses.replace(obs.expert_state, intent="inquire", emotion="calm")
        assert env.teacher_sequence(state).skills == (2, 1, 0)

    def test_deterministic(self, env_cfg):
        env = DialogueEnv(env_cfg)
        state = env.reset(seed=0).expert_state
        assert env.teacher_sequence(state) == env.teacher_sequence(state)

    def test_all_entries_are_valid_sequences(self, env_cfg):
        for seq in env_cfg.scenario_table.values():
            assert 1 <= len(seq) <= 5
            assert len(set(seq)) == len(seq)

    def test_milestone_skill_in_every_phase_entry(self, env_cfg):
        for (intent, emotion, phase), seq in env_cfg.scenario_table.items():
            assert env_cfg.milestone_rules[phase - 1][0] in seq

    def test_unknown_state_raises(self, env_cfg):
        env = DialogueEnv(env_cfg)
        state = dataclasses.replace(env.reset(seed=0).expert_state, intent="haggle")
        with pytest.raises(KeyError):
            env.teacher_sequence(state)


class TestJudge:
    def test_full_required_markers(self, env_cfg):
        env = DialogueEnv(env_cfg)
        env.reset(seed=0)
        obs = env._obs
        from gopo.core import CsaState

        seq = SkillSequence((2, 5))
        state = CsaState(obs.csa_utterance, seq, obs.business_ctx)
        resp = _full_marker_response(env_cfg, seq.skills)
        assert env.judge(state, resp)[1] == 1.0

    def test_half_required_markers(self, env_cfg):
        env = DialogueEnv(env_cfg)
        obs = env.reset(seed=0)
        from gopo.core import CsaState

        seq = SkillSequence((2, 5))  # required markers {2, 13, 5, 14}
        state = CsaState(obs.csa_utterance, seq, obs.business_ctx)
        resp = _response(env_cfg, [2, 13])
        assert env.judge(state, resp)[1] == pytest.approx(0.5)

    def test_repeated_token_diversity(self, env_cfg):
        env = DialogueEnv(env_cfg)
        obs = env.reset(seed=0)
        from gopo.core import CsaState

        state = CsaState(obs.csa_utterance, None, obs.business_ctx)
        resp = _response(env_cfg, [7, 7, 7, 7])
        assert env.judge(state, resp)[3] == pytest.approx(0.25)

    def test_politeness_marker(self, env_cfg):
        env = DialogueEnv(env_cfg)
        obs = env.reset(seed=0)
        from gopo.core import CsaState

        state = CsaState(obs.csa_utterance, None, obs.business_ctx)
        assert env.judge(state, _response(env_cfg, [12]))[0] == 1.0
        assert env.judge(state, _response(env_cfg, [0]))[0] == 0.0

    def test_boundedness(self, env_cfg, tiny_env_cfg):
        import numpy as np

        rng = np.random.default_rng(0)
        env = DialogueEnv(tiny_env_cfg)
        env.reset(seed=0)
        from gopo.core import CsaState

        for _ in range(200):
            n = int(rng.integers(1, tiny_env_cfg.max_response_len + 1))
            tokens = [int(t) for t in rng.integers(0, tiny_env_cfg.vocab_size, n)]
            resp = _response(tiny_env_cfg, tokens)
            k = int(rng.integers(1, 4))
            seq = SkillSequence(tuple(int(s) for s in rng.choice(4, k, replace=False)))
            state = CsaState((0,), seq if rng.random() < 0.8 else None, env._business)
            assert all(0.0 <= s <= 1.0 for s in env.judge(state, resp))


class TestReferences:
    def test_reference_realizes_required_markers(self, env_cfg):
        env = DialogueEnv(env_cfg)
        teacher = SkillSequence((0, 1, 2))
        ref = env.reference_response(teacher)
        got = response_markers(ref, env_cfg.token_markers)
        want = set().union(*(env_cfg.skill_pool[s].required_markers for s in teacher))
        assert got == frozenset(want)

    def test_reference_responses_from_logged_trajectory(self, env_cfg):
        from gopo.rewards import RewardConfig
        from gopo.trainer import rollout
        from gopo.agents import CsaPolicy, ExpertPolicy, FeatureSpec
        import numpy as np

        spec = FeatureSpec.from_env_config(env_cfg)
        expert = ExpertPolicy(spec, hidden=8, seed=0)
        csa = CsaPolicy(spec, hidden=8, seed=1)
        env = DialogueEnv(env_cfg)
        traj = rollout(env, expert, csa, RewardConfig(), np.random.default_rng(0), env_seed=17)
        refs = reference_responses(traj, env_cfg)
        assert len(refs) == len(traj.turns)
        assert all(len(r) >= 1 for r in refs)


class TestConfig:
    def test_round_trip(self, env_cfg):
        assert EnvConfig.from_dict(env_cfg.to_dict()) == env_cfg

    def test_missing_scenario_entry_rejected(self, env_cfg):
        table = dict(env_cfg.scenario_table)
        table.pop(("inquire", "calm", 1))
        bad = dataclasses.replace(env_cfg, scenario_table=table)
        with pytest.raises(ConfigError, match="scenario_table"):
            validate_env_config(bad)

    def test_non_stochastic_rows_rejected(self, env_cfg):
        mats = {
            "compliant": tuple(tuple(0.5 for _ in env_cfg.emotions) for _ in env_cfg.emotions),
            "noncompliant": env_cfg.emotion_transition["noncompliant"],
        }
        bad = dataclasses.replace(env_cfg, emotion_transition=mats)
        with pytest.raises(ConfigError, match="emotion_transition"):
            validate_env_config(bad)

    def test_unknown_key_rejected(self, env_cfg):
        data = env_cfg.to_dict()
        data["mystery"] = 1
        with pytest.raises(ConfigError, match="mystery"):
            EnvConfig.from_dict(data)

    def test_missing_key_rejected(self, env_cfg):
        data = env_cfg.to_dict()
        del data["horizon"]
        with pytest.raises(ConfigError, match="horizon"):
            EnvConfig.from_dict(data)

    def test_duplicate_skill_names_rejected(self, env_cfg):
        from gopo.core import Skill

        pool = list(env_cfg.skill_pool)
        pool[1] = Skill(1, pool[0].name, frozenset({1}))
        bad = dataclasses.replace(env_cfg, skill_pool=tuple(pool))
        with pytest.raises(ConfigError, match="duplicate"):
            validate_env_config(bad)

    def test_required_markers_within_alphabet(self, env_cfg):
        from gopo.core import Skill

        pool = list(env_cfg.skill_pool)
        pool[0] = Skill(0, "greet", frozenset({99}))
        bad = dataclasses.replace(env_cfg, skill_pool=tuple(pool))
        with pytest.raises(ConfigError, match="marker"):
            validate_env_config(bad)
