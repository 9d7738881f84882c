"""The two policies in action, plus the guarantee the whole optimizer rests
on: analytic loss gradients agree with central finite differences."""

import numpy as np

from gopo.agents import (
    CsaPolicy,
    ExpertPolicy,
    FeatureSpec,
    csa_act,
    csa_loss,
    expert_act,
    expert_loss,
)
from gopo.core import CsaState
from gopo.simenv import DialogueEnv, default_env_config

cfg = default_env_config()
spec = FeatureSpec.from_env_config(cfg)
rng = np.random.default_rng(0)

expert = ExpertPolicy(spec, hidden=32, seed=1)
csa = CsaPolicy(spec, hidden=32, seed=2)
env = DialogueEnv(cfg)
obs = env.reset(seed=3)

seq, log_prob, entropy = expert_act(expert, obs.expert_state, rng)
print(f"sampled skill sequence {seq.skills}  log-prob {log_prob:.3f}  entropy {entropy:.3f}")
greedy_seq, _, _ = expert_act(expert, obs.expert_state, None, greedy=True)
print(f"greedy skill sequence  {greedy_seq.skills}")

state = CsaState(obs.csa_utterance, seq, obs.business_ctx)
response, lp, ents = csa_act(csa, state, rng)
print(f"sampled response {response.tokens[:8]}... len {len(response.tokens)}  log-prob {lp:.2f}")

# finite-difference check of the composite responder loss
total, grad, comps = csa_loss(csa, state, response, r_a=0.7)
print(f"\ncomposite loss {total:.4f}  components "
      f"L_p {comps['L_p']:.3f}  L_s {comps['L_s']:.3f}  L_d {comps['L_d']:.3f}")

params = csa.generator.get_params()
step = 1e-5
idx = np.argsort(-np.abs(grad))[:8]  # the most influential parameters
print("\ncoordinate      analytic        finite-diff")
for i in idx:
    up, down = params.copy(), params.copy()
    up[i] += step
    down[i] -= step
    csa.generator.set_params(up)
    f_up = csa_loss(csa, state, response, 0.7)[0]
    csa.generator.set_params(down)
    f_down = csa_loss(csa, state, response, 0.7)[0]
    csa.generator.set_params(params)
    fd = (f_up - f_down) / (2 * step)
    print(f"  {i:6d}    {grad[i]:+12.8f}    {fd:+12.8f}")

_, egrad = expert_loss(expert, obs.expert_state, seq, advantage=0.5)
print(f"\nplanner loss gradient norm {np.linalg.norm(egrad):.4f} "
      f"over {egrad.size} parameters")
