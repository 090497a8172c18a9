"""Walk through the Taxi MDP: state encoding, features, and the value-iteration oracle.

Run with ``python3 demos/01_environment_and_oracle.py``; takes about a second.
"""

import numpy as np

from vrail import taxi
from vrail.taxi import Action, TaxiState
from vrail.validation import unique_argmax_mask

# Taxi at R, passenger waiting at R, heading for G.
s = TaxiState(0, 0, 0, 1)
print("state", s, "-> index", taxi.encode_state(s))
print("active features:", [taxi.feature_names()[i] for i in np.flatnonzero(taxi.extract_features(s))])

out = taxi.step(s, Action.PICKUP)
print("after pickup:", out.next_state, "reward", out.reward)

# The wall east of (0, 1) means the drive to G has to go through row 2.
values, policy = taxi.value_iteration_oracle(gamma=1.0, horizon=200)
print("optimal undiscounted return from", s, "=", values[taxi.encode_state(s)])

state = s
path = []
while True:
    a = Action(int(policy[taxi.encode_state(state)]))
    path.append(a.name)
    state, r, done = taxi.step(state, a)
    if done:
        break
print("optimal action sequence:", " ".join(path))

starts = taxi.valid_start_indices()
print(f"{len(starts)} start states, mean optimal return {values[starts].mean():.2f}")

# A potential only reshapes values; the greedy policy stays put.
phi = np.random.default_rng(0).uniform(-50, 50, size=taxi.N_STATES)
v_shaped, p_shaped = taxi.value_iteration_oracle(gamma=0.99, potential=phi)
v_plain, p_plain = taxi.value_iteration_oracle(gamma=0.99)
# Where two actions tie the argmax can flip either way, so compare the rest.
unique = unique_argmax_mask(taxi.q_values(v_plain))
print("policies agree on", int(np.sum(p_shaped[unique] == p_plain[unique])), "of", int(unique.sum()),
      "states with a unique best action")
print("V_shaped = V - phi holds:", np.allclose(v_shaped, v_plain - phi, atol=1e-8))
