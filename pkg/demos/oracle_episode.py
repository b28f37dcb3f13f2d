"""Generate an episode, read its instruction, and score three simple policies.

The oracle follows the exact cost-to-go field, so it succeeds with SPL 1.
Walking straight ahead and stopping immediately show how SR, OR and SPL
separate: passing near the goal earns OR but only a Stop there earns SR.
"""

from camadapt.episodes import decode_tokens, generate_episode, generate_world
from camadapt.metrics import compute_metrics
from camadapt.navigator import Trajectory
from camadapt.world import Action, oracle_action, step

world = generate_world(seed=2, size=12)
episode = generate_episode(world, seed=5)
print("instruction:", " ".join(decode_tokens(episode.instruction)))
print(f"reference: {len(episode.reference_actions)} actions, {episode.reference_length:.2f} m")


def run(policy, limit=120):
    s = episode.start
    states, actions = [s], []
    for _ in range(limit):
        a = policy(s)
        actions.append(a)
        if a == Action.STOP:
            states.append(s)
            return Trajectory(states, actions, True)
        s = step(world, s, a)
        states.append(s)
    return Trajectory(states, actions, False)


policies = {
    "oracle": lambda s: oracle_action(world, s, episode.goal),
    "forward only": lambda s: Action.FORWARD,
    "stop at once": lambda s: Action.STOP,
}
print(f"\n{'policy':<14} {'TL':>6} {'NE':>6} {'OR':>4} {'SR':>4} {'SPL':>6}")
for name, policy in policies.items():
    m = compute_metrics(run(policy), episode)
    print(f"{name:<14} {m.tl:6.2f} {m.ne:6.2f} {m.oracle_success:4d} {m.success:4d} {m.spl:6.3f}")
