"""Game-engine tests against independent brute-force oracles.

The oracle below recomputes every payoff per player with plain python
conditionals transcribed from the game definitions, sharing no code with
the module under test.
"""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oslab.agents import FixedActionAgent
from oslab.games import (
    Action,
    GameError,
    GameSpec,
    encode_observation,
    encode_observation_batch,
    enumerate_joint_actions,
    payoff,
    payoff_batch,
    payoff_table,
    play_episode,
    player_payoff_bounds,
    welfare_bounds,
)

C, D = 1, 0


def oracle_payoff(kind: str, n: int, joint: tuple, params: dict) -> list:
    """Independent per-player payoff computation, one conditional per rule."""
    k = sum(joint)
    out = []
    for i, a in enumerate(joint):
        if kind == "ipd":
            m = k - a  # cooperators among the others
            out.append(2 * m if a == C else 2 * m + 1)
        elif kind == "snowdrift":
            if k == 0:
                out.append(0.0)
            elif a == C:
                out.append(params["benefit"] - params["total_cost"] / k)
            else:
                out.append(params["benefit"])
        elif kind == "toc":
            if k > params["threshold"]:
                out.append(params["benefit"] - params["cost"] if a == C else params["benefit"])
            else:
                out.append(-params["cost"] if a == C else 0.0)
        elif kind == "staghunt":
            if k >= math.ceil(n / 2):
                share = k * params["reward"] / n
                out.append(share - params["hunt_cost"] if a == C else share)
            else:
                out.append(-params["hunt_cost"] if a == C else 0.0)
    return out


ALL_SPECS = [
    GameSpec(kind, n)
    for kind in ("ipd", "snowdrift", "toc", "staghunt")
    for n in (3, 4, 5)
]


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: f"{s.kind}-n{s.n_players}")
def test_payoff_matches_oracle_exhaustively(spec):
    for joint in itertools.product((0, 1), repeat=spec.n_players):
        expected = oracle_payoff(spec.kind, spec.n_players, joint, spec.params)
        got = payoff(spec, joint)
        assert got.tolist() == pytest.approx(expected, abs=0)


def test_ipd_examples_from_payoff_table():
    spec = GameSpec("ipd", 3)
    assert payoff(spec, (D, D, D)).tolist() == [1, 1, 1]
    assert payoff(spec, (C, C, C)).tolist() == [4, 4, 4]


def test_staghunt_example():
    spec = GameSpec("staghunt", 4)  # hunt cost 3, reward 6
    got = payoff(spec, (C, C, C, D))
    assert got[:3].tolist() == [1.5, 1.5, 1.5]
    assert got[3] == 4.5


def test_toc_example():
    spec = GameSpec("toc", 4)  # benefit 5, cost 3, T = 2
    got = payoff(spec, (C, C, C, D))
    assert got[:3].tolist() == [2, 2, 2]
    assert got[3] == 5


def test_snowdrift_no_shovelers():
    spec = GameSpec("snowdrift", 3)
    assert payoff(spec, (D, D, D)).tolist() == [0, 0, 0]


def test_snowdrift_lone_shoveler_beats_all_defect():
    spec = GameSpec("snowdrift", 3)
    lone = payoff(spec, (C, D, D))[0]
    assert lone == 2.0
    assert lone > payoff(spec, (D, D, D))[0]


def test_ipd_defection_gap_is_exactly_one():
    for n in (3, 4, 5):
        spec = GameSpec("ipd", n)
        for others in itertools.product((0, 1), repeat=n - 1):
            coop = payoff(spec, (C,) + others)[0]
            defect = payoff(spec, (D,) + others)[0]
            assert defect - coop == 1.0


def test_ipd_welfare_linear_in_cooperators():
    for n in (3, 4, 5):
        spec = GameSpec("ipd", n)
        for joint in itertools.product((0, 1), repeat=n):
            k = sum(joint)
            assert payoff(spec, joint).sum() == n + k * (2 * n - 3)


@given(st.integers(3, 5), st.data())
@settings(max_examples=60, deadline=None)
def test_payoff_symmetry_under_seat_permutation(n, data):
    kind = data.draw(st.sampled_from(("ipd", "snowdrift", "toc", "staghunt")))
    joint = tuple(data.draw(st.integers(0, 1)) for _ in range(n))
    perm = data.draw(st.permutations(range(n)))
    spec = GameSpec(kind, n)
    base = payoff(spec, joint)
    permuted = payoff(spec, tuple(joint[p] for p in perm))
    assert permuted.tolist() == [base[p] for p in perm]


def test_welfare_bounds_examples():
    assert welfare_bounds(GameSpec("ipd", 3)) == (3, 12)
    assert welfare_bounds(GameSpec("ipd", 5)) == (5, 40)
    assert welfare_bounds(GameSpec("toc", 4)) == (-6, 11)


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: f"{s.kind}-n{s.n_players}")
def test_welfare_bounds_against_bruteforce(spec):
    totals = [
        sum(oracle_payoff(spec.kind, spec.n_players, joint, spec.params))
        for joint in itertools.product((0, 1), repeat=spec.n_players)
    ]
    assert welfare_bounds(spec) == (min(totals), max(totals))


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: f"{s.kind}-n{s.n_players}")
def test_player_bounds_against_bruteforce(spec):
    mine = [
        oracle_payoff(spec.kind, spec.n_players, joint, spec.params)[0]
        for joint in itertools.product((0, 1), repeat=spec.n_players)
    ]
    assert player_payoff_bounds(spec) == (min(mine), max(mine))


def test_toc_default_threshold_matches_coordination_counts():
    # 4 players need 3 cooperators, 5 players need 3, 3 players allow one defector.
    for n, required in ((4, 3), (5, 3), (3, 2)):
        spec = GameSpec("toc", n)
        t = spec.params["threshold"]
        assert math.floor(t) + 1 == required


def test_spec_validation_errors():
    with pytest.raises(GameError):
        GameSpec("ipd", 1)
    with pytest.raises(GameError):
        GameSpec("toc", 4, {"threshold": 4})
    with pytest.raises(GameError):
        GameSpec("staghunt", 3, {"reward": 2.0, "hunt_cost": 3.0})
    with pytest.raises(GameError):
        GameSpec("snowdrift", 3, {"benefit": 2.0, "total_cost": 3.0})
    with pytest.raises(GameError):
        GameSpec("chicken", 3)
    with pytest.raises(GameError):
        payoff(GameSpec("ipd", 3), (0, 1))


# ---------------------------------------------------------------------------
# Observation encoding
# ---------------------------------------------------------------------------


def test_encode_start_symbol():
    for n in (2, 3, 5):
        for i in range(n):
            assert encode_observation(None, i, n) == 2**n


def test_encode_rotation_examples():
    assert encode_observation((C, D, D), 0, 3) == 1
    assert encode_observation((C, D, D), 1, 3) == 4  # own D, then (D, C)


@given(st.integers(2, 6), st.data())
@settings(max_examples=60, deadline=None)
def test_encode_faithfully_represents_own_action_and_others_multiset(n, data):
    joint = [data.draw(st.integers(0, 1)) for _ in range(n)]
    for i in range(n):
        code = encode_observation(joint, i, n)
        bits = [(code >> b) & 1 for b in range(n)]
        assert bits[0] == joint[i]
        others_true = sorted(joint[j] for j in range(n) if j != i)
        assert sorted(bits[1:]) == others_true


def test_encode_batch_matches_scalar():
    rng = np.random.default_rng(0)
    actions = rng.integers(0, 2, size=(7, 4))
    codes = encode_observation_batch(actions)
    for b in range(7):
        for i in range(4):
            assert codes[b, i] == encode_observation(actions[b], i, 4)


# ---------------------------------------------------------------------------
# Episodes
# ---------------------------------------------------------------------------


def test_play_episode_fixed_policies_payoffs():
    spec = GameSpec("ipd", 3)
    policies = [FixedActionAgent(C), FixedActionAgent(D), FixedActionAgent(D)]
    trajs = play_episode(policies, spec, 2, np.random.default_rng(0))
    assert trajs[0].rewards[0].tolist() == [0, 0]
    assert trajs[1].rewards[0].tolist() == [3, 3]
    assert trajs[2].rewards[0].tolist() == [3, 3]


def test_play_episode_length_and_start_observation():
    spec = GameSpec("ipd", 3)
    policies = [FixedActionAgent(D) for _ in range(3)]
    trajs = play_episode(policies, spec, 100, np.random.default_rng(1))
    for tr in trajs:
        assert tr.episode_length == 100
        assert tr.observations[0, 0] == spec.start_code


def test_play_episode_rewards_equal_payoff_of_joint_action():
    from oslab.agents import GruAgent
    from oslab.nets import GruPolicy

    spec = GameSpec("snowdrift", 3)
    policy = GruPolicy(input_dim=spec.num_codes)
    rng = np.random.default_rng(3)
    agents = [
        GruAgent(policy, {k: v[None] for k, v in policy.init_params(rng).items()})
        for _ in range(3)
    ]
    trajs = play_episode(agents, spec, 20, np.random.default_rng(5))
    for t in range(20):
        joint = [trajs[i].actions[0, t] for i in range(3)]
        expected = payoff(spec, joint)
        for i in range(3):
            assert trajs[i].rewards[0, t] == expected[i]


def test_play_episode_deterministic_given_seed():
    from oslab.agents import GruAgent
    from oslab.nets import GruPolicy

    spec = GameSpec("ipd", 3)
    policy = GruPolicy(input_dim=spec.num_codes)

    def roll(seed):
        rng = np.random.default_rng(42)
        agents = [
            GruAgent(policy, {k: v[None] for k, v in policy.init_params(rng).items()})
            for _ in range(3)
        ]
        return play_episode(agents, spec, 30, np.random.default_rng(seed))

    a, b = roll(7), roll(7)
    for ta, tb in zip(a, b):
        assert np.array_equal(ta.actions, tb.actions)
        assert np.array_equal(ta.log_probs, tb.log_probs)
        assert np.array_equal(ta.rewards, tb.rewards)
    c = roll(8)
    assert any(not np.array_equal(ta.actions, tc.actions) for ta, tc in zip(a, c))


def test_play_episode_policy_count_mismatch():
    spec = GameSpec("ipd", 3)
    with pytest.raises(GameError):
        play_episode([FixedActionAgent(D)], spec, 5, np.random.default_rng(0))


def test_payoff_table_ipd_rows():
    rows = payoff_table(GameSpec("ipd", 3))
    assert rows["C"] == [0, 2, 4]
    assert rows["D"] == [1, 3, 5]


def test_action_enum_has_exactly_two_values():
    assert {a.value for a in Action} == {0, 1}
