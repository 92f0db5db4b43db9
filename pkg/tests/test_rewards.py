import math

import pytest
from hypothesis import given, strategies as st

from slmcascade.parser import ParsedResponse, parse_text
from slmcascade.rewards import (
    GROUP_VARIANTS,
    VARIANTS,
    RewardConfig,
    RolloutGroup,
    composite_reward,
    confidence_reward,
    correctness,
    default_verifier,
    estimate_group_accuracy,
    format_reward,
    score_group,
)

TOL = 1e-9
GRID = [i / 100 for i in range(101)]
P_GRID = [i / 10 for i in range(11)]


def resp(answer="9", confidence=0.75, lang=True):
    return ParsedResponse(reasoning="", answer=answer, confidence=confidence, language_consistent=lang)


def test_correctness_examples():
    assert correctness("9", "9") == 1
    assert correctness("12", "9") == 0
    assert correctness(" 9 ", "9") == 1
    assert correctness(None, "9") == 0


def test_default_verifier_normalization():
    assert default_verifier("$9$", "9")
    assert default_verifier("9.0", "9")
    assert default_verifier("\\(x+1\\)", "X+1")
    assert not default_verifier("\\frac{1}{2}", "0.5")


def test_correctness_custom_verifier():
    assert correctness("one half", "1/2", verifier=lambda a, g: True) == 1


def test_correctness_requires_gold():
    with pytest.raises(ValueError):
        correctness("9", "")


def test_format_reward():
    assert format_reward(resp()) == 1.0
    assert format_reward(resp(confidence=None)) == pytest.approx(2 / 3, abs=TOL)
    assert format_reward(parse_text("")) == 0.0


def test_format_reward_base_sample(fixture_text):
    assert format_reward(parse_text(fixture_text("slm_base.txt"))) == pytest.approx(2 / 3, abs=TOL)


def test_group_accuracy():
    six_of_eight = RolloutGroup("q", "9", [resp("9")] * 6 + [resp("1")] * 2)
    assert estimate_group_accuracy(six_of_eight) == 0.75
    assert estimate_group_accuracy(RolloutGroup("q", "9", [resp("9")] * 3)) == 1.0

    answers = ["9", "9", "9", "12", "9", "9", "9", "9"]
    group = RolloutGroup("q", "9", [resp(a) for a in answers])
    hits = 0
    for a in answers:  # independent recount
        hits += 1 if a.strip() == "9" else 0
    assert estimate_group_accuracy(group) == hits / len(answers) == 0.875


def test_confidence_reward_examples():
    assert confidence_reward(RewardConfig("L1"), 0.75, 0.8) == pytest.approx(-0.05, abs=TOL)
    assert confidence_reward(RewardConfig("L2"), 0.5, 0.5) == 0
    assert confidence_reward(RewardConfig("KL", epsilon=0.01), 1.0, 0.01) == pytest.approx(-1.0, abs=TOL)
    assert confidence_reward(RewardConfig("sample_L1"), None, 0.8, correct=True) == pytest.approx(-0.2, abs=TOL)


def test_kl_as_printed_is_the_negation():
    cc = RewardConfig("KL", kl_sign="calibration_consistent")
    printed = RewardConfig("KL", kl_sign="as_printed")
    for p in P_GRID:
        for y in (0.0, 0.3, 0.99, 1.0):
            assert confidence_reward(printed, p, y) == pytest.approx(-confidence_reward(cc, p, y), abs=TOL)
    # the printed form prefers confidence far from p
    assert confidence_reward(printed, 1.0, 0.0) > confidence_reward(printed, 1.0, 1.0)


def test_missing_confidence_reward():
    assert confidence_reward(RewardConfig("L1"), 0.5, None) == -1.0
    assert confidence_reward(RewardConfig("L1", missing_confidence_reward=-0.25), 0.5, None) == -0.25


def test_contract_violations():
    with pytest.raises(ValueError):
        confidence_reward(RewardConfig("L1"), 1.2, 0.5)
    with pytest.raises(ValueError):
        confidence_reward(RewardConfig("L1"), 0.5, -0.1)
    with pytest.raises(ValueError):
        confidence_reward(RewardConfig("sample_L2"), 0.5, 0.5)
    with pytest.raises(ValueError):
        RewardConfig("L3")
    with pytest.raises(ValueError):
        RewardConfig("KL", epsilon=1.0)
    with pytest.raises(ValueError):
        RewardConfig("L1", missing_confidence_reward=-2)


def test_brier_alias():
    assert RewardConfig("brier").variant == "sample_L2"


def test_composite_examples():
    cfg = RewardConfig("L1")
    b = composite_reward(resp("9", 0.8), 0.75, "9", cfg)
    assert b.total == pytest.approx(1.95, abs=TOL)

    b = composite_reward(resp("12", None), 0.75, "9", cfg)
    assert (b.r_correct, b.r_confidence) == (0, -1.0)
    assert b.total == pytest.approx(-1 / 3, abs=TOL)

    b = composite_reward(resp("9", 0.6), 0.6, "9", cfg)
    assert b.total == pytest.approx(2.0, abs=TOL)


def test_score_group_examples():
    group = RolloutGroup("q", "9", [resp("9")] * 6 + [resp("1")] * 2)
    assert all(b.r_confidence == 0 for b in score_group(group, RewardConfig("L1")))

    sample = score_group(group, RewardConfig("sample_L1"))
    # per-response indicator oracle
    expected = [-abs((1.0 if r.answer == "9" else 0.0) - 0.75) for r in group.responses]
    assert [b.r_confidence for b in sample] == pytest.approx(expected, abs=TOL)
    assert expected[:6] == [-0.25] * 6 and expected[6:] == [-0.75] * 2

    single = RolloutGroup("q", "9", [resp("9", 1.0)])
    assert score_group(single, RewardConfig("L1"))[0].r_confidence == 0


@given(
    variant=st.sampled_from(VARIANTS),
    p=st.floats(0, 1),
    y=st.one_of(st.none(), st.floats(0, 1)),
    correct=st.booleans(),
    eps=st.floats(0.001, 0.5),
)
def test_reward_range(variant, p, y, correct, eps):
    r = confidence_reward(RewardConfig(variant, epsilon=eps), p, y, correct=correct)
    assert -1.0 - TOL <= r <= TOL


@given(
    answers=st.lists(st.sampled_from(["9", "8", " 9", "$9$"]), min_size=1, max_size=12),
    y=st.one_of(st.none(), st.floats(0, 1)),
    variant=st.sampled_from(VARIANTS),
)
def test_decomposition_and_sharing(answers, y, variant):
    group = RolloutGroup("q", "9", [resp(a, y) for a in answers])
    out = score_group(group, RewardConfig(variant))
    for b in out:
        assert abs(b.total - b.r_correct - b.r_format - b.r_confidence) <= TOL
        assert -1.0 - TOL <= b.total <= 2.0 + TOL
    if variant in GROUP_VARIANTS:
        assert len({b.r_confidence for b in out}) == 1


@pytest.mark.parametrize("variant", GROUP_VARIANTS)
def test_group_variant_argmax_near_p(variant):
    cfg = RewardConfig(variant)
    for p in P_GRID:
        scores = [confidence_reward(cfg, p, y) for y in GRID]
        best = GRID[max(range(len(GRID)), key=lambda i: scores[i])]
        if variant == "KL":
            assert abs(best - p) <= 0.01 + TOL
        else:
            assert best == pytest.approx(p, abs=TOL)
            assert scores[GRID.index(round(p, 2))] == pytest.approx(0.0, abs=TOL)


@given(st.floats(0.01, 0.99).filter(lambda p: abs(p - 0.5) > 1e-6))
def test_sample_l1_is_improper(p):
    cfg = RewardConfig("sample_L1")

    def expected(y):
        return p * confidence_reward(cfg, None, y, True) + (1 - p) * confidence_reward(cfg, None, y, False)

    values = [expected(y) for y in GRID]
    top = max(values)
    winners = [y for y, v in zip(GRID, values) if v >= top - TOL]
    assert winners in ([0.0], [1.0])


def test_sample_variants_use_indicator():
    for v, dist in (("sample_L2", lambda t, y: -(t - y) ** 2), ("sample_KL", None)):
        cfg = RewardConfig(v)
        for y in (0.1, 0.5, 0.9):
            if dist:
                assert confidence_reward(cfg, 0.3, y, True) == pytest.approx(dist(1.0, y), abs=TOL)
            else:
                assert confidence_reward(cfg, 0.3, y, True) == pytest.approx(
                    -math.log(max(y, 0.01)) / math.log(0.01), abs=TOL)
