import logging
import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cod_harness.datamodel import (
    Difficulty,
    GenerationRecord,
    JudgeVerdict,
    Orientation,
    Strategy,
    StrategyKind,
    Usage,
)
from cod_harness.metrics import (
    MetricsError,
    Pooling,
    TokenCountMode,
    accuracy,
    aggregate_category,
    alignment_ratio,
    delta_r,
    extract_choice,
    info_density,
    token_count,
)

from conftest import TEN_OPTIONS, audio_sample, flat_oracle, image_sample, random_verdict_set

NO_SWAP, SWAP = Orientation.NO_SWAP, Orientation.SWAP


def verdict(sid, o, gt, p):
    return JudgeVerdict(sid, o, f"{gt} {p}", True, 1, gt, p)


def cod_record(sid, description, usage=None, kind=StrategyKind.COD):
    strategy = Strategy(kind, "src" if kind is StrategyKind.COD_TRANSFER else None)
    return GenerationRecord(
        sid, strategy, "ans", "m", "2025-01-01T00:00:00+00:00", description=description, description_usage=usage
    )


def mcq_record(sid, answer):
    return GenerationRecord(sid, Strategy(StrategyKind.STANDARD), answer, "m", "2025-01-01T00:00:00+00:00")


# alignment ratio and delta r


def test_alignment_ratio_examples():
    assert round(alignment_ratio(7.51, 8.23), 4) == 0.9125
    assert round(alignment_ratio(6.38, 8.12), 4) == 0.7857
    assert alignment_ratio(5.0, 5.0) == 1.0


def test_alignment_ratio_domain():
    with pytest.raises(MetricsError):
        alignment_ratio(1.0, 0.0)
    with pytest.raises(MetricsError):
        alignment_ratio(1.0, -2.0)


@given(st.floats(0, 10), st.floats(0.01, 10), st.floats(0.01, 100))
def test_alignment_ratio_scale_invariant(s_p, s_gt, a):
    assert math.isclose(alignment_ratio(a * s_p, a * s_gt), alignment_ratio(s_p, s_gt), rel_tol=1e-12, abs_tol=1e-300)


def test_delta_r_examples():
    assert round(delta_r(0.9502, 0.9124), 4) == 0.0378
    assert round(delta_r(0.8722, 0.8631), 4) == 0.0091
    assert delta_r(0.5, 0.5) == 0


# aggregation


def test_orientation_breakdown_example():
    # orientation means equal the reference Speech CoD scores
    samples = {f"s{i}": audio_sample(i, id=f"s{i}") for i in range(2)}
    vs = [
        verdict("s0", NO_SWAP, 8.11, 7.81),
        verdict("s1", NO_SWAP, 8.11, 7.81),
        verdict("s0", SWAP, 7.98, 7.47),
        verdict("s1", SWAP, 7.98, 7.47),
    ]
    (rep,) = aggregate_category(vs, samples, StrategyKind.COD)
    assert round(rep.per_orientation[NO_SWAP].r * 100, 2) == 96.30
    assert round(rep.per_orientation[SWAP].r * 100, 2) == 93.61
    assert abs(rep.r * 100 - 95.0) < 0.1
    assert rep.n_valid == 4


def test_symmetric_scores_give_unit_ratio():
    samples = {"s0": audio_sample(0, id="s0")}
    (rep,) = aggregate_category([verdict("s0", NO_SWAP, 6, 6), verdict("s0", SWAP, 9, 9)], samples, StrategyKind.COD)
    assert rep.r == 1.0
    assert all(o.r == 1.0 for o in rep.per_orientation.values())


def test_invalid_excluded_from_means():
    samples = {f"s{i}": audio_sample(i, id=f"s{i}") for i in range(2)}
    vs = [
        verdict("s0", NO_SWAP, 8, 6),
        verdict("s0", SWAP, 8, 7),
        verdict("s1", NO_SWAP, 10, 5),
        JudgeVerdict("s1", SWAP, "nope", False, 4),
    ]
    (rep,) = aggregate_category(vs, samples, StrategyKind.STANDARD)
    assert (rep.n_valid, rep.n_invalid) == (3, 1)
    assert rep.s_gt == pytest.approx(26 / 3)
    assert rep.s_p == pytest.approx(18 / 3)


def test_all_invalid_category_reported():
    samples = {"s0": audio_sample(0, id="s0", category="Music")}
    (rep,) = aggregate_category([JudgeVerdict("s0", SWAP, "x", False, 4)], samples, StrategyKind.COD)
    assert (rep.category, rep.n_valid, rep.n_invalid, rep.r) == ("Music", 0, 1, None)


def test_categories_in_canonical_order():
    samples = {f"s{i}": audio_sample(i, id=f"s{i}", category=c) for i, c in enumerate(["Mixed", "Music", "Speech", "Sound"])}
    vs = [verdict(sid, NO_SWAP, 5, 4) for sid in samples]
    assert [r.category for r in aggregate_category(vs, samples, StrategyKind.COD)] == ["Speech", "Sound", "Music", "Mixed"]


def test_aggregate_matches_oracle():
    rng = random.Random(7)
    for _ in range(20):
        vs, samples = random_verdict_set(rng, rng.randint(1, 300), rng.randint(1, 6), rng.uniform(0, 0.2))
        oracle = flat_oracle(vs, samples)
        reports = aggregate_category(vs, samples, StrategyKind.COD)
        assert {r.category for r in reports} == set(oracle)
        for rep in reports:
            want = oracle[rep.category]
            assert (rep.n_valid, rep.n_invalid) == (want["n_valid"], want["n_invalid"])
            if want["all"] is None:
                assert rep.r is None
            else:
                assert abs(rep.r - want["all"][2]) < 1e-12


# choice extraction


@pytest.mark.parametrize(
    "answer, expected",
    [
        ("B.", "B"),
        ("J", "J"),
        ("(c)", "C"),
        ("d)", "D"),
        ("The answer is (J)", "J"),
        ("The answer is J.", "J"),
        ("Answer: E", "E"),
        ("**Answer:** H", "H"),
        ("I think it's G.", "G"),
        ("Looking at the leaves, (F) fits best", "F"),
        ("Algae", "J"),
        ("powdery mildew.", "B"),
        ("I cannot tell", None),
        ("I cannot tell from the image.", None),
        ("The answer is a dog", None),
        ("", None),
        ("K.", None),
    ],
)
def test_extract_choice(answer, expected):
    assert extract_choice(answer, TEN_OPTIONS) == expected


def test_extract_choice_first_rule_wins():
    # the answer phrase beats an earlier choice token
    assert extract_choice("A) is tempting but the answer is C", TEN_OPTIONS) == "C"


@given(st.text(max_size=80))
def test_extract_choice_total(answer):
    out = extract_choice(answer, TEN_OPTIONS)
    assert out is None or out in "ABCDEFGHIJ"


# accuracy


def _mcq_samples(n, difficulty=Difficulty.HARD):
    return {f"i{i:03d}": image_sample(i, difficulty=difficulty) for i in range(n)}


def test_accuracy_two_of_four():
    samples = _mcq_samples(4)
    recs = [mcq_record("i000", "J."), mcq_record("i001", "A"), mcq_record("i002", "J"), mcq_record("i003", "??")]
    rep = accuracy(recs, samples)
    assert rep.per_bucket["hard"].accuracy == 0.5
    assert rep.n_unparsable == 1


def test_accuracy_all_unparsable():
    samples = _mcq_samples(3)
    rep = accuracy([mcq_record(sid, "no idea") for sid in samples], samples)
    assert rep.per_bucket["hard"].accuracy == 0
    assert rep.n_unparsable == rep.per_bucket["hard"].n_total == 3


def test_accuracy_rejects_open_qa():
    with pytest.raises(MetricsError, match="a000"):
        accuracy([mcq_record("a000", "B")], {"a000": audio_sample()})


def test_accuracy_permutation_invariant():
    rng = random.Random(3)
    samples = {}
    recs = []
    for i in range(200):
        d = rng.choice(list(Difficulty))
        s = image_sample(i, difficulty=d, ground_truth_answer=rng.choice("ABCDEFGHIJ"))
        samples[s.id] = s
        recs.append(mcq_record(s.id, rng.choice(["A.", "The answer is (J)", "C", "unsure", "Algae"])))
    base = accuracy(recs, samples)
    for _ in range(5):
        rng.shuffle(recs)
        assert accuracy(recs, samples) == base
    assert list(base.per_bucket) == [d.value for d in Difficulty if d.value in base.per_bucket]


# tokens and density


def test_token_count():
    assert token_count("the cat sat", TokenCountMode.WHITESPACE) == 3
    assert token_count("", TokenCountMode.WHITESPACE) == 0
    assert token_count("anything", TokenCountMode.USAGE_REPORTED, Usage(12, 57)) == 57
    with pytest.raises(MetricsError, match="whitespace"):
        token_count("x", TokenCountMode.USAGE_REPORTED, None)


def test_density_single_record():
    samples = {"a000": audio_sample(0, duration_seconds=10.0)}
    (rep,) = info_density([cod_record("a000", "w " * 39)], samples, TokenCountMode.WHITESPACE)
    assert rep.id == pytest.approx(3.9)
    assert (rep.total_tokens, rep.total_seconds, rep.n_samples) == (39, 10.0, 1)


def test_density_pooled_vs_per_sample():
    samples = {"a000": audio_sample(0, duration_seconds=10.0), "a001": audio_sample(1, duration_seconds=30.0)}
    recs = [cod_record("a000", "x", Usage(1, 10)), cod_record("a001", "y", Usage(1, 90))]
    (pooled,) = info_density(recs, samples)
    (mean,) = info_density(recs, samples, pooling=Pooling.PER_SAMPLE_MEAN)
    assert pooled.id == pytest.approx(100 / 40)
    assert mean.id == pytest.approx((1.0 + 3.0) / 2)
    assert pooled.per_sample_mean == mean.id


def test_density_excludes_mixed(caplog):
    samples = {
        "a000": audio_sample(0, category="Speech"),
        "a001": audio_sample(1, category="Mixed", duration_seconds=None),
    }
    recs = [cod_record("a000", "a b c"), cod_record("a001", "d e")]
    with caplog.at_level(logging.INFO):
        reps = info_density(recs, samples, TokenCountMode.WHITESPACE)
    assert [r.category for r in reps] == ["Speech"]
    assert "Mixed" in caplog.text


def test_density_errors():
    samples = {"a000": audio_sample(0, duration_seconds=None), "a001": audio_sample(1, duration_seconds=None)}
    with pytest.raises(MetricsError, match="a000, a001"):
        info_density([cod_record("a000", "x"), cod_record("a001", "y")], samples, TokenCountMode.WHITESPACE)
    with pytest.raises(MetricsError, match="no description"):
        info_density([mcq_record("a000", "x")], samples, TokenCountMode.WHITESPACE)
    with pytest.raises(MetricsError, match="not audio"):
        info_density([cod_record("i000", "x")], {"i000": image_sample()}, TokenCountMode.WHITESPACE)


def test_density_batch_invariant():
    rng = random.Random(11)
    samples, recs = {}, []
    for i in range(60):
        s = audio_sample(i, category=rng.choice(["Speech", "Sound", "Music"]), duration_seconds=rng.uniform(1, 30))
        samples[s.id] = s
        recs.append(cod_record(s.id, "tok " * rng.randint(1, 120), Usage(5, rng.randint(1, 120))))
    whole = {r.category: r for r in info_density(recs, samples)}
    tokens, seconds = {}, {}
    for batch in (recs[:17], recs[17:40], recs[40:]):
        for r in info_density(batch, samples):
            tokens[r.category] = tokens.get(r.category, 0) + r.total_tokens
            seconds[r.category] = seconds.get(r.category, 0) + r.total_seconds
    for cat, rep in whole.items():
        assert rep.id == pytest.approx(tokens[cat] / seconds[cat], rel=1e-12)


def test_density_transfer_uses_source_usage():
    samples = {"a000": audio_sample(0, duration_seconds=4.0)}
    rec = cod_record("a000", "x", Usage(3, 20), kind=StrategyKind.COD_TRANSFER)
    (rep,) = info_density([rec], samples)
    assert rep.id == 5.0
