"""Benchmark loaders, tie-aware Spearman, its standard error, and judge validation."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from conftest import chat_ep, make_gateway
from ragval.alignment import (
    AlignmentReport,
    LabeledExample,
    bonett_wright_se,
    load_squad2,
    load_stsb,
    spearman_rho,
    validate_metric_alignment,
)
from ragval.errors import ZeroVarianceError
from ragval.gateway import MockRule, MockScript
from ragval.judges import BINARY, UNIT_INTERVAL, PromptProgram

ECHO_PROGRAM = PromptProgram(
    metric_name="answer_correctness",
    instruction="Report the requested rating. Write 'rating:' then the value.",
    output_field="rating",
    scale=UNIT_INTERVAL,
    input_fields=("text",),
    name="echo-rating",
)


def echo_examples(golds: list[float]) -> list[LabeledExample]:
    return [
        LabeledExample(inputs={"text": f"item-{i:02d}"}, gold=gold)
        for i, gold in enumerate(golds)
    ]


def echo_rules(golds: list[float], transform=lambda g: g) -> list[MockRule]:
    return [
        MockRule(match=f"item-{i:02d}", response=f"rating: {transform(gold)}")
        for i, gold in enumerate(golds)
    ]


def oracle_spearman(xs, ys) -> float:
    """Independent reference: counting-formula average ranks plus np.corrcoef."""

    def ranks(values):
        values = list(values)
        out = []
        for v in values:
            less = sum(1 for w in values if w < v)
            equal = sum(1 for w in values if w == v)
            out.append(less + (equal + 1) / 2.0)
        return out

    return float(np.corrcoef(ranks(xs), ranks(ys))[0, 1])


class TestLoadStsb:
    HEADER = "index\tsentence1\tsentence2\tscore\n"

    def write(self, tmp_path, rows: list[str], header: str | None = None):
        path = tmp_path / "stsb.tsv"
        path.write_text((header or self.HEADER) + "".join(rows), encoding="utf-8")
        return path

    def test_gold_is_score_over_five(self, tmp_path):
        path = self.write(
            tmp_path,
            [
                "0\tA plane taxis.\tA jet taxis.\t5.0\n",
                "1\tA man cooks.\tA dog barks.\t0.0\n",
                "2\tKids play.\tChildren play.\t2.5\n",
            ],
        )
        examples = load_stsb(path)
        assert [e.gold for e in examples] == [1.0, 0.0, 0.5]

    def test_sentence_mapping(self, tmp_path):
        path = self.write(tmp_path, ["0\tREF sentence.\tGEN sentence.\t4.0\n"])
        [example] = load_stsb(path)
        assert example.inputs == {"response": "GEN sentence.", "reference": "REF sentence."}

    def test_malformed_rows_skipped(self, tmp_path):
        path = self.write(
            tmp_path,
            [
                "0\tgood ref.\tgood gen.\t3.0\n",
                "1\tmissing score.\tother.\tnot-a-number\n",
                "2\tout of range.\tother.\t7.5\n",
                "3\t\tempty reference.\t2.0\n",
            ],
        )
        assert len(load_stsb(path)) == 1

    def test_comma_delimited_variant(self, tmp_path):
        path = tmp_path / "stsb.csv"
        path.write_text(
            "index,sentence1,sentence2,score\n0,ref one,gen one,5.0\n", encoding="utf-8"
        )
        [example] = load_stsb(path)
        assert example.gold == 1.0

    def test_exact_n_sampling(self, tmp_path):
        rows = [f"{i}\tref {i}.\tgen {i}.\t{i % 6}.0\n" for i in range(20)]
        path = self.write(tmp_path, rows)
        sampled = load_stsb(path, n=7, seed=1)
        assert len(sampled) == 7
        assert load_stsb(path, n=7, seed=1) == sampled

    def test_oversized_n_rejected(self, tmp_path):
        path = self.write(tmp_path, ["0\ta b.\tc d.\t1.0\n"])
        with pytest.raises(ValueError, match="only 1"):
            load_stsb(path, n=2)


class TestLoadSquad2:
    def write(self, tmp_path, paragraphs):
        path = tmp_path / "squad.json"
        path.write_text(
            json.dumps({"data": [{"title": "t", "paragraphs": paragraphs}]}), encoding="utf-8"
        )
        return path

    def test_gold_follows_impossibility_flag(self, tmp_path):
        path = self.write(
            tmp_path,
            [
                {
                    "context": "The dam opened in 1936.",
                    "qas": [
                        {"question": "When did the dam open?", "is_impossible": False},
                        {"question": "Who demolished the dam?", "is_impossible": True},
                    ],
                }
            ],
        )
        examples = load_squad2(path)
        assert [e.gold for e in examples] == [1.0, 0.0]
        assert examples[0].inputs["context"] == "The dam opened in 1936."

    def test_missing_flag_defaults_to_answerable(self, tmp_path):
        path = self.write(
            tmp_path, [{"context": "ctx", "qas": [{"question": "q?"}]}]
        )
        assert load_squad2(path)[0].gold == 1.0

    def test_blank_context_or_question_skipped(self, tmp_path):
        path = self.write(
            tmp_path,
            [
                {"context": "  ", "qas": [{"question": "lost?"}]},
                {"context": "kept", "qas": [{"question": ""}, {"question": "kept?"}]},
            ],
        )
        examples = load_squad2(path)
        assert len(examples) == 1
        assert examples[0].inputs["question"] == "kept?"

    def test_exact_n_sampling(self, tmp_path):
        qas = [{"question": f"q{i}?", "is_impossible": i % 2 == 0} for i in range(10)]
        path = self.write(tmp_path, [{"context": "ctx", "qas": qas}])
        assert len(load_squad2(path, n=4, seed=3)) == 4
        with pytest.raises(ValueError):
            load_squad2(path, n=11)


class TestSpearmanRho:
    def test_perfect_agreement(self):
        assert spearman_rho([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)

    def test_perfect_inversion(self):
        assert spearman_rho([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_tied_pair_worked_example(self):
        assert spearman_rho([1, 2, 2, 3], [1, 2, 3, 4]) == pytest.approx(0.9487, abs=5e-5)

    def test_two_observations_allowed(self):
        assert spearman_rho([1, 2], [5, 1]) == pytest.approx(-1.0)

    def test_single_observation_rejected(self):
        with pytest.raises(ValueError):
            spearman_rho([1], [1])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            spearman_rho([1, 2], [1, 2, 3])

    def test_zero_variance_rejected(self):
        with pytest.raises(ZeroVarianceError):
            spearman_rho([2, 2, 2], [1, 2, 3])
        with pytest.raises(ZeroVarianceError):
            spearman_rho([1, 2, 3], [7, 7, 7])

    def test_matches_counting_oracle_with_ties(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            n = int(rng.integers(3, 40))
            xs = rng.integers(0, 6, size=n).astype(float)
            ys = rng.integers(0, 6, size=n).astype(float)
            if np.all(xs == xs[0]) or np.all(ys == ys[0]):
                continue
            assert spearman_rho(xs, ys) == pytest.approx(oracle_spearman(xs, ys), abs=1e-12)

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(23)
        xs = rng.normal(size=30)
        ys = rng.normal(size=30)
        base = spearman_rho(xs, ys)
        assert spearman_rho(np.exp(xs), ys) == pytest.approx(base, abs=1e-12)
        assert spearman_rho(xs, 3.0 * ys + 11.0) == pytest.approx(base, abs=1e-12)


class TestBonettWrightSe:
    def test_published_operating_points(self):
        assert round(bonett_wright_se(0.874, 500), 3) == 0.053
        assert round(bonett_wright_se(0.752, 500), 3) == 0.051

    def test_closed_form(self):
        assert bonett_wright_se(0.5, 100) == pytest.approx(math.sqrt((1 + 0.125) / 97))

    def test_zero_rho_small_n(self):
        assert bonett_wright_se(0.0, 4) == pytest.approx(1.0)

    def test_monotone_in_absolute_rho(self):
        values = [bonett_wright_se(r, 50) for r in (0.0, 0.3, 0.6, 0.9)]
        assert values == sorted(values)
        assert bonett_wright_se(-0.6, 50) == bonett_wright_se(0.6, 50)

    def test_shrinks_with_n(self):
        assert bonett_wright_se(0.5, 400) < bonett_wright_se(0.5, 40)

    def test_small_n_rejected(self):
        with pytest.raises(ValueError):
            bonett_wright_se(0.5, 3)

    def test_rho_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            bonett_wright_se(1.2, 50)


class TestValidateMetricAlignment:
    GOLDS = [0.1, 0.9, 0.4, 0.7, 0.2, 0.8, 0.3, 0.6, 0.5, 1.0]

    def run(self, rules, examples=None, program=ECHO_PROGRAM):
        gw = make_gateway()
        return validate_metric_alignment(
            gw,
            program,
            examples if examples is not None else echo_examples(self.GOLDS),
            chat_ep(MockScript(rules=rules), "mock-judge"),
        )

    def test_echo_judge_aligns_perfectly(self):
        report = self.run(echo_rules(self.GOLDS))
        assert report.valid
        assert report.rho_s == pytest.approx(1.0)
        assert report.se == pytest.approx(bonett_wright_se(1.0, 10))
        assert report.n == 10
        assert report.parse_failures == 0

    def test_inverted_judge_scores_minus_one(self):
        report = self.run(echo_rules(self.GOLDS, transform=lambda g: round(1 - g, 3)))
        assert report.rho_s == pytest.approx(-1.0)

    def test_constant_judge_is_invalid(self):
        rules = [MockRule(match="item-", response="rating: 0.5")]
        report = self.run(rules)
        assert not report.valid
        assert report.rho_s is None
        assert any("zero variance" in note for note in report.notes)

    def test_excess_parse_failures_invalidate(self):
        rules = [
            MockRule(match=f"item-{i:02d}", response="nope") for i in range(3)
        ] + echo_rules(self.GOLDS)
        report = self.run(rules)
        assert not report.valid
        assert report.parse_failures == 3
        assert any("20%" in note for note in report.notes)

    def test_binary_program_carries_degeneracy_note(self):
        program = PromptProgram(
            metric_name="answerability",
            instruction="Write 'flag:' then 0 or 1.",
            output_field="flag",
            scale=BINARY,
            input_fields=("text",),
        )
        rules = [
            MockRule(match=f"item-{i:02d}", response=f"flag: {1 if gold > 0.5 else 0}")
            for i, gold in enumerate(self.GOLDS)
        ]
        report = self.run(rules, program=program)
        assert any("phi" in note for note in report.notes)

    def test_too_few_examples_rejected(self):
        with pytest.raises(ValueError, match="at least 4"):
            self.run([], examples=echo_examples([0.1, 0.5, 0.9]))

    def test_markdown_row_shape(self):
        report = AlignmentReport(
            metric_name="answer_correctness",
            program_name="optimized",
            judge_model="judge-x",
            n=500,
            rho_s=0.874,
            se=0.053,
            parse_failures=0,
            valid=True,
        )
        assert report.markdown_row() == "| optimized | judge-x | 0.874 |"

    def test_report_json_round_trip_fields(self):
        report = self.run(echo_rules(self.GOLDS))
        data = report.to_json()
        assert data["metric_name"] == "answer_correctness"
        assert data["valid"] is True
        assert data["n"] == 10
