"""TrialRecord persistence invariants."""

import json

import pytest

from densbench.records import TrialRecord


def test_round_trip_exact():
    rec = TrialRecord(kind="gf", config={"depth": 3}, seed=7,
                      history=[{"step": 0, "true_w1": 0.123456789012345,
                                "critic_w1": None, "loss": None}],
                      best_w1=0.123456789012345, final_w1=0.123456789012345,
                      wall_clock=1.5)
    back = TrialRecord.from_json(rec.to_json())
    assert back == rec


def test_best_w1_must_match_history():
    with pytest.raises(ValueError, match="best_w1"):
        TrialRecord(kind="gf", config={}, seed=0,
                    history=[{"step": 0, "true_w1": 0.5}], best_w1=0.4)


def test_score_of_failed_trial_is_inf():
    rec = TrialRecord(kind="wgan", config={}, seed=0, failure="boom")
    assert rec.failed
    assert rec.score() == float("inf")


def test_schema_version_checked():
    rec = TrialRecord(kind="gf", config={}, seed=0)
    doc = json.loads(rec.to_json())
    doc["schema_version"] = 99
    with pytest.raises(ValueError, match="schema"):
        TrialRecord.from_json(json.dumps(doc))


def test_save_load(tmp_path):
    rec = TrialRecord(kind="gf", config={"a": 1}, seed=3, best_w1=0.2,
                      history=[{"step": 0, "true_w1": 0.2}])
    path = tmp_path / "r.json"
    rec.save(path)
    assert TrialRecord.load(path) == rec
