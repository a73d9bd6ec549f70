import json
import math

import pytest

import mdcurriculum as mdc


def test_schedule_plateau():
    s = mdc.Schedule(halving=2000 * math.log(2) / math.log(5), floor=0.2, warmup=0, max_steps=4000)
    assert s.rho(0) == 1.0
    assert abs(s.rho(2000) - 0.2) < 1e-12
    assert abs(s.rho(3500) - 0.2) < 1e-12
    p = mdc.Schedule.plateau_after(2000, 0.2, 0, 4000)
    assert abs(p.halving - s.halving) < 1e-9
    with pytest.raises(mdc.UsageError):
        mdc.Schedule(floor=0.0)


def test_selection_and_percentiles():
    assert mdc.selected_count(0.2, 50) == 10
    assert mdc.selected_count(0.0, 50) == 1
    assert mdc.percentiles([3.0, 1.0, 2.0]) == [2 / 3, 0.0, 1 / 3]


def test_features_and_ei():
    assert mdc.tokenize("  a  b ") == ["a", "b"]
    assert mdc.embedding_similarity("the cat", "the cat") == pytest.approx(1.0)
    assert mdc.embedding_similarity("abc", "xyz") == 0.0
    assert mdc.expected_improvement(0.5, 0.0, 0.3) == pytest.approx(0.2)
    assert mdc.expected_improvement(0.3, 0.0, 0.3) == 0.0


def test_pipeline(tmp_path):
    cfg_path = mdc.write_synthetic(tmp_path / "data", pairs=400, seed=3)
    cfg = json.loads(cfg_path.read_text())
    cfg["warm"]["steps"] = 20
    cfg["schedule"]["max_steps"] = 40
    cfg["schedule"]["warmup"] = 5
    cfg["tuning"].update(trials=3, explore=2, trial_steps=5, candidates=64)
    cfg_path.write_text(json.dumps(cfg))

    mdc.score(cfg_path)
    out = tmp_path / "data" / "out"
    assert sorted(p.name for p in (out / "features").iterdir()) == [
        "nlm_news.tsv", "nlm_ted.tsv", "nmt_news.tsv", "nmt_ted.tsv"]
    mdc.tune(cfg_path, method="rs")
    assert len((out / "tune" / "rs" / "history.jsonl").read_text().splitlines()) == 3
    mdc.train(cfg_path, "base", mode="none")
    mdc.train(cfg_path, "multi", weights="best:rs", finetune=["news"])
    assert mdc.report(cfg_path) == []
    assert "multi\tfinetune:news" in (out / "report.tsv").read_text()

    with pytest.raises(mdc.UsageError):
        mdc.train(cfg_path, "x", mode="sideways")
    with pytest.raises(mdc.DataError):
        mdc.evaluate(cfg_path, tmp_path / "nope.bin")
    assert issubclass(mdc.DataError, mdc.Error)
    assert mdc.EXIT_CODES[mdc.NumericalError] == 3
