import json
import time

import numpy as np
import pytest

from extractor import (ExtractorConfig, ExtractorError, NewsDay, build_prompt,
                       extract_day, write_series)
from extractor.embed import provenance_tag


def mock_cfg(**kw):
    base = dict(mock=True, mock_dim=64, seed=0)
    base.update(kw)
    return ExtractorConfig(**base)


class TestConfig:
    def test_mock_dim_validated(self):
        with pytest.raises(ExtractorError):
            ExtractorConfig(mock=True, mock_dim=0)

    def test_backend_required(self):
        with pytest.raises(ExtractorError):
            ExtractorConfig()

    def test_model_id_accepted(self):
        cfg = ExtractorConfig(model_id="some/checkpoint")
        assert not cfg.mock


class TestBuildPrompt:
    def test_single_headline_verbatim(self):
        day = NewsDay("2024-01-10", ["central bank holds rates"])
        assert build_prompt(day) == "central bank holds rates"

    def test_three_headlines_three_blocks(self):
        day = NewsDay("2024-01-10", ["one", "two", "three"])
        assert build_prompt(day).split("\n\n") == ["one", "two", "three"]

    def test_no_instruction_framing(self):
        day = NewsDay("2024-01-10", ["just the news"])
        assert build_prompt(day) == "just the news"

    def test_truncates_oldest_first(self, caplog):
        day = NewsDay("2024-01-10", ["oldest " * 5, "middle " * 5, "newest " * 5])
        with caplog.at_level("WARNING"):
            prompt = build_prompt(day, max_tokens=12)
        assert prompt.split("\n\n") == [("middle " * 5).strip(), ("newest " * 5).strip()]
        assert any("dropped" in r.message for r in caplog.records)

    def test_keeps_newest_even_if_over_budget(self):
        day = NewsDay("2024-01-10", ["many words in a single very long headline"])
        assert build_prompt(day, max_tokens=2) == "many words in a single very long headline"


class TestMockExtract:
    def test_same_input_identical(self):
        day = NewsDay("2024-01-10", ["alpha", "beta"])
        a = extract_day(mock_cfg(), day)
        b = extract_day(mock_cfg(), NewsDay("2024-01-10", ["alpha", "beta"]))
        assert np.array_equal(a, b)

    def test_unit_norm(self):
        v = extract_day(mock_cfg(), NewsDay("2024-01-10", ["alpha"]))
        assert abs(np.linalg.norm(v) - 1.0) < 1e-12

    def test_sensitive_to_date_headlines_and_seed(self):
        base = extract_day(mock_cfg(), NewsDay("2024-01-10", ["alpha"]))
        for other in (extract_day(mock_cfg(), NewsDay("2024-01-11", ["alpha"])),
                      extract_day(mock_cfg(), NewsDay("2024-01-10", ["beta"])),
                      extract_day(mock_cfg(seed=1), NewsDay("2024-01-10", ["alpha"]))):
            assert not np.array_equal(base, other)

    def test_cross_date_cosine_diversity(self):
        # thresholds frozen from this exact seeded measurement:
        # mean 0.101, max 0.306 over the 100 pairs below
        cfg = mock_cfg()
        coss = []
        for i in range(100):
            a = extract_day(cfg, NewsDay(f"2024-01-{i % 28 + 1:02d}",
                                         [f"headline alpha {i}", f"beta {i * 7}"]))
            b = extract_day(cfg, NewsDay(f"2024-02-{i % 28 + 1:02d}",
                                         [f"gamma {i + 3}", f"delta {i * 11}"]))
            coss.append(abs(float(a @ b)))
        assert float(np.mean(coss)) < 0.15
        assert max(coss) < 0.32

    def test_thousand_days_under_ten_seconds(self):
        cfg = mock_cfg()
        start = time.monotonic()
        for i in range(1000):
            extract_day(cfg, NewsDay(f"day-{i}", [f"headline {i}", f"more {i}"]))
        assert time.monotonic() - start < 10.0


class TestWriteSeries:
    def vectors(self, dates, dim=4, seed=0):
        rng = np.random.default_rng(seed)
        return {d: rng.normal(size=dim) for d in dates}

    def test_meta_plus_one_record_per_day(self, tmp_path):
        path = tmp_path / "e.jsonl"
        write_series(self.vectors(["2024-01-10", "2024-01-11", "2024-01-12"]), path, "tag")
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 4
        assert json.loads(lines[0]) == {"meta": {"provenance": "tag"}}

    def test_unsorted_input_sorted_output(self, tmp_path):
        path = tmp_path / "e.jsonl"
        write_series(self.vectors(["2024-01-12", "2024-01-10"]), path)
        dates = [json.loads(l)["date"] for l in path.read_text().strip().splitlines()[1:]]
        assert dates == ["2024-01-10", "2024-01-12"]

    def test_dimension_inconsistency_rejected(self, tmp_path):
        vecs = {"2024-01-10": np.zeros(3), "2024-01-11": np.zeros(4)}
        with pytest.raises(ExtractorError, match="inconsistent"):
            write_series(vecs, tmp_path / "e.jsonl")

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        path = tmp_path / "e.jsonl"
        write_series(self.vectors(["2024-01-10"]), path)
        assert [p.name for p in tmp_path.iterdir()] == ["e.jsonl"]

    def test_float32_storage(self, tmp_path):
        path = tmp_path / "e.jsonl"
        vecs = {"2024-01-10": np.array([1 / 3, np.pi])}
        write_series(vecs, path)
        rec = json.loads(path.read_text().splitlines()[1])
        assert rec["vector"] == [float(np.float32(1 / 3)), float(np.float32(np.pi))]

    def test_provenance_tags(self):
        assert "mock" in provenance_tag(mock_cfg())
        assert "final-hidden" in provenance_tag(ExtractorConfig(model_id="x/y"))
