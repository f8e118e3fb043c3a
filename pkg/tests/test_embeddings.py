import json

import numpy as np
import pytest

from localglobal.embeddings import (EmbeddingError, EmbeddingSeries,
                                    load_embeddings, pairwise_correlation,
                                    save_embeddings, vector_for_prediction)
from localglobal.panel import TradingCalendar

DATES = ("2021-03-01", "2021-03-02", "2021-03-03")


def write_jsonl(path, records, meta=True):
    with open(path, "w") as fh:
        if meta:
            fh.write(json.dumps({"meta": {"provenance": "test-model"}}) + "\n")
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def three_day_file(path, dim=4):
    rng = np.random.default_rng(0)
    recs = [{"date": d, "dim": dim, "vector": [float(np.float32(x)) for x in rng.normal(size=dim)]}
            for d in DATES]
    write_jsonl(path, recs)
    return recs


class TestLoad:
    def test_all_present(self, tmp_path):
        three_day_file(tmp_path / "e.jsonl")
        s = load_embeddings(tmp_path / "e.jsonl")
        assert len(s.calendar) == 3 and s.d_llm == 4
        assert s.provenance == "test-model"

    def test_missing_day_error_policy(self, tmp_path):
        recs = three_day_file(tmp_path / "e.jsonl")
        write_jsonl(tmp_path / "gap.jsonl", [recs[0], recs[2]])
        cal = TradingCalendar(DATES)
        with pytest.raises(EmbeddingError, match="missing"):
            load_embeddings(tmp_path / "gap.jsonl", calendar=cal)

    def test_missing_day_zero_fill(self, tmp_path, caplog):
        recs = three_day_file(tmp_path / "e.jsonl")
        write_jsonl(tmp_path / "gap.jsonl", [recs[0], recs[2]])
        with caplog.at_level("WARNING"):
            s = load_embeddings(tmp_path / "gap.jsonl", policy="zero-fill",
                                calendar=TradingCalendar(DATES))
        assert np.array_equal(s.vectors[1], np.zeros(4))
        assert any("zero-filled" in r.message for r in caplog.records)

    def test_dimension_mismatch(self, tmp_path):
        recs = three_day_file(tmp_path / "e.jsonl", dim=16)
        recs[1]["dim"] = 8
        recs[1]["vector"] = recs[1]["vector"][:8]
        write_jsonl(tmp_path / "bad.jsonl", recs)
        with pytest.raises(EmbeddingError, match="dimension"):
            load_embeddings(tmp_path / "bad.jsonl")

    def test_save_load_bit_exact(self, tmp_path):
        three_day_file(tmp_path / "e.jsonl")
        s = load_embeddings(tmp_path / "e.jsonl")
        save_embeddings(s, tmp_path / "copy.jsonl")
        s2 = load_embeddings(tmp_path / "copy.jsonl")
        assert np.array_equal(s.vectors, s2.vectors)
        assert (tmp_path / "e.jsonl").read_bytes() == (tmp_path / "copy.jsonl").read_bytes()


class TestLookup:
    def series(self, vectors):
        cal = TradingCalendar(DATES[: len(vectors)])
        return EmbeddingSeries(cal, len(vectors[0]), np.array(vectors, dtype=np.float64))

    def test_first_day(self):
        s = self.series([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(vector_for_prediction(s, DATES[0]), [1.0, 2.0])

    def test_out_of_range(self):
        s = self.series([[1.0, 2.0], [3.0, 4.0]])
        with pytest.raises(Exception):
            vector_for_prediction(s, "2020-12-31")

    def test_pure_lookup(self):
        s = self.series([[1.0, 2.0], [3.0, 4.0]])
        a = vector_for_prediction(s, DATES[1])
        b = vector_for_prediction(s, DATES[1])
        assert np.array_equal(a, b)

    def test_shift_changes_lookup(self):
        rng = np.random.default_rng(4)
        vecs = rng.normal(size=(3, 5))
        cal = TradingCalendar(DATES)
        s = EmbeddingSeries(cal, 5, vecs.copy())
        shifted = EmbeddingSeries(cal, 5, np.vstack([np.zeros(5), vecs[:2]]))
        for t in (1, 2):
            assert np.array_equal(vector_for_prediction(shifted, DATES[t]),
                                  vector_for_prediction(s, DATES[t - 1]))


class TestPairwiseCorrelation:
    def series(self, vectors):
        cal = TradingCalendar(DATES[: len(vectors)])
        return EmbeddingSeries(cal, len(vectors[0]), np.array(vectors, dtype=np.float64))

    def test_identical_vectors(self):
        s = self.series([[1.0, 2.0, 5.0], [1.0, 2.0, 5.0]])
        C = pairwise_correlation(s)
        assert abs(C[0, 1] - 1.0) < 1e-15

    def test_negated(self):
        v = [1.0, -2.0, 3.0]
        s = self.series([v, [-x for x in v]])
        assert abs(pairwise_correlation(s)[0, 1] + 1.0) < 1e-15

    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        vecs = rng.normal(size=(3, 50))
        s = self.series(list(vecs))
        C = pairwise_correlation(s)
        for i in range(3):
            for j in range(3):
                x, y = vecs[i], vecs[j]
                num = np.sum((x - x.mean()) * (y - y.mean()))
                den = np.sqrt(np.sum((x - x.mean()) ** 2) * np.sum((y - y.mean()) ** 2))
                assert abs(C[i, j] - num / den) < 1e-12

    def test_constant_vector_flagged(self):
        s = self.series([[2.0, 2.0, 2.0], [1.0, 0.0, 3.0]])
        C = pairwise_correlation(s)
        assert np.isnan(C[0, 0]) and np.isnan(C[0, 1]) and np.isnan(C[1, 0])
        assert C[1, 1] == 1.0

    def test_affine_rescale_invariance(self):
        rng = np.random.default_rng(2)
        vecs = rng.normal(size=(3, 20))
        s = self.series(list(vecs))
        scaled = self.series([3.5 * v + 1.25 for v in vecs])
        a, b = pairwise_correlation(s), pairwise_correlation(scaled)
        assert np.nanmax(np.abs(a - b)) < 1e-9
