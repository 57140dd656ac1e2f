import pytest
from hypothesis import given
from hypothesis import strategies as st

from lslolab.lslo import LanguageSpec
from lslolab.metrics import bleu, bucket_columns, bucket_report, format_params, ngram_stats, report_csv
from oracles import oracle_bleu

sentence = st.lists(st.integers(0, 6), min_size=0, max_size=9)


@given(st.lists(st.tuples(sentence, sentence), min_size=1, max_size=6))
def test_bleu_matches_oracle(pairs):
    cands = [c for c, _ in pairs]
    refs = [r for _, r in pairs]
    assert abs(bleu(cands, refs) - oracle_bleu(cands, refs)) <= 1e-9


def test_identity_and_disjoint():
    refs = [[1, 2, 3, 4, 5], [2, 3, 4, 5, 6, 7]]
    assert bleu(refs, refs) == 100.0
    assert bleu([[7, 8, 9]], [[1, 2, 3]]) == 0.0


def test_brevity_penalty():
    got = bleu([[1, 2, 3, 4]], [[1, 2, 3, 4, 5, 6, 7, 8]])
    assert got < 100.0 and got == pytest.approx(oracle_bleu([[1, 2, 3, 4]], [[1, 2, 3, 4, 5, 6, 7, 8]]))


def test_clipped_counts():
    m, t, c, r = ngram_stats([[1, 1, 1, 1]], [[1, 2]])
    assert m[0] == 1 and t[0] == 4 and (c, r) == (4, 2)


def test_length_mismatch():
    with pytest.raises(ValueError):
        bleu([[1]], [])


LANGS = [LanguageSpec("h1", "High", 1), LanguageSpec("h2", "High", 1), LanguageSpec("v", "VeryLow", 1)]


def test_bucket_report_averages():
    scores = {("h1", "h2"): 40.0, ("h2", "h1"): 20.0, ("h1", "v"): 10.0, ("v", "h1"): 6.0, ("v", "h2"): 2.0, ("h2", "v"): 0.0}
    rep = bucket_report(scores, LANGS)
    assert rep.buckets == {"H2H": 30.0, "H2V": 5.0, "V2H": 4.0}
    assert rep.avg_buckets == pytest.approx(13.0)
    assert rep.avg_directions == pytest.approx(13.0)
    assert bucket_columns(LANGS) == ["H2H", "H2V", "V2H", "V2V"]
    text = report_csv([("Ft-all", "7456", rep)], "config_hash=x")
    lines = text.splitlines()
    assert lines[0] == "# config_hash=x"
    assert lines[1] == "method,#Params,H2H,H2V,V2H,AVG,AVG_directions"
    assert lines[2] == "Ft-all,7456,30.00,5.00,4.00,13.00,13.00"


def test_format_params():
    assert format_params(None) == "-"
    assert format_params(999) == "999"
    assert format_params(12_345) == "12.3K"
    assert format_params(3_400_000) == "3.4M"
