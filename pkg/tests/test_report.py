import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frontier_match.effects import EffectEstimate
from frontier_match.errors import ValidationError
from frontier_match.report import (
    Table, dumps_json, effects_tables, fmt4, read_csv_table, summarize_scores, summary_table,
)


def test_equal_scores_have_zero_sd():
    (pooled, dbb) = summarize_scores([0.5, 0.5], ["DBB", "DBB"])
    assert pooled.mean == 0.5 and pooled.sd == 0.0
    assert dbb.label == "DBB" and dbb.obs == 2


def test_row_order_pooled_dbb_db():
    rows = summarize_scores([0.2, 0.4, 0.6], ["DB", "DBB", "DB"])
    assert [r.label for r in rows] == ["Pooled", "DBB", "D&B"]


def test_five_score_hand_summary():
    s = [0.2, 0.4, 0.5, 0.9, 1.0]
    g = ["DB", "DBB", "DB", "DBB", "DB"]
    pooled, dbb, db = summarize_scores(s, g)
    # pooled: mean 3.0/5 = 0.6; squared deviations .16+.04+.01+.09+.16 = .46; sd = sqrt(.46/4)
    assert pooled.mean == pytest.approx(0.6)
    assert pooled.sd == pytest.approx(np.sqrt(0.115))
    assert (pooled.min, pooled.max, pooled.obs) == (0.2, 1.0, 5)
    # DBB {0.4, 0.9}: mean 0.65, sd = 0.5 / sqrt(2)
    assert dbb.mean == pytest.approx(0.65) and dbb.sd == pytest.approx(0.5 / np.sqrt(2))
    # D&B {0.2, 0.5, 1.0}: mean 0.5667, deviations -.3667, -.0667, .4333
    assert db.mean == pytest.approx(1.7 / 3)
    assert db.sd == pytest.approx(np.sqrt((0.3666667**2 + 0.0666667**2 + 0.4333333**2) / 2), rel=1e-6)
    table = summary_table("t", "T", [pooled, dbb, db])
    assert table.rows[0] == ("Pooled", 5, 0.6, 0.3391, 0.2, 1.0)
    assert "| D&B | 3 | 0.5667 | 0.4041 | 0.2000 | 1.0000 |" in table.to_markdown()


def test_summary_input_checks():
    with pytest.raises(ValidationError):
        summarize_scores([], [])
    with pytest.raises(ValidationError):
        summarize_scores([0.1, 0.2], ["DB"])


def test_fmt4():
    assert fmt4(-0.00001) == "0.0000"
    assert fmt4(1 / 3) == "0.3333"
    assert fmt4(float("nan")) == "nan"


cell = st.one_of(
    st.floats(allow_nan=False, allow_infinity=False),
    st.integers(-10**6, 10**6),
    st.text(alphabet="abcXYZ-_ &;0", max_size=6),
    st.booleans(),
)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(cell, cell, cell), max_size=8))
def test_csv_round_trip(rows):
    t = Table("x", "X", ("a", "b", "c"), rows)
    back = read_csv_table(t.to_csv(), "x")
    assert back.to_csv() == t.to_csv()


def test_numeric_looking_ids_stay_text():
    t = read_csv_table("id,v\n007,0.1\n", "t")
    assert t.rows == [("007", 0.1)]


def estimate(est, method, point, se):
    return EffectEstimate(est, method, point, se, point - 2 * se, point + 2 * se, 999, 0, 7, 120, 110)


def test_effects_layout():
    ests = {
        m: {e: estimate(e, m, p, 0.01) for e, p in (("ATE", 0.057 if m == "nn" else 0.036), ("ATT", 0.059))}
        for m in ("nn", "genetic")
    }
    long, wide = effects_tables(ests)
    assert [r[:2] for r in long.rows] == [("ATE", "nn"), ("ATE", "genetic"), ("ATT", "nn"), ("ATT", "genetic")]
    assert wide.headers == ("", "nn", "genetic")
    assert wide.rows[0] == ("ATE", "0.0570", "0.0360")
    assert wide.rows[1] == ("", "(0.0100)", "(0.0100)")
    assert wide.rows[-2:] == [("N treated", "120", "120"), ("N controls", "110", "110")]


def test_json_is_canonical():
    assert dumps_json({"b": np.float64(1.5), "a": (1, 2)}) == '{\n  "a": [\n    1,\n    2\n  ],\n  "b": 1.5\n}\n'
