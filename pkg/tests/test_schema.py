import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modp.errors import ConfigError, OneHotError, SchemaError
from modp.schema import (CategoricalSchema, QuestionSpec, bin_labels, infer_schema,
                         parse_directives, quantile_edges, read_table, write_table)

from conftest import block_sizes


def ramp_schema(bins=10):
    rows = [[str(v)] for v in range(1, 101)]
    return infer_schema(["X"], rows, parse_directives(f"X kind=quantile bins={bins}"))


def test_deciles_of_ramp():
    q = ramp_schema().questions[0]
    assert q.size == 10
    assert len(q.bin_edges) == 9
    assert q.category_index("5") == 0
    assert q.category_index(95) == 9
    assert q.category_index(100) == 9
    assert q.category_index(1) == 0


def test_value_on_edge_goes_lower():
    q = ramp_schema().questions[0]
    e = q.bin_edges[3]
    assert q.category_index(e) == 3
    assert q.category_index(np.nextafter(e, np.inf)) == 4


def test_quantile_bins_partition_the_line():
    q = ramp_schema().questions[0]
    for x in np.linspace(-1e6, 1e6, 2001):
        assert 0 <= q.category_index(float(x)) < q.size


def test_merge_image_becomes_categories():
    rows = [["a"], ["b"], ["c"], ["a"]]
    s = infer_schema(["M"], rows, parse_directives("M kind=merged merge=a:x,b:x,c:y"))
    q = s.questions[0]
    assert q.categories == ("x", "y")
    assert [q.category_index(v) for v in "abc"] == [0, 0, 1]


def test_merge_map_must_cover_raw_labels():
    with pytest.raises(SchemaError):
        infer_schema(["M"], [["a"], ["z"]], parse_directives("M kind=merged merge=a:x,b:y"))


def test_categorical_first_appearance_order():
    s = infer_schema(["C"], [["b"], ["a"], ["b"], ["c"]])
    assert s.questions[0].categories == ("b", "a", "c")


def test_order_directive_and_missing_position():
    rows = [["x"], ["na"], ["y"]]
    s = infer_schema(["C"], rows, parse_directives("C order=y,x,na missing=na missing_position=before"))
    assert s.questions[0].categories == ("na", "y", "x")


def test_quantile_missing_codes_before_and_after():
    rows = [[str(v)] for v in range(1, 41)] + [["-9"], ["NA"]]
    after = infer_schema(["X"], rows, parse_directives("X kind=quantile bins=4 missing=-9,NA"))
    q = after.questions[0]
    assert q.size == 6
    assert q.categories[-2:] == ("-9", "NA")
    assert q.category_index("NA") == 5 and q.category_index("3") == 0
    before = infer_schema(["X"], rows,
                          parse_directives("X kind=quantile bins=4 missing=-9,NA missing_position=before"))
    q = before.questions[0]
    assert q.categories[:2] == ("-9", "NA")
    assert q.category_index("-9") == 0 and q.category_index("3") == 2


@pytest.mark.parametrize("text,rows", [
    ("Y kind=quantile bins=2", [["1"]]),  # unknown column
    ("X kind=quantile bins=5", [["1"], ["2"], ["3"]]),  # too few distinct values
    ("X kind=quantile bins=2", [["1"], ["oops"]]),  # non-numeric, not a missing code
])
def test_infer_errors(text, rows):
    with pytest.raises(SchemaError):
        infer_schema(["X"], rows, parse_directives(text))


def test_empty_column_rejected():
    with pytest.raises(SchemaError):
        infer_schema(["X"], [])


def test_bad_directive_kind():
    with pytest.raises(ConfigError):
        parse_directives("X kind=banana")


def test_skip_directive_drops_column():
    s = infer_schema(["A", "B"], [["1", "p"], ["2", "q"]], parse_directives("B kind=skip"))
    assert [q.name for q in s.questions] == ["A"]


# A 38-question survey configured like the census person extract: plain,
# merged and decile-binned questions with one or two missing codes.
LAYOUT = [
    ("SEX", 2, "c"), ("AGEP", 11, "m"), ("RAC1P", 9, "c"), ("NATIVITY", 2, "c"), ("WAOB", 8, "c"),
    ("CIT", 5, "c"), ("DECADE", 9, "c"), ("MIL", 9, "c"), ("ENG", 9, "c"), ("HICOV", 2, "c"),
    ("SCHL", 10, "m"), ("SCH", 4, "c"), ("SCHG", 6, "m"), ("MAR", 5, "c"), ("MSP", 7, "c"),
    ("MARHT", 4, "c"), ("MARHYP", 9, "m"), ("MARHW", 3, "c"), ("MARHM", 3, "c"), ("MARHD", 3, "c"),
    ("FER", 3, "c"), ("ESR", 7, "c"), ("WRK", 3, "c"), ("WKHP", 11, "q"), ("WKWN", 7, "m"),
    ("JWAP", 11, "m"), ("JWMNP", 11, "q"), ("JWTRNS", 8, "m"), ("LANX", 3, "c"), ("LANP", 4, "m"),
    ("DIS", 2, "c"), ("DEYE", 2, "c"), ("DEAR", 2, "c"), ("DREM", 3, "c"), ("PINCP", 10, "q"),
    ("PERNP", 10, "q"), ("SSP", 12, "q"), ("PAP", 12, "q"),
]


def test_census_like_layout_reproduces_listed_sizes():
    rng = np.random.default_rng(0)
    n = 500
    header, cols, lines = [], [], []
    for name, k, kind in LAYOUT:
        header.append(name)
        if kind == "c":
            cols.append([f"v{i % k}" for i in range(n)])
        elif kind == "m":
            raw = [f"r{i}" for i in range(3 * k)]
            cols.append([raw[i % len(raw)] for i in range(n)])
            pairs = ",".join(f"{r}:g{j // 3}" for j, r in enumerate(raw))
            lines.append(f"{name} kind=merged merge={pairs}")
        else:
            n_missing = k - 10
            codes = ["-1", "-2"][:n_missing]
            vals = [str(v) for v in rng.integers(0, 10_000, n)]
            for j, c in enumerate(codes):
                vals[j] = c
            cols.append(vals)
            lines.append(f"{name} kind=quantile bins=10 missing={','.join(codes)}")
    rows = [list(r) for r in zip(*cols)]
    s = infer_schema(header, rows, parse_directives("\n".join(lines)))
    assert s.n_questions == 38
    assert list(s.sizes) == [k for _, k, _ in LAYOUT]
    # the per-question counts listed for this layout add up to 241
    assert s.n_columns == 241
    assert s.block_starts[-1] == s.n_columns


TOY = CategoricalSchema((QuestionSpec("Q1", "categorical", ("M", "F")),
                         QuestionSpec("Q2", "categorical", ("A", "B", "C"))))


@pytest.mark.parametrize("row,bits", [(("F", "B"), [0, 1, 0, 1, 0]), (("M", "A"), [1, 0, 1, 0, 0])])
def test_encode_examples(row, bits):
    assert TOY.encode_row(row).tolist() == bits


@pytest.mark.parametrize("bits,row", [([0, 1, 0, 1, 0], ["F", "B"]), ([1, 0, 0, 0, 1], ["M", "C"])])
def test_decode_examples(bits, row):
    assert list(TOY.decode_row(np.array(bits, dtype=np.uint8))) == row


def test_decode_rejects_double_one():
    with pytest.raises(OneHotError) as exc:
        TOY.decode_row(np.array([1, 1, 0, 1, 0], dtype=np.uint8))
    assert exc.value.block == 0


def test_decile_then_categorical_row():
    ramp = ramp_schema().questions[0]
    s = CategoricalSchema((ramp, TOY.questions[0]))
    bits = s.encode_row((95, "M"))
    assert bits.tolist() == [0] * 9 + [1] + [1, 0]


def test_unmappable_value():
    with pytest.raises(SchemaError):
        TOY.encode_row(("X", "A"))


def test_block_starts_layout():
    s = CategoricalSchema.from_sizes([2, 3, 4])
    assert s.block_starts == (0, 2, 5, 9)
    assert s.n_columns == 9
    assert s.column_block().tolist() == [0, 0, 1, 1, 1, 2, 2, 2, 2]


def test_bin_labels():
    assert bin_labels([1.0, 2.5]) == ["<=1", "(1,2.5]", ">2.5"]


def test_quantile_edges_deduplicated():
    # 'lower' picks sorted positions 2, 4, 6 of nine values: 1, 1, 3
    assert quantile_edges(np.array([1, 1, 1, 1, 1, 2, 3, 4, 5]), 4).tolist() == [1.0, 3.0]


def test_schema_json_roundtrip_and_stable(tmp_path):
    s = ramp_schema()
    p = tmp_path / "s.json"
    s.save(p)
    text = p.read_bytes()
    assert CategoricalSchema.load(p) == s
    s.save(p)
    assert p.read_bytes() == text
    assert json.loads(text)["block_starts"] == list(s.block_starts)


def test_schema_version_checked():
    d = json.loads(TOY.to_json())
    d["version"] = 99
    with pytest.raises(Exception):
        CategoricalSchema.from_json(json.dumps(d))


def test_table_roundtrip(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("a\tb\n1\tx\n2\ty\n")
    assert read_table(p) == (["a", "b"], [["1", "x"], ["2", "y"]])
    q = tmp_path / "t.csv"
    write_table(q, ["a", "b"], [["1", "x"]])
    assert q.read_bytes() == b"a,b\n1,x\n"


@settings(max_examples=60, deadline=None)
@given(block_sizes, st.data())
def test_decode_encode_identity(sizes, data):
    schema = CategoricalSchema.from_sizes(sizes)
    rows = data.draw(st.lists(st.tuples(*[st.sampled_from(q.categories) for q in schema.questions]),
                              min_size=1, max_size=20))
    enc = schema.encode_rows(rows)
    assert np.all(np.add.reduceat(enc, schema.block_starts[:-1], axis=1) == 1)
    assert [tuple(r) for r in schema.decode_rows(enc)] == rows


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=10, max_size=60, unique=True),
       st.integers(2, 6), st.floats(-1e7, 1e7, allow_nan=False))
def test_every_finite_value_lands_in_one_bin(values, bins, probe):
    rows = [[repr(v)] for v in values]
    s = infer_schema(["X"], rows, parse_directives(f"X kind=quantile bins={bins}"))
    q = s.questions[0]
    k = q.category_index(probe)
    assert 0 <= k < q.size
    edges = (-np.inf,) + q.bin_edges + (np.inf,)
    assert edges[k] < probe <= edges[k + 1]
