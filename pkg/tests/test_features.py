import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lightsage.exceptions import ConfigError
from lightsage.features import Vocabulary, features_from_rows, load_features, price_band

from conftest import FEATURE_KINDS, FEATURE_NAMES, feature_rows


def write_features(path, rows):
    header = "item\t" + "\t".join(f"{n}:{k}" for n, k in zip(FEATURE_NAMES, FEATURE_KINDS))
    path.write_text(header + "\n" + "\n".join("\t".join(r) for r in rows) + "\n")


def two_items(p1="10", p2="12", brand2="nike"):
    return features_from_rows(
        FEATURE_NAMES, FEATURE_KINDS,
        [["a", "shoes>running", "nike", "s1", p1, "4.5", "0.1,0.2"],
         ["b", "shoes>running", brand2, "s2", p2, "4.0", "0.3,0.1"]],
    )


def test_shared_brand_shares_index():
    fs = two_items()
    assert fs.sparse["brand"][0] == fs.sparse["brand"][1] != 0


def test_unknown_token_is_zero():
    assert two_items().lookup("brand", "adidas") == 0


def test_dense_standardized(tmp_path):
    rows = feature_rows([f"i{j}" for j in range(50)], seed=4)
    write_features(tmp_path / "f.tsv", rows)
    fs = load_features(tmp_path / "f.tsv")
    col = fs.dense[:, fs.dense_fields.index("price")]
    assert abs(col.mean()) < 1e-9 and abs(col.std() - 1.0) < 1e-9


def test_price_bands_by_hand():
    # log10(10) * 2 = 2.0 and log10(12) * 2 = 2.158..., both floor to 2.
    assert price_band(10) == price_band(12) == 2
    fs = two_items()
    assert fs.content_key("a", 0) == fs.content_key("b", 0) == ("running", "nike", 2)


def test_level_two_ignores_brand_and_price():
    fs = two_items(p1="1", p2="5000", brand2="puma")
    assert fs.content_key("a", 0) != fs.content_key("b", 0)
    assert fs.content_key("a", 2) == fs.content_key("b", 2) == ("running",)


def test_zero_price_clamped():
    assert price_band(0.0) == math.floor(math.log10(0.01) * 2) == -4
    fs = two_items(p1="0")
    assert fs.content_key("a", 0)[2] == -4


def test_bad_dense_row_skipped():
    fs = features_from_rows(FEATURE_NAMES, FEATURE_KINDS,
                            [["a", "c", "b", "s", "abc", "4", ""], ["b", "c", "b", "s", "3", "4", ""]])
    assert fs.items == ["b"] and fs.skipped == 1


def test_inconsistent_pretrained_dim():
    with pytest.raises(ConfigError):
        features_from_rows(FEATURE_NAMES, FEATURE_KINDS,
                           [["a", "c", "b", "s", "1", "4", "1,2"], ["b", "c", "b", "s", "3", "4", "1,2,3"]])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.text(alphabet="abcxyz>", min_size=1, max_size=6), max_size=20))
def test_vocabulary_round_trip(tokens):
    v = Vocabulary()
    ids = [v.add(t) for t in tokens]
    w = Vocabulary.from_list(v.to_list())
    assert w == v
    assert [w[t] for t in tokens] == ids


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1e6), st.floats(0.0, 1e6))
def test_content_key_levels_nest(p1, p2):
    fs = two_items(f"{p1}", f"{p2}")
    k0a, k0b = fs.content_key("a", 0), fs.content_key("b", 0)
    assert fs.content_key("a", 1) == k0a[:2]
    assert fs.content_key("a", 2) == k0a[:1]
    if k0a == k0b:
        assert fs.content_key("a", 1) == fs.content_key("b", 1)
    assert fs.content_key("a", 0) == k0a


def test_pretrained_loaded():
    fs = two_items()
    assert fs.pretrained_dim == 2
    assert np.allclose(fs.pretrained[1], [0.3, 0.1])
