"""Model-matrix encoding: passthrough, one-hot, missing indicators, DSL columns."""

import math

import numpy as np
import pytest

from shiftlens.dsl import compile_feature
from shiftlens.errors import ValidationError
from shiftlens.features import FeatureEncoder, build_model_matrix, evaluate_features
from shiftlens.tabular import ColumnSchema, Table


def make_table(n=50, seed=0, n_cities=3):
    rng = np.random.default_rng(seed)
    schema = [
        ColumnSchema("ID", "text", "key"),
        ColumnSchema("AGE", "numeric"),
        ColumnSchema("CITY", "categorical"),
        ColumnSchema("ACTIVE", "boolean"),
        ColumnSchema("COST", "numeric", "target-metric"),
        ColumnSchema("SECRET", "numeric", "ground-truth"),
    ]
    age = rng.uniform(20, 80, size=n)
    age[0] = math.nan
    city = rng.choice([f"city{i}" for i in range(n_cities)], size=n).astype(object)
    city[1] = None
    active = (rng.random(n) < 0.5).astype(np.float64)
    cols = {
        "ID": np.array([f"r{i}" for i in range(n)], dtype=object),
        "AGE": age,
        "CITY": city,
        "ACTIVE": active,
        "COST": rng.uniform(0, 10, size=n),
        "SECRET": np.zeros(n),
    }
    return Table(schema, cols)


def test_numeric_passthrough_and_onehot_names():
    t = make_table()
    enc = FeatureEncoder()
    X = enc.fit_transform(t)
    names = enc.feature_names
    assert X.shape[0] == len(t)
    assert "AGE" in names and "ACTIVE" in names
    for c in range(3):
        assert f"CITY=city{c}" in names
    assert "CITY__missing" in names
    # feature role only: target metric, key, ground truth stay out
    assert "COST" not in names and "SECRET" not in names and "ID" not in names


def test_onehot_values_match_categories():
    t = make_table()
    enc = FeatureEncoder()
    X = enc.fit_transform(t)
    names = enc.feature_names
    city = t.column("CITY")
    j = names.index("CITY=city0")
    for i in range(len(t)):
        assert X[i, j] == (1.0 if city[i] == "city0" else 0.0)
    jm = names.index("CITY__missing")
    assert X[1, jm] == 1.0 and X[2, jm] == 0.0


def test_numeric_missing_stays_nan():
    t = make_table()
    enc = FeatureEncoder()
    X = enc.fit_transform(t)
    names = enc.feature_names
    j = names.index("AGE")
    assert math.isnan(X[0, j])
    assert not math.isnan(X[5, j])


def test_onehot_cap_keeps_most_frequent():
    t = make_table(n=300, n_cities=40)
    enc = FeatureEncoder(max_onehot=10)
    enc.fit(t)
    names = enc.feature_names
    city_cols = [n for n in names if n.startswith("CITY=")]
    assert len(city_cols) == 10
    # kept categories are the most frequent ones
    values, counts = np.unique([v for v in t.column("CITY") if v is not None],
                               return_counts=True)
    order = sorted(zip(-counts, values))
    top = {v for _, v in order[:10]}
    assert {n.split("=", 1)[1] for n in city_cols} == top


def test_transform_unseen_category_maps_to_zero_row():
    t = make_table()
    enc = FeatureEncoder()
    enc.fit(t)
    names = enc.feature_names
    t2 = make_table(seed=9)
    t2.column("CITY")[4] = "brand-new"
    X2 = enc.transform(t2)
    city_cols = [i for i, n in enumerate(names) if n.startswith("CITY=")]
    assert all(X2[4, j] == 0.0 for j in city_cols)


def test_expression_columns_appended():
    t = make_table()
    types = {"AGE": "numeric", "ACTIVE": "boolean"}
    exprs = {
        "age_sq": compile_feature("AGE * AGE", types),
        "is_old": compile_feature("if AGE > 50 then 1 else 0", types),
    }
    vals, names = evaluate_features(t, exprs)
    assert names[0] == "age_sq"
    # AGE missing row yields a missing indicator column
    assert "age_sq__missing" in names
    j = names.index("age_sq")
    age = t.column("AGE")
    for i in range(2, len(t)):
        assert vals[i, j] == pytest.approx(age[i] ** 2)


def test_build_model_matrix_combines_and_rejects_collisions():
    t = make_table()
    enc = FeatureEncoder()
    enc.fit(t)
    types = {"AGE": "numeric"}
    X, names = build_model_matrix(t, enc, {"age2": compile_feature("AGE + AGE", types)})
    assert "age2" in names and "AGE" in names
    assert X.shape == (len(t), len(names))
    with pytest.raises(ValidationError):
        build_model_matrix(t, enc, {"AGE": compile_feature("AGE + 1", types)})


def test_encoder_deterministic_name_order():
    t = make_table()
    names1 = FeatureEncoder().fit(t).feature_names
    names2 = FeatureEncoder().fit(t).feature_names
    assert names1 == names2
