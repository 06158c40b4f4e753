import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsefuse.evaluator import (
    ABLATION_COLUMNS, ABLATION_RATIOS, AblationRow, AblationTable, MetricTable, STRATIFIED_COLUMNS,
    absrel, ablation_sweep, bin_masks, bin_midpoints, curve_export, delta1, frame_masks, read_curve,
    rmse, stratified_eval,
)
from sparsefuse.scene_gen import Frame, default_intrinsics

from oracles import absrel_loop, bin_index, delta1_loop, rmse_loop

ALL = np.ones(2, dtype=bool)


def test_absrel_examples():
    assert absrel(np.array([3.0]), np.array([3.0]), ALL[:1]) == 0.0
    assert absrel(np.array([2.0]), np.array([1.0]), ALL[:1]) == 1.0
    assert np.isclose(absrel(np.array([11.0, 18.0]), np.array([10.0, 20.0]), ALL), 0.1)


def test_rmse_examples():
    assert rmse(np.array([5.0]), np.array([5.0]), ALL[:1]) == 0.0
    assert np.isclose(rmse(np.array([13.0, 24.0]), np.array([10.0, 20.0]), ALL), np.sqrt(12.5))


def test_delta1_examples():
    assert delta1(np.array([4.0]), np.array([4.0]), ALL[:1]) == 1.0
    assert delta1(np.array([1.25]), np.array([1.0]), ALL[:1]) == 0.0
    assert delta1(np.array([1.2, 2.0]), np.array([1.0, 1.0]), ALL) == 0.5


def test_empty_set_is_absent():
    empty = np.zeros(2, dtype=bool)
    x = np.ones(2)
    assert absrel(x, x, empty) is None and rmse(x, x, empty) is None and delta1(x, x, empty) is None


@settings(max_examples=200, deadline=None)
@given(n=st.integers(1, 60), seed=st.integers(0, 2**30))
def test_metrics_match_pixel_loops(n, seed):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(1, 150, n)
    pred = gt * rng.uniform(0.5, 1.6, n)
    sel = np.ones(n, dtype=bool)
    assert abs(absrel(pred, gt, sel) - absrel_loop(pred, gt)) < 1e-9
    assert abs(rmse(pred, gt, sel) - rmse_loop(pred, gt)) < 1e-9
    assert abs(delta1(pred, gt, sel) - delta1_loop(pred, gt)) < 1e-9


def test_bin_boundaries():
    gt = np.array([0.5, 1.0, 49.999, 50.0, 99.999, 100.0, 150.0, 150.001])
    masks = bin_masks(gt)
    got = [next((i for i, m in enumerate(masks) if m[j]), None) for j in range(gt.size)]
    assert got == [None, 0, 0, 1, 1, 2, 2, None]
    assert got == [bin_index(z) for z in gt]


def _frames(gts):
    out = []
    for i, gt in enumerate(gts):
        h, w = gt.shape
        rgb = np.zeros((3, h, w))
        out.append(Frame(rgb, gt, gt > 0, default_intrinsics(h, w), i))
    return out


def _oracle_for(frames):
    by_id = {id(f.rgb): f.gt for f in frames}
    return lambda rgb, sparse: by_id[id(rgb)]


def test_perfect_predictor_table():
    rng = np.random.default_rng(0)
    frames = _frames([rng.uniform(1, 150, (16, 16)) for _ in range(3)])
    table = stratified_eval({"oracle": _oracle_for(frames)}, frames, 0.05, seed=0)
    assert len(table.rows) == 4
    for r in table.rows:
        assert (r.absrel, r.rmse, r.delta1) == (0.0, 0.0, 1.0)


def test_constant_predictor_matches_pixel_loop():
    rng = np.random.default_rng(1)
    gts = [rng.uniform(1, 150, (8, 8)) for _ in range(3)]
    frames = _frames(gts)
    table = stratified_eval({"c": lambda rgb, s: np.full((8, 8), 75.0)}, frames, 0.1, seed=0)
    per_bin = {0: [], 1: [], 2: []}
    for gt in gts:
        for z in gt.ravel():
            b = bin_index(z)
            if b is not None:
                per_bin[b].append(z)
    for b, label in enumerate(("1-50", "50-100", "100-150")):
        zs = per_bin[b]
        row = table.get(label, "c")
        assert row.pixel_count == len(zs)
        assert abs(row.absrel - absrel_loop([75.0] * len(zs), zs)) < 1e-9
        assert abs(row.rmse - rmse_loop([75.0] * len(zs), zs)) < 1e-9
        assert abs(row.delta1 - delta1_loop([75.0] * len(zs), zs)) < 1e-9
    every = [z for zs in per_bin.values() for z in zs]
    overall = table.get("overall", "c")
    assert abs(overall.absrel - absrel_loop([75.0] * len(every), every)) < 1e-9
    assert overall.pixel_count == len(every)


def test_empty_bin_written_as_dash(tmp_path):
    frames = _frames([np.full((8, 8), 20.0)])
    table = stratified_eval({"m": lambda rgb, s: np.full((8, 8), 20.0)}, frames, 0.1)
    far = table.get("100-150", "m")
    assert far.absrel is None and far.pixel_count == 0
    path = tmp_path / "t.csv"
    text = table.to_csv(path)
    assert "100-150,m,-,-,-,0" in text
    back = MetricTable.from_csv(path)
    assert back.get("100-150", "m").absrel is None
    assert back.get("1-50", "m").absrel == 0.0


def test_table_shape_and_header(tmp_path):
    rng = np.random.default_rng(2)
    frames = _frames([rng.uniform(1, 150, (8, 8)) for _ in range(2)])
    models = {"a": lambda rgb, s: np.full((8, 8), 30.0), "b": lambda rgb, s: np.full((8, 8), 90.0)}
    table = stratified_eval(models, frames, 0.1)
    assert [(r.range, r.model) for r in table.rows[:2]] == [("1-50", "a"), ("1-50", "b")]
    assert len(table.rows) == 8
    path = tmp_path / "t.csv"
    table.to_csv(path)
    assert path.read_text().splitlines()[0] == ",".join(STRATIFIED_COLUMNS)
    back = MetricTable.from_csv(path)
    assert [(r.range, r.model, r.absrel, r.pixel_count) for r in back.rows] == \
           [(r.range, r.model, r.absrel, r.pixel_count) for r in table.rows]


def test_models_see_identical_masks():
    rng = np.random.default_rng(3)
    frames = _frames([rng.uniform(1, 150, (16, 16)) for _ in range(3)])
    seen = {"a": [], "b": []}

    def rec(label):
        def predict(rgb, s):
            seen[label].append(s.mask.copy())
            return np.full((16, 16), 10.0)
        return predict

    ablation_sweep({"a": rec("a"), "b": rec("b")}, frames, ratios=(0.05, 0.1))
    assert len(seen["a"]) == 6
    assert all(np.array_equal(x, y) for x, y in zip(seen["a"], seen["b"]))
    assert all(np.array_equal(m, fm) for m, fm in zip(seen["a"][:3], frame_masks(frames, 0.05, 0)))


def test_ablation_table(tmp_path):
    assert ABLATION_RATIOS == (0.005, 0.008, 0.010, 0.015, 0.020, 0.030)
    rng = np.random.default_rng(4)
    frames = _frames([rng.uniform(1, 150, (24, 24)) for _ in range(2)])
    models = {"partialconv": lambda rgb, s: np.full((24, 24), 40.0),
              "interpolation": lambda rgb, s: np.full((24, 24), 60.0)}
    table = ablation_sweep(models, frames)
    assert len(table.rows) == 12
    assert {r.encoder for r in table.rows} == {"partialconv", "interpolation"}
    path = tmp_path / "a.csv"
    table.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(ABLATION_COLUMNS)
    assert lines[1].startswith("0.005,partialconv,")
    back = AblationTable.from_csv(path)
    assert back.get(0.03, "interpolation").absrel == table.get(0.03, "interpolation").absrel


def test_curve_export_round_trip(tmp_path):
    assert bin_midpoints() == (25.5, 75.0, 125.0)
    rng = np.random.default_rng(5)
    frames = _frames([rng.uniform(1, 150, (16, 16))])
    table = stratified_eval({"oracle": _oracle_for(frames), "c": lambda rgb, s: np.full((16, 16), 50.0)},
                            frames, 0.05)
    path = tmp_path / "curve.csv"
    curve_export(table, path)
    rows = read_curve(path)
    assert [r for r in rows if r[1] == "oracle"] == [(25.5, "oracle", 0.0), (75.0, "oracle", 0.0),
                                                     (125.0, "oracle", 0.0)]
    for mid, model, val in rows:
        label = {25.5: "1-50", 75.0: "50-100", 125.0: "100-150"}[mid]
        assert val == table.get(label, model).absrel


def test_ablation_row_dataclass():
    r = AblationRow(0.005, "partialconv", 0.1, 2.0)
    assert AblationTable([r]).get(0.005, "partialconv") is r
    with pytest.raises(KeyError):
        AblationTable([r]).get(0.01, "partialconv")
