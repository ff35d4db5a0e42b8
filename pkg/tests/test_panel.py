import io

import numpy as np
import pytest

from bypassdid.errors import (
    ConsistencyError,
    GroupEmptyError,
    IncompletePanelError,
    SchemaError,
)
from bypassdid.panel import (
    ExposureStatus,
    PanelSchema,
    apply_exclusion,
    emit_panel,
    load_panel,
    make_comparison,
)

from conftest import random_dataset


HEADER = "unit_id,stratum,exposure,t,m,outcome,price\n"


def rows_for(unit, stratum, exposure, outcomes, price):
    lines = []
    for (t, m), y in outcomes.items():
        lines.append(f"{unit},{stratum},{exposure},{t},{m},{y},{price}\n")
    return "".join(lines)


def small_csv(drop_cell=None):
    cells = {(t, m): 10 * t + m for t in (0, 1) for m in (1, 2)}
    if drop_cell:
        del cells[drop_cell]
    text = HEADER
    text += rows_for("a", "east", "treated", cells, 1.5)
    text += rows_for("b", "west", "control", {k: v + 100 for k, v in cells.items()}, 2.5)
    return text


class TestExposureStatus:
    def test_labels_round_trip(self):
        for label in ("treated", "neighbor", "control"):
            assert ExposureStatus.from_label(label).label == label

    def test_both_exposures_rejected(self):
        with pytest.raises(SchemaError):
            ExposureStatus(1, 1)

    def test_unknown_label(self):
        with pytest.raises(SchemaError, match="unknown exposure label"):
            ExposureStatus.from_label("both")


class TestLoadPanel:
    def test_smallest_complete_panel(self):
        ds = load_panel(io.StringIO(small_csv()))
        assert ds.n_units == 2
        assert ds.n_m == 2
        assert ds.covariate_names == ("price",)
        assert ds.y[0, 1, 1] == 12

    def test_missing_cell_names_unit(self):
        with pytest.raises(IncompletePanelError, match="'b'"):
            load_panel(io.StringIO(small_csv(drop_cell=None).replace("b,west,control,1,2,112,2.5\n", "")))

    def test_unknown_exposure_label(self):
        text = small_csv().replace("treated", "exposed")
        with pytest.raises(SchemaError, match="unknown exposure label"):
            load_panel(io.StringIO(text))

    def test_inconsistent_covariate(self):
        text = small_csv().replace("a,east,treated,1,2,12,1.5", "a,east,treated,1,2,12,9.9")
        with pytest.raises(ConsistencyError, match="covariate 'price'"):
            load_panel(io.StringIO(text))

    def test_duplicate_cell(self):
        text = small_csv() + "a,east,treated,1,2,12,1.5\n"
        with pytest.raises(SchemaError, match="duplicate cell"):
            load_panel(io.StringIO(text))

    def test_m_varying_covariate_allowed(self):
        text = HEADER
        cells = {(t, m): float(m) for t in (0, 1) for m in (1, 2)}
        lines = []
        for (t, m), y in cells.items():
            lines.append(f"a,east,treated,{t},{m},{y},{m * 10}\n")
            lines.append(f"b,east,control,{t},{m},{y},{m * 20}\n")
        ds = load_panel(io.StringIO(text + "".join(lines)), PanelSchema(m_varying="price"))
        assert ds.x[0, 0, 0] == 10 and ds.x[0, 1, 0] == 20

    def test_default_stratum_is_exposure(self):
        text = small_csv().replace("stratum,", "").replace("east,", "").replace("west,", "")
        ds = load_panel(io.StringIO(text))
        assert ds.strata == ("treated", "control")

    def test_paper_shaped_fixture_counts(self, tmp_path):
        ds = paper_shaped_dataset()
        path = tmp_path / "panel.csv"
        emit_panel(ds, path)
        loaded = load_panel(path, PanelSchema(m_varying=None))
        counts = loaded.exposure_counts()
        assert loaded.n_units == 558
        assert loaded.n_m == 13
        assert counts == {"treated": 180, "neighbor": 51, "control": 327}
        assert set(loaded.stratum_counts()) == {"philadelphia", "baltimore", "border", "nonborder"}


def paper_shaped_dataset():
    rng = np.random.default_rng(7)
    spec = [("philadelphia", "treated", 180), ("baltimore", "control", 60),
            ("border", "neighbor", 51), ("nonborder", "control", 267)]
    ids, strata, codes, ys, xs = [], [], [], [], []
    k = 0
    for stratum, label, count in spec:
        for _ in range(count):
            ids.append(f"s{k:04d}")
            strata.append(stratum)
            codes.append({"treated": (1, 0), "neighbor": (0, 1), "control": (0, 0)}[label])
            ys.append(rng.normal(size=(2, 13)))
            xs.append(np.repeat(rng.normal(size=(1, 2)), 13, axis=0))
            k += 1
    from bypassdid.panel import PanelDataset

    return PanelDataset(
        unit_ids=tuple(ids),
        strata=tuple(strata),
        exposure_codes=np.array(codes, dtype=np.int8),
        y=np.stack(ys),
        x=np.stack(xs),
        covariate_names=("income", "price"),
    )


class TestImmutability:
    def test_arrays_are_read_only(self, rng):
        ds = random_dataset(rng, n=6)
        with pytest.raises(ValueError):
            ds.y[0, 0, 0] = 1.0
        with pytest.raises(ValueError):
            ds.x[0, 0, 0] = 1.0
        frame = make_comparison(ds, "att")
        with pytest.raises(ValueError):
            frame.delta_y[0, 0] = 1.0

    def test_unit_records_view(self, rng):
        ds = random_dataset(rng, n=6)
        records = list(ds.units())
        assert len(records) == 6
        assert records[0].unit_id == ds.unit_ids[0]
        np.testing.assert_array_equal(records[2].outcomes, ds.y[2])
        assert records[0].exposure.label == ds.exposure_labels[0]


class TestRoundTrip:
    def test_emit_load_bit_equal(self, rng):
        ds = random_dataset(rng, n=12, n_m=3, p=2)
        text = emit_panel(ds)
        loaded = load_panel(io.StringIO(text))
        assert loaded.unit_ids == ds.unit_ids
        assert loaded.strata == ds.strata
        np.testing.assert_array_equal(loaded.exposure_codes, ds.exposure_codes)
        np.testing.assert_array_equal(loaded.y, ds.y)
        np.testing.assert_array_equal(loaded.x, ds.x)


class TestApplyExclusion:
    def test_drops_flagged(self, rng):
        ds = random_dataset(rng, n=10)
        flags = [True, False, True, False, True, False, False, False, False, False]
        out = apply_exclusion(ds, flags)
        assert out.n_units == 7
        assert ds.n_units == 10

    def test_zero_flags_identity(self, rng):
        ds = random_dataset(rng, n=10)
        out = apply_exclusion(ds, [False] * 10)
        assert out.unit_ids == ds.unit_ids
        np.testing.assert_array_equal(out.y, ds.y)

    def test_idempotent_for_fixed_flags(self, rng):
        ds = random_dataset(rng, n=10)
        flags = [i % 3 == 0 for i in range(10)]
        once = apply_exclusion(ds, flags)
        again = apply_exclusion(once, [False] * once.n_units)
        assert once.unit_ids == again.unit_ids
        np.testing.assert_array_equal(once.y, again.y)

    def test_border_zone_exclusion_counts(self):
        ds = paper_shaped_dataset()
        nonborder = [s == "nonborder" for s in ds.strata]
        flags = []
        seen = 0
        for is_nb in nonborder:
            if is_nb and seen < 138:
                flags.append(True)
                seen += 1
            else:
                flags.append(False)
        out = apply_exclusion(ds, flags)
        assert out.stratum_counts()["nonborder"] == 267 - 138
        assert out.n_units == 558 - 138

    def test_warning_when_status_emptied(self, rng):
        ds = random_dataset(rng, n=10)
        flags = ds.exposure_labels == "neighbor"
        out = apply_exclusion(ds, flags)
        assert any("neighbor" in w for w in out.warnings)

    def test_length_mismatch(self, rng):
        ds = random_dataset(rng, n=10)
        with pytest.raises(SchemaError):
            apply_exclusion(ds, [True])


class TestMakeComparison:
    def build(self, rng):
        labels = ["treated"] * 3 + ["neighbor"] * 2 + ["control"] * 4
        codes = np.array([(1, 0)] * 3 + [(0, 1)] * 2 + [(0, 0)] * 4, dtype=np.int8)
        from bypassdid.panel import PanelDataset

        return PanelDataset(
            unit_ids=tuple(f"u{i}" for i in range(9)),
            strata=tuple(labels),
            exposure_codes=codes,
            y=rng.normal(size=(9, 2, 2)),
            x=rng.normal(size=(9, 2, 1)),
            covariate_names=("x1",),
        )

    def test_att_frame(self, rng):
        ds = self.build(rng)
        frame = make_comparison(ds, "att")
        assert frame.n_units == 7
        np.testing.assert_array_equal(frame.r, [1, 1, 1, 0, 0, 0, 0])

    def test_atn_frame(self, rng):
        ds = self.build(rng)
        frame = make_comparison(ds, "atn")
        assert frame.n_units == 6
        assert frame.r.sum() == 2

    def test_delta_is_post_minus_pre(self, rng):
        ds = self.build(rng)
        frame = make_comparison(ds, "att")
        np.testing.assert_allclose(frame.delta_y, frame.post_y - frame.pre_y)
        # unit with Y1=8, Y0=10 has outcome change -2
        i = frame.unit_ids.index("u0")
        expected = ds.y[0, 1, 0] - ds.y[0, 0, 0]
        assert frame.delta_y[i, 0] == expected

    def test_control_partition_identical(self, rng):
        ds = self.build(rng)
        att_controls = {u for u, r in zip(make_comparison(ds, "att").unit_ids, make_comparison(ds, "att").r) if r == 0}
        atn_controls = {u for u, r in zip(make_comparison(ds, "atn").unit_ids, make_comparison(ds, "atn").r) if r == 0}
        assert att_controls == atn_controls

    def test_empty_group(self, rng):
        ds = random_dataset(rng, n=10, neighbors=False)
        with pytest.raises(GroupEmptyError, match="atn"):
            make_comparison(ds, "atn")

    def test_unknown_estimand(self, rng):
        with pytest.raises(SchemaError):
            make_comparison(random_dataset(rng), "ate")
