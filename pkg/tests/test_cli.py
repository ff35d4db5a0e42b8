import numpy as np
import pytest
from click.testing import CliRunner

from bypassdid.cli import main
from bypassdid.panel import emit_panel
from bypassdid.simulation import load_scenario, simulate_dataset

from conftest import random_dataset
from test_panel import paper_shaped_dataset


@pytest.fixture
def runner():
    return CliRunner()


def write_toy_dr_csv(path):
    """Four units, one observation time: controls change by (2, 4), exposed by (5, 7)."""
    lines = ["unit_id,stratum,exposure,t,m,outcome"]
    data = {"e1": ("treated", 5.0), "e2": ("treated", 7.0), "c1": ("control", 2.0), "c2": ("control", 4.0)}
    for uid, (label, dy) in data.items():
        lines.append(f"{uid},{label},{label},0,1,0.0")
        lines.append(f"{uid},{label},{label},1,1,{dy}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_null_effect_csv(path):
    lines = ["unit_id,stratum,exposure,t,m,outcome"]
    for i in range(6):
        label = "treated" if i < 3 else "control"
        for t in (0, 1):
            for m in (1, 2):
                lines.append(f"s{i},{label},{label},{t},{m},{5.0 + 0.5 * m + 0.1 * i}")
    path.write_text("\n".join(lines) + "\n")
    return path


class TestValidate:
    def test_valid_fixture(self, runner, tmp_path, rng):
        path = tmp_path / "panel.csv"
        emit_panel(random_dataset(rng, n=9), path)
        result = runner.invoke(main, ["validate", str(path)])
        assert result.exit_code == 0
        assert "units: 9" in result.output

    def test_missing_row_exit_2(self, runner, tmp_path, rng):
        path = tmp_path / "panel.csv"
        text = emit_panel(random_dataset(rng, n=4))
        lines = text.strip().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        result = runner.invoke(main, ["validate", str(path)])
        assert result.exit_code == 2
        assert "u003" in result.output

    def test_paper_shaped_fixture(self, runner, tmp_path):
        path = tmp_path / "panel.csv"
        emit_panel(paper_shaped_dataset(), path)
        result = runner.invoke(main, ["validate", str(path)])
        assert result.exit_code == 0
        assert "observation times per period (n_m): 13" in result.output
        for stratum in ("philadelphia", "baltimore", "border", "nonborder"):
            assert stratum in result.output


class TestEstimate:
    def test_toy_dr_prints_three(self, runner, tmp_path):
        path = write_toy_dr_csv(tmp_path / "toy.csv")
        result = runner.invoke(main, ["estimate", str(path), "--estimand", "att", "--method", "dr", "--ci", "none"])
        assert result.exit_code == 0
        line = [l for l in result.output.splitlines() if l.startswith("Annual")][0]
        assert float(line.split(",")[1]) == pytest.approx(3.0, abs=1e-12)

    def test_seasonal_on_two_periods_exit_3(self, runner, tmp_path):
        path = write_null_effect_csv(tmp_path / "null.csv")
        result = runner.invoke(
            main, ["estimate", str(path), "--estimand", "att", "--method", "dr", "--windows", "seasonal"]
        )
        assert result.exit_code == 3

    def test_relative_null_effect_ratio_one(self, runner, tmp_path):
        path = write_null_effect_csv(tmp_path / "null.csv")
        result = runner.invoke(
            main,
            ["estimate", str(path), "--estimand", "att", "--method", "dr", "--scale", "relative", "--windows", "all-m"],
        )
        assert result.exit_code == 0
        for line in result.output.splitlines():
            if line.startswith("m="):
                assert float(line.split(",")[1]) == pytest.approx(1.0, abs=1e-9)

    def test_config_echo_header(self, runner, tmp_path):
        path = write_toy_dr_csv(tmp_path / "toy.csv")
        result = runner.invoke(main, ["estimate", str(path), "--estimand", "att", "--method", "twfe", "--ci", "none"])
        assert result.exit_code == 0
        assert result.output.startswith("# bypassdid")
        assert any(l.startswith("# method=twfe") for l in result.output.splitlines())

    def test_bootstrap_ci_deterministic(self, runner, tmp_path, rng):
        path = tmp_path / "panel.csv"
        emit_panel(random_dataset(rng, n=24, n_m=2), path)
        args = [
            "estimate", str(path), "--estimand", "att", "--method", "dr",
            "--ci", "stratified", "--reps", "25", "--seed", "5",
        ]
        a = runner.invoke(main, args)
        b = runner.invoke(main, args)
        assert a.exit_code == 0
        assert a.output == b.output

    def test_plot_dir_renders_files(self, runner, tmp_path, rng):
        path = tmp_path / "panel.csv"
        emit_panel(random_dataset(rng, n=20, n_m=2), path)
        plots = tmp_path / "plots"
        result = runner.invoke(
            main,
            ["estimate", str(path), "--estimand", "att", "--method", "dr", "--ci", "parametric",
             "--out", str(tmp_path / "out.csv"), "--plot-dir", str(plots)],
        )
        assert result.exit_code == 0
        assert (plots / "effects.png").exists()
        assert (plots / "trajectories.png").exists()
        assert (plots / "trajectories.csv").exists()
        assert (tmp_path / "out.csv").read_text().startswith("# bypassdid")


class TestEstimateVariants:
    def test_bayesian_ci(self, runner, tmp_path, rng):
        path = tmp_path / "panel.csv"
        emit_panel(random_dataset(rng, n=24, n_m=2), path)
        result = runner.invoke(
            main,
            ["estimate", str(path), "--estimand", "att", "--method", "dr",
             "--ci", "bayesian", "--reps", "20", "--seed", "4"],
        )
        assert result.exit_code == 0
        annual = [l for l in result.output.splitlines() if l.startswith("Annual")][0]
        _, est, lo, hi = annual.split(",")
        assert float(lo) <= float(hi)

    def test_covariate_subsets_and_per_m_mode(self, runner, tmp_path, rng):
        path = tmp_path / "panel.csv"
        emit_panel(random_dataset(rng, n=30, n_m=2, p=3), path)
        result = runner.invoke(
            main,
            ["estimate", str(path), "--estimand", "att", "--method", "dr", "--ps-mode", "per-m",
             "--mu-covs", "x1,x3", "--pi-covs", "x2", "--ci", "none"],
        )
        assert result.exit_code == 0
        assert any(l.startswith("# mu_covs=x1,x3") for l in result.output.splitlines())

    def test_unknown_covariate_is_input_error(self, runner, tmp_path, rng):
        path = tmp_path / "panel.csv"
        emit_panel(random_dataset(rng, n=20, n_m=2), path)
        result = runner.invoke(
            main,
            ["estimate", str(path), "--estimand", "att", "--method", "dr", "--mu-covs", "nope", "--ci", "none"],
        )
        assert result.exit_code == 2

    def test_excluded_column_applied(self, runner, tmp_path, rng):
        ds = random_dataset(rng, n=20, n_m=2)
        text = emit_panel(ds)
        lines = text.strip().splitlines()
        lines[0] += ",excluded"
        body = []
        for line in lines[1:]:
            uid = line.split(",")[0]
            flagged = "1" if uid in ("u000", "u001") and ds.exposure_labels[int(uid[1:])] == "treated" else "0"
            body.append(line + f",{flagged}")
        path = tmp_path / "panel.csv"
        path.write_text("\n".join([lines[0]] + body) + "\n")
        result = runner.invoke(main, ["validate", str(path)])
        assert result.exit_code == 0
        assert "excluded flags set: 2" in result.output


class TestPretrends:
    def test_flat_pretrends_contain_zero(self, runner, tmp_path, rng):
        ds = random_dataset(rng, n=30, n_m=3)
        y = np.array(ds.y)
        y[:, 0, :] = y[:, 0, [0]]  # constant pre period per unit
        from bypassdid.panel import PanelDataset

        flat = PanelDataset(
            unit_ids=ds.unit_ids, strata=ds.strata, exposure_codes=ds.exposure_codes,
            y=y, x=ds.x, covariate_names=ds.covariate_names,
        )
        path = tmp_path / "flat.csv"
        emit_panel(flat, path)
        result = runner.invoke(
            main,
            ["pretrends", str(path), "--estimand", "att", "--method", "dr", "--reps", "20", "--seed", "1"],
        )
        assert result.exit_code == 0
        for line in result.output.splitlines():
            if line[:1].isdigit():
                _, est, lo, hi = line.split(",")
                assert float(lo) <= 0.0 <= float(hi)

    def test_drifted_pretrend_excludes_zero(self, runner, tmp_path, rng):
        ds = random_dataset(rng, n=24, n_m=3)
        y = np.array(ds.y) * 0.01
        treated = ds.exposure_labels == "treated"
        for m in range(3):
            y[treated, 0, m] += m  # exposed drift +1 per observation time
        from bypassdid.panel import PanelDataset

        drifted = PanelDataset(
            unit_ids=ds.unit_ids, strata=ds.strata, exposure_codes=ds.exposure_codes,
            y=y, x=ds.x, covariate_names=ds.covariate_names,
        )
        path = tmp_path / "drift.csv"
        emit_panel(drifted, path)
        result = runner.invoke(
            main,
            ["pretrends", str(path), "--estimand", "att", "--method", "twfe", "--reps", "30", "--seed", "1"],
        )
        assert result.exit_code == 0
        row = [l for l in result.output.splitlines() if l.startswith("3,")][0]
        _, est, lo, hi = row.split(",")
        assert float(est) == pytest.approx(2.0, abs=0.2)
        assert float(lo) > 0.0


class TestPlotRendering:
    def test_pretrends_plot_dir(self, runner, tmp_path, rng):
        path = tmp_path / "panel.csv"
        emit_panel(random_dataset(rng, n=24, n_m=3), path)
        plots = tmp_path / "figs"
        result = runner.invoke(
            main,
            ["pretrends", str(path), "--estimand", "att", "--method", "dr", "--reps", "15",
             "--seed", "2", "--plot-dir", str(plots)],
        )
        assert result.exit_code == 0
        assert (plots / "pretrends.png").exists()

    def test_simulate_plot_dir(self, runner, tmp_path):
        plots = tmp_path / "figs"
        result = runner.invoke(
            main,
            ["simulate", "--scenario", "2a", "--methods", "twfe,dr", "--reps", "2", "--seed", "1",
             "--plot-dir", str(plots)],
        )
        assert result.exit_code == 0
        assert (plots / "simulation_bias.png").exists()


class TestSimulate:
    def test_grid_shape(self, runner):
        result = runner.invoke(
            main, ["simulate", "--scenario", "2a", "--methods", "dr", "--reps", "2", "--seed", "3"]
        )
        assert result.exit_code == 0
        lines = [l for l in result.output.splitlines() if l.startswith("2a")]
        assert len(lines) == 2  # one ATT row, one ATN row
        assert {l.split(",")[1] for l in lines} == {"att", "atn"}

    def test_unknown_scenario_exit_2(self, runner):
        result = runner.invoke(main, ["simulate", "--scenario", "9z", "--reps", "2"])
        assert result.exit_code == 2

    def test_compare_paper_column(self, runner):
        result = runner.invoke(
            main,
            ["simulate", "--scenario", "2a", "--methods", "dr", "--reps", "2", "--seed", "3", "--compare-paper"],
        )
        assert result.exit_code == 0
        header = [l for l in result.output.splitlines() if l.startswith("scenario,")][0]
        assert header.endswith("paper_bias_pct,paper_std_err,paper_coverage_pct")
        att = [l for l in result.output.splitlines() if l.startswith("2a,att,dr")][0]
        assert att.split(",")[7] == "0.032"

    def test_demo(self, runner):
        result = runner.invoke(
            main, ["simulate", "--demo", "twfe-het", "--n", "2000", "--reps", "3", "--seed", "0"]
        )
        assert result.exit_code == 0
        assert "homogeneous" in result.output and "heterogeneous" in result.output

    def test_deterministic_output(self, runner):
        args = ["simulate", "--scenario", "2a", "--methods", "twfe", "--reps", "2", "--seed", "9"]
        a = runner.invoke(main, args)
        b = runner.invoke(main, args)
        assert a.output == b.output


class TestSubgroup:
    def make_labeled_csv(self, tmp_path, rng):
        ds = random_dataset(rng, n=36, n_m=2, effect=1.0)
        text = emit_panel(ds)
        lines = text.strip().splitlines()
        lines[0] += ",region"
        out = [lines[0]]
        for line in lines[1:]:
            uid = line.split(",")[0]
            region = "east" if int(uid[1:]) % 2 == 0 else "west"
            out.append(line + f",{region}")
        path = tmp_path / "labeled.csv"
        path.write_text("\n".join(out) + "\n")
        return path

    def test_filter_column_runs(self, runner, tmp_path, rng):
        path = self.make_labeled_csv(tmp_path, rng)
        result = runner.invoke(
            main,
            ["subgroup", str(path), "--estimand", "att", "--method", "dr", "--scale", "additive",
             "--filter-column", "region", "--ci", "none"],
        )
        assert result.exit_code == 0
        assert any(l.startswith("east,") for l in result.output.splitlines())
        assert any(l.startswith("west,") for l in result.output.splitlines())

    def test_small_cluster_warning(self, runner, tmp_path, rng):
        path = self.make_labeled_csv(tmp_path, rng)
        result = runner.invoke(
            main,
            ["subgroup", str(path), "--estimand", "att", "--method", "dr", "--scale", "additive",
             "--filter-column", "region", "--ci", "none"],
        )
        assert "warning" in result.output

    def test_proxy_cluster_workflow(self, runner, tmp_path):
        scenario = load_scenario("3a")
        ds, _ = simulate_dataset(scenario, seed=2)
        from bypassdid.simulation import arm_dataset

        atn = arm_dataset(ds, "atn")
        panel_path = tmp_path / "panel.csv"
        emit_panel(atn, panel_path)

        neighbors = [u for u, lab in zip(atn.unit_ids, atn.exposure_labels) if lab == "neighbor"]
        zones = {u: f"z{int(i * 2 / max(1, len(neighbors)))}" for i, u in enumerate(neighbors)}
        (tmp_path / "zones.csv").write_text(
            "unit_id,zone\n" + "\n".join(f"{u},{z}" for u, z in zones.items()) + "\n"
        )
        (tmp_path / "adj.csv").write_text("taxed_zone,neighbor_zone\nT1,z0\nT1,z1\nT2,z1\n")
        (tmp_path / "measures.csv").write_text("zone,population,yty_diff\nT1,100,10\nT2,300,30\n")
        result = runner.invoke(
            main,
            ["subgroup", str(panel_path), "--estimand", "atn", "--method", "dr", "--scale", "additive",
             "--m-varying", "x4", "--adjacency", str(tmp_path / "adj.csv"),
             "--zone-measures", str(tmp_path / "measures.csv"),
             "--unit-zones", str(tmp_path / "zones.csv"), "--k", "2", "--ci", "none"],
        )
        assert result.exit_code == 0
        assert "cluster_low" in result.output and "cluster_high" in result.output

    def test_identity_filter_matches_estimate(self, runner, tmp_path, rng):
        ds = random_dataset(rng, n=36, n_m=2, effect=1.0)
        plain_path = tmp_path / "plain.csv"
        emit_panel(ds, plain_path)
        text = emit_panel(ds)
        lines = text.strip().splitlines()
        lines[0] += ",all"
        path = tmp_path / "panel.csv"
        path.write_text("\n".join([lines[0]] + [l + ",yes" for l in lines[1:]]) + "\n")
        est = runner.invoke(
            main, ["estimate", str(plain_path), "--estimand", "att", "--method", "dr", "--ci", "none"]
        )
        sub = runner.invoke(
            main,
            ["subgroup", str(path), "--estimand", "att", "--method", "dr", "--scale", "additive",
             "--filter-column", "all", "--ci", "none"],
        )
        est_val = [l for l in est.output.splitlines() if l.startswith("Annual")][0].split(",")[1]
        sub_val = [l for l in sub.output.splitlines() if l.startswith("yes,")][0].split(",")[3]
        assert float(sub_val) == pytest.approx(float(est_val), abs=1e-12)
