import json
import math

import numpy as np
import pytest
from PIL import Image

from strobospin.cli import (
    PRESET_IDS,
    PlanError,
    emit_tables,
    main,
    orientation_colors,
    parse_plan,
    preset,
    render_snapshot,
    render_spacetime,
    write_plan,
)
from strobospin.experiments import SweepAxis, SweepPlan, run_sweep
from strobospin.lattice import LatticeSpec
from strobospin.state import RngStream, SpinConfig, init_polarized_noisy

MINIMAL = {
    "D": 1, "L": 100, "alpha": 1.5, "T": 2.5, "g": 0.25, "h": 0.1,
    "W": 0.1, "R": 1, "n_periods": 1000, "M": 1000,
}


def write_json(tmp_path, data, name="plan.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


class TestParsePlan:
    def test_minimal_plan_gets_defaults(self, tmp_path):
        plan = parse_plan(write_json(tmp_path, MINIMAL))
        assert plan.delta == 0.01
        assert plan.alpha == 1.5
        assert plan.T == 2.5
        assert plan.observables == ("magnetization", "order_parameter")

    def test_alpha_below_dimension_rejected(self, tmp_path):
        bad = dict(MINIMAL, alpha=0.5)
        with pytest.raises(PlanError, match="alpha"):
            parse_plan(write_json(tmp_path, bad))

    def test_inconsistent_period_and_frequency_rejected(self, tmp_path):
        bad = dict(MINIMAL, omega=3.0)  # T=2.5 implies omega ~ 2.513
        with pytest.raises(PlanError, match="omega"):
            parse_plan(write_json(tmp_path, bad))

    def test_unknown_key_rejected(self, tmp_path):
        bad = dict(MINIMAL, wibble=3)
        with pytest.raises(PlanError, match="wibble"):
            parse_plan(write_json(tmp_path, bad))

    def test_alpha_inf_string(self, tmp_path):
        plan = parse_plan(write_json(tmp_path, dict(MINIMAL, alpha="inf")))
        assert math.isinf(plan.alpha)

    def test_axes_parsed(self, tmp_path):
        data = dict(MINIMAL, axes=[{"name": "W", "values": [0.1, 0.2]}])
        plan = parse_plan(write_json(tmp_path, data))
        assert plan.axes == (SweepAxis("W", (0.1, 0.2)),)

    def test_axis_entry_shape_checked(self, tmp_path):
        data = dict(MINIMAL, axes=[{"name": "W"}])
        with pytest.raises(PlanError, match=r"axes\[0\]"):
            parse_plan(write_json(tmp_path, data))

    def test_syntax_error_reported(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(PlanError, match="invalid JSON"):
            parse_plan(path)

    def test_missing_required_keys(self, tmp_path):
        with pytest.raises(PlanError, match="missing required"):
            parse_plan(write_json(tmp_path, {"D": 1}))

    def test_round_trip_lossless(self, tmp_path):
        original = SweepPlan(
            D=2, L=12, alpha=math.inf, g=0.26, h=0.1, W=0.15, omega=2.7,
            delta=0.005, n_periods=2000, M=1000, subharmonic_n=4, R=3,
            master_seed=99,
            axes=(SweepAxis("alpha", (math.inf, 4.0)), SweepAxis("g", (0.2, 0.3))),
            observables=("magnetization", "order_parameter"),
            early_stop=True,
        )
        path = tmp_path / "rt.json"
        write_plan(original, path)
        assert parse_plan(path) == original


class TestPresets:
    @pytest.mark.parametrize("figure_id", PRESET_IDS)
    @pytest.mark.parametrize("scale", ["paper", "desk"])
    def test_presets_validate_and_round_trip(self, figure_id, scale, tmp_path):
        plan = preset(figure_id, scale=scale)
        plan.validate()
        path = tmp_path / "p.json"
        write_plan(plan, path)
        assert parse_plan(path) == plan

    def test_fig6_sizes_by_dimension(self):
        assert preset("fig6", dim=1).L == 2000
        assert preset("fig6", dim=2).L == 50  # 2500 sites
        assert preset("fig6", dim=3).L == 20  # 8000 sites
        plan = preset("fig6")
        assert plan.T == 2.5 and plan.R == 20 and plan.g == 0.25 and plan.h == 0.1

    def test_fig3_caption_parameters(self):
        for dim, n_sites in ((1, 200), (2, 400), (3, 343)):
            plan = preset("fig3", dim=dim)
            assert plan.L ** plan.D == n_sites
            assert plan.omega == 2.2 and plan.g == 0.26 and plan.h == 0.1
            assert plan.delta == 0.01 and plan.R == 50

    def test_fig5a_caption_parameters(self):
        plan = preset("fig5a")
        assert plan.D == 1 and plan.L == 150
        assert plan.T == 2.5 and plan.h == 0.1 and plan.W == 0.1 and plan.R == 50
        assert plan.M == 10_000

    def test_desk_scale_is_smaller(self):
        paper, desk = preset("fig4"), preset("fig4", scale="desk")
        assert desk.R < paper.R
        assert desk.n_periods <= paper.n_periods

    def test_unknown_preset_lists_available(self):
        with pytest.raises(ValueError, match="fig6"):
            preset("fig99")


class TestEmitTables:
    def make_result(self, tmp_path, **plan_kwargs):
        base = dict(
            D=1, L=16, alpha=1.5, g=0.25, h=0.1, W=0.1, T=2.5,
            n_periods=32, M=32, subharmonic_n=4, R=2, master_seed=5,
            observables=("magnetization", "order_parameter"),
        )
        base.update(plan_kwargs)
        plan = SweepPlan(**base)
        return plan, run_sweep(plan)

    def test_single_point_single_row(self, tmp_path):
        plan, result = self.make_result(tmp_path, R=1)
        paths = emit_tables(result, tmp_path / "out")
        scalar = next(p for p in paths if p.name == "order_parameter.csv")
        rows = scalar.read_text().strip().split("\n")
        assert rows[0] == "point,order_parameter_mean,order_parameter_std,r_effective"
        assert len(rows) == 2
        assert rows[1].split(",")[3] == "1"

    def test_round_trip_bit_exact(self, tmp_path):
        plan, result = self.make_result(tmp_path, axes=(SweepAxis("g", (0.24, 0.26)),))
        paths = emit_tables(result, tmp_path / "out")
        scalar = next(p for p in paths if p.name == "order_parameter.csv")
        for line in scalar.read_text().strip().split("\n")[1:]:
            point, g, mean, std, count = line.split(",")
            stat = result.points[int(point)].scalar_stats["order_parameter"]
            assert float(mean) == stat.mean
            assert float(std) == stat.std

    def test_series_long_format(self, tmp_path):
        plan, result = self.make_result(tmp_path)
        paths = emit_tables(result, tmp_path / "out")
        series = next(p for p in paths if p.name == "series_magnetization.csv")
        rows = series.read_text().strip().split("\n")
        assert rows[0] == "point,n,value"
        point, n, value = rows[1].split(",")
        assert (point, n) == ("0", "0")
        assert float(value) == result.points[0].mean_series["magnetization"].values[0]

    def test_rerun_byte_identical(self, tmp_path):
        plan, result = self.make_result(tmp_path)
        emit_tables(result, tmp_path / "a")
        emit_tables(run_sweep(plan), tmp_path / "b")
        for name in ("order_parameter.csv", "series_magnetization.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_undefined_serialized_empty(self, tmp_path):
        # early-stopped record shorter than the Fourier window leaves the
        # order parameter undefined
        plan, result = self.make_result(
            tmp_path,
            observables=("order_parameter", "tau_pth", "tau_th", "magnetization"),
            W=10.0, g=0.515, subharmonic_n=2, n_periods=32, M=32,
        )
        out = emit_tables(result, tmp_path / "out")
        tau = next(p for p in out if p.name == "tau_th.csv")
        line = tau.read_text().strip().split("\n")[1]
        assert line.split(",")[1] == ""  # never crosses within 32 periods


class TestRendering:
    def test_anchor_colors_exact(self):
        sx = np.array([1.0, -1.0, 0.0, 0.0, 0.0, 0.0])
        sy = np.array([0.0, 0.0, 1.0, -1.0, 0.0, 0.0])
        sz = np.array([0.0, 0.0, 0.0, 0.0, 1.0, -1.0])
        rgb = orientation_colors(sx, sy, sz)
        expected = [
            (255, 255, 255), (0, 0, 0), (0, 0, 255),
            (255, 255, 0), (255, 0, 0), (0, 255, 0),
        ]
        assert [tuple(c) for c in rgb] == expected

    def test_uniform_plus_z_is_red(self):
        spec = LatticeSpec(2, 8, 3.0)
        config = SpinConfig(np.zeros(64), np.zeros(64), np.ones(64))
        image = render_snapshot(config, spec)
        arr = np.asarray(image)
        assert arr.shape == (8, 8, 3)
        assert np.all(arr == np.array([255, 0, 0], dtype=np.uint8))

    def test_uniform_minus_y_is_yellow(self):
        spec = LatticeSpec(2, 4, 3.0)
        config = SpinConfig(np.zeros(16), -np.ones(16), np.zeros(16))
        arr = np.asarray(render_snapshot(config, spec))
        assert np.all(arr == np.array([255, 255, 0], dtype=np.uint8))

    def test_checkerboard(self):
        spec = LatticeSpec(2, 4, 3.0)
        sz = np.array([[1.0, -1.0] * 2, [-1.0, 1.0] * 2] * 2).ravel()
        config = SpinConfig(np.zeros(16), np.zeros(16), sz)
        arr = np.asarray(render_snapshot(config, spec))
        assert tuple(arr[0, 0]) == (255, 0, 0)
        assert tuple(arr[0, 1]) == (0, 255, 0)
        assert tuple(arr[1, 0]) == (0, 255, 0)

    def test_three_d_slice(self):
        spec = LatticeSpec(3, 4, 4.0)
        config = SpinConfig(np.zeros(64), np.zeros(64), np.ones(64))
        arr = np.asarray(render_snapshot(config, spec, z_slice=1))
        assert arr.shape == (4, 4, 3)
        with pytest.raises(ValueError, match="z_slice"):
            render_snapshot(config, spec, z_slice=4)

    def test_spacetime_raster_shape(self):
        spec = LatticeSpec(1, 16, 1.5)
        configs = [init_polarized_noisy(spec, 0.1, RngStream(i)) for i in range(5)]
        arr = np.asarray(render_spacetime(configs, spec))
        assert arr.shape == (5, 16, 3)

    def test_injective_on_anchor_basis(self):
        colors = set()
        for vec in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            rgb = orientation_colors(*(np.array([float(v)]) for v in vec))
            colors.add(tuple(rgb[0]))
        assert len(colors) == 6


class TestMainEntry:
    def test_run_writes_tables_and_manifest(self, tmp_path, capsys):
        plan = dict(MINIMAL, L=16, n_periods=32, M=32)
        path = write_json(tmp_path, plan)
        code = main(["run", str(path), "--out", str(tmp_path / "out"), "--threads", "1"])
        assert code == 0
        assert (tmp_path / "out" / "order_parameter.csv").exists()
        manifest = json.loads((tmp_path / "out" / "run_manifest.json").read_text())
        assert manifest["plan"]["L"] == 16
        assert "timestamp" not in json.dumps(manifest).lower()

    def test_run_seed_override_lands_in_manifest(self, tmp_path):
        path = write_json(tmp_path, dict(MINIMAL, L=16, n_periods=32, M=32))
        main(["run", str(path), "--out", str(tmp_path / "o"), "--seed", "123", "--threads", "1"])
        manifest = json.loads((tmp_path / "o" / "run_manifest.json").read_text())
        assert manifest["master_seed"] == 123

    def test_bad_plan_returns_error_code(self, tmp_path, capsys):
        path = write_json(tmp_path, dict(MINIMAL, alpha=0.2))
        assert main(["run", str(path), "--out", str(tmp_path / "out")]) == 2
        assert "alpha" in capsys.readouterr().err

    def test_preset_command_writes_plan(self, tmp_path, capsys):
        code = main(["preset", "fig6", "--scale", "desk", "--out", str(tmp_path)])
        assert code == 0
        produced = capsys.readouterr().out.strip()
        plan = parse_plan(produced)
        assert plan.T == 2.5

    def test_snapshot_command_2d(self, tmp_path):
        plan = dict(MINIMAL, D=2, L=8, alpha=3.0, n_periods=8, M=8)
        path = write_json(tmp_path, plan)
        code = main([
            "snapshot", str(path), "--times", "0,4", "--out", str(tmp_path / "snaps"),
        ])
        assert code == 0
        files = sorted(p.name for p in (tmp_path / "snaps").iterdir())
        assert files == ["snapshot_00000000.png", "snapshot_00000004.png"]
        image = Image.open(tmp_path / "snaps" / "snapshot_00000000.png")
        assert image.size == (8, 8)

    def test_snapshot_command_1d_spacetime(self, tmp_path):
        plan = dict(MINIMAL, L=32, n_periods=8, M=8)
        path = write_json(tmp_path, plan)
        code = main([
            "snapshot", str(path), "--times", "0,1,2,3", "--out", str(tmp_path / "snaps"),
        ])
        assert code == 0
        image = Image.open(tmp_path / "snaps" / "spacetime.png")
        assert image.size == (32, 4)  # width x height

    def test_snapshot_command_csv_dump(self, tmp_path):
        plan = dict(MINIMAL, L=16, n_periods=4, M=4)
        path = write_json(tmp_path, plan)
        code = main([
            "snapshot", str(path), "--times", "0,4", "--csv",
            "--out", str(tmp_path / "snaps"),
        ])
        assert code == 0
        csv_path = tmp_path / "snaps" / "spins_00000004.csv"
        rows = csv_path.read_text().strip().split("\n")
        assert rows[0] == "x,sx,sy,sz"
        assert len(rows) == 17
