"""Config parsing, sweep point derivation, CSV schema, and the verbs."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vmstd import cli, separated as sp
from vmstd.cli import RunConfig
from vmstd.errors import ConfigInvalid

BASE_TEXT = """\
problem.dim = 2
problem.nu = 0.05
problem.sigma = 0.05
problem.ramp = 10.0
problem.center = 0.3 0.3
problem.speed = 0.4 0.4
hierarchy.cells = 16 16
hierarchy.sides = 1.0 0.25
solver.modes = 2 2
solver.steps = 4
output.csv = small.csv
"""


def write_cfg(tmp_path, text=BASE_TEXT, name="run.cfg", **overrides):
    cfg = cli.parse_config(text)
    if overrides:
        from dataclasses import replace
        cfg = replace(cfg, **overrides)
    path = tmp_path / name
    path.write_text(cli.serialize_config(cfg))
    return path


def read_rows(path):
    rows, comments = cli.read_csv(path)
    return rows, comments


_name = st.text(alphabet="abcdefghijklmnopqrstuvwxyz_.0123456789",
                min_size=1, max_size=12)
_finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
_pos_int = st.integers(min_value=1, max_value=10 ** 6)


@st.composite
def run_configs(draw):
    dim = draw(st.sampled_from([2, 3]))
    levels = draw(st.integers(min_value=1, max_value=3))
    vec = lambda n, s: tuple(draw(st.lists(s, min_size=n, max_size=n)))
    return RunConfig(
        dim=dim, nu=draw(_finite), sigma=draw(_finite), ramp=draw(_finite),
        center=vec(dim, _finite), speed=vec(dim, _finite),
        side=draw(_finite), final_time=draw(_finite),
        cells=vec(levels, _pos_int), sides=vec(levels, _finite),
        modes=vec(levels, _pos_int), steps=draw(_pos_int),
        theta_max=draw(_pos_int), rho_max=draw(_pos_int),
        td_tol=draw(_finite), scale_tol=draw(_finite),
        slab=draw(_pos_int), accelerated=draw(st.booleans()),
        compression_tol=draw(_finite), csv_name=draw(_name),
        dump_every=draw(st.integers(min_value=0, max_value=99)),
        dump_prefix=draw(_name), slice_axis=draw(st.integers(0, 2)),
        slice_value=draw(_finite), reference=draw(st.booleans()))


class TestConfigParsing:
    def test_defaults_fill_optional_keys(self):
        cfg = cli.parse_config(BASE_TEXT)
        assert cfg.cells == (16, 16)
        assert cfg.sides == (1.0, 0.25)
        assert cfg.steps == 4
        assert cfg.slab == 1
        assert cfg.accelerated is True
        assert cfg.td_tol == 1e-2
        assert cfg.csv_name == "small.csv"
        assert cfg.reference is False

    @settings(max_examples=100, deadline=None)
    @given(run_configs())
    def test_round_trip_is_identity(self, cfg):
        assert cli.parse_config(cli.serialize_config(cfg)) == cfg

    def test_unknown_key_named(self):
        with pytest.raises(ConfigInvalid, match="problem.mu"):
            cli.parse_config(BASE_TEXT + "problem.mu = 3\n")

    def test_duplicate_key_named(self):
        with pytest.raises(ConfigInvalid, match="duplicate.*solver.steps"):
            cli.parse_config(BASE_TEXT + "solver.steps = 8\n")

    def test_missing_required_named(self):
        text = BASE_TEXT.replace("solver.steps = 4\n", "")
        with pytest.raises(ConfigInvalid, match="solver.steps"):
            cli.parse_config(text)

    def test_bad_int_named(self):
        with pytest.raises(ConfigInvalid, match="solver.steps"):
            cli.parse_config(BASE_TEXT.replace("solver.steps = 4",
                                               "solver.steps = soon"))

    def test_bad_bool_named(self):
        with pytest.raises(ConfigInvalid, match="solver.accelerated"):
            cli.parse_config(BASE_TEXT + "solver.accelerated = maybe\n")

    def test_line_without_assignment(self):
        with pytest.raises(ConfigInvalid, match="line 1"):
            cli.parse_config("what\n")

    def test_comments_and_blanks_ignored(self):
        cfg = cli.parse_config("# intro\n\n" + BASE_TEXT.replace(
            "solver.steps = 4", "solver.steps = 4  # per run"))
        assert cfg.steps == 4

    def test_missing_file_is_config_error(self, tmp_path):
        with pytest.raises(ConfigInvalid, match="cannot read"):
            cli.read_config(tmp_path / "absent.cfg")


class TestBuildSetup:
    def test_baseline_wires_solver_criteria(self):
        cfg = cli.parse_config(BASE_TEXT + "solver.td_tol = 0.5\n")
        problem, grids, march_config = cli.build_setup(cfg)
        assert problem.dim == 2
        assert [g.cells_per_dim for g in grids] == [16, 16]
        assert march_config.criteria.td_tol == 0.5
        assert march_config.q_modes == (2, 2)

    def test_non_integer_ratio_names_hierarchy(self):
        cfg = cli.parse_config(BASE_TEXT.replace("hierarchy.cells = 16 16",
                                                 "hierarchy.cells = 16 10"))
        with pytest.raises(ConfigInvalid, match="hierarchy.cells"):
            cli.build_setup(cfg)

    def test_slab_needs_two_levels_and_divisibility(self):
        cfg = cli.parse_config(BASE_TEXT + "solver.slab = 3\n")
        with pytest.raises(ConfigInvalid, match="solver.slab"):
            cli.build_setup(cfg)

    def test_first_side_must_cover_domain(self):
        cfg = cli.parse_config(BASE_TEXT.replace("hierarchy.sides = 1.0 0.25",
                                                 "hierarchy.sides = 0.5 0.25"))
        with pytest.raises(ConfigInvalid, match="hierarchy.sides"):
            cli.build_setup(cfg)

    def test_mismatched_level_counts(self):
        cfg = cli.parse_config(BASE_TEXT.replace("solver.modes = 2 2",
                                                 "solver.modes = 2"))
        with pytest.raises(ConfigInvalid, match="solver.modes"):
            cli.build_setup(cfg)


class TestSweepPoints:
    def base(self, **over):
        cfg = cli.parse_config(BASE_TEXT)
        if over:
            from dataclasses import replace
            cfg = replace(cfg, **over)
        return cfg

    def test_nt_replaces_steps(self):
        point = cli._point_config(self.base(), "Nt", 32.0)
        assert point.steps == 32

    def test_nt_must_be_integer(self):
        with pytest.raises(ConfigInvalid, match="integer"):
            cli._point_config(self.base(), "Nt", 2.5)

    def test_zeta_rebuilds_coarse_levels(self):
        point = cli._point_config(self.base(), "zeta", 2.0)
        assert point.cells == (32, 16)
        assert point.sides == (1.0, 0.25)

    def test_zeta_rejects_off_lattice_ratio(self):
        with pytest.raises(ConfigInvalid, match="zeta"):
            cli._point_config(self.base(), "zeta", 3.0)

    def test_l2_snaps_to_parent_lattice(self):
        cfg = self.base(cells=(64, 64), sides=(1.0, 0.125))
        point = cli._point_config(cfg, "L2", 0.19)
        assert point.sides == (1.0, 0.1875)
        assert point.cells == (64, 96)
        point = cli._point_config(cfg, "L2", 0.25)
        assert point.sides == (1.0, 0.25)
        assert point.cells == (64, 128)

    def test_l2_window_bounds_checked(self):
        cfg = self.base(cells=(64, 64), sides=(1.0, 0.125))
        with pytest.raises(ConfigInvalid, match="L2"):
            cli._point_config(cfg, "L2", 2.0)
        with pytest.raises(ConfigInvalid, match="L2"):
            cli._point_config(cfg, "L2", 0.004)

    def test_m_replaces_slab(self):
        assert cli._point_config(self.base(), "m", 4.0).slab == 4

    def test_hierarchy_builds_nested_thirds(self):
        cfg = self.base(dim=3, center=(0.5, 0.5, 0.5), speed=(0.0, 0.0, 0.0),
                        cells=(20, 20, 20), sides=(1.0, 0.5, 0.05),
                        modes=(2, 2, 2))
        point = cli._point_config(cfg, "hierarchy", 30.0)
        assert point.cells == (30, 30, 30)
        assert point.sides == (1.0, 1.0 / 3.0, 100.0 / 900.0)
        with pytest.raises(ConfigInvalid, match="multiple"):
            cli._point_config(cfg, "hierarchy", 25.0)

    def test_unknown_axis_rejected(self):
        with pytest.raises(ConfigInvalid, match="axis"):
            cli._point_config(self.base(), "Q", 3.0)


class TestCsvFormat:
    def test_write_read_round_trip(self, tmp_path):
        cfg = cli.parse_config(BASE_TEXT)
        row = cli._row("toy", cfg, axis="Nt", value="8")
        path = tmp_path / "t.csv"
        cli.write_csv(path, [row], comments=["slope e = 2.0"])
        rows, comments = cli.read_csv(path)
        assert rows == [{k: str(v) for k, v in row.items()}]
        assert comments == ["slope e = 2.0"]

    def test_version_line_enforced(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("run_id,status\n")
        with pytest.raises(ConfigInvalid, match="vmstd-csv"):
            cli.read_csv(path)


class TestRunVerb:
    def test_baseline_emits_one_ok_row(self, tmp_path):
        path = write_cfg(tmp_path)
        assert cli.main(["run", "--config", str(path), "--out",
                         str(tmp_path), "--quiet"]) == 0
        rows, _ = read_rows(tmp_path / "small.csv")
        assert len(rows) == 1
        row = rows[0]
        assert row["status"] == "ok"
        assert row["cells"] == "16x16"
        assert float(row["e_vms_td"]) > 0.0
        assert int(row["dof"]) == (16 * 2 + 16 * 2) * 2
        assert int(row["n_ref"]) == 64
        assert row["axis"] == "" and row["value"] == ""

    def test_reruns_are_deterministic_outside_timing(self, tmp_path):
        path = write_cfg(tmp_path)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert cli.main(["run", "--config", str(path), "--out", str(out),
                             "--quiet"]) == 0
        row_a = read_rows(out_a / "small.csv")[0][0]
        row_b = read_rows(out_b / "small.csv")[0][0]
        row_a.pop("per_step_ms"), row_b.pop("per_step_ms")
        assert row_a == row_b

    def test_bad_ratio_exits_2_with_record(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text(BASE_TEXT.replace("hierarchy.cells = 16 16",
                                          "hierarchy.cells = 16 10"))
        assert cli.main(["run", "--config", str(path), "--out",
                         str(tmp_path)]) == 2
        record = json.loads(capsys.readouterr().err.strip())
        assert record["error"] == "config"
        assert "hierarchy.cells" in record["detail"]

    def test_strict_turns_stalls_into_exit_3(self, tmp_path):
        path = write_cfg(tmp_path, theta_max=1, scale_tol=1e-14, steps=2)
        args = ["run", "--config", str(path), "--out", str(tmp_path),
                "--quiet"]
        assert cli.main(args) == 0
        rows, _ = read_rows(tmp_path / "small.csv")
        assert "non-convergence" in rows[0]["note"]
        assert cli.main(args + ["--strict"]) == 3

    def test_reserved_seed_flag_accepted(self, tmp_path, capsys):
        path = write_cfg(tmp_path)
        assert cli.main(["run", "--config", str(path), "--out",
                         str(tmp_path), "--seed", "7", "--quiet"]) == 0
        assert capsys.readouterr().out == ""


class TestSweepVerb:
    def test_every_point_once_failures_flagged(self, tmp_path):
        path = write_cfg(tmp_path, slab=2, steps=4)
        assert cli.main(["sweep", "--config", str(path), "--out",
                         str(tmp_path), "--axis", "Nt",
                         "--values", "2 3 4", "--quiet"]) == 0
        rows, _ = read_rows(tmp_path / "small.csv")
        assert [row["value"] for row in rows] == ["2", "3", "4"]
        assert [row["status"] for row in rows] == ["ok", "failed", "ok"]
        assert "solver.slab" in rows[1]["note"]

    def test_slope_comment_fits_ok_points(self, tmp_path):
        path = write_cfg(tmp_path)
        assert cli.main(["sweep", "--config", str(path), "--out",
                         str(tmp_path), "--axis", "Nt",
                         "--values", "4 8", "--quiet"]) == 0
        _, comments = read_rows(tmp_path / "small.csv")
        slopes = [c for c in comments if c.startswith("slope e_vms_td")]
        assert len(slopes) == 1
        float(slopes[0].split("=")[1].split("(")[0])

    def test_parallel_points_match_serial(self, tmp_path):
        path = write_cfg(tmp_path, steps=2)
        out_1, out_2 = tmp_path / "serial", tmp_path / "pool"
        for out, jobs in ((out_1, "1"), (out_2, "2")):
            assert cli.main(["sweep", "--config", str(path), "--out",
                             str(out), "--axis", "Nt", "--values", "2 4",
                             "--jobs", jobs, "--quiet"]) == 0
        rows_1 = read_rows(out_1 / "small.csv")[0]
        rows_2 = read_rows(out_2 / "small.csv")[0]
        for a, b in zip(rows_1, rows_2):
            a.pop("per_step_ms"), b.pop("per_step_ms")
        assert rows_1 == rows_2


class TestDumpField:
    def test_zero_field_dumps_zero_scalars(self, tmp_path):
        from vmstd.grid import build_hierarchy
        from vmstd.vms import LevelState
        grid = build_hierarchy([(16, 1.0)], 2)[0]
        state = LevelState((sp.zero_field((17, 17), level=1),), (grid,), 1)
        cli.dump_field(state, tmp_path / "zero")
        dims, origin, h, values = _read_vtk(tmp_path / "zero_l1.vtk")
        assert values.shape == (17, 17, 1)
        assert np.all(values == 0.0)

    def test_separated_dump_reloads_bit_exact(self, tmp_path):
        path = write_cfg(tmp_path, steps=2)
        cfg = cli.read_config(path)
        result = cli.execute(cfg)
        final = result.trajectory[-1]
        cli.dump_field(final, tmp_path / "snap")
        for field, grid in zip(final.fields, final.grids):
            loaded = sp.load_field(tmp_path / f"snap_l{grid.level}.sep.txt")
            assert loaded.modes == field.modes
            for a, b in zip(loaded.factors, field.factors):
                assert np.array_equal(a, b)

    def test_peak_tracks_the_source(self, tmp_path):
        # source center at t = 6/16 is (0.45, 0.45); the dumped window
        # field should peak within one fine cell of it
        path = write_cfg(tmp_path, cells=(64, 64), sides=(1.0, 0.125),
                         steps=16, dump_every=6)
        assert cli.main(["dump", "--config", str(path), "--out",
                         str(tmp_path), "--quiet"]) == 0
        dims, origin, h, values = _read_vtk(tmp_path / "field_step00006_l2.vtk")
        i, j, _ = np.unravel_index(np.argmax(values), values.shape)
        fine_h = 0.125 / 64
        assert abs(origin[0] + i * h[0] - 0.45) <= fine_h + 1e-12
        assert abs(origin[1] + j * h[1] - 0.45) <= fine_h + 1e-12

    def test_3d_dump_is_a_slice(self, tmp_path):
        text = BASE_TEXT.replace("problem.dim = 2", "problem.dim = 3") \
            .replace("problem.center = 0.3 0.3", "problem.center = 0.5 0.3 0.5") \
            .replace("problem.speed = 0.4 0.4", "problem.speed = 0.0 0.4 0.0") \
            .replace("hierarchy.cells = 16 16", "hierarchy.cells = 8") \
            .replace("hierarchy.sides = 1.0 0.25", "hierarchy.sides = 1.0") \
            .replace("solver.modes = 2 2", "solver.modes = 2") \
            .replace("solver.steps = 4", "solver.steps = 1")
        path = tmp_path / "three.cfg"
        path.write_text(text)
        assert cli.main(["dump", "--config", str(path), "--out",
                         str(tmp_path), "--quiet"]) == 0
        dims, origin, h, values = _read_vtk(tmp_path / "field_step00001_l1.vtk")
        assert values.shape == (9, 9, 1)
        assert origin[2] == 0.5


class TestCompareVerb:
    def test_reports_solver_reference_and_oracle(self, tmp_path, capsys):
        path = write_cfg(tmp_path, cells=(8, 16), sides=(1.0, 0.5), steps=3)
        assert cli.main(["compare", "--config", str(path)]) == 0
        out = capsys.readouterr().out
        assert "vms-td:" in out
        assert "reference: e = " in out
        assert "max |reference - oracle|" in out
        gap = float(out.split("max |reference - oracle| = ")[1].split(" ")[0])
        assert np.isfinite(gap)


def _read_vtk(path):
    lines = iter(open(path).read().splitlines())
    dims = origin = spacing = None
    for line in lines:
        if line.startswith("DIMENSIONS"):
            dims = tuple(int(v) for v in line.split()[1:])
        elif line.startswith("ORIGIN"):
            origin = tuple(float(v) for v in line.split()[1:])
        elif line.startswith("SPACING"):
            spacing = tuple(float(v) for v in line.split()[1:])
        elif line.startswith("LOOKUP_TABLE"):
            break
    flat = np.array([float(v) for v in lines])
    return dims, origin, spacing, flat.reshape(dims, order="F")
