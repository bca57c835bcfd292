import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ersde import cli
from ersde.cli import RunConfig, main
from ersde.errors import SolverError
from ersde.noise_scale import CATALOGUE_NAMES
from ersde.schedules import SCHEDULE_KINDS, edm_step_grid


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestSample:
    def test_byte_identical(self, tmp_path):
        argv = ["sample", "--phi", "ode", "--order", "1", "--steps", "10", "--chains", "4",
                "--seed", "7"]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run(*argv, "--out", str(a))[0] == 0
        assert run(*argv, "--out", str(b))[0] == 0
        assert a.read_bytes() == b.read_bytes()
        table = rows(a.read_text())
        assert list(table[0]) == ["chain", "dim_0", "dim_1"]
        assert [r["chain"] for r in table] == ["0", "1", "2", "3"]

    def test_seed_changes_sde_output(self):
        _, a, _ = run("sample", "--phi", "sde", "--steps", "5", "--chains", "3", "--seed", "1")
        _, b, _ = run("sample", "--phi", "sde", "--steps", "5", "--chains", "3", "--seed", "2")
        assert a != b

    def test_floats_round_trip(self):
        _, text, _ = run("sample", "--steps", "6", "--chains", "2")
        for r in rows(text):
            v = r["dim_0"]
            assert format(float(v), ".17g") == v

    def test_inadmissible_phi(self):
        code, out, err = run("sample", "--phi", "pow:0.5", "--steps", "10")
        assert code == 3 and out == ""
        assert "x_t=" in err and "x_s=" in err

    def test_order_above_steps_warns(self):
        code, out, err = run("sample", "--order", "3", "--steps", "2", "--chains", "2")
        assert code == 0
        assert err.startswith("warning:")
        assert len(rows(out)) == 2

    @pytest.mark.parametrize("schedule", [s for s in SCHEDULE_KINDS if s != "ve-edm"])
    def test_vp_schedules(self, schedule):
        code, out, _ = run("sample", "--param", "vp", "--schedule", schedule, "--steps", "8",
                           "--chains", "3")
        assert code == 0
        assert np.all(np.isfinite([float(r["dim_0"]) for r in rows(out)]))

    def test_terminal_none(self):
        code, out, _ = run("sample", "--terminal", "none", "--steps", "5", "--chains", "1")
        assert code == 0

    def test_numeric_failure(self, monkeypatch):
        def boom(cfg, out, err):
            raise SolverError("step 3: non-finite state", step=3)
        monkeypatch.setitem(cli.COMMANDS, "sample", boom)
        code, _, err = run("sample")
        assert code == 4 and "step 3" in err


class TestConfigErrors:
    @pytest.mark.parametrize("argv,field", [
        (["--param", "vp"], "param"),
        (["--schedule", "vp-linear"], "param"),
        (["--steps", "0"], "steps"),
        (["--chains", "0"], "chains"),
        (["--quad-points", "0"], "quad_points"),
        (["--phi", "er9"], "er9"),
        (["--nfe", "1,x"], "nfe"),
    ])
    def test_exit_2(self, argv, field):
        code, _, err = run("sample", *argv)
        assert code == 2
        assert field in err

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("colour = blue\n")
        code, _, err = run("sample", "--config", str(p))
        assert code == 2 and "colour" in err

    def test_missing_file(self, tmp_path):
        assert run("sample", "--config", str(tmp_path / "nope"))[0] == 2

    def test_argparse_rejects_choice(self):
        with pytest.raises(SystemExit) as info:
            run("sample", "--order", "4")
        assert info.value.code == 2


class TestConfigFile:
    def test_flags_override_file(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\nsteps = 4\nchains = 3\nphi = sde\n")
        _, from_file, _ = run("sample", "--config", str(p))
        assert len(rows(from_file)) == 3
        _, overridden, _ = run("sample", "--config", str(p), "--chains", "5")
        assert len(rows(overridden)) == 5

    def test_oracle_file(self, tmp_path):
        p = tmp_path / "o.txt"
        p.write_text("component = 0.25, 1.0, 2.0, 3.0, 0.5\ncomponent = 0.75, 0, 0, 0, 1\n")
        code, out, _ = run("sample", "--oracle", str(p), "--chains", "2", "--steps", "3")
        assert code == 0
        assert list(rows(out)[0]) == ["chain", "dim_0", "dim_1", "dim_2"]

    def test_bad_oracle(self, tmp_path):
        p = tmp_path / "o.txt"
        p.write_text("component = 0.5, 1.0, 0.5\n")
        assert run("sample", "--oracle", str(p))[0] == 2

    def test_full_round_trip_file(self, tmp_path):
        cfg = RunConfig(command="sweep", steps=7, phi="pow:1.5", nfe=(5, 9))
        p = tmp_path / "c.cfg"
        p.write_text(cfg.to_text())
        assert RunConfig.from_text(p.read_text()) == cfg


_names = st.sampled_from(list(CATALOGUE_NAMES) + ["pow:1.5", "pow:2"])
_floats = st.floats(1e-6, 1e6, allow_nan=False)


@settings(max_examples=100)
@given(
    schedule=st.sampled_from(SCHEDULE_KINDS), steps=st.integers(1, 500), phi=_names,
    order=st.integers(1, 3), quad=st.integers(1, 1000), seed=st.integers(0, 2**63),
    sigma_min=_floats, rho=_floats, eps=st.floats(1e-9, 0.5),
    comps=st.lists(st.tuples(_floats, st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2),
                             _floats), min_size=1, max_size=4),
    nfe=st.lists(st.integers(1, 100), min_size=1, max_size=5), phis=st.lists(_names, min_size=1),
)
def test_config_round_trip(schedule, steps, phi, order, quad, seed, sigma_min, rho, eps, comps,
                           nfe, phis):
    cfg = RunConfig(schedule=schedule, steps=steps, phi=phi, order=order, quad_points=quad,
                    seed=seed, sigma_min=sigma_min, rho=rho, epsilon=eps,
                    components=tuple((w, tuple(m), s) for w, m, s in comps), nfe=tuple(nfe),
                    phis=tuple(phis))
    once = RunConfig.from_text(cfg.to_text())
    assert once == cfg
    assert RunConfig.from_text(once.to_text()) == once


class TestFei:
    grid = edm_step_grid(100)

    def curves(self):
        code, out, _ = run("fei", "--steps", "100", "--phis", ",".join(CATALOGUE_NAMES))
        assert code == 0
        by = {}
        for r in rows(out):
            by.setdefault(r["phi_name"], []).append(float(r["fei"]))
        return {k: np.array(v) for k, v in by.items()}

    def test_closed_forms(self):
        c = self.curves()
        s = self.grid.sigmas
        np.testing.assert_allclose(c["ode"], 1 - s[1:] / s[:-1], atol=1e-15)
        np.testing.assert_allclose(c["sde"], 1 - (s[1:] / s[:-1]) ** 2, atol=1e-15)

    def test_er4_tracks_ode(self):
        c = self.curves()
        assert np.max(np.abs(c["er4"] - c["ode"])) < 0.05

    def test_row_count(self):
        c = self.curves()
        assert set(c) == set(CATALOGUE_NAMES)
        assert all(len(v) == 100 for v in c.values())


class TestCheck:
    def test_reports_violation(self):
        code, out, _ = run("check", "--phis", "ode,pow:0.5", "--steps", "10")
        assert code == 3
        table = rows(out)
        assert table[0]["passed"] == "1"
        assert table[1]["passed"] == "0" and float(table[1]["violation_x_s"]) > 0

    def test_catalogue_passes(self):
        assert run("check", "--steps", "100")[0] == 0


class TestSweep:
    argv = ["sweep", "--nfe", "5,8", "--orders", "2,3", "--chains", "300",
            "--reference-samples", "400", "--seed", "3"]

    def test_columns_and_reproducible(self):
        code, a, _ = run(*self.argv)
        assert code == 0
        _, b, _ = run(*self.argv)
        ta, tb = rows(a), rows(b)
        assert list(ta[0]) == ["nfe", "order", "phi", "mean_error", "cov_error",
                               "energy_distance", "wall_ms"]
        assert [(r["nfe"], r["order"]) for r in ta] == [("5", "2"), ("5", "3"), ("8", "2"),
                                                        ("8", "3")]
        strip = lambda t: [{k: v for k, v in r.items() if k != "wall_ms"} for r in t]
        assert strip(ta) == strip(tb)
        assert all(float(r["energy_distance"]) >= 0 for r in ta)


class TestConvergence:
    def test_slopes(self):
        code, out, _ = run("convergence", "--orders", "1,2")
        assert code == 0
        slopes = {r["order"]: float(r["slope"]) for r in rows(out)}
        assert slopes["1"] >= 0.5 and slopes["2"] >= 1.5
        assert [r["M"] for r in rows(out) if r["order"] == "1"] == ["10", "20", "40", "80", "160"]

    def test_constant_model_exact(self):
        code, out, _ = run("convergence", "--model", "constant", "--orders", "1,2,3")
        assert code == 0
        assert max(float(r["error"]) for r in rows(out)) < 1e-12

    def test_vp_from_edm(self):
        code, out, _ = run("convergence", "--param", "vp", "--schedule", "vp-from-edm",
                           "--orders", "2")
        assert code == 0
        assert float(rows(out)[0]["slope"]) >= 1.5
