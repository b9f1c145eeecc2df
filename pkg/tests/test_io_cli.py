import json

import numpy as np
import pytest

from bmdl.cli import main
from bmdl.errors import GapError, ParseError, RangeError
from bmdl.io import ingest, read_series, time_index, write_series
from bmdl.model import SeriesData
from bmdl.search import FitResult, Scorer

from conftest import SCENARIO_DIR, SEASONAL

RELOCATIONS = ((1921, 11), (1956, 6), (1987, 5))


def _write_csv(path, header, rows):
    path.write_text(header + "\n" + "".join(",".join(map(str, r)) + "\n" for r in rows))
    return str(path)


def _station(tmp_path, shift=4.0, seed=0, cols=2):
    """Monthly record 1901-01..2014-12 with shifts at the relocation months."""
    r = np.random.default_rng(seed)
    n = 1368
    t = np.arange(n)
    cps = [time_index(y, m, (1901, 1)) for y, m in RELOCATIONS]
    level = shift * np.searchsorted(np.array(cps) - 1, t, side="right")
    rows = []
    for i in range(n):
        vals = [SEASONAL[i % 12] + level[i] + r.normal(0, 1.5) for _ in range(cols)]
        rows.append([1901 + i // 12, i % 12 + 1, *(f"{v:.3f}" for v in vals)])
    header = "year,month,tmax,tmin" if cols == 2 else "year,month,tmax"
    series = _write_csv(tmp_path / "station.csv", header, rows)
    meta = _write_csv(tmp_path / "meta.csv", "year,month", [list(ym) for ym in RELOCATIONS])
    return series, meta, cps


class TestIngest:
    def test_full_record(self, tmp_path):
        series, meta, cps = _station(tmp_path)
        data, md = ingest(series, meta, ar_order=3)
        assert data.n == 1368 and data.components == 2
        assert data.start == (1901, 1) and data.names == ("tmax", "tmin")
        assert md.documented_times == frozenset(cps)
        assert time_index(1956, 6, (1901, 1)) == 12 * 55 + 6
        assert data.label(12 * 55 + 6) == (1956, 6)

    def test_rows_in_any_order(self, tmp_path):
        p = _write_csv(tmp_path / "s.csv", "year,month,x",
                       [[1901 + k // 12, k % 12 + 1, k] for k in reversed(range(36))])
        np.testing.assert_array_equal(read_series(p).values[:, 0], np.arange(36))

    def test_duplicate_names_both_rows(self, tmp_path):
        rows = [[1950 + k // 12, k % 12 + 1, 1.0] for k in range(30)]
        rows.insert(10, [1950, 3, 2.0])
        p = _write_csv(tmp_path / "s.csv", "year,month,x", rows)
        with pytest.raises(ParseError, match=r"rows 4 and 12"):
            read_series(p)

    def test_gap(self, tmp_path):
        rows = [[1950 + k // 12, k % 12 + 1, 1.0] for k in range(30) if k != 7]
        with pytest.raises(GapError, match="1950-09"):
            read_series(_write_csv(tmp_path / "s.csv", "year,month,x", rows))

    def test_missing_cell(self, tmp_path):
        rows = [[1950 + k // 12, k % 12 + 1, 1.0] for k in range(30)]
        rows[5][2] = ""
        with pytest.raises(ParseError, match="row 7"):
            read_series(_write_csv(tmp_path / "s.csv", "year,month,x", rows))

    def test_bad_month(self, tmp_path):
        rows = [[1950, 13, 1.0]] + [[1951 + k // 12, k % 12 + 1, 1.0] for k in range(30)]
        with pytest.raises(ParseError, match="month 13"):
            read_series(_write_csv(tmp_path / "s.csv", "year,month,x", rows))

    def test_metadata_out_of_range(self, tmp_path):
        series, _, _ = _station(tmp_path, cols=1)
        early = _write_csv(tmp_path / "m.csv", "year,month", [[1901, 2]])
        with pytest.raises(RangeError):
            ingest(series, early, ar_order=3)
        late = _write_csv(tmp_path / "m2.csv", "year,month", [[2015, 1]])
        with pytest.raises(RangeError):
            ingest(series, late, ar_order=3)

    def test_write_read_round_trip(self, tmp_path):
        data = SeriesData(np.random.default_rng(1).normal(size=(40, 2)), 12, 1, (1990, 7),
                          ("a", "b"))
        p = tmp_path / "w.csv"
        p.write_text(write_series(data))
        back = read_series(str(p), 1)
        np.testing.assert_array_equal(back.values, data.values)
        assert back.start == (1990, 7)


class TestCli:
    def test_score_empty(self, tmp_path, capsys):
        series, _, _ = _station(tmp_path, cols=1)
        assert main(["score", series, "-p", "3", "--times", "", "--json"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["mu_penalty"] == 0.0 and out["times"] == [[]]

    def test_score_bivariate_empty(self, tmp_path, capsys):
        series, _, _ = _station(tmp_path)
        assert main(["score", series, "-p", "1", "--times", "", "--json"]) == 0
        assert json.loads(capsys.readouterr().out)["times"] == [[], []]

    def test_score_accepts_year_month(self, tmp_path, capsys):
        series, meta, cps = _station(tmp_path, cols=1)
        main(["score", series, "-p", "3", "--metadata", meta, "--times", "1921-11,1956-06",
              "--json"])
        a = json.loads(capsys.readouterr().out)
        main(["score", series, "-p", "3", "--metadata", meta, "--times",
              f"{cps[0]},{cps[1]}", "--json"])
        assert json.loads(capsys.readouterr().out) == a

    def test_fit_bivariate_reports_year_month(self, tmp_path, capsys):
        series, meta, _ = _station(tmp_path, shift=5.0)
        out = tmp_path / "fit.json"
        code = main(["fit", series, "--metadata", meta, "--mode", "bi", "-p", "1",
                     "--iterations", "40000", "--seed", "2", "-o", str(out)])
        assert code == 0
        res = FitResult.from_json(out.read_text())
        want = {(time_index(y, m, (1901, 1)), f"{y}-{m:02d}") for y, m in RELOCATIONS}
        for comp in res.labelled_times():
            assert want <= {tuple(x) for x in comp}
        assert "1921-11" in capsys.readouterr().out

    def test_fit_json_rescoring(self, tmp_path):
        series, meta, _ = _station(tmp_path, cols=1)
        out = tmp_path / "fit.json"
        assert main(["fit", series, "--metadata", meta, "-p", "2", "--iterations", "1500",
                     "-o", str(out)]) == 0
        res = FitResult.from_json(out.read_text())
        data, md = ingest(series, meta, 2)
        again = Scorer(data, md, res.hyperparams).breakdown(res.best_config.times)
        assert again.total == res.best_score.total
        assert again == res.best_score

    def test_hyperparam_flags_override_file(self, tmp_path, capsys):
        series, _, _ = _station(tmp_path, cols=1)
        hp = tmp_path / "hp.toml"
        hp.write_text("a = 1.0\nb_undoc = 199.0\nb_doc = 199.0\nnu = 2.0\n")
        main(["score", series, "-p", "1", "--times", "500", "--hyperparams", str(hp), "--json"])
        from_file = json.loads(capsys.readouterr().out)
        main(["score", series, "-p", "1", "--times", "500", "--preset", "six-per-century",
              "--nu", "2", "--json"])
        assert json.loads(capsys.readouterr().out) == from_file
        main(["score", series, "-p", "1", "--times", "500", "--hyperparams", str(hp),
              "--nu", "5", "--json"])
        assert json.loads(capsys.readouterr().out) != from_file

    def test_simulate_then_fit(self, tmp_path):
        out = tmp_path / "sim.csv"
        meta = tmp_path / "sim_meta.csv"
        assert main(["simulate", str(SCENARIO_DIR / "table1_k2.toml"), "--seed", "3",
                     "--start", "1950", "1", "-o", str(out), "--metadata-output", str(meta)]) == 0
        data, md = ingest(str(out), str(meta), 3)
        assert data.n == 600 and md.documented_times == frozenset({75, 150, 250, 550})

    def test_study_and_plotdata(self, tmp_path):
        sc = tmp_path / "truth.toml"
        text = (SCENARIO_DIR / "table1_k2.toml").read_text()
        text = text.split("[study]")[0] + '[study]\nreplications = 2\ndetectors = ["truth"]\n'
        sc.write_text(text)
        csv_path, js = tmp_path / "t.csv", tmp_path / "t.json"
        assert main(["study", str(sc), "--seed", "1", "--csv", str(csv_path),
                     "--json", str(js)]) == 0
        assert "truth,0,tp_rate,150,100.0000" in csv_path.read_text()
        plot = tmp_path / "p.csv"
        assert main(["plotdata", str(js), "-o", str(plot)]) == 0
        lines = plot.read_text().splitlines()
        assert lines[0] == "detector,component,time,flag_frequency,is_true"
        assert "truth,0,150,100.0000,1" in lines

    def test_plotdata_fit(self, tmp_path):
        series, _, _ = _station(tmp_path, cols=1)
        out = tmp_path / "fit.json"
        main(["fit", series, "-p", "1", "--iterations", "300", "-o", str(out)])
        plot = tmp_path / "p.csv"
        assert main(["plotdata", str(out), "--series", series, "-o", str(plot)]) == 0
        kinds = {line.split(",")[0] for line in plot.read_text().splitlines()[1:]}
        assert kinds >= {"trace", "best", "series"}

    def test_exit_codes(self, tmp_path, capsys):
        series, _, _ = _station(tmp_path, cols=1)
        with pytest.raises(SystemExit) as info:
            main(["study", str(SCENARIO_DIR / "table1_k2.toml")])
        assert info.value.code == 2
        with pytest.raises(SystemExit) as info:
            main(["fit", series])
        assert info.value.code == 2
        assert main(["fit", str(tmp_path / "missing.csv"), "-p", "1"]) == 1
        gap = _write_csv(tmp_path / "g.csv", "year,month,x", [[2000, 1, 1], [2000, 3, 1]])
        assert main(["score", gap, "-p", "1"]) == 1
        assert "GapError" in capsys.readouterr().err
        assert main(["fit", series, "-p", "1", "--flip-probability", "1.5"]) == 2

    def test_exit_code_for_aborted_chains(self, tmp_path, monkeypatch):
        import bmdl.search as search
        series, _, _ = _station(tmp_path, cols=1)
        real = search.mcmc_chain

        def sometimes_abort(score_fn, init, opts, chain_seed):
            res = real(score_fn, init, opts, chain_seed)
            if chain_seed % 2:
                res.status, res.message = "aborted", "injected"
            return res

        monkeypatch.setattr(search, "mcmc_chain", sometimes_abort)
        seeds = [cs for _, cs in search._chain_seeds(0, 4)]
        assert any(s % 2 for s in seeds) and not all(s % 2 for s in seeds)
        code = main(["fit", series, "-p", "1", "--iterations", "50", "--chains", "4",
                     "-o", str(tmp_path / "f.json")])
        assert code == 3
