import json
import shutil
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from wassvec import __version__
from wassvec.cli import main, render
from wassvec.data import read_matrix_csv, write_csv, write_idx, write_idx_labels
from wassvec.report import RunReport, report_schema


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def report(path):
    data = json.loads((path / "report.json").read_text())
    jsonschema.validate(data, report_schema())
    return data


# ---- gen -------------------------------------------------------------------------

def test_gen_torus(tmp_path, capsys):
    code, out, _ = run(capsys, "gen", "torus1d", "--n", 100, "--template", "gauss:0.05", "--out", tmp_path / "t.csv")
    assert code == 0 and "100x100" in out
    M = read_matrix_csv(tmp_path / "t.csv")[0]
    assert M.shape == (100, 100)
    assert np.allclose(M.sum(axis=0), 1)


def test_gen_blocks_deterministic(tmp_path, capsys):
    for name in ("a.csv", "b.csv"):
        assert run(capsys, "gen", "blocks", "--sizes", "2x2,2x2", "--seed", 7, "--out", tmp_path / name)[0] == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert read_matrix_csv(tmp_path / "a.csv")[0].shape == (4, 4)


@pytest.mark.parametrize("kind,extra", [("torus2d", ["--side", "4"]), ("meanscale", ["--n", "12"])])
def test_gen_other_kinds(tmp_path, capsys, kind, extra):
    assert run(capsys, "gen", kind, *extra, "--out", tmp_path / "x.csv")[0] == 0


def test_gen_bad_template(tmp_path, capsys):
    code, _, err = run(capsys, "gen", "torus1d", "--template", "cauchy:1", "--out", tmp_path / "x.csv")
    assert code == 2
    assert "usage:" in err and "unknown template" in err


def test_gen_bad_sizes(tmp_path, capsys):
    assert run(capsys, "gen", "blocks", "--sizes", "2by2", "--out", tmp_path / "x.csv")[0] == 2


# ---- eigen -------------------------------------------------------------------------

def test_eigen_two_histograms(tmp_path, capsys):
    write_csv(tmp_path / "two.csv", np.array([[0.7, 0.2], [0.3, 0.8]]))
    out = tmp_path / "out"
    code, _, _ = run(capsys, "eigen", tmp_path / "two.csv", "--tau", 0.5, "--out-dir", out)
    assert code == 0
    rep = report(out)
    assert rep["status"] == "converged" and rep["exit_code"] == 0
    assert rep["results"]["lambda"] == pytest.approx(1.0, abs=1e-10)
    assert rep["results"]["uniqueness"] == "certified_unique"
    assert rep["config"]["tau"] == 0.5 and rep["config"]["backend"] == "exact"
    for name in ("C_star.csv", "trace.csv", "report.json", "convergence.svg", "C_star_heatmap.svg"):
        assert (out / name).is_file()
    for p in rep["artifacts"].values():
        assert (out / p.split("/")[-1]).is_file()
    assert set(rep["timing"]) >= {"load", "iterate", "write"}


def test_eigen_dirac_like_collapses(tmp_path, capsys):
    write_csv(tmp_path / "d.csv", np.array([[0.9, 0.1, 0.0], [0.1, 0.9, 0.0], [0.0, 0.0, 1.0]]))
    code, out, _ = run(capsys, "eigen", tmp_path / "d.csv", "--out-dir", tmp_path / "o")
    assert code == 3
    assert "degenerate" in out
    assert report(tmp_path / "o")["status"] == "degenerate"


def test_eigen_same_seed_identical_trace(tmp_path, capsys):
    run(capsys, "gen", "torus1d", "--n", 8, "--template", "gauss:0.1", "--out", tmp_path / "t.csv")
    for d in ("a", "b"):
        assert run(capsys, "eigen", tmp_path / "t.csv", "--init", "random", "--seed", 11, "--tau", 0.1,
                   "--out-dir", tmp_path / d)[0] == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    assert (tmp_path / "a" / "C_star.csv").read_bytes() == (tmp_path / "b" / "C_star.csv").read_bytes()


def test_eigen_raw_counts_need_normalize(tmp_path, capsys):
    write_csv(tmp_path / "raw.csv", np.array([[7.0, 2.0], [3.0, 8.0]]))
    assert run(capsys, "eigen", tmp_path / "raw.csv", "--out-dir", tmp_path / "o")[0] == 2
    assert run(capsys, "eigen", tmp_path / "raw.csv", "--normalize", "--out-dir", tmp_path / "o")[0] == 0


def test_eigen_non_convergence_exit(tmp_path, capsys):
    run(capsys, "gen", "torus1d", "--n", 10, "--template", "gauss:0.1", "--out", tmp_path / "t.csv")
    code, _, _ = run(capsys, "eigen", tmp_path / "t.csv", "--max-iter", 2, "--out-dir", tmp_path / "o")
    assert code == 3
    assert report(tmp_path / "o")["status"] == "max_iterations"


def test_eigen_sinkhorn_failure_writes_error_report(tmp_path, capsys):
    run(capsys, "gen", "torus1d", "--n", 10, "--template", "gauss:0.1", "--out", tmp_path / "t.csv")
    code, _, err = run(capsys, "eigen", tmp_path / "t.csv", "--backend", "entropic", "--eps", 1e-3,
                       "--sinkhorn-max-iter", 2, "--out-dir", tmp_path / "o")
    assert code == 3 and "Sinkhorn" in err
    rep = report(tmp_path / "o")
    assert rep["status"] == "error" and rep["exit_code"] == 3


# ---- singular ------------------------------------------------------------------------

def test_singular_blocks(tmp_path, capsys):
    run(capsys, "gen", "blocks", "--sizes", "2x2,2x2", "--seed", 7, "--out", tmp_path / "b.csv")
    out = tmp_path / "o"
    assert run(capsys, "singular", tmp_path / "b.csv", "--tau", 0.1, "--out-dir", out)[0] == 0
    D = read_matrix_csv(out / "D_star.csv")[0]
    assert D[:2, :2].max() < D[:2, 2:].min() and D[2:, 2:].max() < D[2:, :2].min()
    rep = report(out)
    assert rep["results"]["lambda"] <= 1.2 + 1e-12 and rep["results"]["mu"] <= 1.2 + 1e-12
    for name in ("C_star.csv", "D_star.csv", "mds_rows.csv", "mds_cols.csv", "C_star_heatmap.svg",
                 "D_star_heatmap.svg", "mds_rows.svg", "mds_cols.svg", "trace.csv", "convergence.svg"):
        assert (out / name).is_file()
    mds = (out / "mds_cols.csv").read_text().splitlines()
    assert mds[0] == "id,x,y" and len(mds) == 5


def test_singular_bistochastic(tmp_path, capsys):
    rng = np.random.default_rng(0)
    write_csv(tmp_path / "u.csv", rng.random((5, 6)) + 0.1)
    assert run(capsys, "singular", tmp_path / "u.csv", "--normalization", "bistochastic", "--tau", 0.1,
               "--out-dir", tmp_path / "o")[0] == 0


def test_singular_idx_classes(tmp_path, capsys):
    rng = np.random.default_rng(1)
    labels = np.repeat(np.arange(4), 20)
    imgs = np.zeros((80, 5, 5), dtype=np.uint8)
    for k, lab in enumerate(labels):
        # a bright stroke whose position depends on the class, plus noise
        imgs[k, lab, :] = 200
        imgs[k] += rng.integers(0, 30, size=(5, 5)).astype(np.uint8)
    imgs[:, 4, 4] = 0  # a pixel that is always dark
    write_idx(tmp_path / "img.idx", imgs)
    write_idx_labels(tmp_path / "lab.idx", labels)
    out = tmp_path / "o"
    code, _, _ = run(capsys, "singular", tmp_path / "img.idx", "--labels", tmp_path / "lab.idx",
                     "--classes", "0,1", "--samples", 30, "--tau", 0.1, "--out-dir", out)
    assert code == 0
    rep = report(out)
    assert rep["results"]["shape"] == [24, 30]
    assert rep["results"]["dropped_empty_rows"] == 1
    ids = [line.split(",")[0] for line in (out / "mds_cols.csv").read_text().splitlines()[1:]]
    assert set(ids) == {"0", "1"}


def test_singular_scrna_entropic(tmp_path, capsys):
    rng = np.random.default_rng(2)
    counts = rng.poisson(1.0, size=(60, 12)).astype(float)
    counts[:10, :6] += rng.poisson(6.0, size=(10, 6))
    counts[10:20, 6:] += rng.poisson(6.0, size=(10, 6))
    write_csv(tmp_path / "counts.csv", counts, [f"g{i}" for i in range(60)], [f"c{j}" for j in range(12)])
    out = tmp_path / "o"
    code, _, _ = run(capsys, "singular", tmp_path / "counts.csv", "--header", "--row-names",
                     "--preprocess", "scrna:20", "--backend", "entropic", "--eps", 1e-2,
                     "--out-dir", out)
    assert code == 0
    rep = report(out)
    assert rep["results"]["shape"][0] == 20
    assert (out / "mds_rows.csv").read_text().splitlines()[1].startswith("g")


def test_singular_missing_classes_without_labels(tmp_path, capsys):
    write_csv(tmp_path / "u.csv", np.ones((2, 2)))
    assert run(capsys, "singular", tmp_path / "u.csv", "--classes", "0", "--out-dir", tmp_path / "o")[0] == 2


# ---- check -------------------------------------------------------------------------------

def test_check_pca(capsys):
    code, out, _ = run(capsys, "check", "pca", "--size", 6)
    assert code == 0
    value = float(out.split("residual ")[1].split()[0])
    assert value <= 1e-8


def test_check_uniqueness_identity(tmp_path, capsys):
    write_csv(tmp_path / "eye.csv", np.eye(3))
    write_csv(tmp_path / "c.csv", np.ones((3, 3)) - np.eye(3))
    code, out, _ = run(capsys, "check", "uniqueness", tmp_path / "eye.csv", "--cost", tmp_path / "c.csv",
                       "--out-dir", tmp_path / "o")
    assert code == 0 and "inconclusive" in out
    rep = report(tmp_path / "o")
    assert rep["results"]["passed"] is False and rep["status"] == "failed"


def test_check_uniqueness_identity_without_cost(tmp_path, capsys):
    write_csv(tmp_path / "eye.csv", np.eye(3))
    code, out, _ = run(capsys, "check", "uniqueness", tmp_path / "eye.csv")
    assert code == 0 and "inconclusive" in out


def test_check_mmd_limit(capsys):
    code, out, _ = run(capsys, "check", "mmd-limit", "--eps", 1000)
    assert code == 0
    assert float(out.split("gap ")[1].split()[0]) <= 1e-3


def test_check_cone(tmp_path, capsys):
    write_csv(tmp_path / "c.csv", np.array([[0, 1, 9], [1, 0, 1], [9, 1, 0.0]]))
    code, out, _ = run(capsys, "check", "cone", "--cost", tmp_path / "c.csv")
    assert code == 0 and "not in cone" in out
    write_csv(tmp_path / "c2.csv", np.array([[0, 1, 4], [1, 0, 1], [4, 1, 0.0]]))
    assert "dimension 1" in run(capsys, "check", "cone", "--cost", tmp_path / "c2.csv")[1]


# ---- plots, reports, errors ------------------------------------------------------------------

def test_plot_regenerates_identical_svg(tmp_path, capsys):
    run(capsys, "gen", "blocks", "--sizes", "2x3,3x2", "--seed", 1, "--out", tmp_path / "b.csv")
    out = tmp_path / "o"
    run(capsys, "singular", tmp_path / "b.csv", "--tau", 0.1, "--out-dir", out)
    pairs = [("trace", "trace.csv", "convergence.svg"), ("heatmap", "C_star.csv", "C_star_heatmap.svg"),
             ("heatmap", "D_star.csv", "D_star_heatmap.svg"), ("scatter", "mds_rows.csv", "mds_rows.svg"),
             ("scatter", "mds_cols.csv", "mds_cols.svg")]
    for kind, csv_name, svg_name in pairs:
        assert run(capsys, "plot", kind, out / csv_name, "--out", tmp_path / "re.svg")[0] == 0
        assert (tmp_path / "re.svg").read_text() == (out / svg_name).read_text()
        assert render(kind, (out / csv_name).read_text(), csv_name[:-4]) == (out / svg_name).read_text()


def test_report_round_trip(tmp_path, capsys):
    write_csv(tmp_path / "two.csv", np.array([[0.7, 0.2], [0.3, 0.8]]))
    run(capsys, "eigen", tmp_path / "two.csv", "--out-dir", tmp_path / "o")
    text = (tmp_path / "o" / "report.json").read_text()
    r = RunReport.from_json(text)
    assert r.to_json() == text
    assert r.version == __version__


def test_report_rejects_bad_exit_code():
    with pytest.raises(jsonschema.ValidationError):
        RunReport("eigen", "x", 1, __version__).validate()


def test_report_non_finite_becomes_null():
    r = RunReport("check", "passed", 0, __version__, results={"lambda": float("nan"), "passed": True})
    assert json.loads(r.to_json())["results"]["lambda"] is None


def test_io_errors(tmp_path, capsys):
    assert run(capsys, "eigen", tmp_path / "missing.csv", "--out-dir", tmp_path / "o")[0] == 4
    (tmp_path / "bad.csv").write_text("1,2\n3\n")
    code, _, err = run(capsys, "eigen", tmp_path / "bad.csv", "--out-dir", tmp_path / "o")
    assert code == 4 and "line 2" in err
    write_idx(tmp_path / "x.idx", np.zeros((2, 2, 2), dtype=np.uint8))
    raw = (tmp_path / "x.idx").read_bytes()
    (tmp_path / "t.idx").write_bytes(raw[:-1])
    assert run(capsys, "singular", tmp_path / "t.idx", "--out-dir", tmp_path / "o")[0] == 4


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as e:
        main(["eigen"])
    assert e.value.code == 2


@pytest.mark.skipif(shutil.which("wassvec") is None, reason="console script not installed")
def test_console_script():
    out = subprocess.run(["wassvec", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "wassvec.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout
