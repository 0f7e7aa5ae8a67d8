import hashlib
import json
import pathlib
import subprocess

import pytest

from readout_figures.cli import main as figures_main
from readout_figures.io import FigureInputError, RunDirectory
from readout_figures.render import build_trajectories_figure, render

REPO = pathlib.Path(__file__).resolve().parents[2]
PRESETS = REPO / "src" / "qudit_readout" / "presets"

PNG_MAGIC = b"\x89PNG"


def run_simulator(args):
    out = subprocess.run(["qudit-readout", *args], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    return out


@pytest.fixture(scope="session")
def fig3_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig3-run")
    cfg = json.loads((PRESETS / "fig3.json").read_text())
    cfg["experiment"]["n_trajectories"] = 32
    cfg["experiment"]["t_final_us"] = 1.5
    cfg["output"]["sample_trajectories"] = 3
    path = out / "cfg.json"
    path.write_text(json.dumps(cfg))
    run_dir = out / "data"
    run_simulator(["simulate", "--config", str(path), "--out", str(run_dir)])
    return run_dir


@pytest.fixture(scope="session")
def fig4_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("fig4-run")
    cfg = json.loads((PRESETS / "fig4.json").read_text())
    cfg["experiment"]["n_trajectories"] = 48
    cfg["experiment"]["t_final_us"] = 4.0
    cfg["experiment"]["window_us"] = [0.0, 4.0]
    path = out / "cfg.json"
    path.write_text(json.dumps(cfg))
    run_dir = out / "data"
    run_simulator(["simulate", "--config", str(path), "--out", str(run_dir)])
    return run_dir


@pytest.fixture(scope="session")
def rates_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("rates-run") / "data"
    run_simulator(["rates", "--config", str(PRESETS / "transmon.json"),
                   "--out", str(run_dir)])
    return run_dir


@pytest.fixture(scope="session")
def sweep_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep-run")
    cfg = json.loads((PRESETS / "fig5.json").read_text())
    cfg["experiment"]["n_trajectories"] = 24
    cfg["experiment"]["sweep"]["grid"] = [0.5, 1.0]
    path = out / "cfg.json"
    path.write_text(json.dumps(cfg))
    run_dir = out / "data"
    run_simulator(["sweep", "--config", str(path), "--out", str(run_dir)])
    return run_dir


class TestTrajectoriesFigure:
    def test_panel_layout_three_samples_plus_mean_by_three_rows(self, fig3_run):
        fig = build_trajectories_figure(RunDirectory(fig3_run))
        axes = fig.axes
        assert len(axes) == 12
        rows = {ax.get_subplotspec().rowspan.start for ax in axes}
        cols = {ax.get_subplotspec().colspan.start for ax in axes}
        assert rows == {0, 1, 2}
        assert cols == {0, 1, 2, 3}
        titles = [ax.get_title() for ax in axes if ax.get_title()]
        assert sum("trajectory" in t for t in titles) == 3
        assert sum("mean" in t for t in titles) == 1
        import matplotlib.pyplot as plt

        plt.close(fig)

    def test_render_writes_png(self, fig3_run, tmp_path):
        out = render("trajectories", fig3_run, tmp_path / "fig3.png")
        assert out.exists()
        assert out.read_bytes()[:4] == PNG_MAGIC

    def test_rerender_is_idempotent(self, fig3_run, tmp_path):
        digests = []
        for name in ("a.png", "b.png"):
            out = render("trajectories", fig3_run, tmp_path / name)
            digests.append(hashlib.sha256(out.read_bytes()).hexdigest())
        assert digests[0] == digests[1]


class TestIQScatter:
    def test_renders_from_jump_run(self, fig4_run, tmp_path):
        out = render("iq-scatter", fig4_run, tmp_path / "iq.png")
        assert out.read_bytes()[:4] == PNG_MAGIC

    def test_cli_entry_point(self, fig4_run, tmp_path):
        rc = figures_main(["render", "iq-scatter", "--in", str(fig4_run),
                           "--out", str(tmp_path / "iq.png")])
        assert rc == 0
        assert (tmp_path / "iq.png").exists()


class TestRateCompare:
    def test_renders_rate_curves(self, rates_run, tmp_path):
        out = render("rate-compare", rates_run, tmp_path / "rates.png")
        assert out.read_bytes()[:4] == PNG_MAGIC


class TestSweepGrid:
    def test_renders_grid(self, sweep_run, tmp_path):
        out = render("sweep-grid", sweep_run, tmp_path / "sweep.png")
        assert out.read_bytes()[:4] == PNG_MAGIC


class TestInputVerification:
    def test_checksum_mismatch_rejected(self, fig4_run, tmp_path):
        import shutil

        tampered = tmp_path / "tampered"
        shutil.copytree(fig4_run, tampered)
        with open(tampered / "iq.csv", "a") as fh:
            fh.write("999,0,0,0,40,0\n")
        with pytest.raises(FigureInputError, match="checksum mismatch"):
            render("iq-scatter", tampered, tmp_path / "x.png")
        assert not (tmp_path / "x.png").exists()
        rc = figures_main(["render", "iq-scatter", "--in", str(tampered),
                           "--out", str(tmp_path / "x.png")])
        assert rc == 2

    def test_empty_csv_is_explicit_no_data_error(self, tmp_path):
        run_dir = tmp_path / "empty"
        run_dir.mkdir()
        csv_path = run_dir / "iq.csv"
        csv_path.write_text("trajectory_id,v_bar_re,v_bar_im,window_start,"
                            "window_end,aborted\n")
        digest = hashlib.sha256(csv_path.read_bytes()).hexdigest()
        (run_dir / "manifest.json").write_text(json.dumps({
            "schema": "run-manifest-v1",
            "outputs": {"iq.csv": digest},
        }))
        with pytest.raises(FigureInputError, match="no data"):
            render("iq-scatter", run_dir, tmp_path / "x.png")
        assert not (tmp_path / "x.png").exists()

    def test_missing_manifest_rejected(self, tmp_path):
        (tmp_path / "bare").mkdir()
        with pytest.raises(FigureInputError, match="manifest"):
            render("iq-scatter", tmp_path / "bare", tmp_path / "x.png")

    def test_unlisted_file_rejected(self, fig4_run, tmp_path):
        import shutil

        extra = tmp_path / "extra"
        shutil.copytree(fig4_run, extra)
        manifest = json.loads((extra / "manifest.json").read_text())
        del manifest["outputs"]["iq.csv"]
        (extra / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(FigureInputError, match="not listed"):
            render("iq-scatter", extra, tmp_path / "x.png")

    def test_unknown_kind(self, fig4_run, tmp_path):
        with pytest.raises(FigureInputError, match="unknown figure kind"):
            render("hexbin", fig4_run, tmp_path / "x.png")

    def test_schema_version_mismatch(self, fig3_run, tmp_path):
        import shutil

        stale = tmp_path / "stale"
        shutil.copytree(fig3_run, stale)
        ens = json.loads((stale / "ensemble.json").read_text())
        ens["schema"] = "ensemble-v999"
        (stale / "ensemble.json").write_text(json.dumps(ens))
        manifest = json.loads((stale / "manifest.json").read_text())
        manifest["outputs"]["ensemble.json"] = hashlib.sha256(
            (stale / "ensemble.json").read_bytes()).hexdigest()
        (stale / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(FigureInputError, match="schema"):
            render("trajectories", stale, tmp_path / "x.png")
