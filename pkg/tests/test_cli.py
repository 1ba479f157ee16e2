import numpy as np
import pytest

from tensoravatar.app.cli import main
from tensoravatar.app.io import load, save
from tensoravatar.avatar import render_frame
from tensoravatar.blendmix import ExpressionInput
from tensoravatar.imageio import read_raw
from tensoravatar.synthrig.dataset import load_dataset, save_dataset

TINY = ["--set", "rig.n_lat=8", "--set", "rig.n_lon=10", "--set", "rig.n_b=3", "--set", "data.n_frames=6",
        "--set", "data.n_cameras=2", "--set", "data.image_size=12", "--set", "model.triplane_res=4",
        "--set", "model.triplane_c_xy=2", "--set", "model.triplane_c_side=2", "--set", "model.line_res=4",
        "--set", "model.line_dim=2", "--set", "model.n_b=3", "--set", "model.n_j=2", "--set", "model.hidden=8",
        "--set", "train.iterations=3", "--set", "train.n_clusters=2"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), *TINY]) == 0
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "m.ctav"), *TINY]) == 0
    return root


def test_synth_and_train_outputs(workspace):
    ds = load_dataset(workspace / "data")
    assert len(ds.frames) == 12
    assert (workspace / "m.ctav").exists()
    log = (workspace / "m.log").read_text().splitlines()
    assert log[0].startswith("# ")
    assert "iter, L_image, L_geom, L_op, psnr_holdout" in log
    assert len([l for l in log if l and l[0].isdigit()]) == 3


def test_train_deterministic(workspace, tmp_path):
    assert main(["train", "--data", str(workspace / "data"), "--out", str(tmp_path / "b.ctav"), *TINY]) == 0
    assert (tmp_path / "b.log").read_text() == (workspace / "m.log").read_text()
    assert (tmp_path / "b.ctav").read_bytes() == (workspace / "m.ctav").read_bytes()


def test_render_and_animate(workspace, tmp_path):
    out = tmp_path / "f.raw"
    assert main(["render", "--model", str(workspace / "m.ctav"), "--out", str(out), "--beta", "0.5 0 0",
                 "--data", str(workspace / "data"), "--camera", "1"]) == 0
    img = read_raw(out)
    model = load(workspace / "m.ctav")
    ds = load_dataset(workspace / "data")
    want = render_frame(model, ExpressionInput(np.array([0.5, 0, 0]), model.rig.jaw_quat(0.0)), ds.cameras[1])
    np.testing.assert_allclose(img, want.astype(np.float32))
    coeffs = tmp_path / "seq.txt"
    coeffs.write_text("0 0 0\n0.5 0 0 jaw=5\n# comment\n1 0 0\n")
    assert main(["animate", "--model", str(workspace / "m.ctav"), "--coeffs", str(coeffs), "--out-dir",
                 str(tmp_path / "seq"), "--data", str(workspace / "data")]) == 0
    assert len(list((tmp_path / "seq").glob("frame_*.raw"))) == 3


def test_eval_perfect_model(workspace, tmp_path, capsys):
    model = load(workspace / "m.ctav")
    ds = load_dataset(workspace / "data")
    for f in ds.frames:
        f.image = render_frame(model, ExpressionInput(f.beta, f.q_jaw), ds.cameras[f.camera_id]).astype(np.float32)
    save_dataset(ds, tmp_path / "perfect")
    capsys.readouterr()
    assert main(["eval", "--model", str(workspace / "m.ctav"), "--data", str(tmp_path / "perfect"),
                 "--split", "all"]) == 0
    rows = [l.split() for l in capsys.readouterr().out.splitlines()[1:]]
    assert rows and all(float(r[-1]) == pytest.approx(1.0, abs=1e-6) for r in rows)


def test_inspect(workspace, capsys):
    assert main(["inspect", str(workspace / "m.ctav")]) == 0
    out = capsys.readouterr().out
    assert "triplane" in out and "total" in out
    assert main(["inspect", "--full-scale"]) == 0
    rows = {l.split()[0]: l.split()[1:] for l in capsys.readouterr().out.splitlines()[1:]}
    assert int(rows["triplane"][0]) == 4_194_304
    assert abs(float(rows["triplane+decoder"][1]) - 4.05) / 4.05 < 0.1
    assert abs(float(rows["lines+decoder"][1]) - 2.41) / 2.41 < 0.1


def test_bench(workspace, capsys):
    assert main(["bench", "--model", str(workspace / "m.ctav"), "--frames", "2", *TINY]) == 0
    assert "frames/s" in capsys.readouterr().out
    assert main(["bench", "--scaling", "--frames", "2", *TINY]) == 0
    assert "scaling exponent" in capsys.readouterr().out


def test_ablate_logs_per_arm(workspace, tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", "--data", str(workspace / "data"), "--out-dir", str(out), "--arms", "full", "no_lines",
                 *TINY]) == 0
    a, b = (out / "full.log").read_text(), (out / "no_lines.log").read_text()
    ha = [l for l in a.splitlines() if l.startswith("# ")]
    hb = [l for l in b.splitlines() if l.startswith("# ")]
    diff = [(x, y) for x, y in zip(ha, hb) if x != y]
    assert diff == [("# model.use_lines = true", "# model.use_lines = false")]
    assert "# train.seed = 0" in ha


def test_errors_give_nonzero_exit(tmp_path, capsys):
    assert main(["eval", "--model", str(tmp_path / "nope.ctav"), "--data", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err.lower()
    bad = tmp_path / "bad.ctav"
    bad.write_bytes(b"NOPE!" + bytes(20))
    assert main(["inspect", str(bad)]) == 1
    assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "x"), "--set", "train.bogus=1"]) == 1
    assert main(["ablate", "--data", str(tmp_path), "--out-dir", str(tmp_path), "--arms", "nonsense"]) == 1
