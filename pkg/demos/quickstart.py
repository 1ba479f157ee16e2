"""Generate a small synthetic dataset, train briefly, evaluate and save a model.

Run from the repository root:  python demos/quickstart.py [out_dir]
"""
import sys
from pathlib import Path

from tensoravatar.app.io import save
from tensoravatar.app.metrics import eval_metrics
from tensoravatar.config import Config
from tensoravatar.synthrig.dataset import generate_dataset
from tensoravatar.synthrig.rig import RigConfig, build_rig
from tensoravatar.training import train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

# a coarse rig and a short schedule keep this under a few minutes on one core
cfg = Config().replace(**{"rig.n_lat": 20, "rig.n_lon": 32, "model.triplane_res": 32, "model.hidden": 64,
                          "train.iterations": 500, "train.n_clusters": 8})
rig = build_rig(cfg.rig, seed=0)
ds = generate_dataset(rig, n_frames=60, n_cameras=3, image_size=48, seed=1)
print(f"rig: {len(rig.vertices)} vertices, {rig.n_faces} faces; dataset: {len(ds.frames)} images")

model, log = train(ds, cfg, progress=lambda i, row: print(f"iter {i}: loss {row[1]:.4f}") if i % 100 == 0 else None)
report = eval_metrics(model, ds.split("holdout"), ds.cameras)
print(f"held-out PSNR {report.mean_psnr:.2f} dB, SSIM {report.mean_ssim:.4f}")

storage = save(model, out / "avatar.ctav")
print(storage.table())
(out / "train.log").write_text(log.text())
