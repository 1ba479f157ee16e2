"""Render the hidden oracle of the synthetic rig at a few expressions.

Shows the expression-dependent opacity creases the trained models must learn.
Writes one PNG strip per camera.  python demos/wrinkles.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from tensoravatar.imageio import write_png
from tensoravatar.synthrig.dataset import OracleAvatar, make_cameras
from tensoravatar.synthrig.rig import build_rig

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)
rig = build_rig(seed=0)
oracle = OracleAvatar(rig)
poses = [("neutral", {}, 0.0), ("brow_raise", {0: 1.0}, 0.0), ("smile", {3: 0.8, 4: 0.8}, 0.0),
         ("jaw_open", {}, 20.0), ("pucker", {6: -0.9}, 0.0)]
for c, cam in enumerate(make_cameras(2, 96)):
    row = []
    for name, comps, jaw_deg in poses:
        beta = np.zeros(rig.n_b)
        for i, v in comps.items():
            beta[i] = v
        row.append(np.clip(oracle.render(beta, np.radians(jaw_deg), cam), 0, 1))
    write_png(out / f"oracle_cam{c}.png", np.concatenate(row, axis=1))
print("poses:", ", ".join(p[0] for p in poses), "->", out)
