"""Which residual terms carry the correction?

Runs the file-based pipeline on the reference scene under heavy drift and
solves once per term subset, printing the ablation table.

    python demos/term_ablation.py [out_dir]
"""

import sys
from pathlib import Path

from bimalign import pipeline
from bimalign.config import PipelineConfig

ws = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_ablation")
cfg = PipelineConfig.load(None, ["drift.target_ate_pos=1.391", "drift.target_ate_rot=9.99"])
cfg.ablation.rows = [["geometric"], ["floor"], ["wall"], ["column"],
                     ["geometric", "floor", "wall"],
                     ["geometric", "floor", "wall", "column", "ceiling"]]

for stage in (pipeline.stage_scene, pipeline.stage_sample, pipeline.stage_floorplan,
              pipeline.stage_simulate, pipeline.stage_drift, pipeline.stage_densify):
    stage(cfg, ws)
    print("done:", stage.__name__.removeprefix("stage_"))

pipeline.stage_ablate(cfg, ws)
print((ws / "ablation.csv").read_text())
