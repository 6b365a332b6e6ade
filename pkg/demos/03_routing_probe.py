"""Routing share under uniform attention equals the token-count baseline,
and a probe on a live (untrained) generator reports per-head shares."""
import numpy as np

from v2v.dit import DitConfig, MicroDiT, sample
from v2v.pipeline import PipelineConfig, build_bundle
from v2v.probe import AttentionRecord, routing_shares
from v2v.raster import new_canvas
from v2v.vlm import MicroVLM

if __name__ == "__main__":
    labels = ["image"] * 266 + ["reasoning"] * 200
    uniform = routing_shares([AttentionRecord(0, 0, 0, np.full((64, 466), 1 / 466), labels)])
    print(uniform.to_table(), "\n")

    dit = MicroDiT(DitConfig(steps=5))
    bundle = build_bundle(new_canvas(64, 64, (10, 120, 200)), PipelineConfig(tokens=8), MicroVLM())[0]
    rec = dit.attention_hook()
    sample(dit, bundle, steps=5, guidance=4.0)
    print(routing_shares(rec.records).to_table())
