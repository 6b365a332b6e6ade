"""Walk one page through the frozen encoder and show what the generator receives.

The bundle is the image-position states followed by the reasoning-token
states; its length is always image tokens + N.
"""
import numpy as np

from v2v.pipeline import PipelineConfig, build_bundle, run_pipeline
from v2v.raster import new_canvas
from v2v.vlm import MicroVLM
from v2v.dit import DitConfig, MicroDiT

if __name__ == "__main__":
    vlm = MicroVLM()
    page = new_canvas(304, 224, (240, 240, 240))
    for mode in ("image-hs-only", "full-final"):
        bundle, prefix, seq = build_bundle(page, PipelineConfig(mode=mode, tokens=200), vlm)
        print(f"{mode:14s} image={seq.segments.length('image'):3d} rows={len(bundle):3d} "
              f"norm={np.linalg.norm(bundle.rows, axis=1).mean():.3f}")
    img, trace = run_pipeline(new_canvas(64, 64, (200, 30, 30)), PipelineConfig(tokens=16),
                              vlm, MicroDiT(DitConfig(steps=10)))
    print("untrained generator output", img.pixels.shape, "hash", trace.output_hash)
