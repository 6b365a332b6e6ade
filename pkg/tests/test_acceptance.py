"""Acceptance suite: one printed PASS/FAIL line per criterion, pinned tolerances."""
import time

import numpy as np
import pytest
import torch

import oracles
from v2v.bench import (ScoreRecord, aggregate, default_bench_spec, mini_bench, overall_mean, reference_tables,
                       score_sample)
from v2v.dit import DitConfig, MicroDiT, collate, dit_grad_check
from v2v.errors import CompletenessError, ScoreRangeError
from v2v.judge import score_samples
from v2v.pages import PageElement, PageSpec, render_page, render_page_with_layout, text_band
from v2v.pipeline import PipelineConfig, build_bundle, layer_sweep
from v2v.probe import VARIANTS, AttentionRecord, routing_shares, tokenmax_retrieval
from v2v.raster import RasterImage, encode_png
from v2v.toy import color_card, evaluate_colors, heldout_colors
from v2v.vlm import extract


def random_page(rng, w, h):
    return RasterImage(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))


def test_criterion_01_aggregation_fixture(acceptance_log):
    t0 = time.perf_counter()
    ref = reference_tables()
    img = overall_mean(ref["reference-image-model"]["final"])
    vid = overall_mean(ref["reference-video-model"]["final"])
    dt = time.perf_counter() - t0
    ok = abs(img - 32.68) <= 0.01 and abs(vid - 20.15) <= 0.01 and dt < 1.0
    acceptance_log(1, ok, f"aggregation fixtures {img:.4f} / {vid:.4f} (want 32.68 / 20.15 +-0.01) in {dt * 1e3:.1f} ms")
    assert ok


def test_criterion_02_routing_calibration(acceptance_log):
    labels = ["image"] * 266 + ["reasoning"] * 200
    uniform = routing_shares([AttentionRecord(0, 0, 0, np.full((64, 466), 1 / 466), labels)]).visual_share
    ok = abs(uniform - 266 / 466) <= 1e-6 and round(uniform, 4) == 0.5708
    rng = np.random.default_rng(0)
    worst = 0.0
    for i in range(100):
        nv, nr = int(rng.integers(1, 12)), int(rng.integers(1, 12))
        labs = list(rng.permutation(["image"] * nv + ["reasoning"] * nr + ["pad"] * int(rng.integers(0, 4))))
        mats = []
        for _ in range(int(rng.integers(1, 4))):
            q = int(rng.integers(1, 6))
            if i % 2:
                m = np.zeros((q, len(labs)))
                m[np.arange(q), rng.integers(0, len(labs), q)] = 1.0
                if not any(labs[j] != "pad" for j in np.flatnonzero(m.sum(0))):
                    m[0, labs.index("image")] = 1.0
            else:
                m = rng.dirichlet(np.ones(len(labs)), size=q)
            mats.append(m)
        recs = [AttentionRecord(s, 0, 0, m, labs) for s, m in enumerate(mats)]
        got = routing_shares(recs).visual_share
        want = oracles.routing_visual_share([m.tolist() for m in mats], [labs] * len(mats))
        worst = max(worst, abs(got - want))
    ok = ok and worst < 1e-12
    acceptance_log(2, ok, f"uniform 266+200 share {uniform:.7f} (want 266/466 +-1e-6, rounding to 0.5708); "
                          f"100 one-hot/random instances, max |share - oracle| {worst:.1e}")
    assert ok


def test_criterion_03_teacher_forcing(vlm, acceptance_log):
    rng = np.random.default_rng(3)
    final = vlm.config.layers
    worst = 0.0
    for _ in range(20):
        page = random_page(rng, 16 * int(rng.integers(1, 5)), 16 * int(rng.integers(1, 5)))
        template = "".join(rng.choice(list("abcxyz? "), size=int(rng.integers(0, 8))))
        n = int(rng.integers(1, 33))
        res = vlm.generate_reasoning(vlm.build_prefix(page, template), n, return_states=True)
        full = vlm.recompute_all_layers(res.sequence)[final].values
        inc = res.states[final]
        worst = max(worst, float(np.max(np.abs(full - inc)) / max(np.max(np.abs(full)), 1e-12)))
    ok = worst < 1e-5
    acceptance_log(3, ok, f"20 cases N<=32, final-layer max relative error {worst:.2e} (want < 1e-5)")
    assert ok


def test_criterion_04_conditioning_arithmetic(vlm, acceptance_log):
    rng = np.random.default_rng(4)
    ok = True
    for _ in range(6):
        page = random_page(rng, 16 * int(rng.integers(1, 6)), 16 * int(rng.integers(1, 6)))
        n = int(rng.integers(0, 40))
        bundle, _, seq = build_bundle(page, PipelineConfig(tokens=n), vlm)
        ok &= len(bundle) == seq.segments.length("image") + n
    bundle, _, seq = build_bundle(RasterImage(np.zeros((224, 304, 3), np.uint8)), PipelineConfig(tokens=200), vlm)
    n_img = seq.segments.length("image")
    ok &= n_img == 266 and len(bundle) == 466
    acceptance_log(4, ok, f"full-final length = image + N on 6 random pages; {n_img} image + 200 -> {len(bundle)}")
    assert ok


def test_criterion_05_gradient_check(vlm, acceptance_log):
    t0 = time.perf_counter()
    torch.manual_seed(0)
    model = MicroDiT(DitConfig(model_dim=32, cond_dim=64, heads=4, blocks=2))
    rng = np.random.default_rng(5)
    bundles = [build_bundle(random_page(rng, 32, 32), PipelineConfig(tokens=n), vlm)[0] for n in (3, 6)]
    cond, mask = collate(bundles, dtype=torch.float64)
    g = torch.Generator().manual_seed(5)
    x0 = torch.randn(2, 64, 4, generator=g, dtype=torch.float64)
    noise = torch.randn(2, 64, 4, generator=g, dtype=torch.float64)
    t = torch.tensor([0.3, 0.8], dtype=torch.float64)
    errs = dit_grad_check(model, cond, mask, x0, noise, t, drop=torch.tensor([False, True]), max_coords=8)
    dt = time.perf_counter() - t0
    worst_name = max(errs, key=errs.get)
    ok = set(errs) == {n for n, _ in model.named_parameters()} and errs[worst_name] < 1e-4 and dt < 120
    acceptance_log(5, ok, f"{len(errs)} parameter groups, max relative error {errs[worst_name]:.2e} "
                          f"({worst_name}) (want < 1e-4) in {dt:.1f} s")
    assert ok


def test_criterion_06_toy_color_binding(toy_result, acceptance_log):
    cfg = toy_result.config
    colors = heldout_colors(cfg)
    rec = toy_result.dit.attention_hook()
    matches = evaluate_colors(toy_result.dit, toy_result.vlm, colors, cfg)
    report = routing_shares(rec.records)
    rec.remove()
    hits = sum(m.distance <= 30 for m in matches)
    first, last = toy_result.trailing_means()
    ok = (hits >= 9 and cfg.train_steps <= 2000 and report.visual_share > report.baseline
          and toy_result.seconds < 600)
    acceptance_log(6, ok, f"{hits}/10 held-out colors within 30 (want >= 9) after {cfg.train_steps} steps "
                          f"in {toy_result.seconds:.0f} s, loss {first:.3f} -> {last:.3f}; image share "
                          f"{report.visual_share:.3f} vs baseline {report.baseline:.3f}")
    assert ok


def test_criterion_07_retrieval_oracle(acceptance_log):
    rng = np.random.default_rng(7)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(5, 11))
        items = [(rng.normal(size=(int(rng.integers(1, 5)), 6)), rng.normal(size=(int(rng.integers(1, 5)), 6)))
                 for _ in range(n)]
        for variant in VARIANTS:
            got = tokenmax_retrieval(items, (1, 3), variant)
            ref = oracles.retrieval([(a.tolist(), b.tolist()) for a, b in items], variant)
            mismatches += got.ranks != ref["ranks"] or got.recall != ref["recall"] \
                or abs(got.mrr - ref["mrr"]) > 1e-12
    eye = np.eye(16)
    ident = [(eye[2 * i:2 * i + 2], eye[2 * i:2 * i + 2]) for i in range(8)]
    id_ok = all(r.recall[1] == 1.0 and r.mrr == 1.0
                for r in (tokenmax_retrieval(ident, (1,), v) for v in VARIANTS))
    ok = mismatches == 0 and id_ok
    acceptance_log(7, ok, f"100 instances x {len(VARIANTS)} variants, {mismatches} rank-level mismatches vs "
                          f"oracle; identity R@1 = MRR = 1.0: {id_ok}")
    assert ok


def test_criterion_08_rendering_invariants(acceptance_log):
    rgb = (37, 201, 90)
    spec = PageSpec("inline-color-prompt", [PageElement.text("a"), PageElement.swatch(rgb), PageElement.text("car")])
    img, layout = render_page_with_layout(spec)
    box = next(b for b in layout.boxes if b.kind == "color-swatch")
    swatch_ok = (box.w, box.h) == (28, 28) and bool(np.all(img.pixels[box.y:box.y + 28, box.x:box.x + 28] == rgb))
    count_ok = True
    for n in (1, 3, 7, 12):
        page = render_page(PageSpec("counting-display", [PageElement.repeat("O", n)]))
        count_ok &= oracles.bfs_components(np.any(page.pixels != 255, axis=2).tolist()) == n
    band_ok = True
    for h in (160, 224, 448):
        tspec = PageSpec("rendered-text-page", [PageElement.text("SALE")], 448, h)
        top, band = text_band(tspec)
        ink = np.argwhere(np.any(render_page(tspec).pixels != 255, axis=2))
        band_ok &= band == round(0.2 * h) and ink[:, 0].min() >= top and ink[:, 0].max() < top + band
    det_ok = all(encode_png(render_page(s)) == encode_png(render_page(s))
                 for s in (spec, PageSpec("counting-display", [PageElement.repeat("O", 5)])))
    ok = swatch_ok and count_ok and band_ok and det_ok
    acceptance_log(8, ok, f"28x28 swatch exact: {swatch_ok}; flood-fill counts: {count_ok}; "
                          f"text band round(0.2H): {band_ok}; byte-deterministic: {det_ok}")
    assert ok


def test_criterion_09_protocol_invariants(acceptance_log):
    bottleneck = all(ScoreRecord("p", "inline-color", 0, q, a).final == min(q, a) * 10 == score_sample(q, a)
                     for q in range(1, 11) for a in range(1, 11))
    try:
        score_sample(0, 5)
        range_ok = False
    except ScoreRangeError:
        range_ok = True
    spec = default_bench_spec()
    recs = [ScoreRecord(p.id, p.category, k, 5, 5) for p in spec.prompts for k in range(4)]
    try:
        aggregate(recs[:-1], spec)
        refuses = False
    except CompletenessError:
        refuses = True
    mini = mini_bench()
    items = [(p, k, render_page(p.page)) for p in mini.prompts for k in range(4)]
    a, b = score_samples(items, "stub"), score_samples(items, "stub")
    rep = aggregate(a, mini)
    mini_ok = a == b and len(a) == 28 and len(mini.prompts) == 7
    ok = bottleneck and range_ok and refuses and mini_ok
    acceptance_log(9, ok, f"final = min(Q,A)x10 on all 100 pairs: {bottleneck}; incomplete run refused: {refuses}; "
                          f"7x4 stub mini-bench offline and deterministic: {mini_ok} (overall {rep.overall.final:.2f})")
    assert ok


def test_criterion_10_layer_sweep(toy_result, acceptance_log):
    cfg = toy_result.config
    pc = cfg.pipeline_config()
    page = color_card(tuple(int(v) for v in heldout_colors(cfg)[0]), cfg.page_size)
    top = toy_result.vlm.config.layers
    (_, last), (_, prev) = layer_sweep(page, pc, [top, top - 1], toy_result.vlm, toy_result.dit)
    ok = (last.layer, prev.layer) == (top, top - 1) and last.bundle_hash != prev.bundle_hash \
        and last.output_hash != prev.output_hash
    acceptance_log(10, ok, f"layers {{{top},{top - 1}}}: bundles differ {last.bundle_hash != prev.bundle_hash}, "
                           f"outputs differ {last.output_hash != prev.output_hash}")
    assert ok
