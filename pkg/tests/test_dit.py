import copy

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from v2v.bundle import ConditioningBundle
from v2v.dit import (DitConfig, DitTrainer, MicroDiT, collate, combine_guidance, denoising_loss, dit_grad_check,
                     grad_check, image_to_latent, latent_to_image, sample)
from v2v.errors import ConditioningError, NumericFailureError
from v2v.pipeline import fit_length
from v2v.probe import dump_records, load_records
from v2v.raster import new_canvas

MODEL = MicroDiT()


def bundle(seed=0, n_img=6, n_rea=4, dim=64):
    rng = np.random.default_rng(seed)
    k = n_img + n_rea
    return ConditioningBundle(rng.normal(size=(k, dim)), "full-final", 4, ["image"] * n_img + ["reasoning"] * n_rea,
                              list(range(k)), n_img, n_rea)


def null_bundle(model):
    return ConditioningBundle(model.null_cond.detach().double().numpy()[None], "null", 0, ["image"], [0], 1, 0)


@given(st.floats(-1e3, 1e3, allow_nan=False), st.floats(-1e3, 1e3, allow_nan=False))
def test_guidance_identities_are_bitwise(u, c):
    ut, ct = torch.tensor([u]), torch.tensor([c])
    assert torch.equal(combine_guidance(ut, ct, 0.0), ut)
    assert torch.equal(combine_guidance(ut, ct, 1.0), ct)


def test_s0_equals_null_conditioning():
    a = sample(MODEL, bundle(), steps=4, guidance=0.0)
    b = sample(MODEL, null_bundle(MODEL), steps=4, guidance=1.0)
    assert np.array_equal(a.latent, b.latent)


def test_s1_equals_pure_conditional():
    b = bundle(1)
    got = sample(MODEL, b, steps=3, guidance=1.0, seed=5)
    # manual Euler with the conditional prediction only
    c = MODEL.config
    g = torch.Generator().manual_seed(5)
    x = torch.randn((1, 64, 4), generator=g, dtype=torch.float64).float()
    ts = torch.linspace(1.0, 0.0, 4, dtype=torch.float64)
    cond = torch.as_tensor(b.rows, dtype=torch.float32)[None]
    with torch.no_grad():
        for i in range(3):
            x = x + (ts[i + 1] - ts[i]).float() * MODEL(x, ts[i].float().expand(1), cond)
    assert np.array_equal(got.latent, x[0].double().numpy().reshape(c.grid_h, c.grid_w, c.channels))


def test_sampling_is_deterministic():
    a = sample(MODEL, bundle(2), steps=5, return_trajectory=True)
    b = sample(MODEL, bundle(2), steps=5, return_trajectory=True)
    assert len(a.trajectory) == 6
    assert all(np.array_equal(x, y) for x, y in zip(a.trajectory, b.trajectory))
    assert a.image == b.image and (a.image.width, a.image.height) == (64, 64)
    assert not np.array_equal(a.latent, sample(MODEL, bundle(2), steps=5, seed=7).latent)


def test_nan_reports_step():
    m = copy.deepcopy(MODEL)
    with torch.no_grad():
        m.out_proj.bias.fill_(float("nan"))
    with pytest.raises(NumericFailureError, match="step 0"):
        sample(m, bundle(), steps=3)


def test_empty_or_mismatched_bundle():
    empty = ConditioningBundle(np.zeros((0, 64)), "full-final", 4, [], [], 0, 0)
    with pytest.raises(ConditioningError):
        sample(MODEL, empty, steps=2)
    with pytest.raises(ConditioningError):
        sample(MODEL, bundle(dim=32), steps=2)


def test_config_invariants():
    with pytest.raises(ValueError):
        DitConfig(steps=0)
    with pytest.raises(ValueError):
        DitConfig(guidance=-0.5)
    assert (DitConfig().steps, DitConfig().guidance, DitConfig().seed) == (30, 4.0, 42)


def test_pad_rows_are_transparent():
    b = bundle(3)
    padded = fit_length(b, 20)
    a = sample(MODEL, b, steps=4).latent
    p = sample(MODEL, padded, steps=4).latent
    np.testing.assert_allclose(a, p, rtol=0, atol=1e-5)


def test_attention_hook_records_conditional_branch():
    m = copy.deepcopy(MODEL)
    rec = m.attention_hook([0, 1])
    assert m.attention_hook([1, 0]) is rec
    b = bundle(4)
    sample(m, b, steps=3, guidance=4.0)
    c = m.config
    assert len(rec.records) == 3 * 2 * c.heads
    for r in rec.records:
        assert r.matrix.shape == (64, len(b))
        np.testing.assert_allclose(r.matrix.sum(axis=1), 1.0, atol=1e-6)
        assert r.labels == b.sources
    assert sorted({r.step for r in rec.records}) == [0, 1, 2]
    rec.clear()
    other = m.attention_hook([1])
    sample(m, b, steps=2)
    assert len(rec.records) == 2 * 2 * c.heads and len(other.records) == 2 * c.heads
    with pytest.raises(IndexError):
        m.attention_hook([5])


def test_attention_dump_roundtrip(tmp_path):
    m = copy.deepcopy(MODEL)
    rec = m.attention_hook()
    sample(m, bundle(5), steps=2)
    path, meta = dump_records(rec.records, tmp_path / "att.v2vt")
    back = load_records(path)
    assert len(back) == len(rec.records)
    for a, b in zip(rec.records, back):
        assert (a.step, a.block, a.head, a.labels) == (b.step, b.block, b.head, b.labels)
        np.testing.assert_allclose(a.matrix, b.matrix, atol=1e-7)


def test_latent_codec_roundtrip():
    img = new_canvas(64, 64, (200, 40, 90))
    z = image_to_latent(img)
    assert z.shape == (8, 8, 4)
    assert latent_to_image(z) == img


def _batch(seed=0, n=2):
    g = torch.Generator().manual_seed(seed)
    cond, mask = collate([bundle(seed + i) for i in range(n)])
    x0 = torch.randn((n, 64, 4), generator=g)
    noise = torch.randn((n, 64, 4), generator=g)
    t = torch.rand((n,), generator=g)
    return cond, mask, x0, noise, t


def test_zero_lr_leaves_parameters_bitwise():
    m = copy.deepcopy(MODEL)
    before = {n: p.detach().clone() for n, p in m.named_parameters()}
    tr = DitTrainer(m, lr=0.0)
    cond, mask, x0, _, _ = _batch()
    loss = tr.train_step_tensors(cond, mask, x0, lr=0.0)
    assert np.isfinite(loss)
    assert all(torch.equal(before[n], p) for n, p in m.named_parameters())


def test_train_step_returns_pre_step_loss_and_updates():
    m = copy.deepcopy(MODEL)
    tr = DitTrainer(m, lr=1e-3, seed=3)
    cond, mask, x0, _, _ = _batch()
    before = copy.deepcopy(m)
    loss = tr.train_step_tensors(cond, mask, x0)
    # replay the trainer's draws against the untouched copy
    g = torch.Generator().manual_seed(3)
    noise = torch.randn(x0.shape, generator=g)
    t = torch.rand((2,), generator=g)
    drop = torch.rand((2,), generator=g) < 0.1
    with torch.no_grad():
        expected = denoising_loss(before, cond, mask, x0, noise, t, drop).item()
    assert loss == pytest.approx(expected, rel=1e-6)
    assert any(not torch.equal(a, b) for a, b in zip(before.parameters(), m.parameters()))


def test_train_step_rejects_empty_and_nan():
    tr = DitTrainer(copy.deepcopy(MODEL))
    with pytest.raises(ValueError):
        tr.train_step([])
    cond, mask, x0, _, _ = _batch()
    with pytest.raises(NumericFailureError):
        tr.train_step_tensors(cond, mask, x0 * float("nan"))


def test_train_step_from_images():
    tr = DitTrainer(copy.deepcopy(MODEL), seed=1)
    loss = tr.train_step([(bundle(0), new_canvas(64, 64, (255, 0, 0))), (bundle(1), new_canvas(64, 64, (0, 0, 255)))])
    assert np.isfinite(loss) and loss > 0


def test_duplicate_example_has_single_example_gradient():
    m = copy.deepcopy(MODEL).double()
    cond, mask, x0, noise, t = (a.double() if a.is_floating_point() else a for a in _batch(n=1))

    def grads(rep):
        m.zero_grad()
        denoising_loss(m, cond.repeat(rep, 1, 1), mask.repeat(rep, 1), x0.repeat(rep, 1, 1),
                       noise.repeat(rep, 1, 1), t.repeat(rep)).backward()
        return [torch.zeros_like(p) if p.grad is None else p.grad.clone() for p in m.parameters()]

    for a, b in zip(grads(1), grads(2)):
        torch.testing.assert_close(a, b, rtol=1e-10, atol=1e-12)


def test_grad_check_linear_layer():
    torch.manual_seed(0)
    w = torch.randn(3, 5, dtype=torch.float64, requires_grad=True)
    b = torch.randn(3, dtype=torch.float64, requires_grad=True)
    x = torch.randn(2, 5, dtype=torch.float64)
    y = torch.randn(2, 3, dtype=torch.float64)
    errs = grad_check(lambda: ((x @ w.T + b - y) ** 2).mean(), {"w": w, "b": b}, max_coords=None)
    assert max(errs.values()) < 1e-4


def test_grad_check_attention_block():
    from v2v.dit import DitBlock
    torch.manual_seed(1)
    blk = DitBlock(16, 4).double()
    x = torch.randn(2, 5, 16, dtype=torch.float64)
    c = torch.randn(2, 3, 16, dtype=torch.float64)
    mask = torch.tensor([[False, False, True], [False, False, False]])
    errs = grad_check(lambda: blk(x, c, mask).pow(2).mean(), dict(blk.named_parameters()), max_coords=None)
    assert max(errs.values()) < 1e-4


def test_zero_weight_bias_gradient_closed_form():
    m = copy.deepcopy(MODEL).double()
    with torch.no_grad():
        for p in m.parameters():
            p.zero_()
        m.out_proj.bias.copy_(torch.tensor([0.5, -1.0, 2.0, 0.25], dtype=torch.float64))
    x0 = torch.zeros(2, 64, 4, dtype=torch.float64)
    cond, mask = collate([bundle(0), bundle(1)], dtype=torch.float64)
    loss = denoising_loss(m, cond, mask, x0, x0.clone(), torch.full((2,), 0.5, dtype=torch.float64))
    (g,) = torch.autograd.grad(loss, [m.out_proj.bias])
    torch.testing.assert_close(g, 2 * m.out_proj.bias.detach() / 4)


def test_dit_grad_check_all_groups():
    cond, mask, x0, noise, t = _batch(n=2)
    errs = dit_grad_check(MODEL, cond, mask, x0, noise, t, drop=torch.tensor([False, True]), max_coords=4)
    assert set(errs) == {n for n, _ in MODEL.named_parameters()}
    assert max(errs.values()) < 1e-4


def test_checkpoint_roundtrip(tmp_path):
    MODEL.save(tmp_path / "dit.v2vt")
    back = MicroDiT.load(tmp_path / "dit.v2vt")
    assert back.config == MODEL.config
    assert np.array_equal(sample(back, bundle(), steps=2).latent, sample(MODEL, bundle(), steps=2).latent)
