import numpy as np
import pytest

from diptych.adapter import ConditionAdapter
from diptych.attention import EnhancementConfig
from diptych.canvas import DiptychMask, PromptKind, build_canvas, build_canvas_editing, \
    build_mask, render_prompt
from diptych.errors import CompatibilityError, ShapeError
from diptych.inpainting import CONDITIONED, ZERO_SHOT, InpaintRequest, conditioned_inpaint, \
    zeroshot_inpaint
from diptych.numerics import SeededRng
from diptych.sampling import SamplerConfig

PANEL = 16


def make_request(tiny_model, seed=5, steps=6, region=None, strategy=ZERO_SHOT,
                 conditioning_scale=0.95, target=None):
    rng = SeededRng(seed + 1000)
    ref = rng.uniform(PANEL * PANEL * 3).reshape(PANEL, PANEL, 3)
    if target is None:
        canvas = build_canvas(ref)
    else:
        canvas = build_canvas_editing(ref, target)
    mask = build_mask(PANEL, PANEL) if region is None else build_mask(PANEL, PANEL, region)
    prompt = render_prompt(PromptKind.SUBJECT, subject_name="red solid circle",
                           target_text="a photo of a red solid circle on a sandy beach")
    sampler = SamplerConfig(steps=steps, seed=seed, conditioning_scale=conditioning_scale)
    return InpaintRequest(canvas, mask, prompt, sampler, strategy)


class TestZeroShot:
    def test_all_zero_mask_returns_input(self, tiny_model):
        req = make_request(tiny_model)
        zero_mask = DiptychMask(np.zeros((PANEL, 2 * PANEL)))
        req = InpaintRequest(req.canvas, zero_mask, req.prompt, req.sampler, ZERO_SHOT)
        out = zeroshot_inpaint(tiny_model, req, EnhancementConfig(1.3), SeededRng(5))
        assert np.array_equal(out.compose(), req.canvas.compose())

    def test_left_panel_pixel_exact(self, tiny_model):
        req = make_request(tiny_model)
        out = zeroshot_inpaint(tiny_model, req, EnhancementConfig(1.3), SeededRng(5))
        assert np.array_equal(out.left, req.canvas.left)
        assert not np.array_equal(out.right, req.canvas.right)

    def test_reproducible_per_seed(self, tiny_model):
        req = make_request(tiny_model)
        a = zeroshot_inpaint(tiny_model, req, EnhancementConfig(1.3), SeededRng(5))
        b = zeroshot_inpaint(tiny_model, req, EnhancementConfig(1.3), SeededRng(5))
        assert np.array_equal(a.compose(), b.compose())

    def test_rectangle_mask_preserves_outside(self, tiny_model):
        rng = SeededRng(77)
        target = rng.uniform(PANEL * PANEL * 3).reshape(PANEL, PANEL, 3)
        region = (4, PANEL + 4, 12, PANEL + 12)
        req = make_request(tiny_model, region=region, target=target)
        out = zeroshot_inpaint(tiny_model, req, EnhancementConfig(1.3), SeededRng(5))
        composed = out.compose()
        original = req.canvas.compose()
        outside = req.mask.values == 0.0
        assert np.array_equal(composed[outside], original[outside])
        inside = req.mask.values == 1.0
        assert not np.array_equal(composed[inside], original[inside])

    def test_unaligned_mask_rejected(self, tiny_model):
        values = np.zeros((PANEL, 2 * PANEL))
        values[3:9, PANEL + 2 : PANEL + 7] = 1.0  # not on the 4px grid
        req = make_request(tiny_model)
        bad = InpaintRequest(req.canvas, DiptychMask(values), req.prompt, req.sampler)
        with pytest.raises(ShapeError):
            zeroshot_inpaint(tiny_model, bad, None, SeededRng(5))

    def test_enhancement_continuous_in_factor(self, tiny_model):
        req = make_request(tiny_model)
        outs = []
        for factor in (1.0, 1.3, 2.0):
            out = zeroshot_inpaint(tiny_model, req, EnhancementConfig(factor), SeededRng(5))
            assert np.all(np.isfinite(out.compose()))
            outs.append(out.right)
        assert not np.array_equal(outs[0], outs[1])

    def test_reference_sensitivity(self, tiny_model):
        # changing the left panel changes the synthesized right panel
        req_a = make_request(tiny_model, seed=5)
        out_a = zeroshot_inpaint(tiny_model, req_a, EnhancementConfig(1.3), SeededRng(5))
        other_ref = SeededRng(31).uniform(PANEL * PANEL * 3).reshape(PANEL, PANEL, 3)
        req_b = InpaintRequest(build_canvas(other_ref), req_a.mask, req_a.prompt,
                               req_a.sampler, ZERO_SHOT)
        out_b = zeroshot_inpaint(tiny_model, req_b, EnhancementConfig(1.3), SeededRng(5))
        assert not np.array_equal(out_a.right, out_b.right)


class TestConditioned:
    def test_scale_zero_equals_zeroshot_bitwise(self, tiny_model, tiny_adapter):
        req = make_request(tiny_model, strategy=CONDITIONED, conditioning_scale=0.0)
        cond = conditioned_inpaint(tiny_model, tiny_adapter, req,
                                   EnhancementConfig(1.3), SeededRng(5))
        req_zs = InpaintRequest(req.canvas, req.mask, req.prompt, req.sampler, ZERO_SHOT)
        zs = zeroshot_inpaint(tiny_model, req_zs, EnhancementConfig(1.3), SeededRng(5))
        assert np.array_equal(cond.compose(), zs.compose())

    def test_nonzero_scale_changes_output(self, tiny_model, tiny_adapter):
        req = make_request(tiny_model, strategy=CONDITIONED, conditioning_scale=0.95)
        cond = conditioned_inpaint(tiny_model, tiny_adapter, req,
                                   EnhancementConfig(1.3), SeededRng(5))
        req_zs = InpaintRequest(req.canvas, req.mask, req.prompt, req.sampler, ZERO_SHOT)
        zs = zeroshot_inpaint(tiny_model, req_zs, EnhancementConfig(1.3), SeededRng(5))
        assert not np.array_equal(cond.right, zs.right)
        assert np.array_equal(cond.left, req.canvas.left)

    def test_adapter_mismatch_rejected(self, tiny_model, tiny_adapter):
        from diptych.model import DenoiserModel, ModelConfig

        other = DenoiserModel.initialize(
            ModelConfig(panel=16, patch=4, dim=16, depth=2, heads=2, text_len=24),
            SeededRng(99),
        )
        req = make_request(tiny_model, strategy=CONDITIONED)
        with pytest.raises(CompatibilityError):
            conditioned_inpaint(other, tiny_adapter, req, None, SeededRng(5))

    def test_known_region_exactness_random_requests(self, tiny_model, tiny_adapter):
        rng = SeededRng(123)
        for trial in range(4):
            region = None if trial % 2 == 0 else (4, PANEL + 8, 12, PANEL + 16)
            strategy = ZERO_SHOT if trial < 2 else CONDITIONED
            req = make_request(tiny_model, seed=trial, steps=4, region=region,
                               strategy=strategy)
            if strategy == CONDITIONED:
                out = conditioned_inpaint(tiny_model, tiny_adapter, req,
                                          EnhancementConfig(1.3), SeededRng(trial))
            else:
                out = zeroshot_inpaint(tiny_model, req, EnhancementConfig(1.3),
                                       SeededRng(trial))
            known = req.mask.values == 0.0
            assert np.array_equal(out.compose()[known], req.canvas.compose()[known])


class TestAdapterTraining:
    def test_adapter_holdout_drops(self, tiny_model, tiny_items):
        from diptych.adapter import AdapterTrainConfig, train_condition_adapter

        adapter, history = train_condition_adapter(
            tiny_model, tiny_items,
            AdapterTrainConfig(steps=200, batch_size=4, eval_every=100),
            SeededRng(8),
        )
        assert history.final_loss < history.initial_loss

    def test_adapter_checkpoint_roundtrip(self, tiny_adapter, tmp_path):
        path = tmp_path / "adapter.ckpt"
        tiny_adapter.save(path)
        again = ConditionAdapter.load(path)
        assert again.base_fingerprint == tiny_adapter.base_fingerprint
        for name in tiny_adapter.params:
            assert np.array_equal(again.params[name], tiny_adapter.params[name])
