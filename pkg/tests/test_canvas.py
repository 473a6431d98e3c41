import numpy as np
import pytest

from diptych.canvas import (
    BLANK_FILL,
    FULL_RIGHT,
    DiptychCanvas,
    PromptKind,
    build_canvas,
    build_canvas_editing,
    build_mask,
    render_prompt,
)
from diptych.errors import RegionError, ShapeError, TemplateError
from diptych.numerics import SeededRng

# golden template instantiations, kept as literal strings
GOLDEN_SUBJECT = (
    "A diptych with two side-by-side images of same cat. "
    "On the left, a photo of cat. "
    "On the right, replicate this cat exactly but as a photo of a cat in the jungle"
)
GOLDEN_GENERATION = (
    "A diptych with two side-by-side images of the same cat. "
    "On the left, a photo of a cat in front of Eiffel Tower. "
    "On the right, replicate this cat but as a photo of a cat in the jungle"
)
GOLDEN_STYLE = (
    "A diptych with two side-by-side images of same style. "
    "On the left, a watercolor painting of a house. "
    "On the right, replicate this style exactly but as a watercolor painting of a boat"
)


def ref_image(seed=0, h=16, w=16):
    return SeededRng(seed).uniform(h * w * 3).reshape(h, w, 3)


class TestCanvas:
    def test_left_is_reference(self):
        ref = ref_image()
        canvas = build_canvas(ref)
        assert np.array_equal(canvas.left, ref)

    def test_right_is_blank_fill(self):
        canvas = build_canvas(ref_image())
        assert np.all(canvas.right == BLANK_FILL)

    def test_dimensions(self):
        canvas = build_canvas(ref_image(h=32, w=32))
        assert canvas.compose().shape == (32, 64, 3)

    def test_roundtrip_split(self):
        ref = ref_image(1)
        target = ref_image(2)
        canvas = build_canvas_editing(ref, target)
        again = DiptychCanvas.from_composed(canvas.compose())
        assert np.array_equal(again.left, ref)
        assert np.array_equal(again.right, target)

    def test_editing_right_is_target(self):
        ref, target = ref_image(3), ref_image(4)
        canvas = build_canvas_editing(ref, target)
        assert np.array_equal(canvas.right, target)
        symmetric = build_canvas_editing(ref, ref)
        assert np.array_equal(symmetric.left, symmetric.right)

    def test_size_mismatch(self):
        with pytest.raises(ShapeError):
            build_canvas_editing(ref_image(h=16, w=16), ref_image(h=16, w=8))


class TestMask:
    def test_full_right(self):
        mask = build_mask(32, 32)
        assert mask.values.sum() == 1024
        assert np.all(mask.values[:, :32] == 0)
        assert np.all(mask.values[:, 32:] == 1)

    def test_rectangle_area(self):
        mask = build_mask(32, 32, (8, 40, 16, 48))
        assert mask.values.sum() == 64
        assert np.all(mask.values[8:16, 40:48] == 1)

    def test_zero_area_rejected(self):
        with pytest.raises(RegionError):
            build_mask(32, 32, (8, 40, 8, 48))

    def test_rectangle_crossing_seam_rejected(self):
        with pytest.raises(RegionError):
            build_mask(32, 32, (0, 16, 8, 40))

    def test_mask_never_overlaps_reference(self):
        mask = build_mask(32, 32, FULL_RIGHT)
        canvas = build_canvas(ref_image(h=32, w=32))
        overlap = mask.values[:, :32].sum()
        assert overlap == 0
        assert canvas.compose().shape[:2] == mask.values.shape


class TestTemplates:
    def test_subject_template_golden(self):
        prompt = render_prompt(PromptKind.SUBJECT, subject_name="cat",
                               target_text="a photo of a cat in the jungle")
        assert prompt.rendered == GOLDEN_SUBJECT

    def test_generation_template_golden(self):
        prompt = render_prompt(
            PromptKind.GENERATION, subject_name="cat",
            left_desc="a photo of a cat in front of Eiffel Tower",
            target_text="a photo of a cat in the jungle",
        )
        assert prompt.rendered == GOLDEN_GENERATION

    def test_style_template_golden(self):
        prompt = render_prompt(
            PromptKind.STYLE,
            left_desc="a watercolor painting of a house",
            target_text="a watercolor painting of a boat",
        )
        assert prompt.rendered == GOLDEN_STYLE

    def test_kinds_share_surroundings(self):
        subject = render_prompt(PromptKind.SUBJECT, subject_name="x", target_text="y")
        style = render_prompt(PromptKind.STYLE, left_desc="x", target_text="y")
        assert subject.rendered.startswith("A diptych with two side-by-side images of same ")
        assert style.rendered.startswith("A diptych with two side-by-side images of same ")

    def test_empty_placeholder_rejected(self):
        with pytest.raises(TemplateError):
            render_prompt(PromptKind.SUBJECT, subject_name="", target_text="y")
        with pytest.raises(TemplateError):
            render_prompt(PromptKind.GENERATION, subject_name="cat",
                          left_desc="", target_text="y")

    def test_string_kind_accepted(self):
        prompt = render_prompt("subject-inpaint", subject_name="dog", target_text="t")
        assert prompt.kind is PromptKind.SUBJECT
