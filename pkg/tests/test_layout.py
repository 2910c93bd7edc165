from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipcir.errors import ArgumentError, LayoutParseError, LayoutValidationError
from ipcir.layout import (
    LayoutInstance,
    Modality,
    ProxyLayout,
    build_prompt,
    duplicate_image_instances,
    parse_layout,
    scan_layout,
    serialize_layout,
    validate_layout,
)


class TestPrompt:
    def test_template_fill(self):
        assert (
            build_prompt(["a dog on grass"], "add a red hat")
            == "Given an image of a dog on grass, we show add a red hat"
        )

    def test_minimal_fill(self):
        assert build_prompt(["x"], "y") == "Given an image of x, we show y"

    def test_multi_caption_join(self):
        # golden string: captions joined by '; ' before templating
        assert (
            build_prompt(["a dog", "a brown dog outdoors"], "make it golden")
            == "Given an image of a dog; a brown dog outdoors, we show make it golden"
        )

    def test_empty_inputs_rejected(self):
        with pytest.raises(ArgumentError):
            build_prompt([], "rule")
        with pytest.raises(ArgumentError):
            build_prompt(["caption"], "")
        with pytest.raises(ArgumentError):
            build_prompt(["caption", ""], "rule")


def _layout_doc(instances):
    return json.dumps({"scene": "a park", "instances": instances})


def _inst(bbox, modality="text", desc="a dog"):
    return {"desc": desc, "bbox": bbox, "modality": modality}


class TestParse:
    def test_valid_roundtrip(self):
        layout = ProxyLayout(
            scene="a beach at sunset",
            instances=(
                LayoutInstance("a surfer", (0.1, 0.2, 0.5, 0.9), Modality.IMAGE),
                LayoutInstance("a red kite", (0.4, 0.05, 0.8, 0.35), Modality.TEXT),
            ),
        )
        assert parse_layout(serialize_layout(layout)) == layout

    def test_parse_error_carries_byte_offset(self):
        with pytest.raises(LayoutParseError) as err:
            parse_layout('{"scene": "x", "instances": [}')
        assert err.value.offset is not None

    def test_clamps_slight_overshoot(self):
        layout = parse_layout(_layout_doc([_inst([-0.01, 0.0, 0.5, 1.02])]))
        assert layout.instances[0].bbox == (0.0, 0.0, 0.5, 1.0)

    def test_large_overshoot_rejected(self):
        with pytest.raises(LayoutValidationError):
            parse_layout(_layout_doc([_inst([-0.5, 0.0, 0.5, 1.0])]))

    def test_all_violations_listed(self):
        doc = _layout_doc(
            [
                _inst([0.8, 0.2, 0.2, 0.9]),          # inverted x
                _inst([0.1, 0.1, 0.9, 0.9], desc=""),  # empty description
                _inst([0.1, 0.1, 0.9, 0.9], modality="hologram"),
            ]
        )
        with pytest.raises(LayoutValidationError) as err:
            parse_layout(doc)
        rules = {(v.instance, v.rule) for v in err.value.violations}
        assert rules == {(0, "x_order"), (1, "desc_nonempty"), (2, "modality")}

    def test_pixel_boxes_rejected_not_converted(self):
        _, violations = scan_layout(_layout_doc([_inst([10, 20, 300, 400])]))
        assert any(v.rule == "bbox_range" for v in violations)


class TestValidate:
    def test_well_formed_box(self):
        layout = ProxyLayout(
            "room", (LayoutInstance("chair", (0.2, 0.2, 0.8, 0.9), Modality.TEXT),)
        )
        assert validate_layout(layout) == []

    def test_inverted_box(self):
        layout = ProxyLayout(
            "room", (LayoutInstance("chair", (0.8, 0.2, 0.2, 0.9), Modality.TEXT),)
        )
        rules = [v.rule for v in validate_layout(layout)]
        assert rules == ["x_order"]

    def test_no_instances(self):
        assert [v.rule for v in validate_layout(ProxyLayout("room", ()))] == [
            "instances_nonempty"
        ]

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_empty_iff_invariants_hold(self, seed):
        import numpy as np

        rng = np.random.default_rng(seed)
        mutate = rng.random() < 0.5
        x1, y1 = rng.uniform(0.0, 0.6, size=2)
        x2, y2 = x1 + rng.uniform(0.05, 0.4), y1 + rng.uniform(0.05, 0.4)
        bbox = [float(x1), float(y1), float(min(x2, 1.0)), float(min(y2, 1.0))]
        desc, scene = "thing", "scene"
        if mutate:
            fault = rng.integers(0, 3)
            if fault == 0:
                bbox[0], bbox[2] = bbox[2], bbox[0]
            elif fault == 1:
                desc = ""
            else:
                bbox[1] = 1.5
        layout = ProxyLayout(
            scene, (LayoutInstance(desc, tuple(bbox), Modality.IMAGE),)
        )
        violations = validate_layout(layout)
        if mutate:
            assert violations
        else:
            assert violations == []


class TestDuplication:
    def test_one_image_one_text(self):
        layout = ProxyLayout(
            "yard",
            (
                LayoutInstance("grass", (0.0, 0.5, 1.0, 1.0), Modality.TEXT),
                LayoutInstance("the dog", (0.2, 0.1, 0.7, 0.8), Modality.IMAGE),
            ),
        )
        out = duplicate_image_instances(layout)
        assert len(out.instances) == 3
        twin = out.instances[2]
        assert twin.modality is Modality.IMAGE_AND_TEXT
        assert twin.bbox == layout.instances[1].bbox
        assert twin.desc == layout.instances[1].desc

    def test_no_image_instances_identity(self):
        layout = ProxyLayout(
            "yard", (LayoutInstance("grass", (0.0, 0.0, 1.0, 1.0), Modality.TEXT),)
        )
        assert duplicate_image_instances(layout) == layout

    def test_three_image_instances(self, rng):
        instances = tuple(
            LayoutInstance(f"obj{i}", (0.1 * i, 0.1, 0.1 * i + 0.2, 0.5), Modality.IMAGE)
            for i in range(3)
        )
        out = duplicate_image_instances(ProxyLayout("shelf", instances))
        assert len(out.instances) == 6
        by_bbox = {}
        for inst in out.instances:
            by_bbox.setdefault(inst.bbox, []).append(inst.modality)
        for modalities in by_bbox.values():
            assert sorted(m.value for m in modalities) == ["image", "image_and_text"]

    def test_not_idempotent_counts(self):
        layout = ProxyLayout(
            "yard",
            (
                LayoutInstance("grass", (0.0, 0.5, 1.0, 1.0), Modality.TEXT),
                LayoutInstance("the dog", (0.2, 0.1, 0.7, 0.8), Modality.IMAGE),
            ),
        )
        once = duplicate_image_instances(layout)
        twice = duplicate_image_instances(once)
        assert (len(layout.instances), len(once.instances), len(twice.instances)) == (2, 3, 4)

    @given(st.lists(st.sampled_from(list(Modality)), min_size=1, max_size=8))
    @settings(max_examples=60, deadline=None)
    def test_count_formula(self, modalities):
        instances = tuple(
            LayoutInstance(f"i{j}", (0.1, 0.1, 0.9, 0.9), m)
            for j, m in enumerate(modalities)
        )
        out = duplicate_image_instances(ProxyLayout("s", instances))
        n_image = sum(1 for m in modalities if m is Modality.IMAGE)
        assert len(out.instances) == len(instances) + n_image
