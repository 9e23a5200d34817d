from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from masktrack import (
    AdvancedParams,
    FormatError,
    Frame,
    InstanceLabel,
    Polygon,
    next_label,
    parse_label,
)


class TestNextLabel:
    def test_first_of_class_is_zero(self):
        assert next_label("mouse", set()) == InstanceLabel("mouse", 0)

    def test_successor_of_dense_range(self):
        existing = {InstanceLabel("ant", i) for i in range(14)}
        assert next_label("ant", existing) == InstanceLabel("ant", 14)

    def test_fills_smallest_gap(self):
        # brute force oracle: smallest unused ordinal of {0, 2} is 1
        existing = {InstanceLabel("fly", 0), InstanceLabel("fly", 2)}
        assert next_label("fly", existing) == InstanceLabel("fly", 1)

    def test_other_classes_do_not_interfere(self):
        existing = {InstanceLabel("ant", 0), InstanceLabel("ant", 1)}
        assert next_label("mouse", existing) == InstanceLabel("mouse", 0)

    def test_empty_class_name_rejected(self):
        with pytest.raises(ValueError):
            next_label("", set())

    def test_repeated_next_label_yields_dense_ordinals(self):
        labels: set[InstanceLabel] = set()
        for _ in range(8):
            labels.add(next_label("fish", labels))
        assert {lab.ordinal for lab in labels} == set(range(8))


class TestParseLabel:
    def test_suffix_form(self):
        lab = parse_label("fly_13")
        assert (lab.class_name, lab.ordinal) == ("fly", 13)

    def test_zero_ordinal(self):
        assert parse_label("mouse_0") == InstanceLabel("mouse", 0)

    def test_bare_name(self):
        lab = parse_label("teaball")
        assert (lab.class_name, lab.ordinal) == ("teaball", None)

    def test_only_final_suffix_is_ordinal(self):
        lab = parse_label("cam_2_7")
        assert (lab.class_name, lab.ordinal) == ("cam_2", 7)

    def test_empty_string_rejected(self):
        with pytest.raises(FormatError):
            parse_label("")

    @given(
        st.text(alphabet=st.characters(blacklist_characters="_", min_codepoint=97, max_codepoint=122), min_size=1),
        st.integers(min_value=0, max_value=10_000),
    )
    def test_roundtrip_identity(self, name, ordinal):
        lab = InstanceLabel(name, ordinal)
        assert parse_label(str(lab)) == lab


class TestFrame:
    def test_pixel_shape_enforced(self):
        with pytest.raises(ValueError):
            Frame(0, np.zeros((4, 4), dtype=np.uint8))

    def test_fps_fraction_carried(self):
        frame = Frame(0, np.zeros((4, 4, 3), dtype=np.uint8), fps=Fraction(125, 3))
        assert frame.fps == Fraction(125, 3)
        assert (frame.width, frame.height) == (4, 4)


class TestPolygon:
    def test_requires_three_vertices(self):
        with pytest.raises(ValueError):
            Polygon(np.array([[0, 0], [1, 1]]))

    def test_vertices_coerced_to_float(self):
        poly = Polygon(np.array([[0, 0], [4, 0], [4, 4]]))
        assert poly.vertices.dtype == np.float64
        assert len(poly) == 3


class TestAdvancedParams:
    def test_paper_defaults(self):
        p = AdvancedParams()
        assert p.epsilon == 2.0
        assert p.mem_every == 1
        assert p.t_max == 5
        assert p.auto_pause is True

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"epsilon": 0.0},
            {"mem_every": 0},
            {"t_max": 0},
            {"conf_threshold": 0.0},
            {"conf_threshold": 1.0},
            {"search_radius": 0},
        ],
    )
    def test_invalid_values_rejected(self, kwargs):
        with pytest.raises(ValueError):
            AdvancedParams(**kwargs)

    def test_dict_roundtrip(self):
        p = AdvancedParams(mem_every=3, epsilon=4.0)
        assert AdvancedParams.from_dict(p.to_dict()) == p

    def test_unknown_keys_rejected(self):
        with pytest.raises(FormatError):
            AdvancedParams.from_dict({"bogus": 1})
