"""Tests for the standalone SVG chart emitter."""

import math
import xml.etree.ElementTree as ET

import pytest

from rapida.plots import (
    HEIGHT,
    MARGIN_B,
    MARGIN_L,
    MARGIN_R,
    MARGIN_T,
    WIDTH,
    _Frame,
    line_chart,
    scatter_chart,
)

SVG_NS = "{http://www.w3.org/2000/svg}"


def parse(svg):
    return ET.fromstring(svg)


def test_line_chart_is_valid_xml_with_one_polyline_per_series():
    svg = line_chart([("a", [0, 1, 2], [0.0, 1.0, 0.5]),
                      ("b", [0, 1, 2], [1.0, 0.0, 0.25])],
                     "title", "x", "y")
    root = parse(svg)
    assert root.tag == f"{SVG_NS}svg"
    polys = root.findall(f"{SVG_NS}polyline")
    assert len(polys) == 2
    texts = [t.text for t in root.findall(f"{SVG_NS}text")]
    assert "title" in texts and "a" in texts and "b" in texts


def test_line_chart_skips_non_finite_points():
    svg = line_chart([("a", [0, 1, 2, 3], [0.0, math.nan, 1.0, 2.0])],
                     "t", "x", "y")
    poly = parse(svg).find(f"{SVG_NS}polyline")
    assert len(poly.get("points").split()) == 3


def test_line_chart_escapes_markup_in_labels():
    svg = line_chart([("<evil>", [0, 1], [0, 1])], 'a < b & "c"', "x", "y")
    parse(svg)  # would raise on unescaped markup
    assert "<evil>" not in svg and "&lt;evil&gt;" in svg


def test_line_chart_rejects_bad_input():
    with pytest.raises(ValueError):
        line_chart([], "t", "x", "y")
    with pytest.raises(ValueError):
        line_chart([("a", [0, 1], [0.0])], "t", "x", "y")
    with pytest.raises(ValueError):
        line_chart([("a", [0, 1], [math.nan, math.nan])], "t", "x", "y")


def test_scatter_chart_one_circle_per_point():
    svg = scatter_chart([1.0, 2.0, 3.0], [0.1, 0.2, 0.3], "t", "x", "y")
    circles = parse(svg).findall(f"{SVG_NS}circle")
    assert len(circles) == 3


def test_frame_maps_bounds_to_plot_rectangle():
    frame = _Frame(0.0, 10.0, -1.0, 1.0)
    assert frame.x(0.0) == MARGIN_L
    assert frame.x(10.0) == WIDTH - MARGIN_R
    assert frame.y(-1.0) == HEIGHT - MARGIN_B
    assert frame.y(1.0) == MARGIN_T
    assert frame.y(0.0) == (MARGIN_T + HEIGHT - MARGIN_B) / 2


def test_constant_series_still_plots():
    svg = line_chart([("a", [0, 1, 2], [0.5, 0.5, 0.5])], "t", "x", "y")
    poly = parse(svg).find(f"{SVG_NS}polyline")
    ys = {p.split(",")[1] for p in poly.get("points").split()}
    assert len(ys) == 1  # flat line at mid-frame
