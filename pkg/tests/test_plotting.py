import xml.etree.ElementTree as ET

import pytest

from defrost.plotting import emit_profile_svg, profile_svg
from defrost.protocols import DefrostingProfile, ProfileEntry, optimal_depth

NS = {"svg": "http://www.w3.org/2000/svg"}


def _parse(text):
    return ET.fromstring(text)


def test_single_point_profile(tmp_path):
    prof = DefrostingProfile.from_means([(2, 0.6)])
    path = emit_profile_svg(prof, tmp_path / "p.svg")
    root = ET.parse(path).getroot()
    assert len(root.findall(".//svg:circle", NS)) == 1
    assert root.find(".//svg:polygon[@id='optimum']", NS).get("data-cut") == "2"


def test_optimum_marker_matches_optimal_depth():
    prof = DefrostingProfile([ProfileEntry(k, a, 0.02, 3) for k, a in enumerate([0.4, 0.7, 0.7, 0.5])])
    root = _parse(profile_svg(prof, title="demo"))
    star = root.find(".//svg:polygon[@id='optimum']", NS)
    assert int(star.get("data-cut")) == optimal_depth(prof) == 2
    circle = next(c for c in root.findall(".//svg:circle", NS) if c.get("data-cut") == "2")
    assert float(star.get("data-x")) == pytest.approx(float(circle.get("cx")))
    assert star.get("fill") == "red"
    assert len(root.findall(".//svg:line[@class='whisker']", NS)) == 4


def test_empty_profile_rejected():
    with pytest.raises(ValueError):
        profile_svg(DefrostingProfile([]))
