import pytest

from nssim.errors import ConfigError
from nssim.plotting import Series, emit_plot


def test_single_series_single_polyline(tmp_path):
    path = emit_plot([Series("a", [0.0, 1.0], [1.0, 2.0])], tmp_path / "p.svg")
    text = path.read_text()
    assert text.count('id="series') == 1
    assert "a,1.0,2.0" in text


def test_plot_is_byte_deterministic(tmp_path):
    series = [Series("x", [0, 1, 2], [3, 1, 2]), Series("y", [0, 1, 2], [1, 1, 0], marker="o")]
    a = emit_plot(series, tmp_path / "a.svg", title="t", logy=False)
    b = emit_plot(series, tmp_path / "b.svg", title="t", logy=False)
    assert a.read_bytes() == b.read_bytes()


def test_bar_plot_embeds_categories(tmp_path):
    path = emit_plot([Series("ops", ["euler", "rk4"], [6, 24])], tmp_path / "bar.svg", kind="bar")
    assert "ops,euler,6.0" in path.read_text()


def test_empty_series_rejected(tmp_path):
    with pytest.raises(ConfigError):
        emit_plot([], tmp_path / "e.svg")
    with pytest.raises(ConfigError):
        emit_plot([Series("a", [], [])], tmp_path / "e.svg")
