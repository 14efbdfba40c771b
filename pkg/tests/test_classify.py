import numpy as np
import pytest

from dustscope.classify import (
    REPORT_FIELDS, Feature, GridMismatchError, MeasuredLandscape, Thresholds, classify_features,
    export_landscape, extract_ridges, ingest_landscape, landscape_from_theta, write_report,
)
from dustscope.drive import anharmonicity, predict_resonances
from dustscope.hybridization import LandscapeGrid

WS = np.round(np.linspace(7.5, 10.0, 501), 6)  # 5 MHz cells
YS = np.linspace(0.0, 1.0, 41)
CELL = WS[1] - WS[0]


def _ridge(centre, sigma=0.008, amp=0.8, ymask=None):
    """Gaussian ridge across frequency with centre(y) given per row."""
    w, y = np.meshgrid(WS, YS)
    c = centre(y)
    out = amp * np.exp(-0.5 * ((w - c) / sigma) ** 2)
    return out if ymask is None else np.where(ymask(y), out, 0.0)


def _horizontal(y0, wlo, whi, amp=0.8, sigma=0.012):
    w, y = np.meshgrid(WS, YS)
    return np.where((w >= wlo) & (w <= whi), amp * np.exp(-0.5 * ((y - y0) / sigma) ** 2), 0.0)


def _land(*parts, initial=1):
    return MeasuredLandscape(WS, YS, np.clip(np.maximum.reduce(parts), 0, 1), initial)


def _theta_grid(*ridges):
    """Synthetic simulated Theta map on the (omega, xi^2 = 2y) axes."""
    prob = np.maximum.reduce([np.zeros((len(YS), len(WS)))] + list(ridges))
    return LandscapeGrid(WS, 2 * YS, np.array([0.0]), prob[None], 1)


# --- ingest / export ---------------------------------------------------------------------------


def test_zeros_give_no_features(tmp_path):
    land = MeasuredLandscape(WS[:20], YS[:10], np.zeros((10, 20)))
    export_landscape(land, tmp_path / "z.csv")
    assert extract_ridges(ingest_landscape(tmp_path / "z.csv")) == []


def test_probability_out_of_range_names_row(tmp_path):
    (tmp_path / "bad.csv").write_text("omega_d_ghz,stark_norm,prob\n8.0,0.0,0.1\n8.1,0.0,1.2\n")
    with pytest.raises(ValueError, match="row 3"):
        ingest_landscape(tmp_path / "bad.csv")


def test_malformed_and_incomplete(tmp_path):
    (tmp_path / "a.csv").write_text("omega,stark,p\n8.0,0.0,0.1\n")
    with pytest.raises(ValueError, match="header"):
        ingest_landscape(tmp_path / "a.csv")
    (tmp_path / "b.csv").write_text("omega_d_ghz,stark_norm,prob\n8.0,0.0,x\n")
    with pytest.raises(ValueError, match="row 2"):
        ingest_landscape(tmp_path / "b.csv")
    (tmp_path / "c.csv").write_text("omega_d_ghz,stark_norm,prob\n8.0,0.0,0.1\n8.1,0.0,0.1\n8.0,0.1,0.1\n")
    with pytest.raises(ValueError, match="grid"):
        ingest_landscape(tmp_path / "c.csv")


def test_landscape_validation():
    with pytest.raises(ValueError):
        MeasuredLandscape(WS[:3], YS[:2], np.zeros((3, 2)))
    with pytest.raises(ValueError):
        MeasuredLandscape(WS[:3][::-1], YS[:2], np.zeros((2, 3)))
    with pytest.raises(ValueError):
        MeasuredLandscape(WS[:3], YS[:2], np.zeros((2, 3)), initial=2)


def test_export_ingest_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    land = MeasuredLandscape(WS[:30], YS[:12], rng.random((12, 30)), initial=0)
    export_landscape(land, tmp_path / "l.csv")
    back = ingest_landscape(tmp_path / "l.csv")
    assert np.array_equal(back.prob, land.prob)
    assert np.array_equal(back.omega_d, land.omega_d)
    assert np.array_equal(back.stark_norm, land.stark_norm)
    assert back.initial == 0 and back.mask is None


def test_mask_sidecar_honoured(tmp_path):
    land = _land(_ridge(lambda y: 8.0 - y / 4))
    assert len(extract_ridges(land)) == 1
    export_landscape(land, tmp_path / "m.csv", mask_rects=[(7.6, 8.2, 0.0, 1.0)])
    back = ingest_landscape(tmp_path / "m.csv")
    assert back.mask is not None and back.mask.any()
    assert extract_ridges(back) == []


# --- ridge extraction --------------------------------------------------------------------------


def test_flat_landscape_has_no_features():
    assert extract_ridges(MeasuredLandscape(WS, YS, np.full((len(YS), len(WS)), 0.5))) == []


def test_prominence_validated():
    with pytest.raises(ValueError):
        extract_ridges(_land(_ridge(lambda y: 8.0 + 0 * y)), prominence=1.0)


@pytest.mark.parametrize("w0,slope", [(8.0, -4.0), (9.2, 2.5), (8.6, -10.0)])
def test_straight_ridge_recovered(w0, slope):
    land = _land(_ridge(lambda y: w0 + y / slope))
    feats = extract_ridges(land)
    assert len(feats) == 1
    f = feats[0]
    assert f.orientation == "steep"
    assert abs(f.intercept_ghz - w0) < CELL
    # The fitted line stays within one cell of the truth at the top row.
    top = YS[-1]
    assert abs((f.intercept_ghz + top / f.slope) - (w0 + top / slope)) < CELL


def test_crossing_ridges_stay_separate():
    land = _land(_ridge(lambda y: 8.0 + 0.5 * y), _ridge(lambda y: 8.5 - 0.5 * y))
    feats = extract_ridges(land)
    assert len(feats) == 2
    for f, (w0, s) in zip(sorted(feats, key=lambda f: f.intercept_ghz), [(8.0, 2.0), (8.5, -2.0)]):
        rows = np.searchsorted(YS, f.points[:, 1])
        assert np.all(np.diff(rows) <= 3)  # continuous up to the allowed gap
        assert abs(f.intercept_ghz - w0) < CELL
        assert np.max(np.abs(f.points[:, 0] - (w0 + f.points[:, 1] / s))) < 2 * CELL
        assert np.ptp(f.points[:, 1]) > 0.9


def test_gapped_ridge_links_across_two_rows():
    mask = lambda y: ~((y > 0.4) & (y < 0.46))  # two rows missing
    feats = extract_ridges(_land(_ridge(lambda y: 8.3 - y / 5, ymask=mask)))
    assert len(feats) == 1


def test_horizontal_ridge_found():
    feats = extract_ridges(_land(_horizontal(0.1, 8.3, 9.3)))
    assert len(feats) == 1
    f = feats[0]
    assert f.orientation == "horizontal"
    assert f.stark_span < 0.02 and f.omega_span >= 0.9


# --- classification ----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def scene(measured_spectrum, registry):
    """Horizontal ridge, a simulated intrinsic ridge, and a registry-matched extrinsic ridge."""
    alpha = anharmonicity(measured_spectrum)
    line = [ln for ln in predict_resonances(measured_spectrum, registry, window=(9.6, 9.8),
                                            initial_levels=(1,), include_intrinsic=False)
            if (ln.l, ln.m, ln.n, ln.mode) == (1, 1, 2, "EM2")][0]
    intrinsic = lambda y: 8.042 - y / 3.0
    extrinsic = lambda y: line.omega_d0 + line.slope * alpha * y
    parts = [
        _horizontal(0.1, 8.3, 9.3),
        _ridge(intrinsic, ymask=lambda y: y <= 0.6),
        _ridge(extrinsic, ymask=lambda y: (y > 0) & (y <= 0.6)),
    ]
    theta = _theta_grid(_ridge(intrinsic, amp=0.5, sigma=0.01))
    return parts, theta, line


def _labels(feats):
    return {f.name: f.label for f in feats}


def test_three_mechanisms(scene, measured_spectrum, registry):
    parts, theta, line = scene
    feats = extract_ridges(_land(*parts))
    assert len(feats) == 3
    out = classify_features(feats, theta, registry, measured_spectrum)
    by_label = {f.label: f for f in out}
    assert set(by_label) == {"A", "B", "C"}
    assert by_label["A"].orientation == "horizontal"
    assert abs(by_label["B"].intercept_ghz - 8.042) < 0.01
    c = by_label["C"]
    assert abs(c.intercept_ghz - line.omega_d0) < 0.005
    assert c.attributions and (c.attributions[0].line.l, c.attributions[0].line.m,
                               c.attributions[0].line.n) == (1, 1, 2)
    assert c.evidence["test"] == "attributed"


def test_unexplained_extrinsic(measured_spectrum, registry):
    feats = extract_ridges(_land(_ridge(lambda y: 8.17 - y / 3, ymask=lambda y: y <= 0.6)))
    out = classify_features(feats, _theta_grid(), registry, measured_spectrum)
    assert [f.label for f in out] == ["C"]
    assert out[0].evidence["test"] == "unexplained extrinsic" and out[0].attributions == []


def test_high_theta_without_intercept_is_unresolved(measured_spectrum, registry):
    # Simulated Theta is high along the ridge (a broad plateau, not a ridge),
    # and the only simulated ridge has its intercept far away.
    feats = extract_ridges(_land(_ridge(lambda y: 8.6 + 0 * y, ymask=lambda y: y > 0.5)))
    sim = _ridge(lambda y: 9.0 - 0.8 * y, amp=0.5, sigma=0.01)
    sim = np.maximum(sim, 0.3 * (np.abs(np.meshgrid(WS, YS)[0] - 8.6) < 0.1))
    out = classify_features(feats, _theta_grid(sim), registry, measured_spectrum)
    assert [f.label for f in out] == ["unresolved"]


def test_outside_simulated_range_is_unresolved(measured_spectrum, registry):
    feats = extract_ridges(_land(_ridge(lambda y: 8.6 - y / 4), _ridge(lambda y: 9.7 - y / 4)))
    half = LandscapeGrid(WS[WS <= 9.0], 2 * YS, np.array([0.0]),
                         np.zeros((1, len(YS), int(np.sum(WS <= 9.0)))), 1)
    out = classify_features(feats, half, registry, measured_spectrum)
    assert sorted(f.label for f in out) == ["C", "unresolved"]


def test_grid_mismatch(measured_spectrum, registry):
    feats = extract_ridges(_land(_ridge(lambda y: 9.5 - y / 4)))
    far = LandscapeGrid(np.array([6.0, 6.5]), np.array([0.0, 1.0]), np.array([0.0]), np.zeros((1, 2, 2)), 1)
    with pytest.raises(GridMismatchError):
        classify_features(feats, far, registry, measured_spectrum)


def test_order_independent(scene, measured_spectrum, registry):
    parts, theta, _ = scene
    feats = extract_ridges(_land(*parts))
    fwd = _labels(classify_features(feats, theta, registry, measured_spectrum))
    rev = _labels(classify_features(feats[::-1], theta, registry, measured_spectrum))
    assert fwd == rev


def test_contrast_rescaling_keeps_labels(scene, measured_spectrum, registry):
    parts, theta, _ = scene
    land = _land(*parts)
    dim = MeasuredLandscape(land.omega_d, land.stark_norm, 0.8 * land.prob, land.initial)
    a = classify_features(extract_ridges(land), theta, registry, measured_spectrum)
    b = classify_features(extract_ridges(dim), theta, registry, measured_spectrum)
    key = lambda fs: [(f.label, round(float(np.nan_to_num(f.intercept_ghz)), 4)) for f in fs]
    assert key(a) == key(b)


def test_every_feature_gets_one_label(scene, measured_spectrum, registry):
    parts, theta, _ = scene
    for f in classify_features(extract_ridges(_land(*parts)), theta, registry, measured_spectrum):
        assert f.label in ("A", "B", "C", "unresolved") and "test" in f.evidence


def test_thresholds_are_configurable(scene, measured_spectrum, registry):
    parts, theta, _ = scene
    feats = extract_ridges(_land(*parts))
    strict = Thresholds(theta_mean=0.99)
    labels = sorted(f.label for f in classify_features(feats, theta, registry, measured_spectrum, strict))
    assert labels == ["A", "C", "C"]


def test_theta_landscape_view():
    g = LandscapeGrid(WS[:3], np.array([0.0, 0.2]), np.array([0.0, 0.5]),
                      np.array([[[0, 0, 0], [0.2, np.nan, 0.4]], [[0, 0, 0], [0.4, np.nan, 0.6]]]), 1)
    land = landscape_from_theta(g)
    assert np.allclose(land.stark_norm, [0.0, 0.1])
    assert np.allclose(land.prob, [[0, 0, 0], [0.3, 0.0, 0.5]])


def test_report(tmp_path, scene, measured_spectrum, registry):
    parts, theta, _ = scene
    out = classify_features(extract_ridges(_land(*parts)), theta, registry, measured_spectrum)
    write_report(out, tmp_path / "r.csv", {"version": "x"})
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "# version: x"
    assert lines[1] == ",".join(REPORT_FIELDS)
    assert len(lines) == 2 + len(out)
    assert isinstance(out[0], Feature)
