import json
from pathlib import Path

import numpy as np
import pytest

from tnet import (
    Exponential,
    GammaScv,
    GaussianCopula,
    NetworkSpec,
    PiecewiseLinearCdfLaw,
    ServiceProfile,
    SpecValidationError,
    TimeGrid,
    TriangularLaw,
    UniformLaw,
    cdf_eval,
    load_spec,
    rate_cumulative,
    spectral_radius,
    tandem_spec,
    validate_spec,
)

SCENARIO_DIR = Path(__file__).resolve().parents[1] / "src" / "tnet" / "scenarios"


def simple_spec(P, K=None, horizon=None):
    P = np.asarray(P, dtype=float)
    K = K or P.shape[0]
    horizon = horizon or TimeGrid(0.0, 2.0, 0.002)
    return NetworkSpec(
        K=K,
        P=P,
        entry_nodes=(0,),
        arrivals=(UniformLaw(0.0, 1.0),),
        correlation=__import__("tnet").Independent(),
        services=tuple(ServiceProfile.constant(1.0, horizon.t0) for _ in range(K)),
        horizon=horizon,
    )


def test_validate_tandem_matrix_radius_zero():
    spec = simple_spec([[0.0, 0.0], [1.0, 0.0]])
    assert validate_spec(spec) == []
    assert spectral_radius(spec.P) == pytest.approx(0.0, abs=1e-10)


def test_validate_permutation_matrix_rejected():
    spec = simple_spec([[0.0, 1.0], [1.0, 0.0]])
    issues = validate_spec(spec)
    assert any("spectral radius" in s for s in issues)


def test_validate_diagonal_half():
    spec = simple_spec([[0.5, 0.0], [0.0, 0.5]])
    assert validate_spec(spec) == []
    assert spectral_radius(spec.P) == pytest.approx(0.5, abs=1e-8)


def test_spectral_radius_matches_eigenvalues_2x2():
    rng = np.random.default_rng(0)
    for _ in range(50):
        P = rng.random((2, 2)) * 0.49
        exact = float(np.max(np.abs(np.linalg.eigvals(P))))
        assert spectral_radius(P) == pytest.approx(exact, abs=1e-8)


def test_validate_reports_indices():
    spec = simple_spec([[0.0, 0.8], [0.8, 0.0]])
    bad = NetworkSpec(
        K=2,
        P=np.array([[0.0, -0.1], [0.0, 0.0]]),
        entry_nodes=(0, 5),
        arrivals=(UniformLaw(0.0, 1.0), UniformLaw(0.0, 3.0)),
        correlation=__import__("tnet").Independent(),
        services=(ServiceProfile.constant(1.0, 0.0),),
        horizon=TimeGrid(0.0, 2.0, 0.002),
    )
    issues = validate_spec(bad)
    assert any("P[1, 2]" in s for s in issues)
    assert any("entry node 6" in s for s in issues)
    assert any("outside horizon" in s for s in issues)
    assert any("service profiles" in s for s in issues)
    with pytest.raises(SpecValidationError):
        bad.validate()


def test_cdf_uniform():
    assert cdf_eval(UniformLaw(0.0, 1.0), 0.5) == pytest.approx(0.5)


def test_cdf_triangular_half():
    law = TriangularLaw(0.0, 1.0)
    assert cdf_eval(law, 0.5) == pytest.approx(0.5)
    assert law.pdf(0.5) == pytest.approx(2.0)


def test_cdf_triangular_quarter():
    # density 4t on the rising branch: F(0.25) = 2 * 0.25^2
    assert cdf_eval(TriangularLaw(0.0, 1.0), 0.25) == pytest.approx(0.125)


def test_cdf_limits_and_quantiles():
    for law in (UniformLaw(0.0, 1.0), TriangularLaw(0.0, 1.0),
                PiecewiseLinearCdfLaw(((0.0, 0.0), (0.3, 0.6), (1.0, 1.0)))):
        assert cdf_eval(law, -1.0) == 0.0
        assert cdf_eval(law, 2.0) == 1.0
        us = np.linspace(0.01, 0.99, 23)
        assert np.allclose(law.cdf(law.quantile(us)), us, atol=1e-9)
        ts = np.linspace(-0.5, 1.5, 101)
        assert np.all(np.diff(law.cdf(ts)) >= -1e-12)


def test_rate_cumulative_constant():
    prof = ServiceProfile.constant(1.5, 0.0)
    assert rate_cumulative(prof, 2.0) == pytest.approx(3.0)


def test_rate_cumulative_piecewise():
    prof = ServiceProfile(((0.0, 1.0), (1.0, 2.0)))
    assert rate_cumulative(prof, 2.0) == pytest.approx(3.0)
    assert prof.inverse_cumulative(3.0) == pytest.approx(2.0)
    assert prof.inverse_cumulative(0.5) == pytest.approx(0.5)


def test_rate_cumulative_at_start_and_range():
    grid = TimeGrid(-0.5, 2.0, 0.0025)
    prof = ServiceProfile.delayed_constant(2.0, -0.5, 0.0)
    assert rate_cumulative(prof, -0.5, grid) == 0.0
    assert rate_cumulative(prof, 1.0, grid) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        rate_cumulative(prof, 3.0, grid)


def test_delayed_profile_inverse_skips_flat():
    prof = ServiceProfile.delayed_constant(2.0, -0.5, 0.0)
    assert prof.inverse_cumulative(0.0) == pytest.approx(-0.5)
    assert prof.inverse_cumulative(1.0) == pytest.approx(0.5)
    zero = ServiceProfile.constant(0.0, 0.0)
    assert zero.inverse_cumulative(1.0) == np.inf


def test_stationary_rate_detection():
    assert ServiceProfile.constant(1.5, 0.0).stationary_rate(2.0) == pytest.approx(1.5)
    assert ServiceProfile.delayed_constant(1.5, -1.0, 0.0).stationary_rate(2.0) == pytest.approx(1.5)
    assert ServiceProfile(((0.0, 1.0), (1.0, 2.0))).stationary_rate(2.0) is None


def test_json_round_trip_and_revalidation():
    spec = tandem_spec([0.9, 0.6], UniformLaw(0.0, 1.0), TimeGrid(0.0, 2.2, 0.0022))
    text = spec.to_json()
    again = NetworkSpec.from_json(text)
    assert validate_spec(spec) == validate_spec(again) == []
    assert again.to_json() == text
    assert np.array_equal(again.P, spec.P)


def test_json_unknown_fields_rejected():
    doc = json.loads(tandem_spec([1.0], UniformLaw(0.0, 1.0), TimeGrid(0.0, 2.0, 0.002)).to_json())
    doc["extra"] = 1
    with pytest.raises(ValueError, match="unknown field"):
        NetworkSpec.from_json_dict(doc)
    doc.pop("extra")
    doc["arrivals"][0]["weird"] = True
    with pytest.raises(ValueError, match="unknown field"):
        NetworkSpec.from_json_dict(doc)


def test_gaussian_copula_validation():
    with pytest.raises(ValueError):
        GaussianCopula(((1.0, 0.5), (0.4, 1.0)))
    with pytest.raises(ValueError):
        GaussianCopula(((1.0, 1.5), (1.5, 1.0)))
    ok = GaussianCopula(((1.0, 0.5), (0.5, 1.0)))
    assert ok.rho_matrix.shape == (2, 2)


def test_gamma_base_scv():
    assert GammaScv(4.0).scv == 4.0
    assert ServiceProfile.constant(1.0, 0.0, base=GammaScv(4.0)).diffusion_coefficient() == 2.0
    assert ServiceProfile.constant(1.0, 0.0, base=Exponential()).diffusion_coefficient() == 1.0


def test_shipped_scenarios_validate():
    for path in sorted(SCENARIO_DIR.glob("*.json")):
        spec = load_spec(str(path))
        assert validate_spec(spec) == [], path.name
