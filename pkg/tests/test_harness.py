import json

import numpy as np
import pytest

from ganvert import harness
from ganvert.generator import (GeneratorBundle, LinearProbe, RankDeficientError, full_forward,
                               g1_forward, g2_forward)
from ganvert.inversion import InversionConfig, InversionError
from ganvert.loss import LossConfig


def test_unknown_kind(bundle):
    with pytest.raises(ValueError, match="unknown target kind"):
        harness.make_target(bundle, 0, "real")


@pytest.mark.parametrize("kind", harness.TARGET_KINDS)
def test_targets_reproducible(bundle, kind):
    a, b = harness.make_target(bundle, 3, kind), harness.make_target(bundle, 3, kind)
    assert np.array_equal(a, b) and a.shape == bundle.image_shape
    assert not np.array_equal(a, harness.make_target(bundle, 4, kind))


def test_generated_is_full_forward(bundle):
    z = harness._streams(5)[0].standard_normal(bundle.d_z)
    assert np.array_equal(harness.make_target(bundle, 5, "generated"), full_forward(z, bundle))


def test_zero_delta_degenerates_to_generated(bundle):
    image, z, delta = harness.delta_target(bundle, 2, scale=0.0)
    assert not delta.any()
    assert np.array_equal(image, harness.make_target(bundle, 2, "generated"))


def test_delta_support_and_scale(bundle):
    image, z, delta = harness.delta_target(bundle, 1)
    assert np.count_nonzero(delta) == round(0.05 * bundle.d_1)
    np.testing.assert_array_equal(image, g2_forward(g1_forward(z, bundle) + delta, bundle)[0])


def test_composite_halves_match_sources(bundle):
    zr, _, other = harness._streams(9)
    left = full_forward(zr.standard_normal(bundle.d_z), bundle)
    right = full_forward(other.standard_normal(bundle.d_z), bundle)
    comp = harness.make_target(bundle, 9, "composite")
    w = comp.shape[-1]
    for col in range(w):
        src = left if col < w // 2 else right
        assert np.array_equal(comp[..., col], src[..., col])


def test_gap_n_validated(bundle):
    with pytest.raises(ValueError):
        harness.gap_experiment(bundle, 0)


def test_gap_report_shape(gap_report):
    assert len(gap_report.records) == 20 * len(harness.TARGET_KINDS)
    for kind in harness.TARGET_KINDS:
        seeds = [r["seed"] for r in gap_report.records if r["kind"] == kind]
        assert seeds == list(range(20))


def test_gap_summary_recomputable(gap_report):
    again = json.loads(json.dumps(gap_report.to_json_dict()))
    report = harness.GapReport(again["records"], again["n"], tuple(again["kinds"]))
    assert report.summary() == again["summary"]
    rows = [r["relative_latent"] for r in again["records"] if r["kind"] == "composite"]
    assert again["summary"]["composite"]["relative_latent"]["median"] == pytest.approx(np.median(rows), rel=1e-15)


def test_gap_invariant_every_record(gap_report):
    assert all(r["error_dense"] <= r["error_latent"] for r in gap_report.records)


def test_gap_generated_small(gap_report):
    assert gap_report.summary()["generated"]["relative_latent"]["median"] < 1e-3


def test_gap_delta_halved(gap_report):
    s = gap_report.summary()["delta_perturbed"]
    assert s["error_dense"]["median"] <= 0.5 * s["error_latent"]["median"]


def test_gap_csv(gap_report):
    lines = gap_report.to_csv().splitlines()
    assert lines[0] == "kind,seed,error_latent,error_dense,relative_latent,relative_dense"
    assert len(lines) == 61
    kind, seed, *vals = lines[1].split(",")
    assert float(vals[0]) == gap_report.records[0]["error_latent"]


def test_gap_deterministic(bundle):
    cfg = InversionConfig(restarts=1, steps_z=10, steps_delta=10)
    a = harness.gap_experiment(bundle, 2, ["composite"], cfg)
    b = harness.gap_experiment(bundle, 2, ["composite"], cfg)
    assert json.dumps(a.to_json_dict()) == json.dumps(b.to_json_dict())


def test_gap_failure_isolated(bundle, monkeypatch):
    real = harness.invert_two_step

    def flaky(target, model, config=None):
        if np.array_equal(target, harness.make_target(bundle, 1, "generated")):
            raise InversionError("every restart diverged (non-finite loss)")
        return real(target, model, config)

    monkeypatch.setattr(harness, "invert_two_step", flaky)
    cfg = InversionConfig(restarts=1, steps_z=5, steps_delta=5)
    report = harness.gap_experiment(bundle, 3, ["generated"], cfg)
    assert [r["seed"] for r in report.records] == [0, 1, 2]
    assert report.records[1]["error_dense"] is None and "diverged" in report.records[1]["failure"]
    assert report.records[2]["error_dense"] is not None
    assert report.summary()["generated"]["count"] == 2


def test_identity_w1_routes_coincide():
    probe = LinearProbe(np.eye(3), np.zeros(3))
    x, lam = np.array([0.5, -1.0, 2.0]), 0.1
    h = harness.projected_gradient_h(x, probe, lam)
    np.testing.assert_allclose(h, x / (1 + lam), atol=1e-12)
    np.testing.assert_allclose(harness.ridge_solution(x, probe, lam), x / (1 + lam), atol=1e-15)


def test_projected_gradient_matches_ridge():
    rng = np.random.default_rng(4)
    probe = LinearProbe(rng.normal(size=(8, 3)), rng.normal(size=8))
    x = rng.normal(size=8)
    z = harness.ridge_solution(x, probe, 0.1)
    np.testing.assert_allclose(harness.projected_gradient_h(x, probe, 0.1), probe.w1 @ z + probe.b1, atol=1e-10)


def test_rank_deficient_weights_rejected(bundle):
    weights = dict(bundle.weights)
    w1 = np.array(weights["W1"])
    w1[:, 1] = 2 * w1[:, 0]
    weights["W1"] = w1
    with pytest.raises(RankDeficientError):
        GeneratorBundle(bundle.config, weights)
    with pytest.raises(RankDeficientError):
        LinearProbe(np.ones((5, 2)), np.zeros(5))


def test_theorem2_report(bundle):
    trials = harness.theorem2_report(bundle, trials=3)
    assert [t.seed for t in trials] == [0, 1, 2]
    for t in trials:
        assert t.passed and t.rank_ok
        assert t.stage1_residual < 1e-8 and t.route_gap < 1e-6
        assert t.z_route_vs_closed_form < 1e-6 and t.h_route_vs_closed_form < 1e-6


SWEEP_CFG = InversionConfig(restarts=2, steps_z=200, steps_delta=400)


@pytest.fixture(scope="module")
def sweep(bundle):
    return harness.lambda_sweep(bundle, 0, [10.0, 0.0, 0.01, 1e6, 0.1], SWEEP_CFG)


def test_sweep_rows(sweep):
    assert [r.lambda2 for r in sweep] == [10.0, 0.0, 0.01, 1e6, 0.1]
    by = {r.lambda2: r for r in sweep}
    assert by[1e6].support == 0 and by[1e6].l1 == 0
    assert by[0.0].error_dense == min(r.error_dense for r in sweep)
    assert by[0.0].support > by[0.1].support


def test_sweep_monotone_pairs(sweep):
    count, total = harness.support_monotone_pairs(sweep, upto=10)
    assert total == 3 and count == 3


def test_sweep_json(sweep):
    doc = json.loads(json.dumps(harness.sweep_to_json(sweep)))
    assert doc[0] == {"lambda2": 10.0, "error_dense": sweep[0].error_dense,
                      "l1": sweep[0].l1, "support": sweep[0].support}


def test_sweep_empty(bundle):
    with pytest.raises(ValueError):
        harness.lambda_sweep(bundle, 0, [])
