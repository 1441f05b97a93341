"""Multilevel pipeline: nested exactness, residual accounting, diagnostics."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

import gedecomp as g
from gedecomp.grouped import GroupedSample, McmcConfig, PosteriorDraws
from gedecomp.pipeline import (
    FittedHierarchy,
    HierarchyNode,
    PipelineError,
    assemble_mixture,
    assemble_proposed,
    assemble_separate,
    bw_ratio,
    fit_hierarchy,
    ge_surface,
    relative_difference,
    run_proposed,
)
from gedecomp.sim import LeafSpec, RegionSpec, SyntheticSpec, generate

from conftest import mc_ge_with_se

FAST_MCMC = McmcConfig(iterations=900, burnin=250, seed=5)


@pytest.fixture(scope="module")
def small_fitted():
    spec = SyntheticSpec(
        regions=(
            RegionSpec("r1", (LeafSpec("r1a", g.SM(2.2, 4.0, 1.8), 30000),
                              LeafSpec("r1b", g.SM(2.0, 3.5, 2.0), 20000))),
            RegionSpec("r2", (LeafSpec("r2a", g.SM(2.5, 5.0, 1.7), 25000),
                              LeafSpec("r2b", g.SM(1.9, 4.5, 2.2), 25000))),
        ),
        brackets=10,
        sampling_fraction=0.2,
        seed=3,
    )
    data = generate(spec)
    return data, fit_hierarchy(data.root, FAST_MCMC)


def exact_draws(family, params, n=4) -> PosteriorDraws:
    """Degenerate posterior concentrated at known parameters."""
    rows = np.tile(params.to_vector(), (n, 1))
    return PosteriorDraws(
        family=family,
        unit="x",
        draws=rows,
        param_names=params.param_names,
        acceptance_rate=0.25,
        config=McmcConfig(iterations=n + 1, burnin=1),
    )


def toy_sample(unit) -> GroupedSample:
    return GroupedSample([0.0, 1.0, 2.0, 3.0, 5.0, 8.0, np.inf], [2.0, 4.0, 6.0, 5.0, 2.0, 1.0], unit)


def degenerate_tree() -> HierarchyNode:
    leaf = HierarchyNode("s1", "subregion", 1000.0, "ln", toy_sample("s1"))
    region = HierarchyNode("g1", "region", 1000.0, "sm", toy_sample("g1"), (leaf,))
    return HierarchyNode("c", "country", 1000.0, "gb2", toy_sample("c"), (region,))


# ---------------------------------------------------------------------------
# hierarchy validation
# ---------------------------------------------------------------------------

def test_population_mismatch_rejected():
    leaf = HierarchyNode("s", "subregion", 400.0, "ln", toy_sample("s"))
    with pytest.raises(PipelineError):
        HierarchyNode("g", "region", 1000.0, "sm", toy_sample("g"), (leaf,))


def test_tree_shape_validation():
    leaf = HierarchyNode("s", "subregion", 100.0, "ln", toy_sample("s"))
    region = HierarchyNode("g", "region", 100.0, "sm", toy_sample("g"), (leaf,))
    with pytest.raises(PipelineError):
        fit_hierarchy(region, FAST_MCMC)  # root must be a country
    bare_region = HierarchyNode("g2", "region", 100.0, "sm", toy_sample("g2"))
    country = HierarchyNode("c", "country", 100.0, "gb2", toy_sample("c"), (bare_region,))
    with pytest.raises(PipelineError):
        fit_hierarchy(country, FAST_MCMC)  # regions need subregions


def test_duplicate_ids_rejected():
    leaf = HierarchyNode("dup", "subregion", 100.0, "ln", toy_sample("dup"))
    region = HierarchyNode("dup", "region", 100.0, "sm", toy_sample("dup"), (leaf,))
    country = HierarchyNode("c", "country", 100.0, "gb2", toy_sample("c"), (region,))
    with pytest.raises(PipelineError):
        fit_hierarchy(country, FAST_MCMC)


def test_fit_errors_carry_node_id():
    # a 4-bracket sample cannot identify the 4-parameter family
    short = GroupedSample([0.0, 1.0, 2.0, 3.0, np.inf], [1.0, 2.0, 2.0, 1.0], "leaf9")
    leaf = HierarchyNode("leaf9", "subregion", 100.0, "gb2", short)
    region = HierarchyNode("reg9", "region", 100.0, "sm", toy_sample("reg9"), (leaf,))
    country = HierarchyNode("c9", "country", 100.0, "gb2", toy_sample("c9"), (region,))
    with pytest.raises(PipelineError, match="leaf9"):
        fit_hierarchy(country, FAST_MCMC, levels=("subregion",))


# ---------------------------------------------------------------------------
# proposed method
# ---------------------------------------------------------------------------

def test_degenerate_hierarchy_all_levels_equal_benchmark():
    report = run_proposed(degenerate_tree(), 1.0, McmcConfig(iterations=400, burnin=100, seed=1))
    assert report.between == 0.0
    assert report.regions[0].between_sub == 0.0
    assert_allclose(report.regions[0].ge_cb, report.ge_total, rtol=1e-12)
    assert_allclose(report.subregions[0].ge_cb, report.ge_total, rtol=1e-12)
    assert report.regions[0].bw_ratio == 0.0
    assert abs(report.identity_gap) < 1e-14


@pytest.mark.parametrize("theta", [-1.0, 0.0, 1.0, 2.0])
def test_nested_exactness(small_fitted, theta):
    data, fitted = small_fitted
    report = assemble_proposed(fitted, theta)
    scale = max(1.0, abs(report.ge_total))
    # region-level constraint
    w = np.array([r.weight for r in report.regions])
    cb = np.array([r.ge_cb for r in report.regions])
    assert abs(w @ cb + report.between - report.ge_total) < 1e-10 * scale
    # each region's subregion constraint
    for row in report.regions:
        subs = [s for s in report.subregions if s.region == row.id]
        ws = np.array([s.weight for s in subs])
        cbs = np.array([s.ge_cb for s in subs])
        assert abs(ws @ cbs + row.between_sub - row.ge_cb) < 1e-10 * max(1.0, abs(row.ge_cb))
        assert_allclose(row.within_sub, ws @ cbs, rtol=1e-12)
    # assembled identity
    assert abs(report.identity_gap) < 1e-10 * scale


def test_proposed_accuracy_against_truth(small_fitted):
    data, fitted = small_fitted
    for theta in (0.0, 1.0):
        report = assemble_proposed(fitted, theta)
        truth = data.multilevel_truth(theta)
        assert abs(report.ge_total - truth.ge_total) / truth.ge_total < 0.15
        for row in report.regions:
            assert abs(row.ge_cb - truth.region_ge[row.id]) / truth.region_ge[row.id] < 0.25


def test_phi_policies(small_fitted):
    _, fitted = small_fitted
    uniform = assemble_proposed(fitted, 1.0, "uniform")
    raking = assemble_proposed(fitted, 1.0, "raking")
    shifts = np.array([r.ge_cb - r.ge_bayes for r in uniform.regions])
    assert_allclose(shifts, shifts[0] * np.ones(len(shifts)), rtol=1e-9)
    factors = np.array([r.ge_cb / r.ge_bayes for r in raking.regions])
    assert_allclose(factors, factors[0] * np.ones(len(factors)), rtol=1e-9)
    ids = [r.id for r in uniform.regions] + [s.id for s in uniform.subregions]
    custom = assemble_proposed(fitted, 1.0, {i: 1.0 for i in ids})
    assert abs(custom.identity_gap) < 1e-12
    with pytest.raises(PipelineError):
        assemble_proposed(fitted, 1.0, {"r1": 1.0})  # missing ids
    with pytest.raises(PipelineError):
        assemble_proposed(fitted, 1.0, "bogus")


# ---------------------------------------------------------------------------
# separate method
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("theta", [-1.0, 0.0, 1.0, 2.0])
def test_separate_accounting_reconstructs(small_fitted, theta):
    _, fitted = small_fitted
    report = assemble_separate(fitted, theta)
    # residual_subregion aggregates the per-region subresiduals
    w = np.array([r.weight for r in report.regions])
    subres = np.array([r.subresidual for r in report.regions])
    assert_allclose(report.residual_subregion, w @ subres, rtol=1e-12)
    assert abs(report.identity_gap) < 1e-12 * max(1.0, abs(report.ge_total))
    # no benchmarking: constrained values echo the Bayes values
    for row in report.regions:
        assert row.ge_cb == row.ge_bayes


def test_separate_residual_signs_with_misspecified_leaves(small_fitted):
    # SM-truth leaves fitted with LN: lower-tail inequality is underestimated
    # (positive residual at theta = -1), upper-tail overestimated (negative
    # residual at theta = 2)
    _, fitted = small_fitted
    assert assemble_separate(fitted, -1.0).residual_subregion > 0.0
    assert assemble_separate(fitted, 2.0).residual_subregion < 0.0


# ---------------------------------------------------------------------------
# mixture method
# ---------------------------------------------------------------------------

def build_fitted_tree(leaf_params, leaf_pops, region_split, families=("gb2", "sm", "ln")):
    """Hierarchy plus hand-made exact posteriors for mixture tests."""
    sample = toy_sample("any")
    draws = {}
    regions = []
    idx = 0
    for r, k in enumerate(region_split):
        leaves = []
        for _ in range(k):
            lid = f"s{idx}"
            leaves.append(HierarchyNode(lid, "subregion", leaf_pops[idx], families[2],
                                        GroupedSample(sample.boundaries, sample.counts, lid)))
            draws[lid] = exact_draws(families[2], leaf_params[idx])
            idx += 1
        rid = f"r{r}"
        regions.append(HierarchyNode(rid, "region", sum(l.population for l in leaves), families[1],
                                     GroupedSample(sample.boundaries, sample.counts, rid), tuple(leaves)))
    root = HierarchyNode("c", "country", sum(r.population for r in regions), families[0],
                         GroupedSample(sample.boundaries, sample.counts, "c"), tuple(regions))
    return FittedHierarchy(root=root, draws=draws, mcmc=McmcConfig(seed=0))


def test_mixture_identical_leaves_collapse():
    params = g.LN(0.4, 0.36)
    fitted = build_fitted_tree([params] * 4, [1000.0] * 4, region_split=(2, 2))
    for theta in (-1.0, 0.0, 1.0, 2.0):
        report = assemble_mixture(fitted, theta)
        assert report.between == 0.0
        assert all(r.between_sub == 0.0 for r in report.regions)
        assert_allclose(report.ge_total, params.ge(theta), rtol=1e-12)
        assert abs(report.identity_gap) < 1e-14


def test_mixture_two_ln_leaves_vs_monte_carlo():
    p1, p2 = g.LN(0.0, 0.25), g.LN(1.0, 0.25)
    fitted = build_fitted_tree([p1, p2], [1000.0, 1000.0], region_split=(2,))
    report = assemble_mixture(fitted, 1.0)
    rng = np.random.default_rng(77)
    n = 1_000_000
    x = np.concatenate([p1.sample(n // 2, rng), p2.sample(n // 2, rng)])
    mc, se = mc_ge_with_se(x, 1.0)
    assert abs(report.ge_total - mc) < 4.0 * se
    assert abs(report.identity_gap) < 1e-14


def test_mixture_from_fits_holds_identity(small_fitted):
    _, fitted = small_fitted
    for theta in (-1.0, 0.0, 1.0, 2.0):
        report = assemble_mixture(fitted, theta)
        assert abs(report.identity_gap) < 1e-12 * max(1.0, abs(report.ge_total))
        assert report.ge_total_sd is None


def test_mixture_differs_from_country_fit_on_heavy_lower_tail(small_fitted):
    # misspecified LN leaves vs the flexible country fit: visible gap at theta=-1
    _, fitted = small_fitted
    mixture = assemble_mixture(fitted, -1.0)
    proposed = assemble_proposed(fitted, -1.0)
    assert abs(mixture.ge_total - proposed.ge_total) / proposed.ge_total > 0.05


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def test_unreliable_draw_flags_surface_in_report():
    heavy = g.SM(1.5, 3.0, 1.0)  # a*q = 1.5 < 2: excluded at theta = 2
    light = g.SM(2.5, 3.0, 2.0)
    rows = np.vstack([np.tile(heavy.to_vector(), (5, 1)), np.tile(light.to_vector(), (95, 1))])
    bad_draws = PosteriorDraws(
        family="sm", unit="s0", draws=rows, param_names=("a", "b", "q"),
        acceptance_rate=0.3, config=McmcConfig(iterations=101, burnin=1),
    )
    fitted = build_fitted_tree([light] * 2, [500.0, 500.0], region_split=(2,),
                               families=("gb2", "sm", "sm"))
    draws = dict(fitted.draws)
    draws["s0"] = bad_draws
    fitted = FittedHierarchy(root=fitted.root, draws=draws, mcmc=fitted.mcmc)
    report = assemble_mixture(fitted, 2.0)
    assert any("s0" in flag for flag in report.flags)


def test_bw_ratio_lookup(small_fitted):
    _, fitted = small_fitted
    report = assemble_proposed(fitted, 1.0)
    row = report.regions[0]
    assert bw_ratio(report, row.id) == pytest.approx(row.between_sub / row.within_sub)
    assert bw_ratio(report, row.id) == row.bw_ratio
    with pytest.raises(KeyError):
        bw_ratio(report, "nowhere")


def test_bw_ratio_hand_value():
    assert_allclose(0.004 / 0.26, 0.0153846, rtol=1e-5)  # reference arithmetic
    report = run_proposed(degenerate_tree(), 0.0, McmcConfig(iterations=300, burnin=80, seed=2))
    assert report.regions[0].bw_ratio == 0.0  # single subregion: between_sub = 0


def test_relative_difference():
    assert np.array_equal(relative_difference([0.3, 0.2], [0.3, 0.2]), [0.0, 0.0])
    assert_allclose(relative_difference([0.3], [0.25]), [0.2], rtol=1e-12)
    with pytest.raises(ValueError):
        relative_difference([0.3], [0.0])
    with pytest.raises(ValueError):
        relative_difference([0.3, 0.1], [0.2])


# ---------------------------------------------------------------------------
# parameter surfaces
# ---------------------------------------------------------------------------

def test_surface_matches_pointwise_ge_and_monotone():
    a_values = np.linspace(1.5, 4.0, 8)
    q_values = np.linspace(1.5, 4.0, 8)
    for surface in ge_surface("sm", a_values, q_values, 3.0, (-1.0, 0.0, 1.0, 2.0)):
        for i, qv in enumerate(q_values):
            for j, av in enumerate(a_values):
                assert_allclose(surface.values[i, j], g.SM(av, 3.0, qv).ge(surface.theta), rtol=1e-12)
        # GE decreases along both parameter axes on this grid
        assert np.all(np.diff(surface.values, axis=0) < 0.0)
        assert np.all(np.diff(surface.values, axis=1) < 0.0)
        # thin tails at the top corner mean low inequality
        assert surface.values[-1, -1] < 0.12


def test_surface_lower_tail_sensitivity():
    surfaces = ge_surface("sm", [2.0, 3.0], [3.0], 3.0, (-1.0,))
    ge_a2, ge_a3 = surfaces[0].values[0]
    assert ge_a2 > ge_a3  # smaller power parameter: fatter lower tail


def test_surface_masks_inadmissible_cells():
    surface = ge_surface("sm", [0.6, 2.5], [1.0, 2.0], 3.0, (1.0,))[0]
    assert math.isnan(surface.values[0, 0])  # a*q = 0.6: no mean
    assert math.isfinite(surface.values[1, 1])
    theta_neg = ge_surface("sm", [0.6], [2.5], 3.0, (-1.0,))[0]
    assert math.isnan(theta_neg.values[0, 0])  # theta below -a
    with pytest.raises(ValueError):
        ge_surface("ln", [1.0], [1.0], 3.0, (0.0,))


# ---------------------------------------------------------------------------
# determinism and seed isolation
# ---------------------------------------------------------------------------

def test_pipeline_deterministic_and_workers_invariant(small_fitted):
    data, fitted = small_fitted
    again = fit_hierarchy(data.root, FAST_MCMC)
    threaded = fit_hierarchy(data.root, FAST_MCMC, workers=4)
    for node_id, draws in fitted.draws.items():
        assert np.array_equal(draws.draws, again.draws[node_id].draws)
        assert np.array_equal(draws.draws, threaded.draws[node_id].draws)


def test_sibling_fits_unaffected_by_added_node():
    def tree(extra: bool) -> HierarchyNode:
        leaves = [HierarchyNode("sA", "subregion", 500.0, "ln", toy_sample("sA"))]
        if extra:
            leaves.append(HierarchyNode("sB", "subregion", 300.0, "ln", toy_sample("sB")))
        pop = sum(l.population for l in leaves)
        region = HierarchyNode("r", "region", pop, "sm", toy_sample("r"), tuple(leaves))
        return HierarchyNode("c", "country", pop, "gb2", toy_sample("c"), (region,))

    cfg = McmcConfig(iterations=300, burnin=80, seed=11)
    small = fit_hierarchy(tree(False), cfg, levels=("subregion",))
    grown = fit_hierarchy(tree(True), cfg, levels=("subregion",))
    assert np.array_equal(small.draws["sA"].draws, grown.draws["sA"].draws)
