"""Multilevel decomposition pipeline over a country/region/subregion tree.

The proposed method runs in six steps: fit the country, estimate the
between-region term from region mean incomes, benchmark the region
estimates against the country total, fit the subregions, estimate each
region's between-subregion term, and benchmark the subregion estimates
against each region's constrained value.  The assembled identity

    total = sum_j w_j * within_j + sum_j w_j * between_j + between

then holds exactly.  The separate method skips the benchmarking and reports
the two residuals instead; the mixture method fits only the leaves and
builds every higher level from the mixture identity.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import benchmark
from .distributions import make_family
from .grouped import (
    GroupedSample,
    McmcConfig,
    PosteriorDraws,
    config_for_unit,
    fit,
    posterior_ge,
    posterior_mean_income,
)
from .inequality import between_from_means

__all__ = [
    "HierarchyNode",
    "FittedHierarchy",
    "RegionRow",
    "SubregionRow",
    "DecompositionReport",
    "PipelineError",
    "fit_hierarchy",
    "assemble_proposed",
    "assemble_separate",
    "assemble_mixture",
    "run_proposed",
    "run_separate",
    "run_mixture",
    "bw_ratio",
    "relative_difference",
    "ge_surface",
    "GeSurface",
]

LEVELS = ("country", "region", "subregion")


class PipelineError(RuntimeError):
    """Raised for hierarchy validation or per-node fitting failures."""


@dataclass(frozen=True)
class HierarchyNode:
    """One population unit with known size, family assignment, and data."""

    id: str
    level: str
    population: float
    family: str
    data: GroupedSample
    children: tuple["HierarchyNode", ...] = ()

    def __post_init__(self):
        if self.level not in LEVELS:
            raise PipelineError(f"node {self.id!r}: unknown level {self.level!r}")
        if not (self.population > 0 and math.isfinite(self.population)):
            raise PipelineError(f"node {self.id!r}: population must be positive")
        if self.data is None:
            raise PipelineError(f"node {self.id!r}: missing grouped data")
        if self.children:
            child_sum = sum(c.population for c in self.children)
            if abs(child_sum - self.population) > 1e-9 * self.population:
                raise PipelineError(
                    f"node {self.id!r}: child populations sum to {child_sum}, expected {self.population}"
                )

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()


def validate_tree(root: HierarchyNode) -> None:
    """Check the country/region/subregion shape and id uniqueness."""
    if root.level != "country":
        raise PipelineError(f"root must be the country node, got level {root.level!r}")
    ids = [node.id for node in root.walk()]
    if len(ids) != len(set(ids)):
        raise PipelineError("node ids must be unique")
    if not root.children:
        raise PipelineError("country node needs at least one region")
    for region in root.children:
        if region.level != "region":
            raise PipelineError(f"node {region.id!r}: children of the country must be regions")
        if not region.children:
            raise PipelineError(f"region {region.id!r} needs at least one subregion")
        for sub in region.children:
            if sub.level != "subregion" or sub.children:
                raise PipelineError(f"node {sub.id!r}: regions may only contain leaf subregions")


@dataclass(frozen=True)
class FittedHierarchy:
    """Posterior draws per node id, reusable across theta values and methods."""

    root: HierarchyNode
    draws: dict[str, PosteriorDraws]
    mcmc: McmcConfig

    def require(self, node_id: str) -> PosteriorDraws:
        try:
            return self.draws[node_id]
        except KeyError:
            raise PipelineError(f"node {node_id!r} has not been fitted") from None


def fit_hierarchy(
    root: HierarchyNode,
    mcmc: McmcConfig,
    levels: tuple[str, ...] = LEVELS,
    workers: int = 1,
) -> FittedHierarchy:
    """Fit every node at the requested levels.

    Per-node seeds derive from mcmc.seed and the node id, so fits are
    independent and may run concurrently; results are keyed by id and do
    not depend on worker count.
    """
    validate_tree(root)
    nodes = [node for node in root.walk() if node.level in levels]

    def fit_node(node: HierarchyNode) -> tuple[str, PosteriorDraws]:
        cfg = config_for_unit(mcmc, mcmc.seed, node.id)
        sample = node.data
        if sample.unit != node.id:
            sample = GroupedSample(sample.boundaries, sample.counts, node.id)
        try:
            return node.id, fit(node.family, sample, cfg)
        except Exception as exc:
            raise PipelineError(f"node {node.id!r}: {exc}") from exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(fit_node, nodes))
    else:
        results = dict(map(fit_node, nodes))
    return FittedHierarchy(root=root, draws=results, mcmc=mcmc)


@dataclass(frozen=True)
class RegionRow:
    id: str
    share: float
    mean_income: float
    income_share: float
    weight: float
    ge_bayes: float
    ge_bayes_sd: float | None
    excluded_draws: int
    ge_cb: float
    between_sub: float
    within_sub: float
    subresidual: float
    bw_ratio: float | None
    negative: bool


@dataclass(frozen=True)
class SubregionRow:
    id: str
    region: str
    share: float
    mean_income: float
    income_share: float
    weight: float
    ge_bayes: float
    ge_bayes_sd: float | None
    excluded_draws: int
    ge_cb: float
    negative: bool


@dataclass(frozen=True)
class DecompositionReport:
    """All estimates of one multilevel decomposition at one theta."""

    method: str
    theta: float
    phi_policy: str
    seed: int
    iterations: int
    burnin: int
    ge_total: float
    ge_total_sd: float | None
    between: float
    sum_weighted_between_sub: float
    sum_weighted_within_sub: float
    residual_region: float
    residual_subregion: float
    regions: tuple[RegionRow, ...]
    subregions: tuple[SubregionRow, ...]
    flags: tuple[str, ...]

    @property
    def identity_gap(self) -> float:
        """ge_total minus the fully assembled right-hand side."""
        return self.ge_total - (
            self.sum_weighted_within_sub
            + self.sum_weighted_between_sub
            + self.between
            + self.residual_region
            + self.residual_subregion
        )


def _phi_vector(phi, ids):
    """Resolve a phi policy into concrete loss weights, or None for uniform/raking."""
    if isinstance(phi, dict):
        try:
            return np.array([float(phi[i]) for i in ids])
        except KeyError as missing:
            raise PipelineError(f"phi file does not cover node {missing.args[0]!r}") from None
    if phi in ("uniform", "raking"):
        return None
    raise PipelineError(f"unknown phi policy {phi!r}")


def _solve_policy(problem: benchmark.BenchmarkProblem, phi, custom) -> benchmark.BenchmarkSolution:
    if custom is not None:
        return benchmark.solve(problem)
    if phi == "raking":
        return benchmark.solve_raking(problem)
    return benchmark.solve_uniform(problem)


def _flag(flags: list[str], unit: str, theta: float, summary) -> None:
    if summary.unreliable:
        flags.append(
            f"{unit}: {summary.n_excluded}/{summary.n_draws} draws outside the moment window at theta={theta:g}"
        )


def _region_inputs(fitted: FittedHierarchy, theta: float, flags: list[str]):
    """Shares, posterior means, and Bayes GE summaries for every region."""
    root = fitted.root
    regions = root.children
    lam = np.array([r.population / root.population for r in regions])
    mu = []
    ge_b = []
    for region in regions:
        draws = fitted.require(region.id)
        mu_summary = posterior_mean_income(draws)
        ge_summary = posterior_ge(draws, theta)
        _flag(flags, f"region {region.id}", theta, mu_summary)
        _flag(flags, f"region {region.id}", theta, ge_summary)
        mu.append(mu_summary.value)
        ge_b.append(ge_summary)
    return regions, lam, np.array(mu), ge_b


def _subregion_inputs(fitted: FittedHierarchy, region: HierarchyNode, theta: float, flags: list[str]):
    subs = region.children
    lam = np.array([s.population / region.population for s in subs])
    mu = []
    ge_b = []
    for sub in subs:
        draws = fitted.require(sub.id)
        mu_summary = posterior_mean_income(draws)
        ge_summary = posterior_ge(draws, theta)
        _flag(flags, f"subregion {sub.id}", theta, mu_summary)
        _flag(flags, f"subregion {sub.id}", theta, ge_summary)
        mu.append(mu_summary.value)
        ge_b.append(ge_summary)
    return subs, lam, np.array(mu), ge_b


def _bw(between_sub: float, within_sub: float) -> float | None:
    return between_sub / within_sub if within_sub > 0.0 else None


def assemble_proposed(fitted: FittedHierarchy, theta: float, phi="uniform") -> DecompositionReport:
    """Steps 1-6 of the proposed method on an already fitted hierarchy."""
    flags: list[str] = []
    root = fitted.root

    # step 1: country benchmark
    ge_hat = posterior_ge(fitted.require(root.id), theta)
    _flag(flags, f"country {root.id}", theta, ge_hat)

    # step 2: between-region term from region mean incomes
    regions, lam, mu, ge_bayes = _region_inputs(fitted, theta, flags)
    be = between_from_means(lam, mu, theta)
    bayes = np.array([g.value for g in ge_bayes])

    # step 3: benchmark the region estimates against the country total
    ids = [r.id for r in regions]
    custom = _phi_vector(phi, ids)
    problem = benchmark.BenchmarkProblem(
        bayes=bayes, weights=be.weights, target=ge_hat.value, between=be.between, loss_weights=custom
    )
    sol = _solve_policy(problem, phi, custom)

    region_rows = []
    sub_rows = []
    sum_w_between = 0.0
    sum_w_within = 0.0
    for j, region in enumerate(regions):
        # step 4: subregion fits and the region's between-subregion term
        subs, sub_lam, sub_mu, sub_ge = _subregion_inputs(fitted, region, theta, flags)
        be_j = between_from_means(sub_lam, sub_mu, theta)
        sub_bayes = np.array([g.value for g in sub_ge])

        # step 5: benchmark subregions against the region's constrained value
        sub_ids = [s.id for s in subs]
        sub_custom = _phi_vector(phi, sub_ids)
        sub_problem = benchmark.BenchmarkProblem(
            bayes=sub_bayes,
            weights=be_j.weights,
            target=float(sol.constrained[j]),
            between=be_j.between,
            loss_weights=sub_custom,
        )
        sub_sol = _solve_policy(sub_problem, phi, sub_custom)
        within_j = float(be_j.weights @ sub_sol.constrained)

        w_j = float(be.weights[j])
        sum_w_between += w_j * be_j.between
        sum_w_within += w_j * within_j
        region_rows.append(
            RegionRow(
                id=region.id,
                share=float(lam[j]),
                mean_income=float(mu[j]),
                income_share=float(be.income_shares[j]),
                weight=w_j,
                ge_bayes=float(bayes[j]),
                ge_bayes_sd=ge_bayes[j].sd,
                excluded_draws=ge_bayes[j].n_excluded,
                ge_cb=float(sol.constrained[j]),
                between_sub=float(be_j.between),
                within_sub=within_j,
                subresidual=0.0,
                bw_ratio=_bw(float(be_j.between), within_j),
                negative=bool(sol.negative[j]),
            )
        )
        for k, sub in enumerate(subs):
            sub_rows.append(
                SubregionRow(
                    id=sub.id,
                    region=region.id,
                    share=float(sub_lam[k]),
                    mean_income=float(sub_mu[k]),
                    income_share=float(be_j.income_shares[k]),
                    weight=float(be_j.weights[k]),
                    ge_bayes=float(sub_bayes[k]),
                    ge_bayes_sd=sub_ge[k].sd,
                    excluded_draws=sub_ge[k].n_excluded,
                    ge_cb=float(sub_sol.constrained[k]),
                    negative=bool(sub_sol.negative[k]),
                )
            )

    # step 6: assembled multilevel decomposition
    return DecompositionReport(
        method="proposed",
        theta=theta,
        phi_policy=phi if isinstance(phi, str) else "custom",
        seed=fitted.mcmc.seed,
        iterations=fitted.mcmc.iterations,
        burnin=fitted.mcmc.burnin,
        ge_total=ge_hat.value,
        ge_total_sd=ge_hat.sd,
        between=be.between,
        sum_weighted_between_sub=sum_w_between,
        sum_weighted_within_sub=sum_w_within,
        residual_region=0.0,
        residual_subregion=0.0,
        regions=tuple(region_rows),
        subregions=tuple(sub_rows),
        flags=tuple(flags),
    )


def assemble_separate(fitted: FittedHierarchy, theta: float) -> DecompositionReport:
    """Same fits, no benchmarking; the two decomposition residuals are reported."""
    flags: list[str] = []
    root = fitted.root
    ge_hat = posterior_ge(fitted.require(root.id), theta)
    _flag(flags, f"country {root.id}", theta, ge_hat)

    regions, lam, mu, ge_bayes = _region_inputs(fitted, theta, flags)
    be = between_from_means(lam, mu, theta)
    bayes = np.array([g.value for g in ge_bayes])
    residual_region = float(ge_hat.value - be.between - be.weights @ bayes)

    region_rows = []
    sub_rows = []
    sum_w_between = 0.0
    sum_w_within = 0.0
    residual_subregion = 0.0
    for j, region in enumerate(regions):
        subs, sub_lam, sub_mu, sub_ge = _subregion_inputs(fitted, region, theta, flags)
        be_j = between_from_means(sub_lam, sub_mu, theta)
        sub_bayes = np.array([g.value for g in sub_ge])
        within_j = float(be_j.weights @ sub_bayes)
        subres_j = float(bayes[j] - be_j.between - within_j)

        w_j = float(be.weights[j])
        sum_w_between += w_j * be_j.between
        sum_w_within += w_j * within_j
        residual_subregion += w_j * subres_j
        region_rows.append(
            RegionRow(
                id=region.id,
                share=float(lam[j]),
                mean_income=float(mu[j]),
                income_share=float(be.income_shares[j]),
                weight=w_j,
                ge_bayes=float(bayes[j]),
                ge_bayes_sd=ge_bayes[j].sd,
                excluded_draws=ge_bayes[j].n_excluded,
                ge_cb=float(bayes[j]),
                between_sub=float(be_j.between),
                within_sub=within_j,
                subresidual=subres_j,
                bw_ratio=_bw(float(be_j.between), within_j),
                negative=bool(bayes[j] < 0.0),
            )
        )
        for k, sub in enumerate(subs):
            sub_rows.append(
                SubregionRow(
                    id=sub.id,
                    region=region.id,
                    share=float(sub_lam[k]),
                    mean_income=float(sub_mu[k]),
                    income_share=float(be_j.income_shares[k]),
                    weight=float(be_j.weights[k]),
                    ge_bayes=float(sub_bayes[k]),
                    ge_bayes_sd=sub_ge[k].sd,
                    excluded_draws=sub_ge[k].n_excluded,
                    ge_cb=float(sub_bayes[k]),
                    negative=bool(sub_bayes[k] < 0.0),
                )
            )

    return DecompositionReport(
        method="separate",
        theta=theta,
        phi_policy="none",
        seed=fitted.mcmc.seed,
        iterations=fitted.mcmc.iterations,
        burnin=fitted.mcmc.burnin,
        ge_total=ge_hat.value,
        ge_total_sd=ge_hat.sd,
        between=be.between,
        sum_weighted_between_sub=sum_w_between,
        sum_weighted_within_sub=sum_w_within,
        residual_region=residual_region,
        residual_subregion=residual_subregion,
        regions=tuple(region_rows),
        subregions=tuple(sub_rows),
        flags=tuple(flags),
    )


def assemble_mixture(fitted: FittedHierarchy, theta: float) -> DecompositionReport:
    """Finite-mixture method: leaves are fitted, higher levels are assembled.

    Each region is the known-weight mixture of its subregion distributions
    and the country the mixture of the regions, so every level's value is
    within + between of the level below and the identity holds by
    construction.
    """
    flags: list[str] = []
    root = fitted.root
    regions = root.children
    lam = np.array([r.population / root.population for r in regions])

    region_ge = []
    region_mu = []
    region_rows_partial = []
    sub_rows = []
    for region in regions:
        subs, sub_lam, sub_mu, sub_ge = _subregion_inputs(fitted, region, theta, flags)
        be_j = between_from_means(sub_lam, sub_mu, theta)
        sub_bayes = np.array([g.value for g in sub_ge])
        within_j = float(be_j.weights @ sub_bayes)
        ge_j = within_j + float(be_j.between)
        mu_j = be_j.mean
        region_ge.append(ge_j)
        region_mu.append(mu_j)
        region_rows_partial.append((region, be_j, within_j, ge_j, mu_j))
        for k, sub in enumerate(subs):
            sub_rows.append(
                SubregionRow(
                    id=sub.id,
                    region=region.id,
                    share=float(sub_lam[k]),
                    mean_income=float(sub_mu[k]),
                    income_share=float(be_j.income_shares[k]),
                    weight=float(be_j.weights[k]),
                    ge_bayes=float(sub_bayes[k]),
                    ge_bayes_sd=sub_ge[k].sd,
                    excluded_draws=sub_ge[k].n_excluded,
                    ge_cb=float(sub_bayes[k]),
                    negative=bool(sub_bayes[k] < 0.0),
                )
            )

    be = between_from_means(lam, np.array(region_mu), theta)
    sum_w_between = 0.0
    sum_w_within = 0.0
    region_rows = []
    for j, (region, be_j, within_j, ge_j, mu_j) in enumerate(region_rows_partial):
        w_j = float(be.weights[j])
        sum_w_between += w_j * float(be_j.between)
        sum_w_within += w_j * within_j
        region_rows.append(
            RegionRow(
                id=region.id,
                share=float(lam[j]),
                mean_income=float(mu_j),
                income_share=float(be.income_shares[j]),
                weight=w_j,
                ge_bayes=float(ge_j),
                ge_bayes_sd=None,
                excluded_draws=0,
                ge_cb=float(ge_j),
                between_sub=float(be_j.between),
                within_sub=within_j,
                subresidual=0.0,
                bw_ratio=_bw(float(be_j.between), within_j),
                negative=bool(ge_j < 0.0),
            )
        )

    ge_total = float(be.weights @ np.array(region_ge) + be.between)
    return DecompositionReport(
        method="mixture",
        theta=theta,
        phi_policy="none",
        seed=fitted.mcmc.seed,
        iterations=fitted.mcmc.iterations,
        burnin=fitted.mcmc.burnin,
        ge_total=ge_total,
        ge_total_sd=None,
        between=be.between,
        sum_weighted_between_sub=sum_w_between,
        sum_weighted_within_sub=sum_w_within,
        residual_region=0.0,
        residual_subregion=0.0,
        regions=tuple(region_rows),
        subregions=tuple(sub_rows),
        flags=tuple(flags),
    )


def run_proposed(root: HierarchyNode, theta: float, mcmc: McmcConfig, phi="uniform") -> DecompositionReport:
    """Fit all levels and assemble the proposed-method decomposition."""
    return assemble_proposed(fit_hierarchy(root, mcmc), theta, phi)


def run_separate(root: HierarchyNode, theta: float, mcmc: McmcConfig) -> DecompositionReport:
    """Fit all levels and report the unbenchmarked decomposition with residuals."""
    return assemble_separate(fit_hierarchy(root, mcmc), theta)


def run_mixture(root: HierarchyNode, theta: float, mcmc: McmcConfig) -> DecompositionReport:
    """Fit leaves only and assemble the finite-mixture decomposition."""
    return assemble_mixture(fit_hierarchy(root, mcmc, levels=("subregion",)), theta)


def bw_ratio(report: DecompositionReport, region_id: str) -> float | None:
    """Between- over within-subregion inequality for one region.

    None when the within term is nonpositive (ratio undefined).
    """
    for row in report.regions:
        if row.id == region_id:
            return _bw(row.between_sub, row.within_sub)
    raise KeyError(f"region {region_id!r} not present in the report")


def relative_difference(estimates, pseudo_truth) -> np.ndarray:
    """(estimate - pseudo-truth) / pseudo-truth, elementwise."""
    est = np.asarray(estimates, dtype=float)
    ref = np.asarray(pseudo_truth, dtype=float)
    if est.shape != ref.shape:
        raise ValueError("estimates and pseudo-truth must be aligned")
    if np.any(ref == 0.0):
        raise ValueError("pseudo-truth entries must be nonzero")
    return (est - ref) / ref


@dataclass(frozen=True)
class GeSurface:
    """GE evaluated on an (a, q) grid at fixed scale; inadmissible cells are NaN."""

    theta: float
    b: float
    a_values: np.ndarray
    q_values: np.ndarray
    values: np.ndarray  # shape (len(q_values), len(a_values))


def ge_surface(family: str, a_values, q_values, b: float, thetas) -> list[GeSurface]:
    """Sensitivity surfaces of GE over shape-parameter grids.

    Only the three-parameter family is supported; grid points where the
    moment window excludes theta (or the mean) come back as NaN.
    """
    if family != "sm":
        raise ValueError("parameter surfaces are defined for the 'sm' family")
    a_values = np.asarray(a_values, dtype=float)
    q_values = np.asarray(q_values, dtype=float)
    surfaces = []
    for theta in thetas:
        values = np.full((len(q_values), len(a_values)), np.nan)
        for i, qv in enumerate(q_values):
            for j, av in enumerate(a_values):
                params = make_family("sm", [av, b, qv])
                window_low, window_high = params.moment_window
                if window_high > 1.0 and window_low < theta < window_high:
                    values[i, j] = params.ge(theta)
        surfaces.append(GeSurface(theta=float(theta), b=float(b), a_values=a_values, q_values=q_values, values=values))
    return surfaces
