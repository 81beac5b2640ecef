//! Atlas build, per-chart approximation, rate sweeps and network compilation.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::atlas::{build_atlas, chart_inverse, verify_radii, Atlas, AtlasFile, ChartFunction, PartitionOfUnity, RadiiReport};
use crate::domain::AxisBox;
use crate::error::Error;
use crate::expansion::{
    default_spacing, l2_error, oga_on_samples, rate_fit, sup_error, sup_grid, truncate_scale_k, Dictionary, Expansion,
    ExpansionEvaluator, ExpansionFile, Grid, LsqOptions, Metric, StopReason,
};
use crate::frame::FrameParams;
use crate::manifold::{ManifoldKind, ManifoldModel};
use crate::network::{
    analytic_contributions, analytic_evaluate, compile_network, count_units, evaluate_network, expected_widths, mask_chart,
    relu_simulate_linear, required_shift, CompilationManifest, NetworkFile, ReluNetwork,
};

use super::config::{ExperimentConfig, Method};
use super::targets::Target;
use super::{HarnessError, Stage, TOOL_VERSION};

/// Tolerance of the radii preflight.
pub const RADII_TOL: f64 = 1e-9;
/// Network against analytic sum, relative to `max(1, |analytic|)`.
pub const EQUIVALENCE_TOL: f64 = 1e-9;
pub const POU_TOL: f64 = 1e-9;
pub const SUM_FI_TOL: f64 = 1e-9;
pub const MASK_TOL: f64 = 1e-12;
pub const REDUCTION_TOL: f64 = 1e-9;
/// `--assert` residual threshold for finite combinations, relative to `||f||`.
pub const SPAN_RECOVERY_TOL: f64 = 1e-8;

const MASK_SAMPLES: usize = 200;
const POU_SAMPLES: usize = 1000;

/// Default slope thresholds for `rates --assert`.
pub fn default_slope_threshold(method: Method, d: usize) -> f64 {
    match method {
        Method::Oga => -0.9,
        Method::Truncation => -1.5 / d as f64,
    }
}

/// Model, frame, samples and atlas shared by every subcommand.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub model: ManifoldModel,
    pub params: FrameParams,
    pub samples: Vec<DVector<f64>>,
    pub atlas: Atlas,
    pub target: Target,
}

impl Context {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, HarnessError> {
        let model = ManifoldModel::new(cfg.model.clone()).map_err(|e| HarnessError::Config(format!("model: {e}")))?;
        let d = model.dim();
        if d > 3 {
            return Err(HarnessError::Config(format!("manifold dimension {d} is not supported (d <= 3)")));
        }
        let params = FrameParams::new(d).stage("frame")?;
        let samples = atlas_samples(&model, cfg.samples, cfg.seed).stage("sampling")?;
        let atlas = build_atlas(&model, cfg.delta, &samples, cfg.seed).stage("atlas")?;
        let target = Target::new(&cfg.target, &model, &atlas, &params)?;
        Ok(Self {
            hash: cfg.hash(),
            cfg,
            model,
            params,
            samples,
            atlas,
            target,
        })
    }

    pub fn radii(&self) -> Result<RadiiReport, HarnessError> {
        verify_radii(&self.atlas, &self.model, &self.samples, RADII_TOL).stage("radii")
    }

    /// Aborts when the sampled radii contradict `r1 = delta/2`, `r2 = sqrt(3) delta/2`.
    pub fn radii_preflight(&self) -> Result<RadiiReport, HarnessError> {
        let r = self.radii()?;
        if !r.passed {
            return Err(HarnessError::check(
                "radii",
                format!(
                    "delta = {} is too large for this manifold ({} first-kind, {} second-kind, {} plateau violations); shrink delta",
                    self.cfg.delta, r.first_kind_violations, r.second_kind_violations, r.plateau_violations
                ),
            ));
        }
        Ok(r)
    }

    /// Fresh manifold samples for evaluation, independent of the atlas samples.
    pub fn eval_samples(&self) -> Result<Vec<DVector<f64>>, HarnessError> {
        self.model
            .sample(self.cfg.eval_samples, self.cfg.seed.wrapping_add(1))
            .stage("sampling")
    }

    pub fn k_range(&self) -> (i32, i32) {
        (self.cfg.scales.k_min, self.cfg.scales.k_max)
    }
}

/// Manifold samples for the atlas. A flat patch gets its centre first so the
/// first chart is anchored there and its coordinates are the base coordinates.
pub fn atlas_samples(model: &ManifoldModel, n: usize, seed: u64) -> crate::error::Result<Vec<DVector<f64>>> {
    let mut samples = model.sample(n, seed)?;
    if let ManifoldKind::FlatPatch { d, .. } = model.kind() {
        samples.insert(0, model.embed(&vec![0.0; *d]));
    }
    Ok(samples)
}

// ---------------------------------------------------------------- atlas-build

#[derive(Clone, Debug, Serialize)]
pub struct AtlasReport {
    pub tool_version: &'static str,
    pub config_hash: String,
    pub charts: usize,
    pub c_gamma_bound: Option<u64>,
    pub delta: f64,
    pub r1: f64,
    pub r2: f64,
    pub max_gram_deviation: f64,
    pub radii: RadiiReport,
}

pub fn atlas_build(ctx: &Context) -> Result<(AtlasFile, AtlasReport), HarnessError> {
    let radii = ctx.radii_preflight()?;
    let report = AtlasReport {
        tool_version: TOOL_VERSION,
        config_hash: ctx.hash.clone(),
        charts: ctx.atlas.len(),
        c_gamma_bound: ctx.atlas.c_gamma_bound,
        delta: ctx.atlas.delta,
        r1: ctx.atlas.r1,
        r2: ctx.atlas.r2,
        max_gram_deviation: ctx.atlas.charts.iter().map(|c| c.gram_deviation()).fold(0.0, f64::max),
        radii,
    };
    Ok((ctx.atlas.to_file(), report))
}

// ---------------------------------------------------------------- approximate

/// Tangent-coordinate box on which chart `i`'s local function is fitted.
pub fn fit_box(ctx: &Context, i: usize) -> Result<AxisBox, HarnessError> {
    let chart = ctx.atlas.chart(i).stage("fit box")?;
    match ctx.model.kind() {
        ManifoldKind::FlatPatch { d, half_width } => {
            // bounding box of the projected patch corners, cut to the chart ball
            let d = *d;
            let mut lo = vec![f64::INFINITY; d];
            let mut hi = vec![f64::NEG_INFINITY; d];
            for corner in 0..1usize << d {
                let y: Vec<f64> = (0..d)
                    .map(|j| if corner >> j & 1 == 1 { *half_width } else { -half_width })
                    .collect();
                let (u, _) = chart.coords(ctx.model.embed(&y).as_slice()).stage("fit box")?;
                for j in 0..d {
                    lo[j] = lo[j].min(u[j]);
                    hi[j] = hi[j].max(u[j]);
                }
            }
            let patch = AxisBox::new(lo, hi).stage("fit box")?;
            let ball = AxisBox::cube(d, chart.delta()).stage("fit box")?;
            patch
                .intersect(&ball)
                .ok_or_else(|| HarnessError::check("fit box", format!("chart {i} does not meet the patch")))
        }
        _ => ctx.atlas.active_tangent_box(i, &ctx.samples).stage("fit box"),
    }
}

fn chart_function<'a>(ctx: &'a Context, i: usize) -> Result<ChartFunction<'a, impl Fn(&[f64]) -> f64 + 'a>, HarnessError> {
    let target = &ctx.target;
    ChartFunction::new(move |x: &[f64]| target.eval(x), i, PartitionOfUnity::new(&ctx.atlas), &ctx.model).stage("chart function")
}

/// Chart-local target as a plain function; lift failures surface as NaN,
/// which the fitting and error routines reject.
fn local_target<'a>(cf: &'a ChartFunction<'a, impl Fn(&[f64]) -> f64>) -> impl Fn(&[f64]) -> f64 + 'a {
    move |u: &[f64]| cf.eval(u).unwrap_or(f64::NAN)
}

#[derive(Clone, Debug, Serialize)]
pub struct ChartFit {
    pub chart: usize,
    pub fit_lo: Vec<f64>,
    pub fit_hi: Vec<f64>,
    pub grid_points: usize,
    pub dictionary_atoms: usize,
    /// Discrete `L2` norm of the chart-local target on the fit grid.
    pub target_norm: Option<f64>,
    /// OGA: `||r_0||, ..., ||r_steps||` on the fit grid.
    pub residual_norms: Vec<f64>,
    pub stop: Option<StopReason>,
    /// Truncation: rank of the least-squares system.
    pub rank: Option<usize>,
}

/// Expansions for every chart at one budget (`None` for truncation at `k_max`).
#[derive(Clone, Debug)]
pub struct BudgetFit {
    pub budget: Option<usize>,
    pub expansions: Vec<Expansion>,
}

pub struct Approximation {
    pub charts: Vec<ChartFit>,
    pub budgets: Vec<BudgetFit>,
}

pub fn approximate(ctx: &Context) -> Result<Approximation, HarnessError> {
    let (k_min, k_max) = ctx.k_range();
    let d = ctx.model.dim();
    let spacing = ctx.cfg.grid_spacing.unwrap_or_else(|| default_spacing(d, k_max));
    let budgets: Vec<Option<usize>> = match ctx.cfg.method {
        Method::Oga => ctx.cfg.n_schedule.iter().map(|&n| Some(n)).collect(),
        Method::Truncation => vec![None],
    };
    let mut per_budget: Vec<Vec<Expansion>> = vec![Vec::with_capacity(ctx.atlas.len()); budgets.len()];
    let mut charts = Vec::with_capacity(ctx.atlas.len());
    for i in 0..ctx.atlas.len() {
        let region = fit_box(ctx, i)?;
        let cf = chart_function(ctx, i)?;
        let f = local_target(&cf);
        let fit = match ctx.cfg.method {
            Method::Oga => {
                let grid = Grid::with_spacing(&region, spacing).stage("approximate")?;
                let values = grid.try_sample(|u| cf.eval(u)).stage("approximate")?;
                let target_norm = grid.norm(&values);
                let dict = Dictionary::on_grid(&ctx.params, grid, k_min, k_max).stage("approximate")?;
                let n_max = *ctx.cfg.n_schedule.last().expect("validated non-empty");
                let run = oga_on_samples(&values, &dict, n_max).stage("approximate")?;
                for (slot, b) in per_budget.iter_mut().zip(&budgets) {
                    slot.push(run.expansion(&dict, i, b.expect("oga budgets")).stage("approximate")?);
                }
                ChartFit {
                    chart: i,
                    fit_lo: region.lo().to_vec(),
                    fit_hi: region.hi().to_vec(),
                    grid_points: dict.grid().len(),
                    dictionary_atoms: dict.len(),
                    target_norm: Some(target_norm),
                    residual_norms: run.residual_norms().to_vec(),
                    stop: Some(run.stop_reason().clone()),
                    rank: None,
                }
            }
            Method::Truncation => {
                let opts = LsqOptions {
                    k_min,
                    ..LsqOptions::default()
                };
                let lsq = truncate_scale_k(&f, &ctx.params, &region, k_max, &opts).stage("approximate")?;
                per_budget[0].push(Expansion::new(i, lsq.expansion.terms().to_vec()).stage("approximate")?);
                ChartFit {
                    chart: i,
                    fit_lo: region.lo().to_vec(),
                    fit_hi: region.hi().to_vec(),
                    grid_points: lsq.grid_points,
                    dictionary_atoms: lsq.terms,
                    target_norm: None,
                    residual_norms: vec![lsq.rms_residual],
                    stop: None,
                    rank: Some(lsq.rank),
                }
            }
        };
        charts.push(fit);
    }
    let budgets = budgets
        .into_iter()
        .zip(per_budget)
        .map(|(budget, expansions)| BudgetFit { budget, expansions })
        .collect();
    Ok(Approximation { charts, budgets })
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpansionSet {
    pub tool_version: &'static str,
    pub config_hash: String,
    pub budgets: Vec<ExpansionBudget>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpansionBudget {
    pub budget: Option<usize>,
    pub expansions: Vec<ExpansionFile>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ApproximateReport {
    pub tool_version: &'static str,
    pub config_hash: String,
    pub method: Method,
    pub charts: Vec<ChartFit>,
    pub terms_per_budget: Vec<(Option<usize>, usize)>,
}

pub fn approximate_outputs(ctx: &Context, approx: &Approximation) -> (ExpansionSet, ApproximateReport) {
    let set = ExpansionSet {
        tool_version: TOOL_VERSION,
        config_hash: ctx.hash.clone(),
        budgets: approx
            .budgets
            .iter()
            .map(|b| ExpansionBudget {
                budget: b.budget,
                expansions: b.expansions.iter().map(|e| e.to_file(&ctx.params)).collect(),
            })
            .collect(),
    };
    let report = ApproximateReport {
        tool_version: TOOL_VERSION,
        config_hash: ctx.hash.clone(),
        method: ctx.cfg.method,
        charts: approx.charts.clone(),
        terms_per_budget: approx
            .budgets
            .iter()
            .map(|b| (b.budget, b.expansions.iter().map(Expansion::len).sum()))
            .collect(),
    };
    (set, report)
}

// ---------------------------------------------------------------- rates

#[derive(Clone, Debug, Serialize)]
pub struct RatesSummary {
    pub tool_version: &'static str,
    pub config_hash: String,
    pub method: Method,
    pub metric: Metric,
    pub ns: Vec<u64>,
    pub errors: Vec<f64>,
    /// Truncation scales behind each `N = 2^{K+1}`.
    pub scales: Option<Vec<i32>>,
    /// Log-log slope; absent when some error is exactly zero.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub slope_threshold: f64,
    /// Finite combinations: number of planted terms and `||f||` on the fit grid.
    pub planted_terms: Option<usize>,
    pub target_norm: Option<f64>,
    pub assertion: Option<String>,
}

impl RatesSummary {
    pub fn csv(&self) -> String {
        let mut out = String::from("N,error,metric,config_hash\n");
        for (n, e) in self.ns.iter().zip(&self.errors) {
            out.push_str(&format!("{n},{e:?},{},{}\n", self.metric.as_str(), self.config_hash));
        }
        out
    }
}

pub fn rates(ctx: &Context) -> Result<RatesSummary, HarnessError> {
    if ctx.atlas.len() != 1 {
        return Err(HarnessError::Config(format!(
            "rates needs a single-chart atlas, got {} charts; increase delta",
            ctx.atlas.len()
        )));
    }
    let (k_min, k_max) = ctx.k_range();
    let region = fit_box(ctx, 0)?;
    let cf = chart_function(ctx, 0)?;
    let f = local_target(&cf);
    let metric = ctx.cfg.metric;
    let mut ns = Vec::new();
    let mut errors = Vec::new();
    let mut scales = None;
    let mut target_norm = None;
    match ctx.cfg.method {
        Method::Oga => {
            let approx = approximate(ctx)?;
            let fit = &approx.charts[0];
            target_norm = fit.target_norm;
            for b in &approx.budgets {
                let n = b.budget.expect("oga budgets");
                let e = match metric {
                    Metric::L2Squared => fit.residual_norms[n.min(fit.residual_norms.len() - 1)].powi(2),
                    Metric::Sup => sup_error(&f, &b.expansions[0], &ctx.params, &region, k_max).stage("rates")?,
                };
                ns.push(n as u64);
                errors.push(e);
            }
        }
        Method::Truncation => {
            let ks: Vec<i32> = match &ctx.cfg.scales.k_list {
                Some(ks) => ks.clone(),
                None => (k_min.max(1)..=k_max).collect(),
            };
            let opts = LsqOptions {
                k_min,
                ..LsqOptions::default()
            };
            for &k in &ks {
                if k < opts.k_min {
                    return Err(HarnessError::Config(format!("truncation scale {k} below k_min")));
                }
                let lsq = truncate_scale_k(&f, &ctx.params, &region, k, &opts).stage("rates")?;
                let e = match metric {
                    Metric::Sup => sup_error(&f, &lsq.expansion, &ctx.params, &region, k).stage("rates")?,
                    Metric::L2Squared => l2_error(&f, &lsq.expansion, &ctx.params, &region).stage("rates")?.powi(2),
                };
                ns.push(1u64 << (k + 1).clamp(0, 62));
                errors.push(e);
            }
            scales = Some(ks);
        }
    }
    // past the planted count a finite combination is fitted exactly and the slope means nothing
    let exact = ctx.target.planted_terms().is_some_and(|p| ns.last().is_some_and(|n| *n as usize >= p));
    let (slope, intercept) = if !exact && errors.len() >= 3 && errors.iter().all(|e| *e > 0.0) {
        let r = rate_fit(&ns, &errors, metric).stage("rates")?;
        (Some(r.slope), Some(r.intercept))
    } else {
        (None, None)
    };
    Ok(RatesSummary {
        tool_version: TOOL_VERSION,
        config_hash: ctx.hash.clone(),
        method: ctx.cfg.method,
        metric,
        ns,
        errors,
        scales,
        slope,
        intercept,
        slope_threshold: ctx
            .cfg
            .assert_slope
            .unwrap_or_else(|| default_slope_threshold(ctx.cfg.method, ctx.model.dim())),
        planted_terms: ctx.target.planted_terms(),
        target_norm,
        assertion: None,
    })
}

/// The `--assert` verdict: span recovery for finite combinations, the slope
/// threshold otherwise.
pub fn rates_assertion(s: &RatesSummary) -> Result<(), String> {
    if let (Some(planted), Some(norm)) = (s.planted_terms, s.target_norm) {
        let bound = SPAN_RECOVERY_TOL * norm;
        for (n, e) in s.ns.iter().zip(&s.errors) {
            let residual = match s.metric {
                Metric::L2Squared => e.sqrt(),
                Metric::Sup => *e,
            };
            if *n as usize >= planted && residual > bound {
                return Err(format!("residual {residual:e} at N = {n} exceeds {bound:e} with {planted} planted terms"));
            }
        }
        return Ok(());
    }
    match s.slope {
        Some(slope) if slope <= s.slope_threshold => Ok(()),
        Some(slope) => Err(format!("slope {slope:.4} is above the threshold {}", s.slope_threshold)),
        None => Err("no slope could be fitted".into()),
    }
}

// ---------------------------------------------------------------- compile-eval

#[derive(Clone, Debug, Serialize)]
pub struct BudgetReport {
    pub budget: Option<usize>,
    pub total_terms: usize,
    pub widths: [usize; 4],
    pub expected_widths: [usize; 4],
    pub widths_match: bool,
    pub recount_match: bool,
    pub nonzero_weights: usize,
    /// Root mean square of `network - f` over fresh manifold samples.
    pub end_to_end_rms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DeviationCheck {
    pub points: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl DeviationCheck {
    fn new(points: usize, max_deviation: f64, tolerance: f64) -> Self {
        Self {
            points,
            max_deviation,
            tolerance,
            passed: max_deviation <= tolerance,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulationCheck {
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    pub shift: f64,
    pub check: DeviationCheck,
}

#[derive(Clone, Debug, Serialize)]
pub struct MaskingCheck {
    pub samples: usize,
    /// (sample, chart) pairs with the sample outside the chart ball but
    /// projecting into the chart image.
    pub pairs: usize,
    pub max_contribution: f64,
    pub max_masked_change: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReductionCheck {
    pub points: usize,
    pub end_to_end_sup: f64,
    pub chart_local_sup: f64,
    pub difference: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompileReport {
    pub tool_version: &'static str,
    pub config_hash: String,
    pub method: Method,
    pub charts: usize,
    pub c_gamma_bound: Option<u64>,
    pub budgets: Vec<BudgetReport>,
    pub manifest: CompilationManifest,
    pub equivalence: DeviationCheck,
    pub simulation: SimulationCheck,
    pub masking: MaskingCheck,
    pub partition_of_unity: DeviationCheck,
    pub sum_fi: DeviationCheck,
    pub radii: RadiiReport,
    pub end_to_end_strictly_decreasing: bool,
    pub flat_reduction: Option<ReductionCheck>,
    pub passed: bool,
}

impl CompileReport {
    /// Name of the first failing check, in pipeline order.
    pub fn first_failure(&self) -> Option<&'static str> {
        let widths = self.budgets.iter().all(|b| b.widths_match && b.recount_match);
        [
            ("widths", widths),
            ("equivalence", self.equivalence.passed),
            ("simulation", self.simulation.check.passed),
            ("masking", self.masking.passed),
            ("partition_of_unity", self.partition_of_unity.passed),
            ("sum_fi", self.sum_fi.passed),
            ("radii", self.radii.passed),
            ("flat_reduction", self.flat_reduction.as_ref().is_none_or(|r| r.passed)),
        ]
        .into_iter()
        .find(|(_, ok)| !ok)
        .map(|(name, _)| name)
    }
}

fn relative(net: f64, analytic: f64) -> f64 {
    (net - analytic).abs() / analytic.abs().max(1.0)
}

/// Manifold samples pushed off the manifold by up to `r2` in a random direction.
fn near_manifold_probes(ctx: &Context, n: usize) -> Result<Vec<Vec<f64>>, HarnessError> {
    let base = ctx.model.sample(n, ctx.cfg.seed.wrapping_add(2)).stage("probes")?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed.wrapping_add(3));
    let m = ctx.model.ambient_dim();
    Ok(base
        .into_iter()
        .map(|x| {
            let dir = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
            let r = rng.gen_range(0.0..ctx.atlas.r2);
            (x + dir * r).data.into()
        })
        .collect())
}

/// Configured box, or the bounding cube of the samples padded by `r2`.
fn validity_box(ctx: &Context) -> Result<AxisBox, HarnessError> {
    let m = ctx.model.ambient_dim();
    if let Some(spec) = &ctx.cfg.validity_box {
        return spec.to_box(m);
    }
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    for x in &ctx.samples {
        for j in 0..m {
            lo[j] = lo[j].min(x[j]);
            hi[j] = hi[j].max(x[j]);
        }
    }
    let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let half = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (b - a)).fold(0.0, f64::max) + ctx.atlas.r2;
    AxisBox::centered(&center, half).stage("validity box")
}

fn compile(ctx: &Context, fit: &BudgetFit) -> Result<(ReluNetwork, CompilationManifest, BudgetReport), HarnessError> {
    let (net, manifest) = compile_network(&ctx.atlas, &fit.expansions, &ctx.params).stage("compile")?;
    let recount = count_units(&net).stage("compile")?;
    let total: usize = fit.expansions.iter().map(Expansion::len).sum();
    let expected = expected_widths(ctx.atlas.len(), ctx.model.ambient_dim(), ctx.model.dim(), total);
    let report = BudgetReport {
        budget: fit.budget,
        total_terms: total,
        widths: manifest.widths,
        expected_widths: expected,
        widths_match: manifest.widths == expected,
        recount_match: recount == manifest,
        nonzero_weights: manifest.nonzero_weights,
        end_to_end_rms: f64::NAN,
    };
    Ok((net, manifest, report))
}

pub struct CompileOutputs {
    pub network: NetworkFile,
    pub report: CompileReport,
}

pub fn compile_eval(ctx: &Context) -> Result<CompileOutputs, HarnessError> {
    let radii = ctx.radii_preflight()?;
    let approx = approximate(ctx)?;
    let eval = ctx.eval_samples()?;
    let truth: Vec<f64> = eval.iter().map(|x| ctx.target.eval(x.as_slice())).collect();

    let mut budgets = Vec::new();
    let mut last = None;
    for fit in &approx.budgets {
        let (net, manifest, mut report) = compile(ctx, fit)?;
        let mut sq = 0.0;
        for (x, y) in eval.iter().zip(&truth) {
            let e = evaluate_network(&net, x.as_slice()).stage("evaluate")? - y;
            sq += e * e;
        }
        report.end_to_end_rms = (sq / eval.len() as f64).sqrt();
        budgets.push(report);
        last = Some((net, manifest, fit));
    }
    let (net, manifest, fit) = last.expect("at least one budget");
    let exps = &fit.expansions;

    // network against the analytic sum near the manifold
    let probes = near_manifold_probes(ctx, ctx.cfg.equivalence_points)?;
    let mut worst: f64 = 0.0;
    for x in &probes {
        let a = analytic_evaluate(&ctx.atlas, exps, &ctx.params, x).stage("equivalence")?;
        worst = worst.max(relative(evaluate_network(&net, x).stage("equivalence")?, a));
    }
    let equivalence = DeviationCheck::new(probes.len(), worst, EQUIVALENCE_TOL);

    // rectified first layer on the validity box
    let vbox = validity_box(ctx)?;
    let shift = required_shift(&net, &vbox).stage("simulation")?;
    let sim = relu_simulate_linear(&net, shift, &vbox).stage("simulation")?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed.wrapping_add(4));
    let uniform: Vec<Vec<f64>> = (0..ctx.cfg.equivalence_points)
        .map(|_| vbox.lo().iter().zip(vbox.hi()).map(|(a, b)| rng.gen_range(*a..=*b)).collect())
        .collect();
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for x in probes.iter().filter(|x| vbox.contains(x)).chain(&uniform) {
        let a = analytic_evaluate(&ctx.atlas, exps, &ctx.params, x).stage("simulation")?;
        worst = worst.max(relative(evaluate_network(&sim, x).stage("simulation")?, a));
        points += 1;
    }
    let simulation = SimulationCheck {
        box_lo: vbox.lo().to_vec(),
        box_hi: vbox.hi().to_vec(),
        shift,
        check: DeviationCheck::new(points, worst, EQUIVALENCE_TOL),
    };

    let masking = masking_check(ctx, &net, exps, &eval[..eval.len().min(MASK_SAMPLES)])?;

    let pou = PartitionOfUnity::new(&ctx.atlas);
    let checked = &eval[..eval.len().min(POU_SAMPLES)];
    let mut worst_pou: f64 = 0.0;
    let mut worst_fi: f64 = 0.0;
    let cfs = (0..ctx.atlas.len()).map(|i| chart_function(ctx, i)).collect::<Result<Vec<_>, _>>()?;
    for x in checked {
        let w = pou.weights(x.as_slice()).stage("partition of unity")?;
        worst_pou = worst_pou.max((w.iter().map(|(_, v)| v).sum::<f64>() - 1.0).abs());
        let mut total = 0.0;
        for (i, chart) in ctx.atlas.charts.iter().enumerate() {
            if chart.contains(x.as_slice()) {
                let (u, _) = chart.coords(x.as_slice()).stage("sum_fi")?;
                total += cfs[i].eval(&u).stage("sum_fi")?;
            }
        }
        worst_fi = worst_fi.max((total - ctx.target.eval(x.as_slice())).abs());
    }

    let flat_reduction = match ctx.model.kind() {
        ManifoldKind::FlatPatch { .. } if ctx.atlas.len() == 1 => Some(flat_reduction(ctx, &net, &exps[0])?),
        _ => None,
    };

    let decreasing = budgets.windows(2).all(|w| w[1].end_to_end_rms < w[0].end_to_end_rms);
    let mut report = CompileReport {
        tool_version: TOOL_VERSION,
        config_hash: ctx.hash.clone(),
        method: ctx.cfg.method,
        charts: ctx.atlas.len(),
        c_gamma_bound: ctx.atlas.c_gamma_bound,
        budgets,
        manifest,
        equivalence,
        simulation,
        masking,
        partition_of_unity: DeviationCheck::new(checked.len(), worst_pou, POU_TOL),
        sum_fi: DeviationCheck::new(checked.len(), worst_fi, SUM_FI_TOL),
        radii,
        end_to_end_strictly_decreasing: decreasing,
        flat_reduction,
        passed: false,
    };
    report.passed = report.first_failure().is_none();
    Ok(CompileOutputs {
        network: net.to_file().stage("serialize")?,
        report,
    })
}

fn masking_check(ctx: &Context, net: &ReluNetwork, exps: &[Expansion], samples: &[DVector<f64>]) -> Result<MaskingCheck, HarnessError> {
    let mut masked: Vec<Option<ReluNetwork>> = (0..ctx.atlas.len()).map(|_| None).collect();
    let (mut pairs, mut max_contrib, mut max_change) = (0, 0.0f64, 0.0f64);
    for x in samples {
        let xs = x.as_slice();
        let contributions = analytic_contributions(&ctx.atlas, exps, &ctx.params, xs).stage("masking")?;
        let full = evaluate_network(net, xs).stage("masking")?;
        for (i, chart) in ctx.atlas.charts.iter().enumerate() {
            if chart.contains(xs) {
                continue;
            }
            let (u, _) = chart.coords(xs).stage("masking")?;
            match chart_inverse(chart, &ctx.model, &u) {
                Ok(_) => {}
                Err(Error::OutsideChartImage) => continue,
                Err(e) => return Err(HarnessError::Pipeline { stage: "masking", source: e }),
            }
            pairs += 1;
            max_contrib = max_contrib.max(contributions[i].abs());
            if masked[i].is_none() {
                masked[i] = Some(mask_chart(net, i).stage("masking")?);
            }
            let without = evaluate_network(masked[i].as_ref().expect("just built"), xs).stage("masking")?;
            max_change = max_change.max((without - full).abs());
        }
    }
    Ok(MaskingCheck {
        samples: samples.len(),
        pairs,
        max_contribution: max_contrib,
        max_masked_change: max_change,
        tolerance: MASK_TOL,
        passed: max_contrib <= MASK_TOL && max_change <= MASK_TOL,
    })
}

/// One flat chart: the network's sup error on the patch must equal the
/// chart-local sup error of the expansion.
fn flat_reduction(ctx: &Context, net: &ReluNetwork, exp: &Expansion) -> Result<ReductionCheck, HarnessError> {
    let region = fit_box(ctx, 0)?;
    let grid = sup_grid(&region, ctx.model.dim(), ctx.cfg.scales.k_max).stage("flat reduction")?;
    let chart = ctx.atlas.chart(0).stage("flat reduction")?;
    let cf = chart_function(ctx, 0)?;
    let ev = ExpansionEvaluator::new(exp, &ctx.params).stage("flat reduction")?;
    let (mut e2e, mut local, mut points) = (0.0f64, 0.0f64, 0);
    for u in grid.points() {
        let x = match chart_inverse(chart, &ctx.model, u) {
            Ok(x) => x,
            Err(Error::OutsideChartImage) => continue,
            Err(e) => return Err(HarnessError::Pipeline { stage: "flat reduction", source: e }),
        };
        let xs = x.as_slice();
        e2e = e2e.max((evaluate_network(net, xs).stage("flat reduction")? - ctx.target.eval(xs)).abs());
        local = local.max((ev.eval(u) - cf.eval(u).stage("flat reduction")?).abs());
        points += 1;
    }
    let difference = (e2e - local).abs();
    Ok(ReductionCheck {
        points,
        end_to_end_sup: e2e,
        chart_local_sup: local,
        difference,
        tolerance: REDUCTION_TOL,
        passed: difference <= REDUCTION_TOL,
    })
}
