//! Synthetic spatial survival cohorts and the replicated simulation study.
//!
//! Every replicate draws from its own ChaCha8 stream seeded with
//! `base_seed + replicate`, and results are reduced in replicate order, so
//! the output does not depend on how work is scheduled across threads.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::cox::{fit_all_locations, fit_global, FitOptions, LocationFit};
use crate::error::{Error, Result};
use crate::graph::{graph_distance_matrix, great_circle_matrix, normalize_to_max, DistanceMatrix, SpatialGraph};
use crate::survival::{Cohort, Subject};
use crate::tic::{argmin_tic, RiskSetScope, TicEntry};
use crate::weighting::{DistanceKind, Kernel, WeightScheme};

pub const COVARIATE_NAMES: [&str; 3] = ["Age", "Black", "Married"];

/// Coarse grid used for desk-scale studies.
pub const DESK_GRID: [f64; 6] = [0.5, 1.0, 5.0, 10.0, 25.0, 50.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Same coefficients everywhere.
    Null,
    /// Linear in centred latitude + longitude.
    Coordinate,
    /// Linear in graph distance to a baseline location.
    GraphDistance,
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "null" => Ok(ScenarioKind::Null),
            "coordinate" => Ok(ScenarioKind::Coordinate),
            "graphdist" => Ok(ScenarioKind::GraphDistance),
            other => Err(Error::Parse(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Truth-generating configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub kind: ScenarioKind,
    pub base_beta: [f64; 3],
    pub gradient: f64,
    pub baseline_label: String,
    pub baseline_hazard: f64,
    /// Censoring is `censor_point` with this probability, else Uniform(0, censor_point).
    pub censor_point_prob: f64,
    pub censor_point: f64,
    pub size_min: usize,
    pub size_max: usize,
    pub p_black: f64,
    pub p_married: f64,
}

impl SimScenario {
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            kind,
            base_beta: [0.7, 0.5, -0.8],
            gradient: match kind {
                ScenarioKind::Null => 0.0,
                ScenarioKind::Coordinate => 0.15,
                ScenarioKind::GraphDistance => 0.12,
            },
            baseline_label: "St. Charles".to_string(),
            baseline_hazard: 0.03,
            censor_point_prob: 0.9,
            censor_point: 60.0,
            size_min: 30,
            size_max: 40,
            p_black: 0.3,
            p_married: 0.7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(prob(self.censor_point_prob) && prob(self.p_black) && prob(self.p_married)) {
            return Err(Error::InvalidScheme("probabilities must lie in [0, 1]".into()));
        }
        if self.size_min > self.size_max {
            return Err(Error::InvalidScheme("empty per-location size range".into()));
        }
        if !(self.baseline_hazard > 0.0) {
            return Err(Error::InvalidScheme("baseline hazard must be positive".into()));
        }
        Ok(())
    }
}

/// True coefficient rows (one per graph node) for a scenario.
pub fn scenario_betas(
    scenario: &SimScenario,
    graph: &SpatialGraph,
    dmat: &DistanceMatrix,
) -> Result<Vec<Vec<f64>>> {
    let j = graph.len();
    let offsets: Vec<f64> = match scenario.kind {
        ScenarioKind::Null => vec![0.0; j],
        ScenarioKind::Coordinate => {
            let cents = graph
                .nodes()
                .iter()
                .map(|n| n.centroid.ok_or_else(|| Error::MissingCentroid(n.label.clone())))
                .collect::<Result<Vec<_>>>()?;
            let mean_lat = cents.iter().map(|c| c.latitude).sum::<f64>() / j as f64;
            let mean_lon = cents.iter().map(|c| c.longitude).sum::<f64>() / j as f64;
            cents
                .iter()
                .map(|c| scenario.gradient * (c.latitude - mean_lat + c.longitude - mean_lon))
                .collect()
        }
        ScenarioKind::GraphDistance => {
            let b = graph
                .index_of(&scenario.baseline_label)
                .ok_or_else(|| Error::MissingBaseline(scenario.baseline_label.clone()))?;
            let d = dmat.row(b);
            if d.iter().any(|x| !x.is_finite()) {
                return Err(Error::Disconnected(scenario.baseline_label.clone()));
            }
            let others = d.iter().enumerate().filter(|(k, _)| *k != b).map(|(_, &x)| x);
            let mean = if j > 1 { others.sum::<f64>() / (j - 1) as f64 } else { 0.0 };
            d.iter().map(|&x| scenario.gradient * (x - mean)).collect()
        }
    };
    Ok(offsets
        .into_iter()
        .map(|o| scenario.base_beta.iter().map(|b| b + o).collect())
        .collect())
}

/// Draws per-location sizes uniformly from the scenario's range.
pub fn draw_sizes(scenario: &SimScenario, j: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..j).map(|_| rng.random_range(scenario.size_min..=scenario.size_max)).collect()
}

/// Skewed per-location sizes summing to `total`, with the four smallest
/// locations holding 1, 1, 2 and 2 subjects (sparse registry data).
pub fn sparse_sizes(j: usize, total: usize, seed: u64) -> Result<Vec<usize>> {
    const TINY: [usize; 4] = [1, 1, 2, 2];
    if j < TINY.len() + 1 || total < 6 + 3 * (j - TINY.len()) {
        return Err(Error::InvalidScheme(format!("cannot spread {total} subjects over {j} locations")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..j)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z.exp()
        })
        .collect();
    let mut idx: Vec<usize> = (0..j).collect();
    idx.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));
    let mut sizes = vec![0usize; j];
    for (k, &loc) in idx.iter().take(TINY.len()).enumerate() {
        sizes[loc] = TINY[k];
    }
    let rest = &idx[TINY.len()..];
    let floor = 3;
    let budget = total - TINY.iter().sum::<usize>() - floor * rest.len();
    let wsum: f64 = rest.iter().map(|&l| raw[l]).sum();
    let mut shares: Vec<(usize, f64)> = rest
        .iter()
        .map(|&l| {
            let exact = budget as f64 * raw[l] / wsum;
            sizes[l] = floor + exact.floor() as usize;
            (l, exact - exact.floor())
        })
        .collect();
    let assigned: usize = sizes.iter().sum();
    shares.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (l, _) in shares.iter().take(total - assigned) {
        sizes[*l] += 1;
    }
    Ok(sizes)
}

/// Generates one cohort with the given per-location sizes.
pub fn simulate_cohort_with_sizes(
    truths: &[Vec<f64>],
    scenario: &SimScenario,
    labels: &[String],
    sizes: &[usize],
    rng: &mut impl Rng,
) -> Result<Cohort> {
    if truths.len() != labels.len() || sizes.len() != labels.len() {
        return Err(Error::Shape("truths, labels and sizes must have one entry per location".into()));
    }
    let mut subjects = Vec::with_capacity(sizes.iter().sum());
    for (loc, (&n, beta)) in sizes.iter().zip(truths).enumerate() {
        for _ in 0..n {
            let age: f64 = StandardNormal.sample(rng);
            let black = f64::from(u8::from(rng.random_bool(scenario.p_black)));
            let married = f64::from(u8::from(rng.random_bool(scenario.p_married)));
            let z = vec![age, black, married];
            let eta: f64 = z.iter().zip(beta).map(|(a, b)| a * b).sum();
            let u = 1.0 - rng.random::<f64>();
            let t_true = -u.ln() / (scenario.baseline_hazard * eta.exp());
            let censor = if rng.random_bool(scenario.censor_point_prob) {
                scenario.censor_point
            } else {
                scenario.censor_point * rng.random::<f64>()
            };
            let event = t_true <= censor;
            let time = t_true.min(censor);
            debug_assert_eq!(event, t_true <= censor);
            subjects.push(Subject {
                id: format!("{}-{}", loc, subjects.len()),
                time,
                event,
                covariates: z,
                location: loc,
            });
        }
    }
    Cohort::new(subjects, labels.to_vec(), COVARIATE_NAMES.iter().map(|s| s.to_string()).collect())
}

/// Generates one cohort, deterministic in `seed`.
pub fn simulate_cohort(
    truths: &[Vec<f64>],
    scenario: &SimScenario,
    labels: &[String],
    seed: u64,
) -> Result<Cohort> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = draw_sizes(scenario, labels.len(), &mut rng);
    simulate_cohort_with_sizes(truths, scenario, labels, &sizes, &mut rng)
}

/// Cohort with `total` subjects on the skewed [`sparse_sizes`] layout.
pub fn simulate_sparse_cohort(
    truths: &[Vec<f64>],
    scenario: &SimScenario,
    labels: &[String],
    total: usize,
    seed: u64,
) -> Result<Cohort> {
    let sizes = sparse_sizes(labels.len(), total, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    simulate_cohort_with_sizes(truths, scenario, labels, &sizes, &mut rng)
}

/// The four summary statistics for one coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mab: f64,
    pub msd: f64,
    pub mmse: f64,
    pub mcp: f64,
    /// Locations that entered the averages.
    pub locations_used: usize,
    /// Location-replicate cells without a usable estimate.
    pub missing_cells: usize,
}

/// Mean absolute bias, mean SD, mean MSE and mean 95% coverage, each
/// averaged over replicates within a location and then over locations.
///
/// `estimates[r][l][m]` and `ses[r][l][m]`; non-finite entries are treated
/// as failed fits and skipped. Locations with fewer than two usable
/// replicates are left out of the location average.
pub fn compute_metrics(
    estimates: &[Vec<Vec<f64>>],
    ses: &[Vec<Vec<f64>>],
    truths: &[Vec<f64>],
) -> Result<Vec<Metrics>> {
    let r = estimates.len();
    if r < 2 {
        return Err(Error::TooFewReplicates);
    }
    if ses.len() != r {
        return Err(Error::Shape(format!("{} replicate estimates vs {} SE sets", r, ses.len())));
    }
    let j = truths.len();
    let p = truths.first().map_or(0, Vec::len);
    for (e, s) in estimates.iter().zip(ses) {
        if e.len() != j || s.len() != j || e.iter().chain(s).any(|row| row.len() != p) {
            return Err(Error::Shape(format!("every replicate must be {j}x{p}")));
        }
    }
    let mut out = Vec::with_capacity(p);
    for m in 0..p {
        let (mut mab, mut msd, mut mmse, mut mcp) = (0.0, 0.0, 0.0, 0.0);
        let mut used = 0;
        let mut missing = 0;
        for l in 0..j {
            let truth = truths[l][m];
            let cells: Vec<(f64, f64)> = (0..r)
                .map(|k| (estimates[k][l][m], ses[k][l][m]))
                .filter(|(b, s)| b.is_finite() && s.is_finite())
                .collect();
            missing += r - cells.len();
            if cells.len() < 2 {
                continue;
            }
            let n = cells.len() as f64;
            let mean = cells.iter().map(|c| c.0).sum::<f64>() / n;
            mab += cells.iter().map(|c| (c.0 - truth).abs()).sum::<f64>() / n;
            msd += (cells.iter().map(|c| (c.0 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            mmse += cells.iter().map(|c| (c.0 - truth).powi(2)).sum::<f64>() / n;
            mcp += cells.iter().filter(|c| (c.0 - truth).abs() <= 1.96 * c.1).count() as f64 / n;
            used += 1;
        }
        let d = used.max(1) as f64;
        let nan_if_empty = |x: f64| if used == 0 { f64::NAN } else { x / d };
        out.push(Metrics {
            mab: nan_if_empty(mab),
            msd: nan_if_empty(msd),
            mmse: nan_if_empty(mmse),
            mcp: nan_if_empty(mcp),
            locations_used: used,
            missing_cells: missing,
        });
    }
    Ok(out)
}

/// A model fitted at every location in each replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelVariant {
    /// Only the location's own subjects.
    Local,
    /// All subjects, equal weights.
    Global,
    /// Stochastic neighbourhood on graph distance (threshold 1 hop).
    GraphDistance,
    /// Stochastic neighbourhood on normalised great-circle distance.
    GreatCircle { threshold: f64 },
    /// Great-circle threshold chosen so the number of unit weights matches
    /// the graph-distance scheme.
    GreatCircleMatched,
}

impl ModelVariant {
    pub fn is_weighted(&self) -> bool {
        !matches!(self, ModelVariant::Local | ModelVariant::Global)
    }

    /// The variants compared in the published study.
    pub fn standard_set() -> Vec<ModelVariant> {
        vec![
            ModelVariant::Local,
            ModelVariant::Global,
            ModelVariant::GraphDistance,
            ModelVariant::GreatCircle { threshold: 0.5 },
            ModelVariant::GreatCircle { threshold: 1.0 },
            ModelVariant::GreatCircle { threshold: 2.0 },
            ModelVariant::GreatCircleMatched,
        ]
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(ModelVariant::Local),
            "global" => Ok(ModelVariant::Global),
            "gd" => Ok(ModelVariant::GraphDistance),
            "gcd-matched" => Ok(ModelVariant::GreatCircleMatched),
            other => match other.strip_prefix("gcd:") {
                Some(t) => t
                    .parse::<f64>()
                    .ok()
                    .filter(|t| *t >= 0.0)
                    .map(|threshold| ModelVariant::GreatCircle { threshold })
                    .ok_or_else(|| Error::Parse(format!("bad threshold in {other:?}"))),
                None => Err(Error::Parse(format!(
                    "unknown variant {other:?} (local, global, gd, gcd:<dl>, gcd-matched)"
                ))),
            },
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelVariant::Local => f.write_str("local"),
            ModelVariant::Global => f.write_str("global"),
            ModelVariant::GraphDistance => f.write_str("gd"),
            ModelVariant::GreatCircle { threshold } => write!(f, "gcd:{threshold}"),
            ModelVariant::GreatCircleMatched => f.write_str("gcd-matched"),
        }
    }
}

/// Normalised great-circle threshold whose "weight 1" entries (d ≤ d_l)
/// are as many as the graph-distance scheme's (d ≤ 1), diagonal included.
pub fn matched_threshold(graph_d: &DistanceMatrix, gc_d: &DistanceMatrix) -> Result<f64> {
    let n = graph_d.len();
    if gc_d.len() != n {
        return Err(Error::Shape("distance matrices differ in size".into()));
    }
    let target = (0..n).flat_map(|i| graph_d.row(i).iter()).filter(|&&d| d <= 1.0).count();
    let mut all: Vec<f64> = (0..n).flat_map(|i| gc_d.row(i).iter().copied()).collect();
    all.sort_by(f64::total_cmp);
    Ok(all[target.max(1) - 1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub scenario: SimScenario,
    pub variants: Vec<ModelVariant>,
    pub replicates: usize,
    pub base_seed: u64,
    pub grid: Vec<f64>,
    pub fit: FitOptions,
    /// Keep every estimate for the audit archive.
    pub keep_archive: bool,
    /// Largest normalised great-circle distance.
    pub normalize_max: f64,
}

impl StudyConfig {
    /// Desk-scale defaults: 100 replicates on the coarse grid.
    pub fn desk(scenario: SimScenario, variants: Vec<ModelVariant>) -> Self {
        Self {
            scenario,
            variants,
            replicates: 100,
            base_seed: 20_200_101,
            grid: DESK_GRID.to_vec(),
            fit: FitOptions::default(),
            keep_archive: false,
            normalize_max: 11.0,
        }
    }

    /// Full published configuration: 1000 replicates, h = 0.5, 1, …, 50.
    pub fn full(scenario: SimScenario, variants: Vec<ModelVariant>) -> Self {
        Self {
            replicates: 1000,
            grid: (1..=100).map(|k| 0.5 * k as f64).collect(),
            ..Self::desk(scenario, variants)
        }
    }
}

/// Geometry and truths shared by all replicates.
#[derive(Debug, Clone)]
pub struct StudySetup {
    pub labels: Vec<String>,
    pub graph_distance: DistanceMatrix,
    pub great_circle: Option<DistanceMatrix>,
    pub matched_threshold: Option<f64>,
    pub truths: Vec<Vec<f64>>,
}

impl StudySetup {
    pub fn new(config: &StudyConfig, graph: &SpatialGraph) -> Result<Self> {
        let graph_distance = graph_distance_matrix(graph);
        let needs_gc = config.variants.iter().any(|v| {
            matches!(v, ModelVariant::GreatCircle { .. } | ModelVariant::GreatCircleMatched)
        });
        let great_circle = if needs_gc {
            Some(normalize_to_max(&great_circle_matrix(graph)?, config.normalize_max)?)
        } else {
            None
        };
        let matched_threshold = match &great_circle {
            Some(gc) => Some(matched_threshold(&graph_distance, gc)?),
            None => None,
        };
        let truths = scenario_betas(&config.scenario, graph, &graph_distance)?;
        Ok(Self { labels: graph.labels(), graph_distance, great_circle, matched_threshold, truths })
    }

    fn scheme_family(&self, variant: ModelVariant) -> Result<(WeightScheme, &DistanceMatrix)> {
        let gc = || {
            self.great_circle
                .as_ref()
                .ok_or_else(|| Error::InvalidScheme("great-circle distances unavailable".into()))
        };
        match variant {
            ModelVariant::Local => {
                // Indicator strictly below the smallest inter-location distance.
                let min = self.graph_distance.min_positive().unwrap_or(1.0);
                let scheme = WeightScheme::new(Kernel::Indicator, None, Some(min / 2.0), DistanceKind::Graph)?;
                Ok((scheme, &self.graph_distance))
            }
            ModelVariant::GraphDistance => Ok((WeightScheme::graph(1.0)?, &self.graph_distance)),
            ModelVariant::GreatCircle { threshold } => Ok((WeightScheme::great_circle(1.0, threshold)?, gc()?)),
            ModelVariant::GreatCircleMatched => {
                let t = self.matched_threshold.unwrap_or(1.0);
                Ok((WeightScheme::great_circle(1.0, t)?, gc()?))
            }
            ModelVariant::Global => Err(Error::InvalidScheme("global model has no weight scheme".into())),
        }
    }

    /// Display label, with the resolved threshold for the matched variant.
    pub fn label(&self, variant: ModelVariant) -> String {
        match variant {
            ModelVariant::GreatCircleMatched => {
                format!("gcd-matched:{:.4}", self.matched_threshold.unwrap_or(f64::NAN))
            }
            other => other.to_string(),
        }
    }
}

/// Estimates and SEs for every location of one fit set (NaN on failure).
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSet {
    pub estimates: Vec<Vec<f64>>,
    pub ses: Vec<Vec<f64>>,
    pub failures: usize,
}

impl EstimateSet {
    fn from_outcomes(fits: &[LocationFit], p: usize) -> Self {
        let mut failures = 0;
        let mut estimates = Vec::with_capacity(fits.len());
        let mut ses = Vec::with_capacity(fits.len());
        for f in fits {
            match f {
                Ok(r) if r.converged => {
                    estimates.push(r.beta.clone());
                    ses.push(r.se.clone());
                }
                _ => {
                    failures += 1;
                    estimates.push(vec![f64::NAN; p]);
                    ses.push(vec![f64::NAN; p]);
                }
            }
        }
        Self { estimates, ses, failures }
    }
}

/// Per-variant results of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantOutcome {
    /// One set per grid bandwidth for weighted variants, one otherwise.
    pub sets: Vec<EstimateSet>,
    pub tic: Vec<TicEntry>,
    /// Index into the grid of the TIC-selected bandwidth.
    pub selected: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub censored_fraction: f64,
    pub location_censoring: Vec<f64>,
    pub variants: Vec<VariantOutcome>,
}

/// Generates and fits one replicate.
pub fn run_replicate(
    config: &StudyConfig,
    setup: &StudySetup,
    replicate: usize,
) -> Result<ReplicateOutcome> {
    let seed = config.base_seed.wrapping_add(replicate as u64);
    let cohort = simulate_cohort(&setup.truths, &config.scenario, &setup.labels, seed)?;
    let p = cohort.p();
    let j = cohort.n_locations();
    let variants = config
        .variants
        .iter()
        .map(|&variant| -> Result<VariantOutcome> {
            match variant {
                ModelVariant::Global => {
                    let fit = fit_global(&cohort, &config.fit);
                    let outcomes: Vec<LocationFit> = vec![fit; j];
                    Ok(VariantOutcome {
                        sets: vec![EstimateSet::from_outcomes(&outcomes, p)],
                        tic: vec![],
                        selected: None,
                    })
                }
                ModelVariant::Local => {
                    let (scheme, dmat) = setup.scheme_family(variant)?;
                    let fits = fit_all_locations(&cohort, dmat, &scheme, &config.fit)?;
                    Ok(VariantOutcome {
                        sets: vec![EstimateSet::from_outcomes(&fits, p)],
                        tic: vec![],
                        selected: None,
                    })
                }
                _ => {
                    let (family, dmat) = setup.scheme_family(variant)?;
                    let mut sets = Vec::with_capacity(config.grid.len());
                    let mut tic = Vec::with_capacity(config.grid.len());
                    for &h in &config.grid {
                        let scheme = family.with_bandwidth(h)?;
                        let fits = fit_all_locations(&cohort, dmat, &scheme, &config.fit)?;
                        tic.push(TicEntry::from_outcomes(h, &cohort, &fits, RiskSetScope::WithinLocation));
                        sets.push(EstimateSet::from_outcomes(&fits, p));
                    }
                    let selected = argmin_tic(&tic);
                    Ok(VariantOutcome { sets, tic, selected })
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let location_censoring = (0..j)
        .map(|l| {
            let m = cohort.location_members(l);
            m.iter().filter(|&&i| !cohort.subject(i).event).count() as f64 / m.len().max(1) as f64
        })
        .collect();
    Ok(ReplicateOutcome {
        replicate,
        censored_fraction: cohort.censored_fraction(),
        location_censoring,
        variants,
    })
}

/// One line of the metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub variant: String,
    /// `None` for local and global models.
    pub bandwidth: Option<f64>,
    /// True for the row at the variant's modal TIC-selected bandwidth.
    pub modal: bool,
    pub coefficient: String,
    pub metrics: Metrics,
}

impl MetricsRow {
    /// `variant`, `variant h=…` or `variant modal h=…`.
    pub fn model_label(&self) -> String {
        match (self.bandwidth, self.modal) {
            (None, _) => self.variant.clone(),
            (Some(h), false) => format!("{} h={}", self.variant, h),
            (Some(h), true) => format!("{} modal h={}", self.variant, h),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
    pub replicates: usize,
}

impl MetricsTable {
    pub fn find(&self, variant: &str, bandwidth: Option<f64>, coefficient: &str) -> Option<&Metrics> {
        self.rows
            .iter()
            .find(|r| {
                !r.modal && r.variant == variant && r.bandwidth == bandwidth && r.coefficient == coefficient
            })
            .map(|r| &r.metrics)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionCount {
    pub variant: String,
    pub h: f64,
    pub times_selected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveRow {
    pub replicate: usize,
    pub variant: String,
    pub bandwidth: Option<f64>,
    pub county: String,
    pub coefficient: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub metrics: MetricsTable,
    pub selection: Vec<SelectionCount>,
    /// Modal TIC-selected bandwidth per weighted variant label.
    pub modal_bandwidth: BTreeMap<String, f64>,
    /// Per replicate, per weighted variant label, the selected bandwidth.
    pub selected_per_replicate: Vec<BTreeMap<String, Option<f64>>>,
    pub censored_fraction: Vec<f64>,
    /// Failed location fits per variant label (summed over bandwidths).
    pub failures: BTreeMap<String, usize>,
    pub truths: Vec<Vec<f64>>,
    pub archive: Option<Vec<ArchiveRow>>,
}

/// Most frequent value; ties go to the smaller bandwidth.
pub fn modal_bandwidth(selected: &[f64]) -> Option<f64> {
    let mut counts: Vec<(f64, usize)> = Vec::new();
    for &h in selected {
        match counts.iter_mut().find(|(x, _)| *x == h) {
            Some(c) => c.1 += 1,
            None => counts.push((h, 1)),
        }
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.total_cmp(&b.0)));
    counts.first().map(|c| c.0)
}

/// Runs the replicated study over all variants.
pub fn run_study(config: &StudyConfig, graph: &SpatialGraph) -> Result<StudyResult> {
    config.scenario.validate()?;
    config.fit.validate()?;
    if config.replicates < 2 {
        return Err(Error::TooFewReplicates);
    }
    if config.grid.is_empty() || config.grid.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::InvalidGrid(format!("{:?}", config.grid)));
    }
    let setup = StudySetup::new(config, graph)?;
    let outcomes = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, &setup, r))
        .collect::<Result<Vec<_>>>()?;
    summarize(config, &setup, &outcomes)
}

/// Reduces replicate outcomes (in replicate order) to the study result.
pub fn summarize(
    config: &StudyConfig,
    setup: &StudySetup,
    outcomes: &[ReplicateOutcome],
) -> Result<StudyResult> {
    let names: Vec<String> = COVARIATE_NAMES.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    let mut selection = Vec::new();
    let mut modal = BTreeMap::new();
    let mut failures = BTreeMap::new();
    let mut selected_per_replicate = vec![BTreeMap::new(); outcomes.len()];

    let push_rows = |rows: &mut Vec<MetricsRow>, label: &str, h: Option<f64>, is_modal: bool, set_index: usize, v: usize| -> Result<usize> {
        let est: Vec<Vec<Vec<f64>>> =
            outcomes.iter().map(|o| o.variants[v].sets[set_index].estimates.clone()).collect();
        let ses: Vec<Vec<Vec<f64>>> =
            outcomes.iter().map(|o| o.variants[v].sets[set_index].ses.clone()).collect();
        let fails = outcomes.iter().map(|o| o.variants[v].sets[set_index].failures).sum();
        for (m, metrics) in compute_metrics(&est, &ses, &setup.truths)?.into_iter().enumerate() {
            rows.push(MetricsRow {
                variant: label.to_string(),
                bandwidth: h,
                modal: is_modal,
                coefficient: names[m].clone(),
                metrics,
            });
        }
        Ok(fails)
    };

    for (v, &variant) in config.variants.iter().enumerate() {
        let label = setup.label(variant);
        if !variant.is_weighted() {
            let f = push_rows(&mut rows, &label, None, false, 0, v)?;
            failures.insert(label, f);
            continue;
        }
        let mut total_fail = 0;
        for (k, &h) in config.grid.iter().enumerate() {
            total_fail += push_rows(&mut rows, &label, Some(h), false, k, v)?;
        }
        failures.insert(label.clone(), total_fail);

        let picks: Vec<f64> = outcomes
            .iter()
            .filter_map(|o| o.variants[v].selected.map(|k| config.grid[k]))
            .collect();
        for (o, per) in outcomes.iter().zip(selected_per_replicate.iter_mut()) {
            per.insert(label.clone(), o.variants[v].selected.map(|k| config.grid[k]));
        }
        for &h in &config.grid {
            selection.push(SelectionCount {
                variant: label.clone(),
                h,
                times_selected: picks.iter().filter(|&&x| x == h).count(),
            });
        }
        if let Some(h) = modal_bandwidth(&picks) {
            modal.insert(label.clone(), h);
            let k = config.grid.iter().position(|&x| x == h).expect("modal h is on the grid");
            push_rows(&mut rows, &label, Some(h), true, k, v)?;
        }
    }

    let archive = config.keep_archive.then(|| {
        let mut out = Vec::new();
        for o in outcomes {
            for (v, &variant) in config.variants.iter().enumerate() {
                let label = setup.label(variant);
                for (k, set) in o.variants[v].sets.iter().enumerate() {
                    let h = variant.is_weighted().then(|| config.grid[k]);
                    for (l, county) in setup.labels.iter().enumerate() {
                        for (m, name) in names.iter().enumerate() {
                            out.push(ArchiveRow {
                                replicate: o.replicate,
                                variant: label.clone(),
                                bandwidth: h,
                                county: county.clone(),
                                coefficient: name.clone(),
                                estimate: set.estimates[l][m],
                                se: set.ses[l][m],
                            });
                        }
                    }
                }
            }
        }
        out
    });

    Ok(StudyResult {
        metrics: MetricsTable { rows, replicates: outcomes.len() },
        selection,
        modal_bandwidth: modal,
        selected_per_replicate,
        censored_fraction: outcomes.iter().map(|o| o.censored_fraction).collect(),
        failures,
        truths: setup.truths.clone(),
        archive,
    })
}
