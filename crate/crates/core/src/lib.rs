//! Geographically weighted Cox regression on areal data.
//!
//! Locations are nodes of a contiguity graph. Each location gets its own
//! Cox model fitted to a weighted partial likelihood, where subjects from
//! other locations are down-weighted by a kernel of their distance, and
//! the kernel bandwidth is chosen by a Takeuchi information criterion.

// NaN must fail positivity checks, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cox;
pub mod error;
pub mod graph;
pub mod io;
pub mod sim;
pub mod survival;
pub mod tic;
pub mod weighting;

pub use cox::{
    fit_all_locations, fit_global, fit_location, FitError, FitOptions, FitResult, Likelihood, LocationFit,
    WeightedPartialLikelihood,
};
pub use error::{Error, Result};
pub use graph::{
    build_graph, graph_distance_matrix, great_circle_matrix, normalize_to_max, Centroid, DistanceMatrix,
    DistanceSource, Node, SpatialGraph,
};
pub use sim::{run_study, ModelVariant, ScenarioKind, SimScenario, StudyConfig, StudyResult};
pub use survival::{kaplan_meier, validate_cohort, Cohort, KmCurve, RawRecord, Subject};
pub use tic::{select_bandwidth, RiskSetScope, TicEntry, TicTrace};
pub use weighting::{DistanceKind, Kernel, WeightScheme, WeightVector};
