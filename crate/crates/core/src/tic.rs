//! Partial-likelihood Takeuchi information criterion and bandwidth search.
//!
//! For bandwidth h with per-location estimates β̂_j:
//!
//! ```text
//! TIC(h) = −2 Σ_j Σ_{i at j} δ_i [Z_i'β̂_j − log Σ_{k ∈ R(T_i)} exp(Z_k'β̂_j)]
//!          + 2 Σ_j U_j' I_j⁻¹ U_j
//! ```
//!
//! where `U_j` is the unweighted score of location j's own subjects at
//! β̂_j and `I_j` the weighted observed information of the fit.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cox::{fit_all_locations, FitOptions, FitResult, LocationFit, WeightedPartialLikelihood};
use crate::error::{Error, Result};
use crate::graph::DistanceMatrix;
use crate::survival::Cohort;
use crate::weighting::WeightScheme;

/// Which subjects form `R(T_i)` in the likelihood term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RiskSetScope {
    /// Only subjects at the same location as the event.
    #[default]
    WithinLocation,
    /// Every subject in the cohort (sensitivity check).
    Global,
}

/// Score of location `location`'s subjects alone at `beta`, with risk
/// sets restricted to that location and unit weights. Zero when the
/// location has no events.
pub fn location_score(cohort: &Cohort, location: usize, beta: &[f64]) -> Vec<f64> {
    match WeightedPartialLikelihood::within_location(cohort, location) {
        Ok(model) => model.evaluate(beta).score.as_slice().to_vec(),
        Err(_) => vec![0.0; cohort.p()],
    }
}

/// Log partial likelihood of location `location`'s events at `beta`.
fn location_loglik(cohort: &Cohort, location: usize, beta: &[f64], scope: RiskSetScope) -> f64 {
    match scope {
        RiskSetScope::WithinLocation => WeightedPartialLikelihood::within_location(cohort, location)
            .map(|m| m.value(beta))
            .unwrap_or(0.0),
        RiskSetScope::Global => {
            let eta = |i: usize| -> f64 {
                cohort.subject(i).covariates.iter().zip(beta).map(|(a, b)| a * b).sum()
            };
            let order = cohort.time_order();
            let mut s0 = 0.0;
            let mut ll = 0.0;
            let mut end = order.len();
            while end > 0 {
                let t = cohort.subject(order[end - 1]).time;
                let mut start = end;
                while start > 0 && cohort.subject(order[start - 1]).time == t {
                    start -= 1;
                    s0 += eta(order[start]).exp();
                }
                for &i in &order[start..end] {
                    let s = cohort.subject(i);
                    if s.event && s.location == location {
                        ll += eta(i) - s0.ln();
                    }
                }
                end = start;
            }
            ll
        }
    }
}

/// `U' I⁻¹ U`, falling back to the Moore–Penrose pseudo-inverse when `I`
/// is not positive definite. The flag reports the fallback.
pub fn quadratic_trace(information: &DMatrix<f64>, u: &[f64]) -> (f64, bool) {
    let u = DVector::from_column_slice(u);
    if u.iter().all(|&x| x == 0.0) {
        return (0.0, false);
    }
    if let Some(chol) = information.clone().cholesky() {
        let x = chol.solve(&u);
        if x.iter().all(|v| v.is_finite()) {
            return (u.dot(&x), false);
        }
    }
    let pinv = information
        .clone()
        .pseudo_inverse(1e-12 * information.amax().max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DMatrix::zeros(information.nrows(), information.ncols()));
    (u.dot(&(pinv * &u)), true)
}

/// TIC and its two components.
#[derive(Debug, Clone, PartialEq)]
pub struct TicValue {
    pub tic: f64,
    pub loglik_term: f64,
    pub trace_term: f64,
    /// Locations whose information needed the pseudo-inverse.
    pub pseudo_inverse_locations: Vec<usize>,
}

/// Reasons a set of fits has no TIC.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TicError {
    #[error("expected {expected} location fits, got {found}")]
    Count { expected: usize, found: usize },
    #[error("{count} location fits failed or did not converge")]
    Failed { count: usize },
}

/// TIC over converged per-location fits (one per registry location).
pub fn tic(cohort: &Cohort, fits: &[FitResult], scope: RiskSetScope) -> std::result::Result<TicValue, TicError> {
    let j = cohort.n_locations();
    if fits.len() != j {
        return Err(TicError::Count { expected: j, found: fits.len() });
    }
    let failed = fits.iter().filter(|f| !f.converged).count();
    if failed > 0 {
        return Err(TicError::Failed { count: failed });
    }
    let parts: Vec<(f64, f64, bool)> = fits
        .iter()
        .enumerate()
        .map(|(loc, fit)| {
            let ll = location_loglik(cohort, loc, &fit.beta, scope);
            let u = location_score(cohort, loc, &fit.beta);
            let (q, pinv) = quadratic_trace(&fit.information, &u);
            (ll, q, pinv)
        })
        .collect();
    let loglik_term = -2.0 * parts.iter().map(|p| p.0).sum::<f64>();
    let trace_term = 2.0 * parts.iter().map(|p| p.1).sum::<f64>();
    let pseudo_inverse_locations =
        parts.iter().enumerate().filter(|(_, p)| p.2).map(|(k, _)| k).collect();
    Ok(TicValue { tic: loglik_term + trace_term, loglik_term, trace_term, pseudo_inverse_locations })
}

/// TIC for per-location fit outcomes; any failure invalidates the set.
pub fn tic_of_outcomes(
    cohort: &Cohort,
    fits: &[LocationFit],
    scope: RiskSetScope,
) -> std::result::Result<TicValue, TicError> {
    let failed = fits.iter().filter(|f| !matches!(f, Ok(r) if r.converged)).count();
    if failed > 0 {
        return Err(TicError::Failed { count: failed });
    }
    let ok: Vec<FitResult> = fits.iter().map(|f| f.clone().unwrap()).collect();
    tic(cohort, &ok, scope)
}

/// TIC of a single global model: every location uses the same estimate.
pub fn tic_global(
    cohort: &Cohort,
    global: &FitResult,
    scope: RiskSetScope,
) -> std::result::Result<TicValue, TicError> {
    let fits = vec![global.clone(); cohort.n_locations()];
    tic(cohort, &fits, scope)
}

/// One grid point of a bandwidth search.
#[derive(Debug, Clone, PartialEq)]
pub struct TicEntry {
    pub h: f64,
    /// NaN when the grid point is invalid.
    pub tic: f64,
    pub loglik_term: f64,
    pub trace_term: f64,
    pub n_failed_locations: usize,
    pub n_pseudo_inverse: usize,
}

impl TicEntry {
    pub fn is_valid(&self) -> bool {
        self.n_failed_locations == 0 && self.tic.is_finite()
    }

    pub fn from_outcomes(h: f64, cohort: &Cohort, fits: &[LocationFit], scope: RiskSetScope) -> Self {
        let n_failed_locations = fits.iter().filter(|f| !matches!(f, Ok(r) if r.converged)).count();
        match tic_of_outcomes(cohort, fits, scope) {
            Ok(v) => TicEntry {
                h,
                tic: v.tic,
                loglik_term: v.loglik_term,
                trace_term: v.trace_term,
                n_failed_locations,
                n_pseudo_inverse: v.pseudo_inverse_locations.len(),
            },
            Err(_) => TicEntry {
                h,
                tic: f64::NAN,
                loglik_term: f64::NAN,
                trace_term: f64::NAN,
                n_failed_locations,
                n_pseudo_inverse: 0,
            },
        }
    }
}

/// TIC over a bandwidth grid with the selected (minimising) bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct TicTrace {
    pub entries: Vec<TicEntry>,
    pub selected: usize,
}

impl TicTrace {
    /// Picks the smallest valid TIC; ties go to the smaller bandwidth.
    pub fn from_entries(entries: Vec<TicEntry>) -> Result<Self> {
        let selected = argmin_tic(&entries).ok_or(Error::NoValidBandwidth)?;
        Ok(Self { entries, selected })
    }

    pub fn selected_bandwidth(&self) -> f64 {
        self.entries[self.selected].h
    }
}

/// Index of the minimum valid TIC, ties toward smaller h.
pub fn argmin_tic(entries: &[TicEntry]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, e) in entries.iter().enumerate() {
        if !e.is_valid() {
            continue;
        }
        best = match best {
            None => Some(k),
            Some(b) => {
                let cur = &entries[b];
                if e.tic < cur.tic || (e.tic == cur.tic && e.h < cur.h) {
                    Some(k)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Parses a grid: `start:end:step` or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |why: &str| Error::InvalidGrid(format!("{spec:?}: {why}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let grid: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:end:step"));
        }
        let (start, end, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || end < start {
            return Err(bad("step must be positive and end >= start"));
        }
        let count = ((end - start) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9).collect()
    } else {
        spec.split(',').map(num).collect::<Result<_>>()?
    };
    if grid.is_empty() {
        return Err(bad("empty"));
    }
    if grid.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
        return Err(bad("bandwidths must be positive"));
    }
    Ok(grid)
}

/// Fits every location at every grid bandwidth and records the TIC trace.
pub fn select_bandwidth(
    cohort: &Cohort,
    dmat: &DistanceMatrix,
    family: &WeightScheme,
    grid: &[f64],
    opts: &FitOptions,
    scope: RiskSetScope,
) -> Result<TicTrace> {
    if grid.is_empty() {
        return Err(Error::InvalidGrid("empty grid".into()));
    }
    let entries = grid
        .par_iter()
        .map(|&h| {
            let scheme = family.with_bandwidth(h)?;
            let fits = fit_all_locations(cohort, dmat, &scheme, opts)?;
            Ok(TicEntry::from_outcomes(h, cohort, &fits, scope))
        })
        .collect::<Result<Vec<_>>>()?;
    TicTrace::from_entries(entries)
}
