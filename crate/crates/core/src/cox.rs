//! Weighted Cox partial likelihood and Newton–Raphson fitting.
//!
//! Tied event times use the Breslow convention: every event at a time
//! shares the risk-set denominator built from all subjects with
//! `time >= t`. Subjects with weight 0 are dropped before anything else,
//! so they appear neither as events nor in risk sets.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::graph::DistanceMatrix;
use crate::survival::Cohort;
use crate::weighting::{expand_to_subjects, location_weights, WeightScheme, WeightVector};
use crate::Error;

/// How geographic weights enter the partial likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Likelihood {
    /// Each event's log contribution is multiplied by its own weight:
    /// `Σ δ_i w_i [Z_i'β − log Σ_{R(T_i)} w_j exp(Z_j'β)]`.
    /// This is the case-weighted Cox likelihood (R `coxph(weights = )`).
    #[default]
    WeightedContributions,
    /// Every positively weighted event counts once, weights only act in
    /// the numerator ratio: `Σ_{δ_i, w_i>0} [log w_i + Z_i'β − log Σ w_j exp(Z_j'β)]`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative change in log likelihood.
    pub loglik_tolerance: f64,
    /// Max-norm of the score.
    pub gradient_tolerance: f64,
    /// Any |β_k| beyond this is reported as divergence (monotone likelihood).
    pub beta_bound: f64,
    pub max_step_halvings: usize,
    pub likelihood: Likelihood,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 25,
            loglik_tolerance: 1e-9,
            gradient_tolerance: 1e-6,
            beta_bound: 15.0,
            max_step_halvings: 10,
            likelihood: Likelihood::default(),
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<(), Error> {
        let ok = self.max_iterations >= 1
            && self.loglik_tolerance > 0.0
            && self.gradient_tolerance > 0.0
            && self.beta_bound > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidScheme(format!("invalid fit options {self:?}")))
        }
    }
}

/// Why a single fit produced no estimate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("no weighted events")]
    NoWeightedEvents,
    #[error("diverged after {iterations} iterations")]
    Diverged { iterations: usize },
    #[error("singular information")]
    SingularInformation,
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub location: Option<usize>,
    pub beta: Vec<f64>,
    /// Inverse observed information at `beta`.
    pub covariance: DMatrix<f64>,
    /// Observed information at `beta`.
    pub information: DMatrix<f64>,
    pub se: Vec<f64>,
    pub z: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub loglik: f64,
    /// Log likelihood after every accepted iterate, starting at β = 0.
    pub loglik_path: Vec<f64>,
    /// Σ w_i over events.
    pub effective_events: f64,
}

/// Value, score and negative Hessian at one β.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loglik: f64,
    pub score: DVector<f64>,
    pub information: DMatrix<f64>,
}

/// A cohort restricted to its positively weighted subjects and laid out
/// in descending time order for risk-set accumulation.
#[derive(Debug, Clone)]
pub struct WeightedPartialLikelihood {
    p: usize,
    likelihood: Likelihood,
    z: Vec<f64>,
    weight: Vec<f64>,
    event: Vec<bool>,
    /// Start offsets of groups of equal time; final entry is the length.
    groups: Vec<usize>,
    effective_events: f64,
}

impl WeightedPartialLikelihood {
    pub fn new(cohort: &Cohort, w: &WeightVector, likelihood: Likelihood) -> Result<Self, FitError> {
        if w.len() != cohort.len() {
            return Err(FitError::LengthMismatch { expected: cohort.len(), found: w.len() });
        }
        Self::from_indices(cohort, cohort.time_order().iter().rev().copied(), &w.weights, likelihood)
    }

    /// Unit-weight likelihood over the subjects of one location only.
    pub fn within_location(cohort: &Cohort, location: usize) -> Result<Self, FitError> {
        let ones = vec![1.0; cohort.len()];
        Self::from_indices(
            cohort,
            cohort.location_members(location).iter().rev().copied(),
            &ones,
            Likelihood::WeightedContributions,
        )
    }

    fn from_indices(
        cohort: &Cohort,
        descending: impl Iterator<Item = usize>,
        weights: &[f64],
        likelihood: Likelihood,
    ) -> Result<Self, FitError> {
        let p = cohort.p();
        let mut z = Vec::new();
        let mut weight = Vec::new();
        let mut event = Vec::new();
        let mut groups = Vec::new();
        let mut last_time = f64::NAN;
        let mut effective_events = 0.0;
        for i in descending {
            let wi = weights[i];
            if !(wi > 0.0) {
                continue;
            }
            let s = cohort.subject(i);
            if s.time != last_time {
                groups.push(weight.len());
                last_time = s.time;
            }
            z.extend_from_slice(&s.covariates);
            weight.push(wi);
            event.push(s.event);
            if s.event {
                effective_events += wi;
            }
        }
        groups.push(weight.len());
        if effective_events <= 0.0 {
            return Err(FitError::NoWeightedEvents);
        }
        Ok(Self { p, likelihood, z, weight, event, groups, effective_events })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn effective_events(&self) -> f64 {
        self.effective_events
    }

    fn check(&self, beta: &[f64]) {
        assert_eq!(beta.len(), self.p, "beta has length {}, expected {}", beta.len(), self.p);
    }

    fn linear_predictors(&self, beta: &[f64]) -> (Vec<f64>, f64) {
        let p = self.p;
        let eta: Vec<f64> = if p == 0 {
            vec![0.0; self.weight.len()]
        } else {
            self.z.chunks_exact(p).map(|zi| zi.iter().zip(beta).map(|(a, b)| a * b).sum()).collect()
        };
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (eta, if shift.is_finite() { shift } else { 0.0 })
    }

    fn event_factor(&self, k: usize) -> f64 {
        match self.likelihood {
            Likelihood::WeightedContributions => self.weight[k],
            Likelihood::Literal => 1.0,
        }
    }

    fn event_offset(&self, k: usize) -> f64 {
        match self.likelihood {
            Likelihood::WeightedContributions => 0.0,
            Likelihood::Literal => self.weight[k].ln(),
        }
    }

    /// Log partial likelihood at `beta`.
    pub fn value(&self, beta: &[f64]) -> f64 {
        self.check(beta);
        let (eta, shift) = self.linear_predictors(beta);
        let mut s0 = 0.0;
        let mut ll = 0.0;
        for g in self.groups.windows(2) {
            for k in g[0]..g[1] {
                s0 += self.weight[k] * (eta[k] - shift).exp();
            }
            let log_s0 = s0.ln() + shift;
            for k in g[0]..g[1] {
                if self.event[k] {
                    ll += self.event_factor(k) * (eta[k] - log_s0) + self.event_offset(k);
                }
            }
        }
        ll
    }

    /// Value, score and observed information at `beta`.
    pub fn evaluate(&self, beta: &[f64]) -> Evaluation {
        self.check(beta);
        let p = self.p;
        let (eta, shift) = self.linear_predictors(beta);
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; p * p];
        let mut ll = 0.0;
        let mut score = vec![0.0; p];
        let mut info = vec![0.0; p * p];
        let mut mean = vec![0.0; p];
        for g in self.groups.windows(2) {
            for k in g[0]..g[1] {
                let r = self.weight[k] * (eta[k] - shift).exp();
                let zk = &self.z[k * p..(k + 1) * p];
                s0 += r;
                for a in 0..p {
                    s1[a] += r * zk[a];
                    for b in 0..=a {
                        s2[a * p + b] += r * zk[a] * zk[b];
                    }
                }
            }
            let log_s0 = s0.ln() + shift;
            let mut factor = 0.0;
            for k in g[0]..g[1] {
                if !self.event[k] {
                    continue;
                }
                let c = self.event_factor(k);
                factor += c;
                ll += c * (eta[k] - log_s0) + self.event_offset(k);
                let zk = &self.z[k * p..(k + 1) * p];
                for a in 0..p {
                    score[a] += c * zk[a];
                }
            }
            if factor == 0.0 {
                continue;
            }
            for a in 0..p {
                mean[a] = s1[a] / s0;
                score[a] -= factor * mean[a];
            }
            for a in 0..p {
                for b in 0..=a {
                    info[a * p + b] += factor * (s2[a * p + b] / s0 - mean[a] * mean[b]);
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[b * p + a] = info[a * p + b];
            }
        }
        Evaluation {
            loglik: ll,
            score: DVector::from_vec(score),
            information: DMatrix::from_row_slice(p, p, &info),
        }
    }
}

fn prepare(cohort: &Cohort, w: &WeightVector) -> Result<WeightedPartialLikelihood, Error> {
    WeightedPartialLikelihood::new(cohort, w, Likelihood::default()).map_err(|e| match e {
        FitError::LengthMismatch { expected, found } => Error::LengthMismatch { expected, found },
        other => Error::Parse(other.to_string()),
    })
}

/// Weighted log partial likelihood (case-weighted form).
pub fn log_weighted_pl(cohort: &Cohort, w: &WeightVector, beta: &[f64]) -> Result<f64, Error> {
    Ok(prepare(cohort, w)?.value(beta))
}

/// Gradient of [`log_weighted_pl`].
pub fn score(cohort: &Cohort, w: &WeightVector, beta: &[f64]) -> Result<Vec<f64>, Error> {
    Ok(prepare(cohort, w)?.evaluate(beta).score.as_slice().to_vec())
}

/// Negative Hessian of [`log_weighted_pl`].
pub fn observed_information(
    cohort: &Cohort,
    w: &WeightVector,
    beta: &[f64],
) -> Result<DMatrix<f64>, Error> {
    Ok(prepare(cohort, w)?.evaluate(beta).information)
}

/// The information display exactly as typeset in the source derivation:
/// `Σ_i [ Σ_R w_j² e^{2η_j} Z_j Z_j' / S0² − Σ_R w_j e^{η_j} Z_j Z_j' / S0 ]`,
/// summed over every subject's risk set. It is not the curvature of the
/// likelihood and is never used for fitting; kept for comparison runs.
pub fn information_as_printed(
    cohort: &Cohort,
    w: &WeightVector,
    beta: &[f64],
) -> Result<DMatrix<f64>, Error> {
    if w.len() != cohort.len() {
        return Err(Error::LengthMismatch { expected: cohort.len(), found: w.len() });
    }
    let p = cohort.p();
    let mut total = DMatrix::zeros(p, p);
    let eta: Vec<f64> = cohort
        .subjects()
        .iter()
        .map(|s| s.covariates.iter().zip(beta).map(|(a, b)| a * b).sum())
        .collect();
    for si in cohort.subjects() {
        let mut s0 = 0.0;
        let mut sq = DMatrix::zeros(p, p);
        let mut lin = DMatrix::zeros(p, p);
        for (j, sj) in cohort.subjects().iter().enumerate() {
            if sj.time < si.time || w.weights[j] <= 0.0 {
                continue;
            }
            let r = w.weights[j] * eta[j].exp();
            let zj = DVector::from_column_slice(&sj.covariates);
            let outer = &zj * zj.transpose();
            s0 += r;
            sq += &outer * (r * r);
            lin += &outer * r;
        }
        if s0 > 0.0 {
            total += sq / (s0 * s0) - lin / s0;
        }
    }
    Ok(total)
}

fn newton_step(info: &DMatrix<f64>, score: &DVector<f64>) -> Option<DVector<f64>> {
    if info.nrows() == 0 {
        return Some(DVector::zeros(0));
    }
    let chol = info.clone().cholesky()?;
    let step = chol.solve(score);
    step.iter().all(|x| x.is_finite()).then_some(step)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

// Convergence additionally requires the pending Newton step to be this small
// (relative to |β|), so a monotone likelihood with a vanishing score keeps
// stepping until it hits the divergence bound.
const STEP_TOLERANCE: f64 = 1e-7;

/// Fits one weighted model by Newton–Raphson from β = 0 with step halving.
pub fn fit_location(
    cohort: &Cohort,
    w: &WeightVector,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    let model = WeightedPartialLikelihood::new(cohort, w, opts.likelihood)?;
    let mut fit = fit_prepared(&model, opts)?;
    fit.location = w.focal;
    Ok(fit)
}

/// Newton–Raphson on an already prepared likelihood.
pub fn fit_prepared(
    model: &WeightedPartialLikelihood,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    let p = model.p();
    let mut beta = vec![0.0; p];
    let mut current = model.evaluate(&beta);
    let mut path = vec![current.loglik];
    let mut iterations = 0;
    let mut last_rel_change = f64::INFINITY;
    let converged;

    loop {
        let step = newton_step(&current.information, &current.score)
            .ok_or(FitError::SingularInformation)?;
        let step_small = max_abs(step.as_slice()) <= STEP_TOLERANCE * (1.0 + max_abs(&beta));
        let grad_ok = max_abs(current.score.as_slice()) < opts.gradient_tolerance;
        if step_small && (grad_ok || last_rel_change < opts.loglik_tolerance) {
            converged = true;
            break;
        }
        if iterations >= opts.max_iterations {
            converged = false;
            break;
        }
        iterations += 1;

        // Summation rounding can make an exact ascent look like a tiny loss.
        let slack = 64.0 * f64::EPSILON * (1.0 + current.loglik.abs());
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_step_halvings {
            let candidate: Vec<f64> =
                beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let ll = model.value(&candidate);
            if ll.is_finite() && ll >= current.loglik - slack {
                accepted = Some(candidate);
                break;
            }
            scale *= 0.5;
        }
        let Some(next) = accepted else {
            // No ascent left at floating-point resolution.
            converged = step_small || grad_ok;
            break;
        };
        if next.iter().any(|b| b.abs() > opts.beta_bound) {
            return Err(FitError::Diverged { iterations });
        }
        let evaluated = model.evaluate(&next);
        last_rel_change =
            (evaluated.loglik - current.loglik).abs() / (current.loglik.abs() + 1e-12);
        beta = next;
        current = evaluated;
        path.push(current.loglik);
    }

    if beta.iter().any(|b| b.abs() > opts.beta_bound) {
        return Err(FitError::Diverged { iterations });
    }
    let covariance = if p == 0 {
        DMatrix::zeros(0, 0)
    } else {
        let chol = current.information.clone().cholesky().ok_or(FitError::SingularInformation)?;
        let inv = chol.inverse();
        (&inv + inv.transpose()) * 0.5
    };
    let se: Vec<f64> = (0..p).map(|k| covariance[(k, k)].max(0.0).sqrt()).collect();
    let z = beta.iter().zip(&se).map(|(b, s)| if *s > 0.0 { b / s } else { f64::NAN }).collect();
    Ok(FitResult {
        location: None,
        beta,
        covariance,
        information: current.information,
        se,
        z,
        converged,
        iterations,
        loglik: current.loglik,
        loglik_path: path,
        effective_events: model.effective_events(),
    })
}

/// Outcome for one focal location.
pub type LocationFit = Result<FitResult, FitError>;

/// One weighted fit per registry location, in location order.
pub fn fit_all_locations(
    cohort: &Cohort,
    dmat: &DistanceMatrix,
    scheme: &WeightScheme,
    opts: &FitOptions,
) -> Result<Vec<LocationFit>, Error> {
    if dmat.len() != cohort.n_locations() {
        return Err(Error::LengthMismatch { expected: cohort.n_locations(), found: dmat.len() });
    }
    let weights = (0..dmat.len())
        .map(|j| {
            let cw = location_weights(dmat, j, scheme)?;
            expand_to_subjects(&cw, cohort, Some(j))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(weights.par_iter().map(|w| fit_location(cohort, w, opts)).collect())
}

/// Unweighted fit over every subject.
pub fn fit_global(cohort: &Cohort, opts: &FitOptions) -> Result<FitResult, FitError> {
    fit_location(cohort, &WeightVector::unit(cohort.len()), opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::Subject;

    fn cohort(rows: &[(f64, bool, &[f64])]) -> Cohort {
        let p = rows.first().map_or(0, |r| r.2.len());
        let subjects = rows
            .iter()
            .enumerate()
            .map(|(i, &(time, event, z))| Subject {
                id: i.to_string(),
                time,
                event,
                covariates: z.to_vec(),
                location: 0,
            })
            .collect();
        Cohort::new(subjects, vec!["A".into()], (0..p).map(|k| format!("z{k}")).collect()).unwrap()
    }

    #[test]
    fn equal_hazards_single_event() {
        let c = cohort(&[(1.0, true, &[0.3]), (2.0, false, &[1.0]), (3.0, false, &[-2.0])]);
        let ll = log_weighted_pl(&c, &WeightVector::unit(3), &[0.0]).unwrap();
        assert!((ll - (1.0f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn two_subject_hand_value() {
        let c = cohort(&[(1.0, true, &[1.0]), (2.0, true, &[0.0])]);
        let ll = log_weighted_pl(&c, &WeightVector::unit(2), &[0.0]).unwrap();
        assert!((ll + std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn breslow_ties_share_denominator() {
        let c = cohort(&[(1.0, true, &[1.0]), (1.0, true, &[0.0]), (2.0, false, &[0.5])]);
        let b = 0.4;
        let s0 = (b * 1.0f64).exp() + 1.0 + (b * 0.5f64).exp();
        let expected = (b - s0.ln()) + (0.0 - s0.ln());
        let ll = log_weighted_pl(&c, &WeightVector::unit(3), &[b]).unwrap();
        assert!((ll - expected).abs() < 1e-13);
    }

    #[test]
    fn score_zero_when_event_matches_mean() {
        let c = cohort(&[(1.0, true, &[1.0]), (2.0, false, &[1.0])]);
        let s = score(&c, &WeightVector::unit(2), &[0.7]).unwrap();
        assert!(s[0].abs() < 1e-15);
        let i = observed_information(&c, &WeightVector::unit(2), &[0.7]).unwrap();
        assert!(i[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn no_weighted_events() {
        let c = cohort(&[(1.0, true, &[1.0]), (2.0, false, &[0.0])]);
        let w = WeightVector { weights: vec![0.0, 1.0], focal: None };
        assert_eq!(fit_location(&c, &w, &FitOptions::default()).unwrap_err(), FitError::NoWeightedEvents);
        assert!(log_weighted_pl(&c, &w, &[0.0]).is_err());
    }

    #[test]
    fn literal_form_differs_only_by_event_weighting() {
        let c = cohort(&[(1.0, true, &[1.0]), (2.0, true, &[0.0]), (3.0, false, &[0.5])]);
        let w = WeightVector { weights: vec![0.5, 1.0, 0.25], focal: None };
        let lit = WeightedPartialLikelihood::new(&c, &w, Likelihood::Literal).unwrap();
        let b = 0.3f64;
        let s1 = 0.5 * b.exp() + 1.0 + 0.25 * (0.5 * b).exp();
        let s2 = 1.0 + 0.25 * (0.5 * b).exp();
        let expected = (0.5f64.ln() + b - s1.ln()) + (0.0 - s2.ln());
        assert!((lit.value(&[b]) - expected).abs() < 1e-13);
        let cw = WeightedPartialLikelihood::new(&c, &w, Likelihood::WeightedContributions).unwrap();
        let expected = 0.5 * (b - s1.ln()) + (0.0 - s2.ln());
        assert!((cw.value(&[b]) - expected).abs() < 1e-13);
    }

    #[test]
    fn perfect_separation_diverges() {
        // Every event has x = 1, every censored subject x = 0 and outlives them.
        let mut rows: Vec<(f64, bool, &[f64])> = Vec::new();
        for k in 0..6 {
            rows.push((1.0 + k as f64, true, &[1.0]));
        }
        for k in 0..6 {
            rows.push((10.0 + k as f64, false, &[0.0]));
        }
        let c = cohort(&rows);
        let err = fit_location(&c, &WeightVector::unit(c.len()), &FitOptions::default()).unwrap_err();
        assert!(matches!(err, FitError::Diverged { .. }), "{err:?}");
    }

    #[test]
    fn null_symmetric_data_gives_zero() {
        let c = cohort(&[
            (1.0, true, &[1.0]),
            (1.5, true, &[-1.0]),
            (2.0, false, &[1.0]),
            (2.0, false, &[-1.0]),
        ]);
        let fit = fit_location(&c, &WeightVector::unit(4), &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.beta[0].abs() < 0.5);
    }

    #[test]
    fn constant_covariate_is_singular() {
        let c = cohort(&[(1.0, true, &[1.0, 0.0]), (2.0, true, &[0.0, 0.0]), (3.0, false, &[0.4, 0.0])]);
        let err = fit_location(&c, &WeightVector::unit(3), &FitOptions::default()).unwrap_err();
        assert_eq!(err, FitError::SingularInformation);
    }

    #[test]
    fn as_printed_information_is_negative_semidefinite_diagonal() {
        let c = cohort(&[(1.0, true, &[1.0]), (2.0, true, &[0.0]), (3.0, false, &[0.5])]);
        let m = information_as_printed(&c, &WeightVector::unit(3), &[0.2]).unwrap();
        // Σ r²z²/S0² ≤ Σ r z²/S0 termwise, so the printed form is never positive.
        assert!(m[(0, 0)] <= 0.0);
    }
}
