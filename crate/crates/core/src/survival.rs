//! Cohort data model, risk sets and the Kaplan–Meier estimator.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// One right-censored observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    /// Observed time (event or censoring).
    pub time: f64,
    /// `true` when the event was observed, `false` when right-censored.
    pub event: bool,
    pub covariates: Vec<f64>,
    /// Index into the cohort's location registry.
    pub location: usize,
}

/// A parsed but unvalidated input row.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub id: String,
    pub time: f64,
    pub status: i64,
    pub location: String,
    pub covariates: Vec<f64>,
}

/// Immutable table of subjects with a location registry.
///
/// Subjects keep their input order; `order` holds the indices sorted by
/// ascending time (events ahead of censorings at equal times) and
/// `by_location` the same ordering split per location.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    subjects: Vec<Subject>,
    p: usize,
    locations: Vec<String>,
    covariate_names: Vec<String>,
    order: Vec<usize>,
    by_location: Vec<Vec<usize>>,
}

impl Cohort {
    /// Builds a cohort from already-indexed subjects.
    pub fn new(
        subjects: Vec<Subject>,
        locations: Vec<String>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::NoSubjects);
        }
        if locations.is_empty() {
            return Err(Error::Shape("location registry is empty".into()));
        }
        let mut seen = HashMap::with_capacity(locations.len());
        for label in &locations {
            if seen.insert(label.as_str(), ()).is_some() {
                return Err(Error::DuplicateNode(label.clone()));
            }
        }
        let p = covariate_names.len();
        for (row, s) in subjects.iter().enumerate() {
            check_time(row, s.time)?;
            if s.covariates.len() != p {
                return Err(Error::CovariateCount { row, expected: p, found: s.covariates.len() });
            }
            if s.covariates.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteCovariate { row });
            }
            if s.location >= locations.len() {
                return Err(Error::OutOfBounds { index: s.location, len: locations.len() });
            }
        }

        let mut order: Vec<usize> = (0..subjects.len()).collect();
        order.sort_by(|&a, &b| {
            let (sa, sb) = (&subjects[a], &subjects[b]);
            sa.time
                .total_cmp(&sb.time)
                .then(sb.event.cmp(&sa.event))
                .then(a.cmp(&b))
        });
        let mut by_location = vec![Vec::new(); locations.len()];
        for &i in &order {
            by_location[subjects[i].location].push(i);
        }
        Ok(Self { subjects, p, locations, covariate_names, order, by_location })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn subject(&self, i: usize) -> &Subject {
        &self.subjects[i]
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Covariate dimension.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn n_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Subject indices sorted by ascending time.
    pub fn time_order(&self) -> &[usize] {
        &self.order
    }

    /// Subjects at `location`, sorted by ascending time.
    pub fn location_members(&self, location: usize) -> &[usize] {
        &self.by_location[location]
    }

    pub fn location_sizes(&self) -> Vec<usize> {
        self.by_location.iter().map(Vec::len).collect()
    }

    pub fn event_count(&self) -> usize {
        self.subjects.iter().filter(|s| s.event).count()
    }

    pub fn censored_fraction(&self) -> f64 {
        1.0 - self.event_count() as f64 / self.len() as f64
    }

    /// Re-expresses location indices against another registry, e.g. the
    /// node order of a spatial graph. Every current label must be present.
    pub fn reindexed(&self, registry: &[String]) -> Result<Cohort> {
        let lookup: HashMap<&str, usize> =
            registry.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut map = Vec::with_capacity(self.locations.len());
        for label in &self.locations {
            match lookup.get(label.as_str()) {
                Some(&j) => map.push(j),
                None => return Err(Error::UnknownNode(label.clone())),
            }
        }
        let subjects = self
            .subjects
            .iter()
            .map(|s| Subject { location: map[s.location], ..s.clone() })
            .collect();
        Cohort::new(subjects, registry.to_vec(), self.covariate_names.clone())
    }
}

fn check_time(row: usize, time: f64) -> Result<()> {
    if !time.is_finite() {
        return Err(Error::NonFiniteTime { row });
    }
    if time < 0.0 {
        return Err(Error::NegativeTime { row, time });
    }
    Ok(())
}

/// Validates raw rows and registers locations in order of first appearance.
pub fn validate_cohort(
    records: &[RawRecord],
    covariate_names: Vec<String>,
) -> Result<Cohort> {
    if records.is_empty() {
        return Err(Error::NoSubjects);
    }
    let p = covariate_names.len();
    let mut registry: Vec<String> = Vec::new();
    let mut lookup: HashMap<String, usize> = HashMap::new();
    let mut subjects = Vec::with_capacity(records.len());
    for (row, r) in records.iter().enumerate() {
        check_time(row, r.time)?;
        let event = match r.status {
            0 => false,
            1 => true,
            other => return Err(Error::BadStatus { row, status: other.to_string() }),
        };
        if r.covariates.len() != p {
            return Err(Error::CovariateCount { row, expected: p, found: r.covariates.len() });
        }
        let location = *lookup.entry(r.location.clone()).or_insert_with(|| {
            registry.push(r.location.clone());
            registry.len() - 1
        });
        subjects.push(Subject {
            id: r.id.clone(),
            time: r.time,
            event,
            covariates: r.covariates.clone(),
            location,
        });
    }
    Cohort::new(subjects, registry, covariate_names)
}

/// Indices of subjects still under observation at `t` (time ≥ t), in
/// ascending subject index order.
pub fn risk_set(cohort: &Cohort, t: f64) -> Vec<usize> {
    let order = cohort.time_order();
    let start = order.partition_point(|&i| cohort.subject(i).time < t);
    let mut out = order[start..].to_vec();
    out.sort_unstable();
    out
}

/// Product-limit survival curve over the distinct event times.
#[derive(Debug, Clone, PartialEq)]
pub struct KmCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

/// Kaplan–Meier estimate over the whole cohort, or over `subset` when given.
pub fn kaplan_meier(cohort: &Cohort, subset: Option<&[usize]>) -> Result<KmCurve> {
    let mut obs: Vec<(f64, bool)> = match subset {
        Some(idx) => {
            if idx.is_empty() {
                return Err(Error::EmptySubset);
            }
            idx.iter()
                .map(|&i| {
                    let s = cohort.subject(i);
                    (s.time, s.event)
                })
                .collect()
        }
        None => cohort.subjects().iter().map(|s| (s.time, s.event)).collect(),
    };
    obs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut curve = KmCurve { times: vec![], survival: vec![], at_risk: vec![], events: vec![] };
    let mut surv = 1.0;
    let mut remaining = obs.len();
    let mut k = 0;
    while k < obs.len() {
        let t = obs[k].0;
        let mut end = k;
        let mut deaths = 0;
        while end < obs.len() && obs[end].0 == t {
            deaths += usize::from(obs[end].1);
            end += 1;
        }
        if deaths > 0 {
            surv *= 1.0 - deaths as f64 / remaining as f64;
            curve.times.push(t);
            curve.survival.push(surv);
            curve.at_risk.push(remaining);
            curve.events.push(deaths);
        }
        remaining -= end - k;
        k = end;
    }
    Ok(curve)
}

/// Right-continuous evaluation of the step function at `t`.
pub fn km_survival_at(curve: &KmCurve, t: f64) -> f64 {
    let k = curve.times.partition_point(|&x| x <= t);
    if k == 0 {
        1.0
    } else {
        curve.survival[k - 1]
    }
}
