//! Geographic weighting kernels.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{DistanceMatrix, DistanceSource};
use crate::survival::Cohort;

/// Weights below this are treated as exactly zero.
pub const WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    /// 1 when `d < threshold`, else 0.
    Indicator,
    /// `exp(-d/h)`.
    Exponential,
    /// `exp(-(d/h)^2)`.
    Gaussian,
    /// `1 - (d/threshold)^2` when `d < threshold`, else 0.
    Bisquare,
    /// 1 when `d <= threshold`, else `exp(-d/h)`.
    StochasticNeighborhood,
}

impl Kernel {
    pub fn as_str(self) -> &'static str {
        match self {
            Kernel::Indicator => "indicator",
            Kernel::Exponential => "exponential",
            Kernel::Gaussian => "gaussian",
            Kernel::Bisquare => "bisquare",
            Kernel::StochasticNeighborhood => "stochastic-neighborhood",
        }
    }

    pub fn uses_bandwidth(self) -> bool {
        matches!(self, Kernel::Exponential | Kernel::Gaussian | Kernel::StochasticNeighborhood)
    }

    pub fn uses_threshold(self) -> bool {
        matches!(self, Kernel::Indicator | Kernel::Bisquare | Kernel::StochasticNeighborhood)
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "indicator" => Kernel::Indicator,
            "exponential" => Kernel::Exponential,
            "gaussian" => Kernel::Gaussian,
            "bisquare" => Kernel::Bisquare,
            "stochastic-neighborhood" | "stochastic-neighbourhood" => {
                Kernel::StochasticNeighborhood
            }
            other => return Err(Error::InvalidScheme(format!("unknown kernel {other:?}"))),
        })
    }
}

/// Which distance a scheme is defined on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    Graph,
    GreatCircle,
}

impl DistanceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DistanceKind::Graph => "graph",
            DistanceKind::GreatCircle => "greatcircle",
        }
    }

    fn accepts(self, source: DistanceSource) -> bool {
        match self {
            DistanceKind::Graph => source == DistanceSource::Graph,
            DistanceKind::GreatCircle => source != DistanceSource::Graph,
        }
    }
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graph" => Ok(DistanceKind::Graph),
            "greatcircle" | "great-circle" => Ok(DistanceKind::GreatCircle),
            other => Err(Error::InvalidScheme(format!("unknown distance {other:?}"))),
        }
    }
}

/// A validated weighting rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightScheme {
    kernel: Kernel,
    bandwidth: f64,
    threshold: f64,
    distance: DistanceKind,
}

impl WeightScheme {
    /// Validates parameters for `kernel`. Unused parameters are ignored.
    /// Stochastic-neighbourhood weighting on graph distance always uses a
    /// threshold of one hop.
    pub fn new(
        kernel: Kernel,
        bandwidth: Option<f64>,
        threshold: Option<f64>,
        distance: DistanceKind,
    ) -> Result<Self> {
        let bandwidth = if kernel.uses_bandwidth() {
            let h = bandwidth.ok_or_else(|| {
                Error::InvalidScheme(format!("kernel {kernel} requires a bandwidth"))
            })?;
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidScheme(format!("bandwidth must be positive, got {h}")));
            }
            h
        } else {
            f64::NAN
        };
        let threshold = match kernel {
            Kernel::StochasticNeighborhood if distance == DistanceKind::Graph => match threshold {
                None => 1.0,
                Some(1.0) => 1.0,
                Some(t) => {
                    return Err(Error::InvalidScheme(format!(
                        "graph-distance stochastic neighbourhood fixes the threshold at 1, got {t}"
                    )))
                }
            },
            Kernel::StochasticNeighborhood => {
                let t = threshold.ok_or_else(|| {
                    Error::InvalidScheme("great-circle stochastic neighbourhood needs a threshold".into())
                })?;
                if !(t >= 0.0 && t.is_finite()) {
                    return Err(Error::InvalidScheme(format!("threshold must be >= 0, got {t}")));
                }
                t
            }
            Kernel::Indicator | Kernel::Bisquare => {
                let t = threshold.ok_or_else(|| {
                    Error::InvalidScheme(format!("kernel {kernel} requires a threshold"))
                })?;
                if !(t > 0.0) {
                    return Err(Error::InvalidScheme(format!("threshold must be > 0, got {t}")));
                }
                t
            }
            Kernel::Exponential | Kernel::Gaussian => f64::NAN,
        };
        Ok(Self { kernel, bandwidth, threshold, distance })
    }

    /// Graph-distance stochastic-neighbourhood scheme with bandwidth `h`.
    pub fn graph(h: f64) -> Result<Self> {
        Self::new(Kernel::StochasticNeighborhood, Some(h), None, DistanceKind::Graph)
    }

    /// Great-circle stochastic-neighbourhood scheme.
    pub fn great_circle(h: f64, threshold: f64) -> Result<Self> {
        Self::new(
            Kernel::StochasticNeighborhood,
            Some(h),
            Some(threshold),
            DistanceKind::GreatCircle,
        )
    }

    /// Same family with a different bandwidth.
    pub fn with_bandwidth(&self, h: f64) -> Result<Self> {
        let threshold = self.kernel.uses_threshold().then_some(self.threshold);
        Self::new(self.kernel, Some(h), threshold, self.distance)
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    /// NaN when the kernel has no bandwidth.
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// NaN when the kernel has no threshold.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn distance(&self) -> DistanceKind {
        self.distance
    }
}

/// Weight given to a location at distance `d` from the focal one.
/// Infinite distance (disconnected) always maps to 0.
pub fn county_weight(d: f64, scheme: &WeightScheme) -> f64 {
    if d.is_infinite() {
        return 0.0;
    }
    let h = scheme.bandwidth;
    let t = scheme.threshold;
    let w = match scheme.kernel {
        Kernel::Indicator => {
            if d < t {
                1.0
            } else {
                0.0
            }
        }
        Kernel::Exponential => (-d / h).exp(),
        Kernel::Gaussian => (-(d / h).powi(2)).exp(),
        Kernel::Bisquare => {
            if d < t {
                1.0 - (d / t).powi(2)
            } else {
                0.0
            }
        }
        Kernel::StochasticNeighborhood => {
            if d <= t {
                1.0
            } else {
                (-d / h).exp()
            }
        }
    };
    if w < WEIGHT_FLOOR {
        0.0
    } else {
        w
    }
}

/// Weights of every location relative to `focal`.
pub fn location_weights(
    dmat: &DistanceMatrix,
    focal: usize,
    scheme: &WeightScheme,
) -> Result<Vec<f64>> {
    if focal >= dmat.len() {
        return Err(Error::OutOfBounds { index: focal, len: dmat.len() });
    }
    if !scheme.distance.accepts(dmat.source()) {
        return Err(Error::SourceMismatch {
            expected: scheme.distance.as_str(),
            found: dmat.source().as_str(),
        });
    }
    let mut w: Vec<f64> = dmat.row(focal).iter().map(|&d| county_weight(d, scheme)).collect();
    w[focal] = 1.0;
    Ok(w)
}

/// Per-subject weights for one focal location.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub focal: Option<usize>,
}

impl WeightVector {
    /// Every subject weighted 1.
    pub fn unit(n: usize) -> Self {
        Self { weights: vec![1.0; n], focal: None }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { weights: self.weights.iter().map(|w| w * c).collect(), focal: self.focal }
    }
}

/// Gives each subject the weight of its location.
pub fn expand_to_subjects(
    county_weights: &[f64],
    cohort: &Cohort,
    focal: Option<usize>,
) -> Result<WeightVector> {
    if county_weights.len() != cohort.n_locations() {
        return Err(Error::LengthMismatch {
            expected: cohort.n_locations(),
            found: county_weights.len(),
        });
    }
    let weights = cohort.subjects().iter().map(|s| county_weights[s.location]).collect();
    Ok(WeightVector { weights, focal })
}
