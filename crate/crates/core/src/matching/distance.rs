use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::MatchingError;
use crate::data::Dataset;
use crate::stats::{self, logit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// `|e_t - e_c|`.
    PscoreAbsDiff,
    /// `|logit e_t - logit e_c|`.
    #[serde(alias = "logit")]
    PscoreLinear,
    /// Mahalanobis distance under the pooled within-group covariance.
    Mahalanobis,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pscore_abs_diff" | "pscore" => Ok(Metric::PscoreAbsDiff),
            "pscore_linear" | "logit" => Ok(Metric::PscoreLinear),
            "mahalanobis" => Ok(Metric::Mahalanobis),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceSpec {
    pub metric: Metric,
    /// Caliper on the logit propensity score, in standard deviations of the
    /// logit score over all units.
    pub caliper: Option<f64>,
}

impl DistanceSpec {
    pub fn needs_scores(&self) -> bool {
        self.caliper.is_some() || self.metric != Metric::Mahalanobis
    }
}

/// Treated-by-control distances. `+inf` marks a caliper violation.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub treated: Vec<usize>,
    pub control: Vec<usize>,
    pub treated_ids: Vec<i64>,
    pub control_ids: Vec<i64>,
    pub values: DMatrix<f64>,
    /// Propensity scores of the treated rows, used for largest-first ordering.
    pub treated_scores: Option<Vec<f64>>,
}

impl DistanceMatrix {
    /// Wraps a bare matrix. Treated rows are numbered `0..nt` and controls
    /// `nt..nt+nc`; ids equal row numbers.
    pub fn from_values(values: DMatrix<f64>) -> Self {
        let (nt, nc) = values.shape();
        DistanceMatrix {
            treated: (0..nt).collect(),
            control: (nt..nt + nc).collect(),
            treated_ids: (0..nt as i64).collect(),
            control_ids: (nt as i64..(nt + nc) as i64).collect(),
            values,
            treated_scores: None,
        }
    }

    pub fn n_treated(&self) -> usize {
        self.treated.len()
    }

    pub fn n_control(&self) -> usize {
        self.control.len()
    }
}

/// Pooled within-group covariance of the given rows and columns.
fn pooled_within_covariance(x: &DMatrix<f64>, treated: &[bool]) -> DMatrix<f64> {
    let p = x.ncols();
    let mut cov = DMatrix::zeros(p, p);
    let mut dof = 0usize;
    for arm in [true, false] {
        let rows: Vec<usize> = (0..x.nrows()).filter(|&i| treated[i] == arm).collect();
        if rows.is_empty() {
            continue;
        }
        let means: Vec<f64> = (0..p).map(|j| rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / rows.len() as f64).collect();
        for &i in &rows {
            for a in 0..p {
                let da = x[(i, a)] - means[a];
                for b in 0..p {
                    cov[(a, b)] += da * (x[(i, b)] - means[b]);
                }
            }
        }
        dof += rows.len() - 1;
    }
    cov / dof.max(1) as f64
}

/// Rows of `x` mapped through the inverse Cholesky factor of the pooled
/// within-group covariance, so Euclidean distance equals Mahalanobis distance.
pub(crate) fn whiten(x: &DMatrix<f64>, treated: &[bool]) -> Result<DMatrix<f64>, MatchingError> {
    let cov = pooled_within_covariance(x, treated);
    let p = cov.nrows();
    let scale = (cov.trace() / p.max(1) as f64).max(1e-12);
    let chol = std::iter::once(0.0)
        .chain([1e-10, 1e-8, 1e-6, 1e-4, 1e-2])
        .find_map(|k| (&cov + DMatrix::identity(p, p) * (k * scale)).cholesky())
        .ok_or(MatchingError::SingularCovariance)?;
    let l = chol.l();
    let w = l.solve_lower_triangular(&x.transpose()).ok_or(MatchingError::SingularCovariance)?;
    if w.iter().any(|v| !v.is_finite()) {
        return Err(MatchingError::SingularCovariance);
    }
    Ok(w.transpose())
}

pub fn distance_matrix(d: &Dataset, spec: &DistanceSpec, scores: Option<&[f64]>) -> Result<DistanceMatrix, MatchingError> {
    if spec.needs_scores() && scores.is_none_or(|e| e.len() != d.len()) {
        return Err(MatchingError::MissingPropensity);
    }
    if let Some(w) = spec.caliper {
        if !(w > 0.0) {
            return Err(MatchingError::InvalidConfig(format!("caliper width must be positive, got {w}")));
        }
    }
    let treated_flags = d.treated();
    let treated: Vec<usize> = (0..d.len()).filter(|&i| treated_flags[i]).collect();
    let control: Vec<usize> = (0..d.len()).filter(|&i| !treated_flags[i]).collect();
    let ids = |rows: &[usize]| rows.iter().map(|&i| d.units()[i].id).collect::<Vec<_>>();

    let (nt, nc) = (treated.len(), control.len());
    let mut values = match spec.metric {
        Metric::PscoreAbsDiff | Metric::PscoreLinear => {
            let e = scores.expect("checked above");
            let f = |v: f64| if spec.metric == Metric::PscoreLinear { logit(v) } else { v };
            DMatrix::from_fn(nt, nc, |a, b| (f(e[treated[a]]) - f(e[control[b]])).abs())
        }
        Metric::Mahalanobis => {
            let x = d.design(&d.covariate_indices(false));
            let w = whiten(&x, &treated_flags)?;
            DMatrix::from_fn(nt, nc, |a, b| (w.row(treated[a]) - w.row(control[b])).norm())
        }
    };
    if let (Some(width), Some(e)) = (spec.caliper, scores) {
        let l: Vec<f64> = e.iter().map(|&v| logit(v)).collect();
        let limit = width * stats::sd(&l);
        for a in 0..nt {
            for b in 0..nc {
                if (l[treated[a]] - l[control[b]]).abs() > limit {
                    values[(a, b)] = f64::INFINITY;
                }
            }
        }
    }
    Ok(DistanceMatrix {
        treated_ids: ids(&treated),
        control_ids: ids(&control),
        treated_scores: scores.map(|e| treated.iter().map(|&i| e[i]).collect()),
        treated,
        control,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Arm, CovariateSchema, Unit};

    fn dataset(points: &[(bool, [f64; 2])]) -> Dataset {
        let units = points
            .iter()
            .enumerate()
            .map(|(i, (z, x))| Unit { id: i as i64 + 1, arm: Arm::Nrs, z: *z, y: vec![0.0], x: x.to_vec() })
            .collect();
        Dataset::new(vec![CovariateSchema::continuous("a"), CovariateSchema::continuous("b")], vec!["y".into()], units).unwrap()
    }

    #[test]
    fn identity_covariance_reduces_to_euclidean() {
        // Within-group deviations of +/-1 on each axis: the covariance is a multiple of the identity.
        let mut pts = Vec::new();
        for (z, c) in [(true, [0.0, 0.0]), (false, [3.0, 4.0])] {
            for (dx, dy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                pts.push((z, [c[0] + dx, c[1] + dy]));
            }
        }
        let d = dataset(&pts);
        let cov = pooled_within_covariance(&d.covariates(), &d.treated());
        // Sum of squares 4 per arm, 8 in total, over 6 degrees of freedom.
        let s = 8.0 / 6.0;
        assert!((cov[(0, 0)] - s).abs() < 1e-12 && cov[(0, 1)].abs() < 1e-12);
        let dm = distance_matrix(&d, &DistanceSpec { metric: Metric::Mahalanobis, caliper: None }, None).unwrap();
        // Matching corner offsets: distance between (1,1) and (4,5) is 5 in Euclidean units.
        assert!((dm.values[(0, 0)] - 5.0 / s.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn pscore_metrics_and_caliper() {
        let d = dataset(&[(true, [0.0; 2]), (true, [0.0; 2]), (false, [0.0; 2]), (false, [0.0; 2])]);
        let e = [0.5, 0.9, 0.5, 0.1];
        let dm = distance_matrix(&d, &DistanceSpec { metric: Metric::PscoreAbsDiff, caliper: None }, Some(&e)).unwrap();
        assert_eq!(dm.values[(0, 0)], 0.0);
        assert!((dm.values[(1, 1)] - 0.8).abs() < 1e-12);

        // Logit scores are 0, ln 9, 0, -ln 9 with sd ln(9) * sqrt(2/3).
        // A caliper of 0.2 sd admits only the exact pair.
        let spec = DistanceSpec { metric: Metric::PscoreLinear, caliper: Some(0.2) };
        let dm = distance_matrix(&d, &spec, Some(&e)).unwrap();
        assert_eq!(dm.values[(0, 0)], 0.0);
        assert!(dm.values[(0, 1)].is_infinite());
        assert!(dm.values[(1, 0)].is_infinite());
        assert!(dm.values[(1, 1)].is_infinite());
        // A 1.5 sd caliper (about 2.69) keeps the ln 9 differences finite.
        let spec = DistanceSpec { metric: Metric::PscoreLinear, caliper: Some(1.5) };
        let dm = distance_matrix(&d, &spec, Some(&e)).unwrap();
        assert!((dm.values[(0, 1)] - 9f64.ln()).abs() < 1e-12);
        assert!(dm.values[(1, 1)].is_infinite());
    }

    #[test]
    fn missing_scores_is_an_error() {
        let d = dataset(&[(true, [0.0; 2]), (false, [1.0; 2])]);
        let spec = DistanceSpec { metric: Metric::PscoreAbsDiff, caliper: None };
        assert!(matches!(distance_matrix(&d, &spec, None), Err(MatchingError::MissingPropensity)));
    }
}
