//! Non-Bayesian multilevel regression and poststratification.
//!
//! The model regresses a user-level outcome on an intercept, a gender
//! contrast, and random intercepts for age group and region:
//!
//! ```text
//! binary:      y ~ Bernoulli(invlogit(b0 + b_male*male + a_age[j] + a_region[k]))
//! continuous:  y = b0 + b_male*male + a_age[j] + a_region[k] + e
//! a_age ~ N(0, sigma_age^2),  a_region ~ N(0, sigma_region^2)
//! ```
//!
//! Fitting is maximum likelihood with a Laplace approximation to the
//! marginal likelihood: the inner loop is penalized iteratively reweighted
//! least squares over all coefficients at fixed variance components, the
//! outer loop a coordinate-wise golden-section search over the log standard
//! deviations. The continuous path is the Gaussian analogue with exact
//! REML. No sampling anywhere; identical inputs give bit-identical fits.
//!
//! Because every covariate is a cell attribute, observations collapse to
//! per-cell sufficient statistics before fitting, which keeps the fit cost
//! independent of the user count.

mod binary;
mod design;
mod gaussian;

use serde::{Deserialize, Serialize};

use crate::aggregate::UserRecord;
use crate::config::{N_AGE_GROUPS, N_CELLS, N_REGIONS};
use crate::error::{Error, Result};
use crate::frame::{CellKey, CensusCounts};

pub use binary::penalized_loglik_and_grad;

/// Outcome family and link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    /// 0/1 outcome, logistic link.
    Binary,
    /// Outcome in [0,1], identity link.
    Continuous,
}

/// How one variance component is handled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarComp {
    /// Maximize the approximate profile likelihood over this component.
    Estimate,
    /// Pin the standard deviation; 0 removes the random effects entirely.
    Fixed(f64),
}

/// Model specification and optimizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct MrpSpec {
    pub outcome: OutcomeKind,
    pub sigma_age: VarComp,
    pub sigma_region: VarComp,
    /// Inner loop stops when the deviance changes by less than this.
    pub inner_tol: f64,
    pub inner_max_iter: u32,
    /// Outer loop stops when every log-sigma coordinate moves less than this.
    pub outer_tol: f64,
    pub outer_max_iter: u32,
    /// Search bounds for each estimated standard deviation.
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl MrpSpec {
    pub fn binary() -> Self {
        MrpSpec {
            outcome: OutcomeKind::Binary,
            sigma_age: VarComp::Estimate,
            sigma_region: VarComp::Estimate,
            inner_tol: 1e-10,
            inner_max_iter: 200,
            outer_tol: 1e-6,
            outer_max_iter: 100,
            sigma_min: 1e-4,
            sigma_max: 10.0,
        }
    }

    pub fn continuous() -> Self {
        MrpSpec {
            outcome: OutcomeKind::Continuous,
            ..Self::binary()
        }
    }
}

/// Convergence diagnostics carried by every fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    /// Total inner-loop iterations (likelihood evaluations for the
    /// continuous path) spent across the whole variance search.
    pub iterations: u32,
    pub final_deviance: f64,
}

/// A fitted model: point estimates only, no posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrpFit {
    pub outcome: OutcomeKind,
    pub beta0: f64,
    /// Coefficient of the second configured gender label; 0 when that
    /// label is unobserved and the contrast was dropped.
    pub beta_male: f64,
    pub a_age: Vec<f64>,
    pub a_region: Vec<f64>,
    pub sigma_age: f64,
    pub sigma_region: f64,
    /// Residual standard deviation; continuous outcome only.
    pub sigma_resid: Option<f64>,
    pub convergence: Convergence,
    pub warnings: Vec<String>,
}

impl MrpFit {
    pub fn linear_predictor(&self, key: CellKey) -> f64 {
        let male = if key.gender == 1 { self.beta_male } else { 0.0 };
        self.beta0 + male + self.a_age[key.age as usize] + self.a_region[key.region as usize]
    }

    /// Canonical JSON serialization; bit-identical across identical fits.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit serializes")
    }
}

/// Fits the model to user records; `outcome` selects the response value.
///
/// Non-convergence within the iteration caps is not an error: the fit is
/// returned with `convergence.converged == false` and must be handled by
/// the caller. Complete separation of the binary outcome is an error.
pub fn fit<F>(spec: &MrpSpec, users: &[UserRecord], outcome: F) -> Result<MrpFit>
where
    F: Fn(&UserRecord) -> f64,
{
    if users.is_empty() {
        return Err(Error::Contract("cannot fit a model on zero users".into()));
    }
    let values: Vec<f64> = users.iter().map(&outcome).collect();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() < 2 {
        return Err(Error::Contract(
            "the outcome must take at least 2 distinct values".into(),
        ));
    }
    match spec.outcome {
        OutcomeKind::Binary => {
            if sorted.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Contract(
                    "binary outcome requires values in {0,1}".into(),
                ));
            }
            binary::fit_binary(spec, users, &values)
        }
        OutcomeKind::Continuous => {
            if sorted.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Contract(
                    "continuous outcome requires values in [0,1]".into(),
                ));
            }
            gaussian::fit_continuous(spec, users, &values)
        }
    }
}

pub fn invlogit(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

/// Predicted mean for every cell of the frame, in canonical key order.
///
/// Defined for all 96 cells, including sample-empty ones: unobserved group
/// levels carry a zero random intercept, so their predictions shrink to
/// the fixed-effects mean.
pub fn predict_cells(fit: &MrpFit) -> Vec<f64> {
    CellKey::all()
        .map(|key| {
            let eta = fit.linear_predictor(key);
            match fit.outcome {
                OutcomeKind::Binary => invlogit(eta),
                OutcomeKind::Continuous => eta.clamp(0.0, 1.0),
            }
        })
        .collect()
}

/// Census-weighted averages of per-cell predictions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoststratifiedEstimate {
    pub national: f64,
    /// One entry per region; `None` where the census population is zero.
    pub per_region: Vec<Option<f64>>,
    pub per_cell: Vec<f64>,
}

/// Weights predictions by census populations, nationally and per region.
///
/// Errors when the census total is zero; a single region with zero
/// population yields `None` for that region only.
pub fn poststratify(per_cell: &[f64], census: &CensusCounts) -> Result<PoststratifiedEstimate> {
    if per_cell.len() != N_CELLS {
        return Err(Error::Contract(format!(
            "poststratify expects {N_CELLS} cell predictions, got {}",
            per_cell.len()
        )));
    }
    if census.total() == 0 {
        return Err(Error::Contract(
            "census total population is zero; poststratification undefined".into(),
        ));
    }
    let national = weighted_mean(
        CellKey::all().map(|k| (per_cell[k.index()], census.get(k))),
    )
    .expect("total population checked above");
    let per_region = (0..N_REGIONS)
        .map(|region| {
            weighted_mean(
                CellKey::all()
                    .filter(|k| k.region as usize == region)
                    .map(|k| (per_cell[k.index()], census.get(k))),
            )
        })
        .collect();
    Ok(PoststratifiedEstimate {
        national,
        per_region,
        per_cell: per_cell.to_vec(),
    })
}

/// Population-weighted mean; `None` when all weights are zero. Equal
/// weights take the unweighted path so that the uniform-census estimate is
/// exactly the plain mean of the predictions.
fn weighted_mean(pairs: impl Iterator<Item = (f64, u64)>) -> Option<f64> {
    let pairs: Vec<(f64, u64)> = pairs.collect();
    let total: u64 = pairs.iter().map(|(_, w)| *w).sum();
    if total == 0 {
        return None;
    }
    let first = pairs[0].1;
    if pairs.iter().all(|&(_, w)| w == first) {
        return Some(pairs.iter().map(|(p, _)| *p).sum::<f64>() / pairs.len() as f64);
    }
    let num: f64 = pairs.iter().map(|&(p, w)| p * w as f64).sum();
    Some(num / total as f64)
}

/// Raw sample means without any adjustment — the baseline MRP is compared
/// against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisaggregatedEstimate {
    pub national: Option<f64>,
    pub per_region: Vec<Option<f64>>,
}

pub fn disaggregated_estimate<F>(users: &[UserRecord], outcome: F) -> DisaggregatedEstimate
where
    F: Fn(&UserRecord) -> f64,
{
    let mut region_sum = vec![0.0; N_REGIONS];
    let mut region_n = vec![0u64; N_REGIONS];
    for user in users {
        let region = user.key.region as usize;
        region_sum[region] += outcome(user);
        region_n[region] += 1;
    }
    let total_n: u64 = region_n.iter().sum();
    let national = (total_n > 0).then(|| region_sum.iter().sum::<f64>() / total_n as f64);
    let per_region = (0..N_REGIONS)
        .map(|r| (region_n[r] > 0).then(|| region_sum[r] / region_n[r] as f64))
        .collect();
    DisaggregatedEstimate {
        national,
        per_region,
    }
}

/// Per-cell sufficient statistics of the outcome.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ObsCell {
    pub male: f64,
    pub age: usize,
    pub region: usize,
    /// Observation count.
    pub n: f64,
    /// Sum of outcomes (success count for the binary model).
    pub sum: f64,
    /// Sum of squared outcomes.
    pub ss: f64,
}

/// Collapses users to observed-cell sufficient statistics in canonical
/// cell order. Sums run in input (user-id) order, the documented
/// determinism contract.
pub(crate) fn collapse_cells(users: &[UserRecord], values: &[f64]) -> Vec<ObsCell> {
    let mut n = vec![0.0f64; N_CELLS];
    let mut sum = vec![0.0f64; N_CELLS];
    let mut ss = vec![0.0f64; N_CELLS];
    for (user, &y) in users.iter().zip(values) {
        let index = user.key.index();
        n[index] += 1.0;
        sum[index] += y;
        ss[index] += y * y;
    }
    CellKey::all()
        .filter(|k| n[k.index()] > 0.0)
        .map(|k| ObsCell {
            male: f64::from(k.gender == 1),
            age: k.age as usize,
            region: k.region as usize,
            n: n[k.index()],
            sum: sum[k.index()],
            ss: ss[k.index()],
        })
        .collect()
}

/// Distinct observed levels of each grouping, for the single-level rule.
pub(crate) struct ObservedLevels {
    pub genders: usize,
    pub ages: usize,
    pub regions: usize,
}

pub(crate) fn observed_levels(cells: &[ObsCell]) -> ObservedLevels {
    let mut genders = [false; 2];
    let mut ages = [false; N_AGE_GROUPS];
    let mut regions = [false; N_REGIONS];
    for cell in cells {
        genders[cell.male as usize] = true;
        ages[cell.age] = true;
        regions[cell.region] = true;
    }
    ObservedLevels {
        genders: genders.iter().filter(|&&b| b).count(),
        ages: ages.iter().filter(|&&b| b).count(),
        regions: regions.iter().filter(|&&b| b).count(),
    }
}

/// Golden-section maximization of a unimodal function on `[lo, hi]`.
///
/// Runs until the bracket is narrower than `tol`; returns the bracket
/// midpoint and its value. The objective may fail (e.g. separation inside
/// an inner fit), which aborts the search.
pub(crate) fn golden_max<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    let fm = f(mid)?;
    Ok((mid, fm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(gender: usize, age: usize, region: usize, dummy: u8) -> UserRecord {
        UserRecord {
            user_id: format!("u{gender}{age}{region}{dummy}"),
            key: CellKey::new(gender, age, region),
            dummy,
            score: f64::from(dummy),
            n_tweets: 1,
        }
    }

    #[test]
    fn all_zero_fit_predicts_one_half() {
        let fit = MrpFit {
            outcome: OutcomeKind::Binary,
            beta0: 0.0,
            beta_male: 0.0,
            a_age: vec![0.0; 4],
            a_region: vec![0.0; 12],
            sigma_age: 0.0,
            sigma_region: 0.0,
            sigma_resid: None,
            convergence: Convergence {
                converged: true,
                iterations: 0,
                final_deviance: 0.0,
            },
            warnings: vec![],
        };
        for p in predict_cells(&fit) {
            assert_eq!(p, 0.5);
        }
    }

    #[test]
    fn gender_effect_splits_predictions() {
        let mut fit = MrpFit {
            outcome: OutcomeKind::Binary,
            beta0: 0.0,
            beta_male: 0.4,
            a_age: vec![0.0; 4],
            a_region: vec![0.0; 12],
            sigma_age: 0.0,
            sigma_region: 0.0,
            sigma_resid: None,
            convergence: Convergence {
                converged: true,
                iterations: 0,
                final_deviance: 0.0,
            },
            warnings: vec![],
        };
        let preds = predict_cells(&fit);
        for key in CellKey::all() {
            let expected = if key.gender == 1 {
                invlogit(0.4)
            } else {
                0.5
            };
            assert_eq!(preds[key.index()], expected);
        }
        // raising a region effect strictly raises all 8 of its predictions
        let before = predict_cells(&fit);
        fit.a_region[3] = 0.25;
        let after = predict_cells(&fit);
        for key in CellKey::all() {
            if key.region == 3 {
                assert!(after[key.index()] > before[key.index()]);
            } else {
                assert_eq!(after[key.index()], before[key.index()]);
            }
        }
    }

    #[test]
    fn poststratify_weights_by_population() {
        // two cells with predictions 0.2 and 0.6 and populations 100/300;
        // everything else zero population
        let mut preds = vec![0.0; N_CELLS];
        preds[0] = 0.2;
        preds[1] = 0.6;
        let mut cells = Vec::new();
        cells.push(crate::ingest::CensusCell {
            key: CellKey::from_index(0),
            population: 100,
        });
        cells.push(crate::ingest::CensusCell {
            key: CellKey::from_index(1),
            population: 300,
        });
        let census = CensusCounts::from_cells(&cells);
        let est = poststratify(&preds, &census).unwrap();
        assert!((est.national - 0.5).abs() < 1e-15);
    }

    #[test]
    fn uniform_census_is_the_plain_mean() {
        let preds: Vec<f64> = (0..N_CELLS).map(|i| (i as f64 + 0.1) / 100.0).collect();
        let census = CensusCounts::uniform(7);
        let est = poststratify(&preds, &census).unwrap();
        let mean = preds.iter().sum::<f64>() / N_CELLS as f64;
        assert_eq!(est.national, mean);
    }

    #[test]
    fn zero_population_region_is_flagged_undefined() {
        let preds = vec![0.5; N_CELLS];
        // populate only region 0
        let cells: Vec<crate::ingest::CensusCell> = CellKey::all()
            .filter(|k| k.region == 0)
            .map(|key| crate::ingest::CensusCell {
                key,
                population: 10,
            })
            .collect();
        let census = CensusCounts::from_cells(&cells);
        let est = poststratify(&preds, &census).unwrap();
        assert!(est.per_region[0].is_some());
        assert!(est.per_region[1..].iter().all(Option::is_none));
    }

    #[test]
    fn disaggregated_is_the_raw_mean() {
        let users = vec![
            user(0, 0, 0, 1),
            user(1, 1, 0, 1),
            user(0, 2, 1, 0),
            user(1, 3, 1, 1),
        ];
        let est = disaggregated_estimate(&users, |u| f64::from(u.dummy));
        assert_eq!(est.national, Some(0.75));
        assert_eq!(est.per_region[0], Some(1.0));
        assert_eq!(est.per_region[1], Some(0.5));
        assert_eq!(est.per_region[2], None);
    }

    #[test]
    fn disaggregated_equals_count_weighted_cell_means() {
        let users = vec![
            user(0, 0, 0, 1),
            user(0, 0, 0, 0),
            user(1, 2, 5, 1),
            user(1, 3, 5, 1),
            user(0, 1, 11, 0),
        ];
        let est = disaggregated_estimate(&users, |u| f64::from(u.dummy));
        let records: Vec<(CellKey, f64)> = users
            .iter()
            .map(|u| (u.key, f64::from(u.dummy)))
            .collect();
        let table =
            crate::frame::CellTable::collapse(&records, &CensusCounts::uniform(0));
        let mut num = 0.0;
        let mut den = 0.0;
        for (_, cell) in table.iter() {
            if let Some(mean) = cell.mean {
                num += mean * cell.count as f64;
                den += cell.count as f64;
            }
        }
        assert!((est.national.unwrap() - num / den).abs() < 1e-12);
    }

    #[test]
    fn golden_section_finds_the_peak() {
        let (x, _) = golden_max(|x| Ok(-(x - 1.7) * (x - 1.7)), -4.0, 4.0, 1e-9).unwrap();
        assert!((x - 1.7).abs() < 1e-7);
    }
}
