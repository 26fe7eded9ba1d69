//! Continuous-outcome fitter: linear mixed model with exact REML.
//!
//! Observations collapse to per-cell counts, sums, and sums of squares,
//! and every REML quantity reduces through the Woodbury identity to dense
//! algebra on the random-effect crossproduct (at most 16 x 16):
//!
//! ```text
//! V = se^2 I + Z D Z',   M = D^-1 + Z'Z / se^2
//! logdet V     = N log se^2 + logdet M + logdet D
//! X'V^-1 X     = X'X/se^2 - (X'Z) M^-1 (Z'X) / se^4
//! restricted l = -1/2 [ (N-p) log 2pi + logdet V + logdet X'V^-1 X + r'V^-1 r ]
//! ```
//!
//! The variance search runs the same coordinate-wise golden-section scheme
//! as the binary path, with the residual standard deviation as an extra
//! coordinate. Evaluation at fixed variances is a direct solve, so each
//! criterion call counts as one iteration.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::aggregate::UserRecord;
use crate::config::{N_AGE_GROUPS, N_REGIONS};
use crate::error::{Error, Result};

use super::binary::{initial_sigma, single_level_rule};
use super::design::Layout;
use super::{
    collapse_cells, golden_max, observed_levels, Convergence, MrpFit, MrpSpec, ObsCell,
    OutcomeKind, VarComp,
};

const SIGMA_RESID_MIN: f64 = 1e-6;
const SIGMA_RESID_MAX: f64 = 2.0;

struct Crossproducts {
    layout: Layout,
    /// Full-column crossproduct `sum n x x'`.
    a: DMatrix<f64>,
    /// Full-column response product `sum y_sum x`.
    v: DVector<f64>,
    yty: f64,
    n_total: f64,
}

struct RemlEval {
    criterion: f64,
    beta: DVector<f64>,
    random: DVector<f64>,
}

impl Crossproducts {
    fn build(cells: &[ObsCell], layout: Layout) -> Crossproducts {
        let p = layout.n_cols();
        let mut a = DMatrix::zeros(p, p);
        let mut v = DVector::zeros(p);
        let mut yty = 0.0;
        let mut n_total = 0.0;
        for cell in cells {
            let row = layout.row(cell);
            for (ci, vi) in row.iter() {
                for (cj, vj) in row.iter() {
                    a[(ci, cj)] += cell.n * vi * vj;
                }
                v[ci] += cell.sum * vi;
            }
            yty += cell.ss;
            n_total += cell.n;
        }
        Crossproducts {
            layout,
            a,
            v,
            yty,
            n_total,
        }
    }

    /// Restricted log-likelihood and GLS solution at fixed variances.
    fn reml(&self, sigma_age: f64, sigma_region: f64, sigma_resid: f64) -> Result<RemlEval> {
        let fixed = self.layout.n_fixed();
        let q = self.layout.n_random();
        let se2 = sigma_resid * sigma_resid;

        let a_ff = self.a.view((0, 0), (fixed, fixed)).into_owned();
        let v_f = self.v.rows(0, fixed).into_owned();

        let (xtvx, xtvy, ytvy, logdet_v, m_chol, c_fr, v_r);
        if q == 0 {
            xtvx = a_ff / se2;
            xtvy = v_f / se2;
            ytvy = self.yty / se2;
            logdet_v = self.n_total * se2.ln();
            m_chol = None;
            c_fr = DMatrix::zeros(fixed, 0);
            v_r = DVector::zeros(0);
        } else {
            c_fr = self.a.view((0, fixed), (fixed, q)).into_owned();
            v_r = self.v.rows(fixed, q).into_owned();
            let g_rr = self.a.view((fixed, fixed), (q, q)).into_owned();

            let mut m = g_rr / se2;
            let mut logdet_d = 0.0;
            for i in 0..q {
                let var = self
                    .layout
                    .prior_variance(fixed + i, sigma_age, sigma_region);
                m[(i, i)] += 1.0 / var;
                logdet_d += var.ln();
            }
            let chol = Cholesky::new(m).ok_or_else(|| {
                Error::Internal("mixed-model information matrix is not positive definite".into())
            })?;
            let logdet_m = 2.0 * (0..q).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
            logdet_v = self.n_total * se2.ln() + logdet_m + logdet_d;

            let m_inv_cfr_t = chol.solve(&c_fr.transpose());
            let m_inv_vr = chol.solve(&v_r);
            xtvx = a_ff / se2 - (&c_fr * &m_inv_cfr_t) / (se2 * se2);
            xtvy = v_f / se2 - (&c_fr * &m_inv_vr) / (se2 * se2);
            ytvy = self.yty / se2 - v_r.dot(&m_inv_vr) / (se2 * se2);
            m_chol = Some(chol);
        }

        let xtvx_chol = Cholesky::new(xtvx).ok_or_else(|| {
            Error::Internal("fixed-effect information matrix is not positive definite".into())
        })?;
        let logdet_xtvx = 2.0 * (0..fixed)
            .map(|i| xtvx_chol.l()[(i, i)].ln())
            .sum::<f64>();
        let beta = xtvx_chol.solve(&xtvy);
        let r2 = (ytvy - beta.dot(&xtvy)).max(0.0);

        let criterion = -0.5
            * ((self.n_total - fixed as f64) * (2.0 * std::f64::consts::PI).ln()
                + logdet_v
                + logdet_xtvx
                + r2);

        let random = match m_chol {
            Some(chol) => chol.solve(&((&v_r - c_fr.transpose() * &beta) / se2)),
            None => DVector::zeros(0),
        };

        Ok(RemlEval {
            criterion,
            beta,
            random,
        })
    }
}

pub(crate) fn fit_continuous(
    spec: &MrpSpec,
    users: &[UserRecord],
    values: &[f64],
) -> Result<MrpFit> {
    let cells = collapse_cells(users, values);
    let levels = observed_levels(&cells);

    let mut warnings = Vec::new();
    let gender_active = levels.genders == 2;
    if !gender_active {
        warnings.push("gender has a single observed level; contrast dropped".into());
    }
    let eff_age = single_level_rule(spec.sigma_age, levels.ages, "age_group", &mut warnings);
    let eff_region =
        single_level_rule(spec.sigma_region, levels.regions, "region", &mut warnings);

    let layout = Layout {
        gender_active,
        age_active: !matches!(eff_age, VarComp::Fixed(s) if s == 0.0),
        region_active: !matches!(eff_region, VarComp::Fixed(s) if s == 0.0),
    };
    let cross = Crossproducts::build(&cells, layout);

    // coordinates: [sigma_age, sigma_region, sigma_resid]
    let mut sigma = [
        initial_sigma(eff_age),
        initial_sigma(eff_region),
        initial_resid(&cells),
    ];
    let mut coords: Vec<(usize, f64, f64)> = Vec::new();
    if matches!(eff_age, VarComp::Estimate) {
        coords.push((0, spec.sigma_min.ln(), spec.sigma_max.ln()));
    }
    if matches!(eff_region, VarComp::Estimate) {
        coords.push((1, spec.sigma_min.ln(), spec.sigma_max.ln()));
    }
    coords.push((2, SIGMA_RESID_MIN.ln(), SIGMA_RESID_MAX.ln()));

    let mut evaluations: u32 = 0;
    let mut outer_converged = false;
    let mut last_criterion = f64::NEG_INFINITY;
    for _sweep in 0..spec.outer_max_iter {
        let mut max_move: f64 = 0.0;
        let mut sweep_criterion = f64::NEG_INFINITY;
        for &(coord, lo, hi) in &coords {
            let base = sigma;
            let mut eval = |log_sigma: f64| -> Result<f64> {
                let mut s = base;
                s[coord] = log_sigma.exp();
                evaluations += 1;
                Ok(cross.reml(s[0], s[1], s[2])?.criterion)
            };
            let (log_best, best_value) = golden_max(&mut eval, lo, hi, spec.outer_tol * 0.1)?;
            max_move = max_move.max((log_best - sigma[coord].ln()).abs());
            sigma[coord] = log_best.exp();
            sweep_criterion = best_value;
        }
        // same flat-criterion escape as the binary path
        if max_move < spec.outer_tol
            || (sweep_criterion - last_criterion).abs() <= 1e-8 + last_criterion.abs() * 1e-12
        {
            outer_converged = true;
            break;
        }
        last_criterion = sweep_criterion;
    }

    let final_eval = cross.reml(sigma[0], sigma[1], sigma[2])?;
    evaluations += 1;

    let mut a_age = vec![0.0; N_AGE_GROUPS];
    let mut a_region = vec![0.0; N_REGIONS];
    let fixed = layout.n_fixed();
    for age in 0..N_AGE_GROUPS {
        if let Some(col) = layout.age_col(age) {
            a_age[age] = final_eval.random[col - fixed];
        }
    }
    for region in 0..N_REGIONS {
        if let Some(col) = layout.region_col(region) {
            a_region[region] = final_eval.random[col - fixed];
        }
    }

    Ok(MrpFit {
        outcome: OutcomeKind::Continuous,
        beta0: final_eval.beta[0],
        beta_male: if gender_active { final_eval.beta[1] } else { 0.0 },
        a_age,
        a_region,
        sigma_age: sigma[0],
        sigma_region: sigma[1],
        sigma_resid: Some(sigma[2]),
        convergence: Convergence {
            converged: outer_converged,
            iterations: evaluations,
            final_deviance: -2.0 * final_eval.criterion,
        },
        warnings,
    })
}

/// Starting value for the residual coordinate: the pooled outcome standard
/// deviation, kept inside the search bracket.
fn initial_resid(cells: &[ObsCell]) -> f64 {
    let n: f64 = cells.iter().map(|c| c.n).sum();
    let sum: f64 = cells.iter().map(|c| c.sum).sum();
    let ss: f64 = cells.iter().map(|c| c.ss).sum();
    let mean = sum / n;
    let var = (ss / n - mean * mean).max(1e-8);
    var.sqrt().clamp(SIGMA_RESID_MIN * 10.0, SIGMA_RESID_MAX / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::CellKey;
    use crate::mrp::{fit, predict_cells};

    fn user(id: usize, gender: usize, age: usize, region: usize, score: f64) -> UserRecord {
        UserRecord {
            user_id: format!("u{id:05}"),
            key: CellKey::new(gender, age, region),
            dummy: u8::from(score >= 0.5),
            score,
            n_tweets: 1,
        }
    }

    fn synthetic_scores() -> Vec<UserRecord> {
        // deterministic pattern with gender, age, and region structure
        (0..2400)
            .map(|i| {
                let gender = i % 2;
                let age = (i / 2) % 4;
                let region = (i / 8) % 12;
                let wiggle = ((i * 37) % 101) as f64 / 1010.0;
                let score = 0.2 + 0.1 * gender as f64 + 0.02 * age as f64
                    + 0.01 * (region % 5) as f64
                    + wiggle;
                user(i, gender, age, region, score)
            })
            .collect()
    }

    #[test]
    fn continuous_fit_converges_and_reports_residual_sd() {
        let users = synthetic_scores();
        let fit = fit(&MrpSpec::continuous(), &users, |u| u.score).unwrap();
        assert!(fit.convergence.converged);
        let resid = fit.sigma_resid.unwrap();
        assert!(resid > 0.0 && resid < 0.2, "residual sd {resid}");
        // gender effect built in at +0.1
        assert!((fit.beta_male - 0.1).abs() < 0.02, "beta_male {}", fit.beta_male);
    }

    #[test]
    fn pinned_zero_sigmas_reduce_to_plain_regression() {
        let users = synthetic_scores();
        let mut pinned = MrpSpec::continuous();
        pinned.sigma_age = VarComp::Fixed(0.0);
        pinned.sigma_region = VarComp::Fixed(0.0);
        let plain = fit(&pinned, &users, |u| u.score).unwrap();

        // ordinary least squares on (intercept, male) via closed form
        let n = users.len() as f64;
        let n_male: f64 = users.iter().filter(|u| u.key.gender == 1).count() as f64;
        let sum: f64 = users.iter().map(|u| u.score).sum();
        let sum_male: f64 = users
            .iter()
            .filter(|u| u.key.gender == 1)
            .map(|u| u.score)
            .sum();
        let mean_female = (sum - sum_male) / (n - n_male);
        let mean_male = sum_male / n_male;
        assert!((plain.beta0 - mean_female).abs() < 1e-8);
        assert!((plain.beta_male - (mean_male - mean_female)).abs() < 1e-8);
    }

    #[test]
    fn tiny_sigma_predictions_match_fixed_effects_model() {
        let users = synthetic_scores();
        let mut pinned = MrpSpec::continuous();
        pinned.sigma_age = VarComp::Fixed(0.0);
        pinned.sigma_region = VarComp::Fixed(0.0);
        let plain = fit(&pinned, &users, |u| u.score).unwrap();

        let mut tiny = MrpSpec::continuous();
        tiny.sigma_age = VarComp::Fixed(1e-7);
        tiny.sigma_region = VarComp::Fixed(1e-7);
        let shrunk = fit(&tiny, &users, |u| u.score).unwrap();

        let sup = predict_cells(&plain)
            .iter()
            .zip(predict_cells(&shrunk))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(sup < 1e-4, "sup-norm {sup}");
    }

    #[test]
    fn predictions_are_clamped_to_unit_interval() {
        let fit = MrpFit {
            outcome: OutcomeKind::Continuous,
            beta0: 0.9,
            beta_male: 0.4,
            a_age: vec![0.0; 4],
            a_region: vec![0.0; 12],
            sigma_age: 0.0,
            sigma_region: 0.0,
            sigma_resid: Some(0.1),
            convergence: Convergence {
                converged: true,
                iterations: 1,
                final_deviance: 0.0,
            },
            warnings: vec![],
        };
        let preds = predict_cells(&fit);
        assert!(preds.iter().all(|p| (0.0..=1.0).contains(p)));
        // male cells would be 1.3 unclamped
        assert_eq!(preds[CellKey::new(1, 0, 0).index()], 1.0);
    }
}
