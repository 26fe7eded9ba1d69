//! Binary-outcome fitter: penalized IRLS inner loop, Laplace-approximate
//! profile likelihood for the variance components.
//!
//! At fixed standard deviations the inner loop maximizes
//!
//! ```text
//! l_pen(theta) = sum_c [ k_c eta_c - n_c log(1 + exp(eta_c)) ]
//!                - 1/2 sum_g ||a_g||^2 / sigma_g^2
//! ```
//!
//! over all coefficients jointly, where cells carry binomial sufficient
//! statistics (k successes of n). The outer criterion evaluated at the
//! inner mode is the Laplace approximation of the marginal log-likelihood,
//!
//! ```text
//! l_La(sigma) = l(theta_hat) - penalty(a_hat)
//!               - 1/2 logdet( I + D^1/2 (Z'WZ) D^1/2 )
//! ```
//!
//! with D the diagonal of prior variances and Z'WZ the random-effect block
//! of the weighted crossproduct at the mode. As sigma -> 0 all three extra
//! terms vanish and the criterion degenerates to the plain logistic
//! likelihood.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::aggregate::UserRecord;
use crate::config::{N_AGE_GROUPS, N_REGIONS};
use crate::error::{Error, Result};

use super::design::Layout;
use super::{
    collapse_cells, golden_max, invlogit, observed_levels, Convergence, MrpFit, MrpSpec,
    ObsCell, OutcomeKind, VarComp,
};

/// Coefficient magnitude past which an underflowing weight is read as
/// complete separation rather than slow convergence.
const SEPARATION_BETA: f64 = 30.0;
const SEPARATION_WEIGHT: f64 = 1e-10;

fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        0.0
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) struct BinaryModel<'a> {
    pub cells: &'a [ObsCell],
    pub layout: Layout,
}

pub(crate) struct Pirls {
    pub theta: DVector<f64>,
    pub loglik: f64,
    pub deviance: f64,
    pub iterations: u32,
    pub converged: bool,
    /// Random-effect block of the weighted crossproduct at the mode.
    pub ztwz: DMatrix<f64>,
}

impl BinaryModel<'_> {
    fn loglik(&self, theta: &DVector<f64>) -> f64 {
        self.cells
            .iter()
            .map(|cell| {
                let eta = self.layout.row(cell).dot(theta);
                cell.sum * eta - cell.n * softplus(eta)
            })
            .sum()
    }

    /// Penalized IRLS at fixed variance components.
    pub fn pirls(
        &self,
        sigma_age: f64,
        sigma_region: f64,
        warm: Option<&DVector<f64>>,
        tol: f64,
        max_iter: u32,
    ) -> Result<Pirls> {
        let p = self.layout.n_cols();
        let penalties: Vec<f64> = (0..p)
            .map(|c| self.layout.penalty(c, sigma_age, sigma_region))
            .collect();
        let mut theta = warm.cloned().unwrap_or_else(|| DVector::zeros(p));
        if theta.len() != p {
            theta = DVector::zeros(p);
        }

        let mut last_deviance = f64::INFINITY;
        let mut deviance = f64::INFINITY;
        let mut converged = false;
        let mut iterations = 0;

        for iter in 1..=max_iter {
            iterations = iter;
            let mut normal = DMatrix::zeros(p, p);
            let mut rhs = DVector::zeros(p);
            for cell in self.cells {
                let row = self.layout.row(cell);
                let eta = row.dot(&theta);
                let mu = invlogit(eta);
                let variance = (mu * (1.0 - mu)).max(1e-12);
                let weight = cell.n * variance;
                let working = eta + (cell.sum - cell.n * mu) / weight;
                for (ci, vi) in row.iter() {
                    for (cj, vj) in row.iter() {
                        normal[(ci, cj)] += weight * vi * vj;
                    }
                    rhs[ci] += weight * working * vi;
                }
            }
            for (c, &penalty) in penalties.iter().enumerate() {
                normal[(c, c)] += penalty;
            }
            let chol = Cholesky::new(normal).ok_or_else(|| {
                Error::Internal("penalized IRLS normal equations are not positive definite".into())
            })?;
            theta = chol.solve(&rhs);

            self.check_separation(&theta)?;

            let loglik = self.loglik(&theta);
            deviance = -2.0 * loglik;
            if (deviance - last_deviance).abs() < tol {
                converged = true;
                break;
            }
            last_deviance = deviance;
        }

        let ztwz = self.random_crossproduct(&theta);
        Ok(Pirls {
            loglik: -0.5 * deviance,
            deviance,
            iterations,
            converged,
            ztwz,
            theta,
        })
    }

    fn check_separation(&self, theta: &DVector<f64>) -> Result<()> {
        let diverged = (0..self.layout.n_fixed()).any(|c| theta[c].abs() > SEPARATION_BETA);
        if !diverged {
            return Ok(());
        }
        let underflow = self.cells.iter().any(|cell| {
            let mu = invlogit(self.layout.row(cell).dot(theta));
            mu * (1.0 - mu) < SEPARATION_WEIGHT
        });
        if underflow {
            return Err(Error::Separation);
        }
        Ok(())
    }

    fn random_crossproduct(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let q = self.layout.n_random();
        let fixed = self.layout.n_fixed();
        let mut ztwz = DMatrix::zeros(q, q);
        if q == 0 {
            return ztwz;
        }
        for cell in self.cells {
            let row = self.layout.row(cell);
            let mu = invlogit(row.dot(theta));
            let weight = cell.n * (mu * (1.0 - mu)).max(1e-12);
            for (ci, vi) in row.iter().filter(|&(c, _)| c >= fixed) {
                for (cj, vj) in row.iter().filter(|&(c, _)| c >= fixed) {
                    ztwz[(ci - fixed, cj - fixed)] += weight * vi * vj;
                }
            }
        }
        ztwz
    }

    /// Laplace-approximate marginal log-likelihood at the inner mode.
    pub fn laplace_criterion(&self, pirls: &Pirls, sigma_age: f64, sigma_region: f64) -> f64 {
        let fixed = self.layout.n_fixed();
        let q = self.layout.n_random();
        if q == 0 {
            return pirls.loglik;
        }
        let mut penalty = 0.0;
        for col in fixed..self.layout.n_cols() {
            penalty += 0.5 * pirls.theta[col] * pirls.theta[col]
                * self.layout.penalty(col, sigma_age, sigma_region);
        }
        // logdet(I + D^1/2 Z'WZ D^1/2), symmetric positive definite
        let mut m = DMatrix::identity(q, q);
        for i in 0..q {
            let vi = self
                .layout
                .prior_variance(fixed + i, sigma_age, sigma_region);
            for j in 0..q {
                let vj = self
                    .layout
                    .prior_variance(fixed + j, sigma_age, sigma_region);
                m[(i, j)] += (vi * vj).sqrt() * pirls.ztwz[(i, j)];
            }
        }
        let logdet = match Cholesky::<f64, nalgebra::Dyn>::new(m) {
            Some(chol) => 2.0 * (0..q).map(|i| chol.l()[(i, i)].ln()).sum::<f64>(),
            None => f64::INFINITY, // drives the search away
        };
        pirls.loglik - penalty - 0.5 * logdet
    }
}

pub(crate) fn fit_binary(spec: &MrpSpec, users: &[UserRecord], values: &[f64]) -> Result<MrpFit> {
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
    let model = BinaryModel {
        cells: &cells,
        layout,
    };

    let mut sigma = [initial_sigma(eff_age), initial_sigma(eff_region)];
    let estimated: Vec<usize> = [eff_age, eff_region]
        .iter()
        .enumerate()
        .filter(|(_, c)| matches!(c, VarComp::Estimate))
        .map(|(i, _)| i)
        .collect();

    let mut warm: Option<DVector<f64>> = None;
    let mut total_iterations: u32 = 0;
    let mut outer_converged = estimated.is_empty();

    if !estimated.is_empty() {
        let (lo, hi) = (spec.sigma_min.ln(), spec.sigma_max.ln());
        let mut last_criterion = f64::NEG_INFINITY;
        for _sweep in 0..spec.outer_max_iter {
            let mut max_move: f64 = 0.0;
            let mut sweep_criterion = f64::NEG_INFINITY;
            for &coord in &estimated {
                let base = sigma;
                let mut eval = |log_sigma: f64| -> Result<f64> {
                    let mut s = base;
                    s[coord] = log_sigma.exp();
                    let pirls =
                        model.pirls(s[0], s[1], warm.as_ref(), spec.inner_tol, spec.inner_max_iter)?;
                    total_iterations += pirls.iterations;
                    let criterion = model.laplace_criterion(&pirls, s[0], s[1]);
                    warm = Some(pirls.theta);
                    Ok(criterion)
                };
                let (log_best, best_value) =
                    golden_max(&mut eval, lo, hi, spec.outer_tol * 0.1)?;
                max_move = max_move.max((log_best - sigma[coord].ln()).abs());
                sigma[coord] = log_best.exp();
                sweep_criterion = best_value;
            }
            // Near the optimum the criterion goes flat below f64
            // resolution, so bracket placement can jitter more than the
            // move tolerance; a sweep that no longer improves the
            // criterion beyond resolution is converged too.
            if max_move < spec.outer_tol
                || (sweep_criterion - last_criterion).abs()
                    <= 1e-8 + last_criterion.abs() * 1e-12
            {
                outer_converged = true;
                break;
            }
            last_criterion = sweep_criterion;
        }
    }

    let final_pirls = model.pirls(
        sigma[0],
        sigma[1],
        warm.as_ref(),
        spec.inner_tol,
        spec.inner_max_iter,
    )?;
    total_iterations += final_pirls.iterations;

    let mut a_age = vec![0.0; N_AGE_GROUPS];
    for age in 0..N_AGE_GROUPS {
        if let Some(col) = layout.age_col(age) {
            a_age[age] = final_pirls.theta[col];
        }
    }
    let mut a_region = vec![0.0; N_REGIONS];
    for region in 0..N_REGIONS {
        if let Some(col) = layout.region_col(region) {
            a_region[region] = final_pirls.theta[col];
        }
    }

    Ok(MrpFit {
        outcome: OutcomeKind::Binary,
        beta0: final_pirls.theta[0],
        beta_male: if gender_active {
            final_pirls.theta[1]
        } else {
            0.0
        },
        a_age,
        a_region,
        sigma_age: sigma[0],
        sigma_region: sigma[1],
        sigma_resid: None,
        convergence: Convergence {
            converged: final_pirls.converged && outer_converged,
            iterations: total_iterations,
            final_deviance: final_pirls.deviance,
        },
        warnings,
    })
}

pub(crate) fn single_level_rule(
    requested: VarComp,
    observed: usize,
    grouping: &str,
    warnings: &mut Vec<String>,
) -> VarComp {
    if observed >= 2 {
        return requested;
    }
    if !matches!(requested, VarComp::Fixed(s) if s == 0.0) {
        warnings.push(format!(
            "{grouping} has a single observed level; its standard deviation is fixed to 0"
        ));
    }
    VarComp::Fixed(0.0)
}

pub(crate) fn initial_sigma(component: VarComp) -> f64 {
    match component {
        VarComp::Fixed(s) => s,
        VarComp::Estimate => 0.5,
    }
}

/// Penalized log-likelihood and its analytic gradient for the binary model
/// at fixed variance components, over the full coefficient layout
/// (intercept, gender contrast, 4 age intercepts, 12 region intercepts).
///
/// Diagnostic hook: lets tests compare the gradient against finite
/// differences without touching fitter internals.
pub fn penalized_loglik_and_grad<F>(
    users: &[UserRecord],
    outcome: F,
    sigma_age: f64,
    sigma_region: f64,
    theta: &[f64],
) -> (f64, Vec<f64>)
where
    F: Fn(&UserRecord) -> f64,
{
    assert!(sigma_age > 0.0 && sigma_region > 0.0);
    let layout = Layout {
        gender_active: true,
        age_active: true,
        region_active: true,
    };
    assert_eq!(theta.len(), layout.n_cols());
    let values: Vec<f64> = users.iter().map(outcome).collect();
    let cells = collapse_cells(users, &values);
    let theta = DVector::from_column_slice(theta);

    let mut loglik = 0.0;
    let mut grad = DVector::zeros(layout.n_cols());
    for cell in &cells {
        let row = layout.row(cell);
        let eta = row.dot(&theta);
        loglik += cell.sum * eta - cell.n * softplus(eta);
        let residual = cell.sum - cell.n * invlogit(eta);
        for (col, value) in row.iter() {
            grad[col] += residual * value;
        }
    }
    for col in 0..layout.n_cols() {
        let penalty = layout.penalty(col, sigma_age, sigma_region);
        loglik -= 0.5 * penalty * theta[col] * theta[col];
        grad[col] -= penalty * theta[col];
    }
    (loglik, grad.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::CellKey;
    use crate::mrp::{fit, predict_cells};

    fn user(id: usize, gender: usize, age: usize, region: usize, y: u8) -> UserRecord {
        UserRecord {
            user_id: format!("u{id:05}"),
            key: CellKey::new(gender, age, region),
            dummy: y,
            score: f64::from(y),
            n_tweets: 1,
        }
    }

    /// k successes of n, all demographics constant.
    fn bernoulli_users(k: usize, n: usize) -> Vec<UserRecord> {
        (0..n).map(|i| user(i, 0, 0, 0, u8::from(i < k))).collect()
    }

    #[test]
    fn intercept_only_closed_form() {
        let users = bernoulli_users(30, 100);
        let mut spec = MrpSpec::binary();
        spec.sigma_age = VarComp::Fixed(0.0);
        spec.sigma_region = VarComp::Fixed(0.0);
        let fit = fit(&spec, &users, |u| f64::from(u.dummy)).unwrap();
        // single observed gender level: contrast dropped, model is
        // intercept-only with closed form logit(k/n)
        let expected = (0.3f64 / 0.7).ln();
        assert!(fit.convergence.converged);
        assert!((fit.beta0 - expected).abs() < 1e-8);
        assert_eq!(fit.beta_male, 0.0);
        assert!(!fit.warnings.is_empty());
    }

    #[test]
    fn separation_is_reported() {
        // gender perfectly predicts the outcome
        let mut users = Vec::new();
        for i in 0..50 {
            users.push(user(i, 0, i % 4, i % 12, 0));
            users.push(user(100 + i, 1, i % 4, i % 12, 1));
        }
        let mut spec = MrpSpec::binary();
        spec.sigma_age = VarComp::Fixed(0.0);
        spec.sigma_region = VarComp::Fixed(0.0);
        let err = fit(&spec, &users, |u| f64::from(u.dummy)).unwrap_err();
        assert!(matches!(err, Error::Separation));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let users: Vec<UserRecord> = (0..200)
            .map(|i| user(i, i % 2, i % 4, i % 12, u8::from(i % 3 == 0)))
            .collect();
        let mut spec = MrpSpec::binary();
        spec.inner_max_iter = 1;
        spec.outer_max_iter = 1;
        let fit = fit(&spec, &users, |u| f64::from(u.dummy)).unwrap();
        assert!(!fit.convergence.converged);
    }

    #[test]
    fn fits_are_bit_identical_across_runs() {
        let users: Vec<UserRecord> = (0..500)
            .map(|i| user(i, i % 2, (i / 2) % 4, (i / 8) % 12, u8::from(i % 5 < 2)))
            .collect();
        let spec = MrpSpec::binary();
        let a = fit(&spec, &users, |u| f64::from(u.dummy)).unwrap();
        let b = fit(&spec, &users, |u| f64::from(u.dummy)).unwrap();
        assert_eq!(a.to_canonical_json(), b.to_canonical_json());
    }

    #[test]
    fn sigma_zero_limit_matches_fixed_effects_predictions() {
        let users: Vec<UserRecord> = (0..600)
            .map(|i| user(i, i % 2, (i / 3) % 4, (i / 7) % 12, u8::from((i * 7) % 10 < 4)))
            .collect();
        let mut pinned = MrpSpec::binary();
        pinned.sigma_age = VarComp::Fixed(0.0);
        pinned.sigma_region = VarComp::Fixed(0.0);
        let fixed_only = fit(&pinned, &users, |u| f64::from(u.dummy)).unwrap();

        let mut tiny = MrpSpec::binary();
        tiny.sigma_age = VarComp::Fixed(1e-7);
        tiny.sigma_region = VarComp::Fixed(1e-7);
        let shrunk = fit(&tiny, &users, |u| f64::from(u.dummy)).unwrap();

        let a = predict_cells(&fixed_only);
        let b = predict_cells(&shrunk);
        let sup = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(sup < 1e-4, "sup-norm {sup}");
    }
}
