//! Seeded synthetic-population generator: fabricates a census, a
//! demographically biased trace panel, and an unbiased survey from a known
//! cell-level truth, so the whole pipeline can be verified end to end.
//!
//! All randomness comes from xoshiro256++ seeded through SplitMix64 from
//! the single `seed` field; the OS entropy pool is never touched, so one
//! seed reproduces byte-identical outputs on any platform.

use std::path::Path;

use chrono::{DateTime, Duration, Months, Utc};
use rand::Rng;
use rand_distr::{Beta, Distribution, Geometric, Normal};
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::aggregate::{build_user_table, UserRecord};
use crate::config::{Config, Labels, N_AGE_GROUPS, N_REGIONS};
use crate::error::{Error, Result};
use crate::frame::{CellKey, CensusCounts};
use crate::ingest::{CensusCell, EngagementKind, SurveyResponse, TweetRecord, UserProfile};
use crate::mrp::{
    self, invlogit, DisaggregatedEstimate, MrpSpec, PoststratifiedEstimate,
};

/// Everything that defines one synthetic world. The seed fully determines
/// all outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,

    // true model
    pub beta0: f64,
    pub beta_male: f64,
    pub sigma_age: f64,
    pub sigma_region: f64,
    /// Center each drawn effect vector and rescale it so its root mean
    /// square equals the requested standard deviation exactly, removing
    /// small-sample wobble from the handful of group draws.
    pub standardize_effects: bool,

    // census
    pub census_min: u64,
    pub census_max: u64,

    // trace panel
    pub trace_users: u64,
    /// Per-dimension oversampling weights multiplying the census weight.
    pub gender_bias: [f64; 2],
    pub age_bias: [f64; 4],
    pub region_bias: [f64; 12],
    /// Mean engagement rows per user (count is 1 + geometric).
    pub mean_tweets: f64,
    /// Fraction of extra rows pushed before the window; the first row per
    /// user always stays inside so the user survives the filter.
    pub out_of_window_frac: f64,
    /// Probability that a user's rows reproduce the true label through the
    /// dummy rule; 1.0 makes the dummy a perfect measurement.
    pub dummy_accuracy: f64,
    /// Beta(a, b) scaled onto (0, 0.5): background probability of a
    /// non-signal row. Small mean keeps the corpus right-skewed.
    pub background_beta: (f64, f64),
    /// Beta(a, b) scaled onto [0.5, 1]: the one signal row of a positive
    /// user.
    pub positive_beta: (f64, f64),

    // survey
    pub survey_respondents: u64,
    /// Normal noise added to the cell truth before the 5-level cut.
    pub survey_noise_sd: f64,
    pub survey_metrics: Vec<String>,

    // time frame
    pub reference_date: DateTime<Utc>,
    pub window_months: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 42,
            beta0: -0.5,
            beta_male: 0.4,
            sigma_age: 0.3,
            sigma_region: 0.5,
            standardize_effects: true,
            census_min: 20_000,
            census_max: 500_000,
            trace_users: 20_000,
            gender_bias: [1.0, 3.0],
            age_bias: [1.0, 2.0, 1.0, 1.0],
            region_bias: [1.0; 12],
            mean_tweets: 4.0,
            out_of_window_frac: 0.0,
            dummy_accuracy: 1.0,
            background_beta: (0.8, 20.0),
            positive_beta: (2.0, 2.0),
            survey_respondents: 2_000,
            survey_noise_sd: 0.15,
            survey_metrics: vec!["fasting".into(), "praying".into()],
            reference_date: "2023-01-01T00:00:00Z".parse().expect("valid date"),
            window_months: 24,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("synth: {name} must be positive, got {v}")))
            }
        };
        if self.sigma_age < 0.0 || self.sigma_region < 0.0 {
            return Err(Error::Config("synth: sigmas must be non-negative".into()));
        }
        if self.census_min == 0 || self.census_min > self.census_max {
            return Err(Error::Config(
                "synth: census_min must be in [1, census_max]".into(),
            ));
        }
        if self.trace_users == 0 || self.survey_respondents == 0 {
            return Err(Error::Config("synth: sizes must be at least 1".into()));
        }
        for w in self
            .gender_bias
            .iter()
            .chain(&self.age_bias)
            .chain(&self.region_bias)
        {
            positive("bias weight", *w)?;
        }
        if self.mean_tweets < 1.0 {
            return Err(Error::Config("synth: mean_tweets must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.out_of_window_frac) {
            return Err(Error::Config(
                "synth: out_of_window_frac must lie in [0,1)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.dummy_accuracy) {
            return Err(Error::Config(
                "synth: dummy_accuracy must lie in [0,1]".into(),
            ));
        }
        positive("background_beta.0", self.background_beta.0)?;
        positive("background_beta.1", self.background_beta.1)?;
        positive("positive_beta.0", self.positive_beta.0)?;
        positive("positive_beta.1", self.positive_beta.1)?;
        if self.survey_noise_sd < 0.0 {
            return Err(Error::Config("synth: survey_noise_sd must be >= 0".into()));
        }
        if self.window_months == 0 {
            return Err(Error::Config("synth: window_months must be at least 1".into()));
        }
        Ok(())
    }

    /// Ingestion configuration matching the generated files.
    pub fn ingest_config(&self) -> Config {
        Config {
            labels: Labels::default(),
            reference_date: self.reference_date,
            window_months: self.window_months,
            threshold: 0.5,
            survey_metrics: self.survey_metrics.clone(),
        }
    }
}

/// One generated world, in memory.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub labels: Labels,
    pub census: Vec<CensusCell>,
    /// True cell means, canonical order.
    pub truth: Vec<f64>,
    pub truth_national: f64,
    pub truth_regional: Vec<Option<f64>>,
    pub tweets: Vec<TweetRecord>,
    pub profiles: Vec<UserProfile>,
    pub survey: Vec<SurveyResponse>,
}

/// Weighted categorical draw over the 96 cells.
struct CellSampler {
    cumulative: Vec<f64>,
}

impl CellSampler {
    fn new(weights: &[f64]) -> CellSampler {
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut total = 0.0;
        for w in weights {
            total += w;
            cumulative.push(total);
        }
        CellSampler { cumulative }
    }

    fn draw(&self, rng: &mut Xoshiro256PlusPlus) -> usize {
        let total = *self.cumulative.last().expect("nonempty weights");
        let u: f64 = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

fn draw_effects(
    rng: &mut Xoshiro256PlusPlus,
    count: usize,
    sigma: f64,
    standardize: bool,
) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; count];
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let mut effects: Vec<f64> = (0..count).map(|_| normal.sample(rng)).collect();
    if standardize && count > 1 {
        let mean = effects.iter().sum::<f64>() / count as f64;
        for e in &mut effects {
            *e -= mean;
        }
        let ms = effects.iter().map(|e| e * e).sum::<f64>() / count as f64;
        if ms > 0.0 {
            let scale = sigma / ms.sqrt();
            for e in &mut effects {
                *e *= scale;
            }
        }
    }
    effects
}

/// Generates one synthetic world from the spec.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let labels = Labels::default();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);

    // census
    let census: Vec<CensusCell> = CellKey::all()
        .map(|key| CensusCell {
            key,
            population: rng.random_range(spec.census_min..=spec.census_max),
        })
        .collect();
    let census_counts = CensusCounts::from_cells(&census);

    // true cell means
    let a_age = draw_effects(&mut rng, N_AGE_GROUPS, spec.sigma_age, spec.standardize_effects);
    let a_region = draw_effects(
        &mut rng,
        N_REGIONS,
        spec.sigma_region,
        spec.standardize_effects,
    );
    let truth: Vec<f64> = CellKey::all()
        .map(|key| {
            let male = if key.gender == 1 { spec.beta_male } else { 0.0 };
            invlogit(spec.beta0 + male + a_age[key.age as usize] + a_region[key.region as usize])
        })
        .collect();
    let truth_post = mrp::poststratify(&truth, &census_counts)?;

    // trace panel, oversampled by the bias profile
    let trace_weights: Vec<f64> = CellKey::all()
        .map(|key| {
            census_counts.get(key) as f64
                * spec.gender_bias[key.gender as usize]
                * spec.age_bias[key.age as usize]
                * spec.region_bias[key.region as usize]
        })
        .collect();
    let trace_sampler = CellSampler::new(&trace_weights);

    let window_start = spec
        .reference_date
        .checked_sub_months(Months::new(spec.window_months))
        .ok_or_else(|| Error::Config("synth: window start is not representable".into()))?;
    let window_seconds = (spec.reference_date - window_start).num_seconds();
    let background = Beta::new(spec.background_beta.0, spec.background_beta.1)
        .map_err(|e| Error::Config(format!("synth: background_beta: {e}")))?;
    let positive = Beta::new(spec.positive_beta.0, spec.positive_beta.1)
        .map_err(|e| Error::Config(format!("synth: positive_beta: {e}")))?;
    let extra_rows = Geometric::new((1.0 / spec.mean_tweets).clamp(0.0, 1.0))
        .map_err(|e| Error::Config(format!("synth: mean_tweets: {e}")))?;

    let mut profiles = Vec::with_capacity(spec.trace_users as usize);
    let mut tweets = Vec::new();
    for user_index in 0..spec.trace_users {
        let cell = CellKey::from_index(trace_sampler.draw(&mut rng));
        let user_id = format!("u{user_index:07}");
        profiles.push(UserProfile {
            user_id: user_id.clone(),
            key: cell,
        });

        let label = rng.random::<f64>() < truth[cell.index()];
        let measured = if rng.random::<f64>() < spec.dummy_accuracy {
            label
        } else {
            !label
        };
        let n_rows = 1 + extra_rows.sample(&mut rng);
        let signal_row = if measured {
            rng.random_range(0..n_rows)
        } else {
            n_rows // never matches
        };
        for row in 0..n_rows {
            // the first row always stays inside the window so the user
            // survives the engagement filter
            let in_window = row == 0 || rng.random::<f64>() >= spec.out_of_window_frac;
            let timestamp = if in_window {
                window_start + Duration::seconds(rng.random_range(0..=window_seconds))
            } else {
                window_start - Duration::seconds(rng.random_range(1..=window_seconds))
            };
            let prob = if row == signal_row {
                0.5 + 0.5 * positive.sample(&mut rng)
            } else {
                (0.5 * background.sample(&mut rng)).min(0.5 - 1e-9)
            };
            tweets.push(TweetRecord {
                user_id: user_id.clone(),
                kind: EngagementKind::ALL[rng.random_range(0..EngagementKind::ALL.len())],
                timestamp,
                prob,
            });
        }
    }

    // survey: census-proportional, no platform bias
    let survey_weights: Vec<f64> = CellKey::all()
        .map(|key| census_counts.get(key) as f64)
        .collect();
    let survey_sampler = CellSampler::new(&survey_weights);
    let answer_noise = Normal::new(0.0, spec.survey_noise_sd.max(f64::MIN_POSITIVE))
        .expect("valid noise sd");
    let metric_noise = Normal::new(0.0, 0.1).expect("valid sd");

    let mut survey = Vec::with_capacity(spec.survey_respondents as usize);
    for respondent_index in 0..spec.survey_respondents {
        let cell = CellKey::from_index(survey_sampler.draw(&mut rng));
        let latent = (truth[cell.index()] + answer_noise.sample(&mut rng)).clamp(0.0, 1.0);
        // equal-width cuts of [0,1] into the five ordinal levels
        let level = ((latent * 5.0).floor() as u8).min(4);
        let metrics = spec
            .survey_metrics
            .iter()
            .map(|_| (latent + metric_noise.sample(&mut rng)).clamp(0.0, 1.0))
            .collect();
        survey.push(SurveyResponse {
            respondent_id: format!("s{respondent_index:07}"),
            key: cell,
            level,
            metrics,
        });
    }

    Ok(SynthData {
        labels,
        census,
        truth,
        truth_national: truth_post.national,
        truth_regional: truth_post.per_region,
        tweets,
        profiles,
        survey,
    })
}

impl SynthData {
    /// Writes the world as the standard CSV inputs plus `truth.csv` and a
    /// `spec.json` echo.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>, spec: &SynthSpec) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| -> Result<std::fs::File> {
            let path = dir.join(name);
            std::fs::File::create(&path).map_err(|e| Error::io(&path, e))
        };
        crate::ingest::write_tweets(create("tweets.csv")?, &self.tweets)?;
        crate::ingest::write_users(create("users.csv")?, &self.profiles, &self.labels)?;
        crate::ingest::write_census(create("census.csv")?, &self.census, &self.labels)?;
        crate::ingest::write_survey(
            create("survey.csv")?,
            &self.survey,
            &self.labels,
            &spec.survey_metrics,
        )?;

        let mut truth_csv = csv::Writer::from_writer(create("truth.csv")?);
        truth_csv
            .write_record(["gender", "age_group", "region", "true_mean"])
            .map_err(|e| Error::Internal(e.to_string()))?;
        for key in CellKey::all() {
            truth_csv
                .write_record([
                    key.gender_label(&self.labels),
                    key.age_label(&self.labels),
                    key.region_label(&self.labels),
                    &self.truth[key.index()].to_string(),
                ])
                .map_err(|e| Error::Internal(e.to_string()))?;
        }
        truth_csv
            .flush()
            .map_err(|e| Error::Internal(e.to_string()))?;

        let spec_json =
            serde_json::to_string_pretty(spec).map_err(|e| Error::Internal(e.to_string()))?;
        std::fs::write(dir.join("spec.json"), spec_json + "\n")
            .map_err(|e| Error::io(dir.join("spec.json"), e))?;
        Ok(())
    }

    pub fn census_counts(&self) -> CensusCounts {
        CensusCounts::from_cells(&self.census)
    }
}

/// Absolute errors of the two estimators against the known truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub disagg_national_abs_error: Option<f64>,
    pub mrp_national_abs_error: f64,
    pub disagg_regional_abs_error: Vec<Option<f64>>,
    pub mrp_regional_abs_error: Vec<Option<f64>>,
}

pub fn evaluate(
    truth_national: f64,
    truth_regional: &[Option<f64>],
    disagg: &DisaggregatedEstimate,
    mrp: &PoststratifiedEstimate,
) -> Evaluation {
    let regional_err = |estimate: &[Option<f64>]| -> Vec<Option<f64>> {
        (0..N_REGIONS)
            .map(|r| match (estimate[r], truth_regional[r]) {
                (Some(e), Some(t)) => Some((e - t).abs()),
                _ => None,
            })
            .collect()
    };
    Evaluation {
        disagg_national_abs_error: disagg.national.map(|e| (e - truth_national).abs()),
        mrp_national_abs_error: (mrp.national - truth_national).abs(),
        disagg_regional_abs_error: regional_err(&disagg.per_region),
        mrp_regional_abs_error: regional_err(&mrp.per_region),
    }
}

/// One replicate of the generate → aggregate → fit → poststratify loop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateOutcome {
    pub seed: u64,
    pub truth_national: f64,
    pub disagg_national: f64,
    pub mrp_national: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateSummary {
    pub replicates: u32,
    /// Replicates where MRP landed closer to the national truth.
    pub mrp_wins_national: u32,
    pub mean_mrp_abs_error: f64,
    pub mean_disagg_abs_error: f64,
    pub outcomes: Vec<ReplicateOutcome>,
}

/// Runs the full pipeline on `replicates` fresh worlds (seeds counting up
/// from the base seed) and tallies how often the adjusted estimate beats
/// the raw one.
pub fn run_replicates(base: &SynthSpec, replicates: u32) -> Result<ReplicateSummary> {
    if replicates == 0 {
        return Err(Error::Contract("replicates must be at least 1".into()));
    }
    let mut summary = ReplicateSummary {
        replicates,
        mrp_wins_national: 0,
        mean_mrp_abs_error: 0.0,
        mean_disagg_abs_error: 0.0,
        outcomes: Vec::with_capacity(replicates as usize),
    };
    for index in 0..replicates {
        let mut spec = base.clone();
        spec.seed = base.seed.wrapping_add(u64::from(index));
        let world = generate(&spec)?;
        let (disagg, post) = run_pipeline(&world, &spec)?;
        let disagg_national = disagg
            .national
            .ok_or_else(|| Error::Internal("replicate produced no users".into()))?;

        let mrp_err = (post.national - world.truth_national).abs();
        let disagg_err = (disagg_national - world.truth_national).abs();
        if mrp_err < disagg_err {
            summary.mrp_wins_national += 1;
        }
        summary.mean_mrp_abs_error += mrp_err;
        summary.mean_disagg_abs_error += disagg_err;
        summary.outcomes.push(ReplicateOutcome {
            seed: spec.seed,
            truth_national: world.truth_national,
            disagg_national,
            mrp_national: post.national,
        });
    }
    summary.mean_mrp_abs_error /= f64::from(replicates);
    summary.mean_disagg_abs_error /= f64::from(replicates);
    Ok(summary)
}

/// Aggregates the world's trace, fits the binary model, and poststratifies
/// with the world's census.
pub fn run_pipeline(
    world: &SynthData,
    spec: &SynthSpec,
) -> Result<(DisaggregatedEstimate, PoststratifiedEstimate)> {
    let table = build_user_table(
        &world.tweets,
        &world.profiles,
        spec.reference_date,
        spec.window_months,
        0.5,
    )?;
    let fit = mrp::fit(&MrpSpec::binary(), &table.users, user_dummy)?;
    let predictions = mrp::predict_cells(&fit);
    let post = mrp::poststratify(&predictions, &world.census_counts())?;
    let disagg = mrp::disaggregated_estimate(&table.users, user_dummy);
    Ok((disagg, post))
}

fn user_dummy(user: &UserRecord) -> f64 {
    f64::from(user.dummy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_identical_worlds() {
        let spec = SynthSpec {
            trace_users: 500,
            survey_respondents: 200,
            ..SynthSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.tweets, b.tweets);
        assert_eq!(a.survey, b.survey);
        assert_eq!(a.census, b.census);
    }

    #[test]
    fn different_seeds_differ() {
        let spec = SynthSpec {
            trace_users: 200,
            survey_respondents: 50,
            ..SynthSpec::default()
        };
        let other = SynthSpec { seed: 43, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap().tweets, generate(&other).unwrap().tweets);
    }

    #[test]
    fn flat_model_means_one_half_everywhere() {
        let spec = SynthSpec {
            beta0: 0.0,
            beta_male: 0.0,
            sigma_age: 0.0,
            sigma_region: 0.0,
            trace_users: 10,
            survey_respondents: 10,
            ..SynthSpec::default()
        };
        let world = generate(&spec).unwrap();
        assert!(world.truth.iter().all(|&t| t == 0.5));
        assert_eq!(world.truth_national, 0.5);
    }

    #[test]
    fn sizes_match_the_spec_exactly() {
        let spec = SynthSpec {
            trace_users: 777,
            survey_respondents: 333,
            ..SynthSpec::default()
        };
        let world = generate(&spec).unwrap();
        assert_eq!(world.profiles.len(), 777);
        assert_eq!(world.survey.len(), 333);
        assert!(world.tweets.len() >= 777);
    }

    #[test]
    fn perfect_accuracy_reproduces_labels_through_the_dummy_rule() {
        let spec = SynthSpec {
            trace_users: 2_000,
            survey_respondents: 10,
            ..SynthSpec::default()
        };
        let world = generate(&spec).unwrap();
        let table = build_user_table(
            &world.tweets,
            &world.profiles,
            spec.reference_date,
            spec.window_months,
            0.5,
        )
        .unwrap();
        // every generated user survives the filter
        assert_eq!(table.users.len(), 2_000);
        assert_eq!(table.diagnostics.dropped_no_profile, 0);
    }

    #[test]
    fn corpus_score_distribution_is_right_skewed() {
        let spec = SynthSpec {
            trace_users: 5_000,
            survey_respondents: 10,
            ..SynthSpec::default()
        };
        let world = generate(&spec).unwrap();
        let mut probs: Vec<f64> = world.tweets.iter().map(|t| t.prob).collect();
        probs.sort_by(f64::total_cmp);
        let mean = probs.iter().sum::<f64>() / probs.len() as f64;
        let median = probs[probs.len() / 2];
        assert!(median < mean, "median {median} mean {mean}");
        assert!(mean < 0.3, "mean {mean}");
    }
}
