//! Validation battery: rank correlations over the demographic cells,
//! the correlation heatmap, descriptive statistics, the demographic-bias
//! report, and the per-region comparison table.

use std::io::Write;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::aggregate::UserRecord;
use crate::config::{Config, Labels, N_REGIONS};
use crate::error::{Error, Result};
use crate::frame::{align, CellKey, CellTable, CensusCounts};
use crate::ingest::{survey_dummy, survey_score, SurveyResponse};

/// Spearman correlation with its two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spearman {
    pub rho: f64,
    pub p: f64,
}

/// Average (fractional) ranks; tied values share the mean of their
/// positions in a sorted ordering.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &position in &order[start..=end] {
            ranks[position] = rank;
        }
        start = end + 1;
    }
    ranks
}

/// Spearman rho (Pearson correlation of average ranks) with the two-sided
/// p-value from the t approximation on n-2 degrees of freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Spearman> {
    if x.len() != y.len() {
        return Err(Error::Contract(format!(
            "spearman requires equal-length vectors, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Contract(format!(
            "spearman requires at least 3 observations, got {n}"
        )));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let mean = (n as f64 + 1.0) / 2.0; // ranks always average to (n+1)/2
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "a vector is constant, ranks carry no order".into(),
        ));
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(Spearman {
        rho,
        p: spearman_p(rho, n),
    })
}

/// Two-sided p-value for `t = rho sqrt((n-2)/(1-rho^2))` on n-2 degrees of
/// freedom; a perfect correlation yields 0.
fn spearman_p(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - rho * rho;
    if denom <= f64::EPSILON {
        return 0.0;
    }
    let t = rho * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Pairwise Spearman matrix over named cell tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap {
    pub metrics: Vec<String>,
    /// `rho[i][j]`; `None` marks an undefined pair, never fabricated as 0.
    pub rho: Vec<Vec<Option<f64>>>,
    pub p: Vec<Vec<Option<f64>>>,
}

/// Correlates every metric pair over the cells where both means are
/// defined. Per-pair failures (no overlap, constant ranks, too few cells)
/// mark that entry undefined instead of failing the matrix.
pub fn heatmap(tables: &[(String, CellTable)]) -> Result<Heatmap> {
    if tables.len() < 2 {
        return Err(Error::Contract(format!(
            "heatmap requires at least 2 metrics, got {}",
            tables.len()
        )));
    }
    let k = tables.len();
    let mut rho = vec![vec![None; k]; k];
    let mut p = vec![vec![None; k]; k];
    for i in 0..k {
        rho[i][i] = Some(1.0);
        p[i][i] = Some(0.0);
        for j in (i + 1)..k {
            let pair = align(&tables[i].1, &tables[j].1)
                .and_then(|aligned| spearman(&aligned.a, &aligned.b));
            if let Ok(s) = pair {
                rho[i][j] = Some(s.rho);
                rho[j][i] = Some(s.rho);
                p[i][j] = Some(s.p);
                p[j][i] = Some(s.p);
            }
        }
    }
    Ok(Heatmap {
        metrics: tables.iter().map(|(name, _)| name.clone()).collect(),
        rho,
        p,
    })
}

/// Summary row of one variable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Descriptives {
    pub name: String,
    pub n: u64,
    pub mean: f64,
    /// Sample standard deviation (n-1 denominator; 0 for a single value).
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub fn descriptives(name: &str, values: &[f64]) -> Result<Descriptives> {
    if values.is_empty() {
        return Err(Error::Contract(format!(
            "descriptives for `{name}` need at least one value"
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(Descriptives {
        name: name.into(),
        n: values.len() as u64,
        mean,
        std,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Share of one demographic level in the trace, the survey, and the census.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasRow {
    pub dimension: String,
    pub level: String,
    pub trace_share: f64,
    pub survey_share: f64,
    pub census_share: f64,
    /// Trace share over census share; `None` where the census share is 0.
    pub ratio: Option<f64>,
}

/// Per-dimension level shares across the three sources, with the
/// trace-to-census overrepresentation ratio.
pub fn bias_report(
    users: &[UserRecord],
    survey: &[SurveyResponse],
    census: &CensusCounts,
    labels: &Labels,
) -> Result<Vec<BiasRow>> {
    if users.is_empty() || survey.is_empty() {
        return Err(Error::Contract(
            "bias report needs nonempty trace and survey data".into(),
        ));
    }
    if census.total() == 0 {
        return Err(Error::Contract(
            "bias report needs a census with positive population".into(),
        ));
    }

    let trace_keys: Vec<CellKey> = users.iter().map(|u| u.key).collect();
    let survey_keys: Vec<CellKey> = survey.iter().map(|r| r.key).collect();

    let mut rows = Vec::new();
    for (dimension, levels, pick) in dimension_specs(labels) {
        let trace = level_shares(&trace_keys, levels.len(), &pick);
        let surveyed = level_shares(&survey_keys, levels.len(), &pick);
        let censused = census_shares(census, levels.len(), &pick);
        for (index, level) in levels.iter().enumerate() {
            let ratio = (censused[index] > 0.0).then(|| trace[index] / censused[index]);
            rows.push(BiasRow {
                dimension: dimension.into(),
                level: level.clone(),
                trace_share: trace[index],
                survey_share: surveyed[index],
                census_share: censused[index],
                ratio,
            });
        }
    }
    Ok(rows)
}

type LevelPick = Box<dyn Fn(CellKey) -> usize>;

fn dimension_specs(labels: &Labels) -> Vec<(&'static str, Vec<String>, LevelPick)> {
    vec![
        (
            "gender",
            labels.genders().to_vec(),
            Box::new(|k: CellKey| k.gender as usize) as LevelPick,
        ),
        (
            "age_group",
            labels.age_groups().to_vec(),
            Box::new(|k: CellKey| k.age as usize),
        ),
        (
            "region",
            labels.regions().to_vec(),
            Box::new(|k: CellKey| k.region as usize),
        ),
    ]
}

fn level_shares(keys: &[CellKey], levels: usize, pick: &LevelPick) -> Vec<f64> {
    let mut counts = vec![0u64; levels];
    for &key in keys {
        counts[pick(key)] += 1;
    }
    let total = keys.len() as f64;
    counts.iter().map(|&c| c as f64 / total).collect()
}

fn census_shares(census: &CensusCounts, levels: usize, pick: &LevelPick) -> Vec<f64> {
    let mut counts = vec![0u64; levels];
    for key in CellKey::all() {
        counts[pick(key)] += census.get(key);
    }
    let total = census.total() as f64;
    counts.iter().map(|&c| c as f64 / total).collect()
}

/// One region's survey references against the trace estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionalRow {
    pub region: String,
    pub survey_dummy: Option<f64>,
    pub survey_score: Option<f64>,
    pub trace_dummy_disagg: Option<f64>,
    pub trace_dummy_mrp: Option<f64>,
    pub trace_score: Option<f64>,
}

/// Builds the 12-row regional comparison in configured region order.
/// Entries that cannot be computed stay explicit nulls.
pub fn regional_table(
    labels: &Labels,
    survey: &[SurveyResponse],
    users: &[UserRecord],
    mrp_regional: Option<&[Option<f64>]>,
) -> Vec<RegionalRow> {
    let mut survey_dummy_sum = vec![0.0; N_REGIONS];
    let mut survey_score_sum = vec![0.0; N_REGIONS];
    let mut survey_n = vec![0u64; N_REGIONS];
    for response in survey {
        let region = response.key.region as usize;
        survey_dummy_sum[region] += f64::from(survey_dummy(response));
        survey_score_sum[region] += survey_score(response);
        survey_n[region] += 1;
    }
    let mut trace_dummy_sum = vec![0.0; N_REGIONS];
    let mut trace_score_sum = vec![0.0; N_REGIONS];
    let mut trace_n = vec![0u64; N_REGIONS];
    for user in users {
        let region = user.key.region as usize;
        trace_dummy_sum[region] += f64::from(user.dummy);
        trace_score_sum[region] += user.score;
        trace_n[region] += 1;
    }

    (0..N_REGIONS)
        .map(|r| RegionalRow {
            region: labels.regions()[r].clone(),
            survey_dummy: (survey_n[r] > 0).then(|| survey_dummy_sum[r] / survey_n[r] as f64),
            survey_score: (survey_n[r] > 0).then(|| survey_score_sum[r] / survey_n[r] as f64),
            trace_dummy_disagg: (trace_n[r] > 0).then(|| trace_dummy_sum[r] / trace_n[r] as f64),
            trace_dummy_mrp: mrp_regional.and_then(|v| v[r]),
            trace_score: (trace_n[r] > 0).then(|| trace_score_sum[r] / trace_n[r] as f64),
        })
        .collect()
}

/// The full validation report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub descriptives: Vec<Descriptives>,
    pub heatmap: Heatmap,
    pub bias: Vec<BiasRow>,
    pub regional: Vec<RegionalRow>,
}

pub const TRACE_DUMMY: &str = "trace_dummy";
pub const TRACE_SCORE: &str = "trace_score";
pub const SURVEY_DUMMY: &str = "survey_dummy";
pub const SURVEY_SCORE: &str = "survey_score";

/// Collapses both sources onto the frame and assembles the whole battery.
///
/// Heatmap metric order is fixed: the two trace metrics, the two recoded
/// survey metrics, then every configured extra survey metric.
pub fn build_report(
    config: &Config,
    users: &[UserRecord],
    survey: &[SurveyResponse],
    census: &CensusCounts,
    mrp_regional: Option<&[Option<f64>]>,
) -> Result<ValidationReport> {
    let tables = metric_tables(config, users, survey, census);

    let mut all_descriptives = Vec::new();
    for (name, values) in metric_values(config, users, survey) {
        all_descriptives.push(descriptives(&name, &values)?);
    }

    Ok(ValidationReport {
        descriptives: all_descriptives,
        heatmap: heatmap(&tables)?,
        bias: bias_report(users, survey, census, &config.labels)?,
        regional: regional_table(&config.labels, survey, users, mrp_regional),
    })
}

/// Cell tables for every metric, in heatmap order.
pub fn metric_tables(
    config: &Config,
    users: &[UserRecord],
    survey: &[SurveyResponse],
    census: &CensusCounts,
) -> Vec<(String, CellTable)> {
    let trace_dummy: Vec<(CellKey, f64)> =
        users.iter().map(|u| (u.key, f64::from(u.dummy))).collect();
    let trace_score: Vec<(CellKey, f64)> = users.iter().map(|u| (u.key, u.score)).collect();
    let survey_dummy_records: Vec<(CellKey, f64)> = survey
        .iter()
        .map(|r| (r.key, f64::from(survey_dummy(r))))
        .collect();
    let survey_score_records: Vec<(CellKey, f64)> =
        survey.iter().map(|r| (r.key, survey_score(r))).collect();

    let mut tables = vec![
        (TRACE_DUMMY.to_string(), CellTable::collapse(&trace_dummy, census)),
        (TRACE_SCORE.to_string(), CellTable::collapse(&trace_score, census)),
        (
            SURVEY_DUMMY.to_string(),
            CellTable::collapse(&survey_dummy_records, census),
        ),
        (
            SURVEY_SCORE.to_string(),
            CellTable::collapse(&survey_score_records, census),
        ),
    ];
    for (index, metric) in config.survey_metrics.iter().enumerate() {
        let records: Vec<(CellKey, f64)> = survey
            .iter()
            .map(|r| (r.key, r.metrics[index]))
            .collect();
        tables.push((metric.clone(), CellTable::collapse(&records, census)));
    }
    tables
}

fn metric_values(
    config: &Config,
    users: &[UserRecord],
    survey: &[SurveyResponse],
) -> Vec<(String, Vec<f64>)> {
    let mut sets: Vec<(String, Vec<f64>)> = vec![
        (
            TRACE_DUMMY.into(),
            users.iter().map(|u| f64::from(u.dummy)).collect(),
        ),
        (TRACE_SCORE.into(), users.iter().map(|u| u.score).collect()),
        (
            SURVEY_DUMMY.into(),
            survey.iter().map(|r| f64::from(survey_dummy(r))).collect(),
        ),
        (SURVEY_SCORE.into(), survey.iter().map(survey_score).collect()),
    ];
    for (index, metric) in config.survey_metrics.iter().enumerate() {
        sets.push((
            metric.clone(),
            survey.iter().map(|r| r.metrics[index]).collect(),
        ));
    }
    sets
}

// --- plot-ready CSV serializations -----------------------------------------

fn opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// Long-form heatmap: one row per unordered metric pair, diagonal included.
pub fn write_heatmap_csv<W: Write>(writer: W, heatmap: &Heatmap) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["metric_a", "metric_b", "rho", "p"])
        .map_err(|e| Error::Internal(e.to_string()))?;
    for i in 0..heatmap.metrics.len() {
        for j in i..heatmap.metrics.len() {
            out.write_record([
                heatmap.metrics[i].as_str(),
                heatmap.metrics[j].as_str(),
                &opt(heatmap.rho[i][j]),
                &opt(heatmap.p[i][j]),
            ])
            .map_err(|e| Error::Internal(e.to_string()))?;
        }
    }
    out.flush().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(())
}

pub fn write_bias_csv<W: Write>(writer: W, rows: &[BiasRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "dimension",
        "level",
        "trace_share",
        "survey_share",
        "census_share",
        "ratio",
    ])
    .map_err(|e| Error::Internal(e.to_string()))?;
    for row in rows {
        out.write_record([
            row.dimension.as_str(),
            row.level.as_str(),
            &row.trace_share.to_string(),
            &row.survey_share.to_string(),
            &row.census_share.to_string(),
            &opt(row.ratio),
        ])
        .map_err(|e| Error::Internal(e.to_string()))?;
    }
    out.flush().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(())
}

pub fn write_regional_csv<W: Write>(writer: W, rows: &[RegionalRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "region",
        "survey_dummy",
        "survey_score",
        "trace_dummy_disagg",
        "trace_dummy_mrp",
        "trace_score",
    ])
    .map_err(|e| Error::Internal(e.to_string()))?;
    for row in rows {
        out.write_record([
            row.region.as_str(),
            &opt(row.survey_dummy),
            &opt(row.survey_score),
            &opt(row.trace_dummy_disagg),
            &opt(row.trace_dummy_mrp),
            &opt(row.trace_score),
        ])
        .map_err(|e| Error::Internal(e.to_string()))?;
    }
    out.flush().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(())
}
