//! Label sets and run parameters.
//!
//! The whole pipeline works over a fixed demographic crossing: two genders,
//! four age groups, and twelve regions, 96 cells in total. The label strings
//! are configurable, the arities are not. Label order is significant — it
//! fixes the cell order of every output, and the second gender label is the
//! contrast level of the regression's gender fixed effect.

use std::path::Path;

use chrono::{DateTime, Months, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_GENDERS: usize = 2;
pub const N_AGE_GROUPS: usize = 4;
pub const N_REGIONS: usize = 12;
pub const N_CELLS: usize = N_GENDERS * N_AGE_GROUPS * N_REGIONS;

/// Configured label sets for the three demographic dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLabels")]
pub struct Labels {
    genders: Vec<String>,
    age_groups: Vec<String>,
    regions: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct RawLabels {
    genders: Vec<String>,
    age_groups: Vec<String>,
    regions: Vec<String>,
}

impl TryFrom<RawLabels> for Labels {
    type Error = Error;

    fn try_from(raw: RawLabels) -> Result<Self> {
        Labels::new(raw.genders, raw.age_groups, raw.regions)
    }
}

impl Default for Labels {
    fn default() -> Self {
        // Age bins follow the M3-Inference scheme; regions are the twelve
        // NUTS-1 codes for Turkey.
        Labels {
            genders: vec!["female".into(), "male".into()],
            age_groups: vec!["<=18".into(), "19-29".into(), "30-39".into(), ">=40".into()],
            regions: vec![
                "TR1".into(),
                "TR2".into(),
                "TR3".into(),
                "TR4".into(),
                "TR5".into(),
                "TR6".into(),
                "TR7".into(),
                "TR8".into(),
                "TR9".into(),
                "TRA".into(),
                "TRB".into(),
                "TRC".into(),
            ],
        }
    }
}

impl Labels {
    pub fn new(
        genders: Vec<String>,
        age_groups: Vec<String>,
        regions: Vec<String>,
    ) -> Result<Self> {
        check_set("genders", &genders, N_GENDERS)?;
        check_set("age_groups", &age_groups, N_AGE_GROUPS)?;
        check_set("regions", &regions, N_REGIONS)?;
        Ok(Labels {
            genders,
            age_groups,
            regions,
        })
    }

    pub fn genders(&self) -> &[String] {
        &self.genders
    }

    pub fn age_groups(&self) -> &[String] {
        &self.age_groups
    }

    pub fn regions(&self) -> &[String] {
        &self.regions
    }

    pub fn gender_index(&self, label: &str) -> Option<usize> {
        self.genders.iter().position(|l| l == label)
    }

    pub fn age_index(&self, label: &str) -> Option<usize> {
        self.age_groups.iter().position(|l| l == label)
    }

    pub fn region_index(&self, label: &str) -> Option<usize> {
        self.regions.iter().position(|l| l == label)
    }
}

fn check_set(name: &str, labels: &[String], expected: usize) -> Result<()> {
    if labels.len() != expected {
        return Err(Error::Config(format!(
            "{name} must have exactly {expected} labels, got {}",
            labels.len()
        )));
    }
    for (i, label) in labels.iter().enumerate() {
        if label.is_empty() {
            return Err(Error::Config(format!("{name}[{i}] is empty")));
        }
        if labels[..i].contains(label) {
            return Err(Error::Config(format!("duplicate {name} label `{label}`")));
        }
    }
    Ok(())
}

/// Run parameters shared by every pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig")]
pub struct Config {
    #[serde(flatten)]
    pub labels: Labels,
    /// Snapshot instant of the trace data; tweets after it are invalid.
    pub reference_date: DateTime<Utc>,
    /// Length of the engagement window ending at `reference_date`.
    pub window_months: u32,
    /// Per-user dummy threshold on the maximum in-window probability.
    pub threshold: f64,
    /// Extra real-valued survey columns (each value must lie in [0,1]).
    pub survey_metrics: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    genders: Option<Vec<String>>,
    age_groups: Option<Vec<String>>,
    regions: Option<Vec<String>>,
    reference_date: Option<String>,
    window_months: Option<u32>,
    threshold: Option<f64>,
    survey_metrics: Option<Vec<String>>,
}

impl TryFrom<RawConfig> for Config {
    type Error = Error;

    fn try_from(raw: RawConfig) -> Result<Self> {
        let defaults = Labels::default();
        let labels = Labels::new(
            raw.genders.unwrap_or_else(|| defaults.genders.clone()),
            raw.age_groups.unwrap_or_else(|| defaults.age_groups.clone()),
            raw.regions.unwrap_or_else(|| defaults.regions.clone()),
        )?;
        let mut config = Config {
            labels,
            reference_date: DEFAULT_REFERENCE_DATE
                .parse()
                .expect("default reference date parses"),
            window_months: 24,
            threshold: 0.5,
            survey_metrics: raw.survey_metrics.unwrap_or_default(),
        };
        if let Some(s) = raw.reference_date {
            config.reference_date = parse_reference_date(&s)?;
        }
        if let Some(w) = raw.window_months {
            config.window_months = w;
        }
        if let Some(t) = raw.threshold {
            config.threshold = t;
        }
        config.validate()?;
        Ok(config)
    }
}

const DEFAULT_REFERENCE_DATE: &str = "2023-01-01T00:00:00Z";

impl Default for Config {
    fn default() -> Self {
        Config {
            labels: Labels::default(),
            reference_date: DEFAULT_REFERENCE_DATE
                .parse()
                .expect("default reference date parses"),
            window_months: 24,
            threshold: 0.5,
            survey_metrics: Vec::new(),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_months == 0 {
            return Err(Error::Config("window_months must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must lie in [0,1], got {}",
                self.threshold
            )));
        }
        for (i, m) in self.survey_metrics.iter().enumerate() {
            if m.is_empty() {
                return Err(Error::Config(format!("survey_metrics[{i}] is empty")));
            }
            if self.survey_metrics[..i].contains(m) {
                return Err(Error::Config(format!("duplicate survey metric `{m}`")));
            }
        }
        if self.window_start().is_none() {
            return Err(Error::Config(
                "window_months reaches before the representable time range".into(),
            ));
        }
        Ok(())
    }

    /// First instant inside the engagement window (inclusive).
    pub fn window_start(&self) -> Option<DateTime<Utc>> {
        self.reference_date
            .checked_sub_months(Months::new(self.window_months))
    }
}

/// Parses either a date (`2023-01-01`, taken as midnight UTC) or a full
/// RFC 3339 timestamp.
pub fn parse_reference_date(s: &str) -> Result<DateTime<Utc>> {
    if let Ok(date) = s.parse::<NaiveDate>() {
        let midnight = date
            .and_hms_opt(0, 0, 0)
            .ok_or_else(|| Error::Config(format!("invalid reference date `{s}`")))?;
        return Ok(midnight.and_utc());
    }
    DateTime::parse_from_rfc3339(s)
        .map(|dt| dt.with_timezone(&Utc))
        .map_err(|e| Error::Config(format!("invalid reference date `{s}`: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let config = Config::default();
        assert!(config.validate().is_ok());
        assert_eq!(config.window_months, 24);
        assert_eq!(config.threshold, 0.5);
        assert_eq!(config.labels.regions().len(), N_REGIONS);
    }

    #[test]
    fn toml_round_trip_with_overrides() {
        let text = r#"
            reference_date = "2022-12-01"
            window_months = 12
            threshold = 0.7
            survey_metrics = ["fasting", "praying"]
        "#;
        let config = Config::from_toml_str(text).unwrap();
        assert_eq!(config.window_months, 12);
        assert_eq!(config.threshold, 0.7);
        assert_eq!(config.survey_metrics, vec!["fasting", "praying"]);
        assert_eq!(
            config.reference_date,
            parse_reference_date("2022-12-01T00:00:00Z").unwrap()
        );
    }

    #[test]
    fn wrong_arity_rejected() {
        let err = Labels::new(
            vec!["female".into()],
            Labels::default().age_groups.clone(),
            Labels::default().regions.clone(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("genders"));
    }

    #[test]
    fn duplicate_labels_rejected() {
        let mut regions = Labels::default().regions.clone();
        regions[11] = "TR1".into();
        assert!(Labels::new(
            Labels::default().genders.clone(),
            Labels::default().age_groups.clone(),
            regions
        )
        .is_err());
    }

    #[test]
    fn unknown_config_key_rejected() {
        assert!(Config::from_toml_str("not_a_key = 1").is_err());
    }

    #[test]
    fn window_start_is_calendar_months() {
        let config = Config::default();
        assert_eq!(
            config.window_start().unwrap(),
            parse_reference_date("2021-01-01").unwrap()
        );
    }
}
