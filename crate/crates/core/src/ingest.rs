//! Parsing and validation of the four input datasets, plus the survey
//! recoding rules.
//!
//! All files are UTF-8 CSV with a header and RFC 4180 quoting. Parsing is
//! strict: malformed rows, unknown labels, and future timestamps are hard
//! errors naming the line; the one soft failure is a tweet probability
//! outside [0,1], which rejects the row and counts it.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};

use crate::config::Config;
use crate::config::Labels;
use crate::error::{Error, Result};
use crate::frame::CellKey;

/// The five engagement kinds a trace row can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EngagementKind {
    Original,
    Retweet,
    Favorite,
    Quote,
    Reply,
}

impl EngagementKind {
    pub const ALL: [EngagementKind; 5] = [
        EngagementKind::Original,
        EngagementKind::Retweet,
        EngagementKind::Favorite,
        EngagementKind::Quote,
        EngagementKind::Reply,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EngagementKind::Original => "original",
            EngagementKind::Retweet => "retweet",
            EngagementKind::Favorite => "favorite",
            EngagementKind::Quote => "quote",
            EngagementKind::Reply => "reply",
        }
    }
}

impl FromStr for EngagementKind {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        EngagementKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or(())
    }
}

impl fmt::Display for EngagementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One engagement row: the user's own tweet, retweet, favorite, quote, or
/// reply, with its classifier-predicted probability.
#[derive(Debug, Clone, PartialEq)]
pub struct TweetRecord {
    pub user_id: String,
    pub kind: EngagementKind,
    pub timestamp: DateTime<Utc>,
    pub prob: f64,
}

impl TweetRecord {
    /// True when the timestamp falls inside `[window_start, reference]`,
    /// both ends inclusive.
    pub fn in_window(&self, window_start: DateTime<Utc>, reference: DateTime<Utc>) -> bool {
        self.timestamp >= window_start && self.timestamp <= reference
    }
}

/// A user's demographic cell.
#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub user_id: String,
    pub key: CellKey,
}

/// Census population for one demographic cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CensusCell {
    pub key: CellKey,
    pub population: u64,
}

/// One survey respondent: demographics, the 5-point self-assessment, and
/// any extra metric columns declared in the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyResponse {
    pub respondent_id: String,
    pub key: CellKey,
    /// Ordinal answer, 0 (lowest) through 4 (highest).
    pub level: u8,
    /// Values of the configured extra metric columns, in declared order.
    pub metrics: Vec<f64>,
}

/// Recodes the 5-point answer to a positive/negative dummy: the top two
/// categories count as positive.
pub fn survey_dummy(response: &SurveyResponse) -> u8 {
    u8::from(response.level >= 3)
}

/// Rescales the 5-point answer onto [0,1] with equal spacing.
pub fn survey_score(response: &SurveyResponse) -> f64 {
    f64::from(response.level) / 4.0
}

const TWEET_HEADER: [&str; 4] = ["user_id", "kind", "timestamp", "prob"];
const USER_HEADER: [&str; 4] = ["user_id", "gender", "age_group", "region"];
const CENSUS_HEADER: [&str; 4] = ["gender", "age_group", "region", "population"];
const SURVEY_HEADER: [&str; 5] = [
    "respondent_id",
    "gender",
    "age_group",
    "region",
    "religiosity_level",
];

/// Outcome of [`parse_tweets`]: accepted records plus rejection counters.
#[derive(Debug, Clone, PartialEq)]
pub struct TweetParse {
    pub records: Vec<TweetRecord>,
    /// Rows dropped because `prob` fell outside [0,1].
    pub rejected_rows: u64,
    /// Accepted rows whose timestamp precedes the configured window.
    pub out_of_window: u64,
    /// Total data rows seen (accepted + rejected).
    pub total_rows: u64,
}

/// Parses a tweets file against the configured reference date.
///
/// Rows older than the window are retained but counted, so one parsed
/// dataset can serve several window choices at aggregation time. Rows
/// with a timestamp after the reference date are malformed.
pub fn parse_tweets(path: impl AsRef<Path>, config: &Config) -> Result<TweetParse> {
    let file = open(&path)?;
    parse_tweets_from(file, &display(&path), config)
}

pub fn parse_tweets_from<R: Read>(reader: R, name: &str, config: &Config) -> Result<TweetParse> {
    let window_start = config
        .window_start()
        .ok_or_else(|| Error::Config("window start is not representable".into()))?;
    let mut csv_reader = csv::Reader::from_reader(reader);
    check_header(&mut csv_reader, name, &TWEET_HEADER)?;

    let mut parse = TweetParse {
        records: Vec::new(),
        rejected_rows: 0,
        out_of_window: 0,
        total_rows: 0,
    };
    for row in csv_reader.records() {
        let row = row.map_err(|e| csv_row_error(name, &e))?;
        let line = row.position().map_or(0, |p| p.line());
        parse.total_rows += 1;

        let user_id = field(name, &row, line, 0, "user_id")?;
        let kind_text = field(name, &row, line, 1, "kind")?;
        let kind = kind_text.parse::<EngagementKind>().map_err(|()| Error::UnknownLabel {
            path: name.into(),
            line,
            dimension: "engagement kind",
            label: kind_text.to_string(),
        })?;
        let ts_text = field(name, &row, line, 2, "timestamp")?;
        let timestamp = DateTime::parse_from_rfc3339(ts_text)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|e| malformed(name, line, "timestamp", e.to_string()))?;
        if timestamp > config.reference_date {
            return Err(malformed(
                name,
                line,
                "timestamp",
                format!(
                    "{} is after the reference date {}",
                    format_timestamp(timestamp),
                    format_timestamp(config.reference_date)
                ),
            ));
        }
        let prob_text = field(name, &row, line, 3, "prob")?;
        let prob: f64 = prob_text
            .parse()
            .map_err(|e: std::num::ParseFloatError| malformed(name, line, "prob", e.to_string()))?;
        if !(0.0..=1.0).contains(&prob) {
            parse.rejected_rows += 1;
            continue;
        }
        if timestamp < window_start {
            parse.out_of_window += 1;
        }
        parse.records.push(TweetRecord {
            user_id: user_id.to_string(),
            kind,
            timestamp,
            prob,
        });
    }
    Ok(parse)
}

/// Outcome of [`parse_users`]: deduplicated profiles plus a warning count.
#[derive(Debug, Clone, PartialEq)]
pub struct UserParse {
    pub profiles: Vec<UserProfile>,
    /// Number of user ids that appeared more than once (last row wins).
    pub duplicate_warnings: u64,
}

pub fn parse_users(path: impl AsRef<Path>, labels: &Labels) -> Result<UserParse> {
    let file = open(&path)?;
    parse_users_from(file, &display(&path), labels)
}

pub fn parse_users_from<R: Read>(reader: R, name: &str, labels: &Labels) -> Result<UserParse> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    check_header(&mut csv_reader, name, &USER_HEADER)?;

    let mut profiles: Vec<UserProfile> = Vec::new();
    let mut seen: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    let mut duplicate_warnings = 0;
    for row in csv_reader.records() {
        let row = row.map_err(|e| csv_row_error(name, &e))?;
        let line = row.position().map_or(0, |p| p.line());
        let user_id = field(name, &row, line, 0, "user_id")?.to_string();
        let key = parse_cell_labels(name, &row, line, 1, labels)?;
        let profile = UserProfile {
            user_id: user_id.clone(),
            key,
        };
        match seen.get(&user_id) {
            // Trace snapshots commonly supersede earlier rows: last wins.
            Some(&at) => {
                profiles[at] = profile;
                duplicate_warnings += 1;
            }
            None => {
                seen.insert(user_id, profiles.len());
                profiles.push(profile);
            }
        }
    }
    Ok(UserParse {
        profiles,
        duplicate_warnings,
    })
}

pub fn parse_census(path: impl AsRef<Path>, labels: &Labels) -> Result<Vec<CensusCell>> {
    let file = open(&path)?;
    parse_census_from(file, &display(&path), labels)
}

pub fn parse_census_from<R: Read>(reader: R, name: &str, labels: &Labels) -> Result<Vec<CensusCell>> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    check_header(&mut csv_reader, name, &CENSUS_HEADER)?;

    let mut cells: Vec<CensusCell> = Vec::new();
    let mut seen = [false; crate::config::N_CELLS];
    let mut total: u64 = 0;
    for row in csv_reader.records() {
        let row = row.map_err(|e| csv_row_error(name, &e))?;
        let line = row.position().map_or(0, |p| p.line());
        let key = parse_cell_labels(name, &row, line, 0, labels)?;
        if seen[key.index()] {
            return Err(Error::DuplicateCell {
                path: name.into(),
                line,
                key: key.describe(labels),
            });
        }
        seen[key.index()] = true;
        let pop_text = field(name, &row, line, 3, "population")?;
        let population: i64 = pop_text
            .parse()
            .map_err(|e: std::num::ParseIntError| malformed(name, line, "population", e.to_string()))?;
        if population < 0 {
            return Err(malformed(
                name,
                line,
                "population",
                format!("{population} is negative"),
            ));
        }
        total += population as u64;
        cells.push(CensusCell {
            key,
            population: population as u64,
        });
    }
    if total == 0 {
        return Err(Error::Contract(format!(
            "{name}: census total population is zero"
        )));
    }
    Ok(cells)
}

pub fn parse_survey(path: impl AsRef<Path>, config: &Config) -> Result<Vec<SurveyResponse>> {
    let file = open(&path)?;
    parse_survey_from(file, &display(&path), config)
}

pub fn parse_survey_from<R: Read>(
    reader: R,
    name: &str,
    config: &Config,
) -> Result<Vec<SurveyResponse>> {
    let mut expected: Vec<&str> = SURVEY_HEADER.to_vec();
    expected.extend(config.survey_metrics.iter().map(String::as_str));
    let mut csv_reader = csv::Reader::from_reader(reader);
    check_header(&mut csv_reader, name, &expected)?;

    let mut responses = Vec::new();
    for row in csv_reader.records() {
        let row = row.map_err(|e| csv_row_error(name, &e))?;
        let line = row.position().map_or(0, |p| p.line());
        let respondent_id = field(name, &row, line, 0, "respondent_id")?.to_string();
        let key = parse_cell_labels(name, &row, line, 1, &config.labels)?;
        let level_text = field(name, &row, line, 4, "religiosity_level")?;
        let level: u8 = level_text
            .parse()
            .map_err(|e: std::num::ParseIntError| {
                malformed(name, line, "religiosity_level", e.to_string())
            })?;
        if level > 4 {
            return Err(malformed(
                name,
                line,
                "religiosity_level",
                format!("{level} is outside 0..=4"),
            ));
        }
        let mut metrics = Vec::with_capacity(config.survey_metrics.len());
        for (offset, metric) in config.survey_metrics.iter().enumerate() {
            let text = row.get(5 + offset).ok_or_else(|| {
                malformed(name, line, "metric", format!("missing column `{metric}`"))
            })?;
            let value: f64 = text.parse().map_err(|e: std::num::ParseFloatError| {
                malformed(name, line, "metric", format!("`{metric}`: {e}"))
            })?;
            if !(0.0..=1.0).contains(&value) {
                return Err(malformed(
                    name,
                    line,
                    "metric",
                    format!("`{metric}` value {value} is outside [0,1]"),
                ));
            }
            metrics.push(value);
        }
        responses.push(SurveyResponse {
            respondent_id,
            key,
            level,
            metrics,
        });
    }
    Ok(responses)
}

// --- canonical serialization ---------------------------------------------

/// Canonical timestamp text: seconds precision with a `Z` suffix, keeping
/// fractional seconds only when present, so parse ∘ serialize is lossless.
pub fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Canonical probability text: shortest decimal that round-trips.
pub fn format_float(value: f64) -> String {
    value.to_string()
}

pub fn write_tweets<W: Write>(writer: W, records: &[TweetRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(TWEET_HEADER).map_err(csv_write_error)?;
    for r in records {
        out.write_record([
            r.user_id.as_str(),
            r.kind.as_str(),
            &format_timestamp(r.timestamp),
            &format_float(r.prob),
        ])
        .map_err(csv_write_error)?;
    }
    out.flush().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(())
}

pub fn write_users<W: Write>(writer: W, profiles: &[UserProfile], labels: &Labels) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(USER_HEADER).map_err(csv_write_error)?;
    for p in profiles {
        out.write_record([
            p.user_id.as_str(),
            p.key.gender_label(labels),
            p.key.age_label(labels),
            p.key.region_label(labels),
        ])
        .map_err(csv_write_error)?;
    }
    out.flush().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(())
}

pub fn write_census<W: Write>(writer: W, cells: &[CensusCell], labels: &Labels) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(CENSUS_HEADER).map_err(csv_write_error)?;
    for c in cells {
        out.write_record([
            c.key.gender_label(labels),
            c.key.age_label(labels),
            c.key.region_label(labels),
            &c.population.to_string(),
        ])
        .map_err(csv_write_error)?;
    }
    out.flush().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(())
}

pub fn write_survey<W: Write>(
    writer: W,
    responses: &[SurveyResponse],
    labels: &Labels,
    metric_names: &[String],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = SURVEY_HEADER.to_vec();
    header.extend(metric_names.iter().map(String::as_str));
    out.write_record(&header).map_err(csv_write_error)?;
    for r in responses {
        let mut record: Vec<String> = vec![
            r.respondent_id.clone(),
            r.key.gender_label(labels).to_string(),
            r.key.age_label(labels).to_string(),
            r.key.region_label(labels).to_string(),
            r.level.to_string(),
        ];
        record.extend(r.metrics.iter().map(|v| format_float(*v)));
        out.write_record(&record).map_err(csv_write_error)?;
    }
    out.flush().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(())
}

// --- helpers ---------------------------------------------------------------

fn open(path: impl AsRef<Path>) -> Result<std::fs::File> {
    std::fs::File::open(&path).map_err(|e| Error::io(&path, e))
}

fn display(path: impl AsRef<Path>) -> String {
    path.as_ref().display().to_string()
}

fn check_header<R: Read>(
    reader: &mut csv::Reader<R>,
    name: &str,
    expected: &[&str],
) -> Result<()> {
    let found = reader
        .headers()
        .map_err(|e| csv_row_error(name, &e))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    if found != expected {
        return Err(Error::HeaderMismatch {
            path: name.into(),
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    Ok(())
}

fn field<'r>(
    name: &str,
    row: &'r csv::StringRecord,
    line: u64,
    index: usize,
    field: &'static str,
) -> Result<&'r str> {
    row.get(index)
        .ok_or_else(|| malformed(name, line, field, "missing field".into()))
}

/// Reads gender, age group, and region labels starting at `first` and maps
/// them to a cell key against the configured label sets.
fn parse_cell_labels(
    name: &str,
    row: &csv::StringRecord,
    line: u64,
    first: usize,
    labels: &Labels,
) -> Result<CellKey> {
    let gender_text = field(name, row, line, first, "gender")?;
    let gender = labels
        .gender_index(gender_text)
        .ok_or_else(|| unknown(name, line, "gender", gender_text))?;
    let age_text = field(name, row, line, first + 1, "age_group")?;
    let age = labels
        .age_index(age_text)
        .ok_or_else(|| unknown(name, line, "age_group", age_text))?;
    let region_text = field(name, row, line, first + 2, "region")?;
    let region = labels
        .region_index(region_text)
        .ok_or_else(|| unknown(name, line, "region", region_text))?;
    Ok(CellKey::new(gender, age, region))
}

fn malformed(name: &str, line: u64, field: &'static str, reason: String) -> Error {
    Error::MalformedRow {
        path: name.into(),
        line,
        field,
        reason,
    }
}

fn unknown(name: &str, line: u64, dimension: &'static str, label: &str) -> Error {
    Error::UnknownLabel {
        path: name.into(),
        line,
        dimension,
        label: label.to_string(),
    }
}

fn csv_row_error(name: &str, error: &csv::Error) -> Error {
    let line = match error.position() {
        Some(p) => p.line(),
        None => 0,
    };
    malformed(name, line, "row", error.to_string())
}

fn csv_write_error(error: csv::Error) -> Error {
    Error::Internal(error.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> Config {
        Config::default() // reference 2023-01-01, window 24 months
    }

    #[test]
    fn parses_valid_tweet_row() {
        let data = "user_id,kind,timestamp,prob\nu1,original,2022-06-01T00:00:00Z,0.70\n";
        let parse = parse_tweets_from(data.as_bytes(), "tweets.csv", &config()).unwrap();
        assert_eq!(parse.records.len(), 1);
        assert_eq!(parse.total_rows, 1);
        let r = &parse.records[0];
        assert_eq!(r.user_id, "u1");
        assert_eq!(r.kind, EngagementKind::Original);
        assert_eq!(r.prob, 0.70);
    }

    #[test]
    fn out_of_range_prob_is_rejected_with_count() {
        let data = "user_id,kind,timestamp,prob\n\
                    u1,original,2022-06-01T00:00:00Z,1.2\n\
                    u2,reply,2022-06-01T00:00:00Z,0.4\n";
        let parse = parse_tweets_from(data.as_bytes(), "tweets.csv", &config()).unwrap();
        assert_eq!(parse.rejected_rows, 1);
        assert_eq!(parse.records.len(), 1);
        assert_eq!(parse.total_rows, 2);
    }

    #[test]
    fn unknown_kind_is_an_error() {
        let data = "user_id,kind,timestamp,prob\nu1,like,2022-06-01T00:00:00Z,0.7\n";
        let err = parse_tweets_from(data.as_bytes(), "tweets.csv", &config()).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { ref label, .. } if label == "like"));
    }

    #[test]
    fn future_timestamp_is_an_error() {
        let data = "user_id,kind,timestamp,prob\nu1,original,2024-01-01T00:00:00Z,0.7\n";
        let err = parse_tweets_from(data.as_bytes(), "tweets.csv", &config()).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { field: "timestamp", line: 2, .. }));
    }

    #[test]
    fn malformed_row_names_line_and_field() {
        let data = "user_id,kind,timestamp,prob\nu1,original,not-a-time,0.7\n";
        let err = parse_tweets_from(data.as_bytes(), "tweets.csv", &config()).unwrap_err();
        match err {
            Error::MalformedRow { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "timestamp");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn old_rows_are_kept_but_counted() {
        // 25 months before the 2023-01-01 reference
        let data = "user_id,kind,timestamp,prob\nu1,original,2020-12-01T00:00:00Z,0.7\n";
        let parse = parse_tweets_from(data.as_bytes(), "tweets.csv", &config()).unwrap();
        assert_eq!(parse.records.len(), 1);
        assert_eq!(parse.out_of_window, 1);
    }

    #[test]
    fn header_mismatch_is_an_error() {
        let data = "user,kind,timestamp,prob\n";
        let err = parse_tweets_from(data.as_bytes(), "tweets.csv", &config()).unwrap_err();
        assert!(matches!(err, Error::HeaderMismatch { .. }));
    }

    #[test]
    fn parses_user_profile() {
        let data = "user_id,gender,age_group,region\nu1,male,30-39,TR1\n";
        let parse = parse_users_from(data.as_bytes(), "users.csv", &Labels::default()).unwrap();
        assert_eq!(parse.profiles.len(), 1);
        assert_eq!(parse.duplicate_warnings, 0);
        assert_eq!(parse.profiles[0].key, CellKey::new(1, 2, 0));
    }

    #[test]
    fn unknown_gender_label_is_an_error() {
        let data = "user_id,gender,age_group,region\nu2,other,30-39,TR1\n";
        let err = parse_users_from(data.as_bytes(), "users.csv", &Labels::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { dimension: "gender", ref label, .. } if label == "other"));
    }

    #[test]
    fn duplicate_profile_last_wins_with_warning() {
        let data = "user_id,gender,age_group,region\n\
                    u1,male,30-39,TR1\n\
                    u1,female,19-29,TR2\n";
        let parse = parse_users_from(data.as_bytes(), "users.csv", &Labels::default()).unwrap();
        assert_eq!(parse.profiles.len(), 1);
        assert_eq!(parse.duplicate_warnings, 1);
        assert_eq!(parse.profiles[0].key, CellKey::new(0, 1, 1));
    }

    #[test]
    fn full_census_parses_to_96_cells() {
        let labels = Labels::default();
        let mut text = String::from("gender,age_group,region,population\n");
        for key in CellKey::all() {
            text.push_str(&format!(
                "{},{},{},100\n",
                key.gender_label(&labels),
                key.age_label(&labels),
                key.region_label(&labels)
            ));
        }
        let cells = parse_census_from(text.as_bytes(), "census.csv", &labels).unwrap();
        assert_eq!(cells.len(), 96);
    }

    #[test]
    fn duplicate_census_key_is_an_error() {
        let data = "gender,age_group,region,population\n\
                    male,30-39,TR1,10\n\
                    male,30-39,TR1,20\n";
        let err = parse_census_from(data.as_bytes(), "census.csv", &Labels::default()).unwrap_err();
        assert!(matches!(err, Error::DuplicateCell { line: 3, .. }));
    }

    #[test]
    fn negative_population_is_an_error() {
        let data = "gender,age_group,region,population\nmale,30-39,TR1,-5\n";
        let err = parse_census_from(data.as_bytes(), "census.csv", &Labels::default()).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { field: "population", .. }));
    }

    #[test]
    fn zero_total_population_is_an_error() {
        let data = "gender,age_group,region,population\nmale,30-39,TR1,0\n";
        let err = parse_census_from(data.as_bytes(), "census.csv", &Labels::default()).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn survey_recodings() {
        let response = |level| SurveyResponse {
            respondent_id: "r".into(),
            key: CellKey::new(0, 0, 0),
            level,
            metrics: vec![],
        };
        // top two categories are positive
        assert_eq!(survey_dummy(&response(4)), 1);
        assert_eq!(survey_dummy(&response(3)), 1);
        assert_eq!(survey_dummy(&response(2)), 0);
        assert_eq!(survey_dummy(&response(0)), 0);
        // equal-spacing rescale
        assert_eq!(survey_score(&response(4)), 1.0);
        assert_eq!(survey_score(&response(2)), 0.5);
        assert_eq!(survey_score(&response(0)), 0.0);
    }

    #[test]
    fn survey_with_extra_metrics() {
        let mut config = config();
        config.survey_metrics = vec!["fasting".into(), "praying".into()];
        let data = "respondent_id,gender,age_group,region,religiosity_level,fasting,praying\n\
                    r1,female,>=40,TR1,4,1,0.5\n";
        let responses = parse_survey_from(data.as_bytes(), "survey.csv", &config).unwrap();
        assert_eq!(responses[0].metrics, vec![1.0, 0.5]);
    }

    #[test]
    fn survey_metric_out_of_range_is_an_error() {
        let mut config = config();
        config.survey_metrics = vec!["fasting".into()];
        let data = "respondent_id,gender,age_group,region,religiosity_level,fasting\n\
                    r1,female,>=40,TR1,4,1.5\n";
        let err = parse_survey_from(data.as_bytes(), "survey.csv", &config).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { field: "metric", .. }));
    }

    #[test]
    fn survey_level_out_of_range_is_an_error() {
        let data = "respondent_id,gender,age_group,region,religiosity_level\nr1,female,>=40,TR1,5\n";
        let err = parse_survey_from(data.as_bytes(), "survey.csv", &config()).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { field: "religiosity_level", .. }));
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let text = "user_id,kind,timestamp,prob\n\
                    u1,original,2022-06-01T00:00:00Z,0.7\n\
                    u2,favorite,2022-06-01T12:30:45.500Z,0.035\n\
                    \"u,3\",reply,2021-02-01T00:00:00Z,1\n";
        let parse = parse_tweets_from(text.as_bytes(), "tweets.csv", &config()).unwrap();
        let mut bytes = Vec::new();
        write_tweets(&mut bytes, &parse.records).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), text);
    }
}
