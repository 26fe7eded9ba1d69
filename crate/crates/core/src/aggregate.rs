//! Tweet-to-user transformation: collapses each user's in-window
//! probabilities into the binary dummy (any probability at or above the
//! threshold) and the continuous score (arithmetic mean), then joins with
//! demographics.
//!
//! Aggregation is a per-user fold over sorted probabilities, so results are
//! exactly invariant under input permutation, and output is ordered by
//! user id.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Months, Utc};

use crate::config::Labels;
use crate::error::{Error, Result};
use crate::frame::CellKey;
use crate::ingest::{TweetRecord, UserProfile};

/// One user with demographics and aggregated outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct UserRecord {
    pub user_id: String,
    pub key: CellKey,
    /// 1 iff any in-window probability reached the threshold.
    pub dummy: u8,
    /// Arithmetic mean of the in-window probabilities.
    pub score: f64,
    /// Number of in-window engagement rows.
    pub n_tweets: u32,
}

/// Binary dummy: 1 iff any probability is `>= threshold` (inclusive).
pub fn aggregate_dummy(probs: &[f64], threshold: f64) -> Result<u8> {
    if probs.is_empty() {
        return Err(Error::Contract(
            "aggregate_dummy requires at least one probability".into(),
        ));
    }
    Ok(u8::from(probs.iter().any(|&p| p >= threshold)))
}

/// Continuous score: the arithmetic mean of the probabilities.
pub fn aggregate_score(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Contract(
            "aggregate_score requires at least one probability".into(),
        ));
    }
    Ok(probs.iter().sum::<f64>() / probs.len() as f64)
}

/// Drop counters emitted by [`build_user_table`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AggregateDiagnostics {
    /// Distinct user ids across tweets and profiles.
    pub users_in_union: u64,
    /// Users that made it into the table.
    pub users_out: u64,
    /// Users present in tweets but lacking a profile.
    pub dropped_no_profile: u64,
    /// Users with a profile but no in-window tweet.
    pub dropped_no_tweets: u64,
    /// Tweet rows outside the window (counted, then ignored).
    pub out_of_window_tweets: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserTable {
    /// Sorted by user id.
    pub users: Vec<UserRecord>,
    pub diagnostics: AggregateDiagnostics,
}

/// Builds one [`UserRecord`] per user that has a profile and at least one
/// tweet inside the window `[reference - window_months, reference]` (both
/// ends inclusive). Everyone else is dropped and counted.
pub fn build_user_table(
    tweets: &[TweetRecord],
    profiles: &[UserProfile],
    reference_date: DateTime<Utc>,
    window_months: u32,
    threshold: f64,
) -> Result<UserTable> {
    let window_start = reference_date
        .checked_sub_months(Months::new(window_months))
        .ok_or_else(|| Error::Config("window start is not representable".into()))?;

    let mut profile_by_id: BTreeMap<&str, CellKey> = BTreeMap::new();
    for p in profiles {
        profile_by_id.insert(p.user_id.as_str(), p.key);
    }

    // In-window probabilities per user; users whose rows are all
    // out-of-window keep an empty bucket so they still join the union.
    let mut probs_by_id: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut out_of_window_tweets = 0;
    for t in tweets {
        let bucket = probs_by_id.entry(t.user_id.as_str()).or_default();
        if t.in_window(window_start, reference_date) {
            bucket.push(t.prob);
        } else {
            out_of_window_tweets += 1;
        }
    }

    let mut diagnostics = AggregateDiagnostics {
        users_in_union: 0,
        users_out: 0,
        dropped_no_profile: 0,
        dropped_no_tweets: 0,
        out_of_window_tweets,
    };

    let union: std::collections::BTreeSet<&str> = probs_by_id
        .keys()
        .copied()
        .chain(profile_by_id.keys().copied())
        .collect();
    diagnostics.users_in_union = union.len() as u64;

    let mut users = Vec::new();
    for user_id in union {
        let Some(&key) = profile_by_id.get(user_id) else {
            diagnostics.dropped_no_profile += 1;
            continue;
        };
        let probs = probs_by_id.get_mut(user_id).filter(|p| !p.is_empty());
        let Some(probs) = probs else {
            diagnostics.dropped_no_tweets += 1;
            continue;
        };
        // Canonical summation order: makes the fold independent of row order.
        probs.sort_by(f64::total_cmp);
        users.push(UserRecord {
            user_id: user_id.to_string(),
            key,
            dummy: aggregate_dummy(probs, threshold)?,
            score: aggregate_score(probs)?,
            n_tweets: probs.len() as u32,
        });
    }
    diagnostics.users_out = users.len() as u64;

    Ok(UserTable { users, diagnostics })
}

const USER_TABLE_HEADER: [&str; 7] = [
    "user_id", "gender", "age_group", "region", "dummy", "score", "n_tweets",
];

/// Writes `users_aggregated.csv`; scores carry six decimal places.
pub fn write_user_table<W: Write>(writer: W, users: &[UserRecord], labels: &Labels) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(USER_TABLE_HEADER)
        .map_err(|e| Error::Internal(e.to_string()))?;
    for u in users {
        out.write_record([
            u.user_id.as_str(),
            u.key.gender_label(labels),
            u.key.age_label(labels),
            u.key.region_label(labels),
            &u.dummy.to_string(),
            &format!("{:.6}", u.score),
            &u.n_tweets.to_string(),
        ])
        .map_err(|e| Error::Internal(e.to_string()))?;
    }
    out.flush().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(())
}

pub fn write_user_table_path(
    path: impl AsRef<Path>,
    users: &[UserRecord],
    labels: &Labels,
) -> Result<()> {
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_user_table(file, users, labels)
}

/// Reads a `users_aggregated.csv` produced by [`write_user_table`].
pub fn read_user_table(path: impl AsRef<Path>, labels: &Labels) -> Result<Vec<UserRecord>> {
    let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    read_user_table_from(file, &path.as_ref().display().to_string(), labels)
}

pub fn read_user_table_from<R: Read>(
    reader: R,
    name: &str,
    labels: &Labels,
) -> Result<Vec<UserRecord>> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let found: Vec<String> = csv_reader
        .headers()
        .map_err(|e| Error::MalformedRow {
            path: name.into(),
            line: 1,
            field: "row",
            reason: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if found != USER_TABLE_HEADER {
        return Err(Error::HeaderMismatch {
            path: name.into(),
            expected: USER_TABLE_HEADER.join(","),
            found: found.join(","),
        });
    }

    let mut users = Vec::new();
    for row in csv_reader.records() {
        let row = row.map_err(|e| Error::MalformedRow {
            path: name.into(),
            line: e.position().map_or(0, |p| p.line()),
            field: "row",
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let get = |i: usize, field: &'static str| -> Result<&str> {
            row.get(i).ok_or(Error::MalformedRow {
                path: name.into(),
                line,
                field,
                reason: "missing field".into(),
            })
        };
        let gender = labels
            .gender_index(get(1, "gender")?)
            .ok_or_else(|| Error::UnknownLabel {
                path: name.into(),
                line,
                dimension: "gender",
                label: get(1, "gender").unwrap_or_default().into(),
            })?;
        let age = labels
            .age_index(get(2, "age_group")?)
            .ok_or_else(|| Error::UnknownLabel {
                path: name.into(),
                line,
                dimension: "age_group",
                label: get(2, "age_group").unwrap_or_default().into(),
            })?;
        let region = labels
            .region_index(get(3, "region")?)
            .ok_or_else(|| Error::UnknownLabel {
                path: name.into(),
                line,
                dimension: "region",
                label: get(3, "region").unwrap_or_default().into(),
            })?;
        let dummy: u8 = get(4, "dummy")?.parse().map_err(|_| Error::MalformedRow {
            path: name.into(),
            line,
            field: "dummy",
            reason: "not 0 or 1".into(),
        })?;
        if dummy > 1 {
            return Err(Error::MalformedRow {
                path: name.into(),
                line,
                field: "dummy",
                reason: format!("{dummy} is not 0 or 1"),
            });
        }
        let score: f64 = get(5, "score")?.parse().map_err(|_| Error::MalformedRow {
            path: name.into(),
            line,
            field: "score",
            reason: "not a real number".into(),
        })?;
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::MalformedRow {
                path: name.into(),
                line,
                field: "score",
                reason: format!("{score} is outside [0,1]"),
            });
        }
        let n_tweets: u32 = get(6, "n_tweets")?.parse().map_err(|_| Error::MalformedRow {
            path: name.into(),
            line,
            field: "n_tweets",
            reason: "not a positive integer".into(),
        })?;
        if n_tweets == 0 {
            return Err(Error::MalformedRow {
                path: name.into(),
                line,
                field: "n_tweets",
                reason: "must be at least 1".into(),
            });
        }
        users.push(UserRecord {
            user_id: get(0, "user_id")?.to_string(),
            key: CellKey::new(gender, age, region),
            dummy,
            score,
            n_tweets,
        });
    }
    Ok(users)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::EngagementKind;

    fn reference() -> DateTime<Utc> {
        "2023-01-01T00:00:00Z".parse().unwrap()
    }

    fn tweet(user: &str, ts: &str, prob: f64) -> TweetRecord {
        TweetRecord {
            user_id: user.into(),
            kind: EngagementKind::Original,
            timestamp: ts.parse().unwrap(),
            prob,
        }
    }

    fn profile(user: &str) -> UserProfile {
        UserProfile {
            user_id: user.into(),
            key: CellKey::new(1, 2, 0),
        }
    }

    #[test]
    fn dummy_triggers_on_any_probability() {
        assert_eq!(aggregate_dummy(&[0.70, 0.10], 0.5).unwrap(), 1);
        assert_eq!(aggregate_dummy(&[0.49, 0.01], 0.5).unwrap(), 0);
    }

    #[test]
    fn dummy_threshold_is_inclusive() {
        assert_eq!(aggregate_dummy(&[0.50], 0.5).unwrap(), 1);
    }

    #[test]
    fn score_is_arithmetic_mean() {
        assert!((aggregate_score(&[0.2, 0.4]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(aggregate_score(&[0.77]).unwrap(), 0.77);
    }

    #[test]
    fn empty_probs_violate_the_contract() {
        assert!(aggregate_dummy(&[], 0.5).is_err());
        assert!(aggregate_score(&[]).is_err());
    }

    #[test]
    fn composes_dummy_and_score_per_user() {
        let tweets = vec![
            tweet("u1", "2022-06-01T00:00:00Z", 0.6),
            tweet("u1", "2022-07-01T00:00:00Z", 0.2),
        ];
        let table = build_user_table(&tweets, &[profile("u1")], reference(), 24, 0.5).unwrap();
        assert_eq!(table.users.len(), 1);
        let u = &table.users[0];
        assert_eq!(u.dummy, 1);
        assert!((u.score - 0.4).abs() < 1e-15);
        assert_eq!(u.n_tweets, 2);
    }

    #[test]
    fn old_tweets_fall_outside_the_window() {
        // only engagement is 25 months before the reference
        let tweets = vec![tweet("u1", "2020-12-01T00:00:00Z", 0.9)];
        let table = build_user_table(&tweets, &[profile("u1")], reference(), 24, 0.5).unwrap();
        assert!(table.users.is_empty());
        assert_eq!(table.diagnostics.dropped_no_tweets, 1);
        assert_eq!(table.diagnostics.out_of_window_tweets, 1);
    }

    #[test]
    fn window_edge_is_inclusive() {
        // exactly 24 months before the reference instant
        let tweets = vec![tweet("u1", "2021-01-01T00:00:00Z", 0.9)];
        let table = build_user_table(&tweets, &[profile("u1")], reference(), 24, 0.5).unwrap();
        assert_eq!(table.users.len(), 1);
        assert_eq!(table.diagnostics.out_of_window_tweets, 0);
    }

    #[test]
    fn profile_without_tweets_is_dropped_and_counted() {
        let table = build_user_table(&[], &[profile("u1")], reference(), 24, 0.5).unwrap();
        assert!(table.users.is_empty());
        assert_eq!(table.diagnostics.dropped_no_tweets, 1);
        assert_eq!(table.diagnostics.users_in_union, 1);
    }

    #[test]
    fn tweets_without_profile_are_dropped_and_counted() {
        let tweets = vec![tweet("u9", "2022-06-01T00:00:00Z", 0.8)];
        let table = build_user_table(&tweets, &[], reference(), 24, 0.5).unwrap();
        assert!(table.users.is_empty());
        assert_eq!(table.diagnostics.dropped_no_profile, 1);
    }

    #[test]
    fn threshold_parameter_propagates() {
        let tweets = vec![tweet("u1", "2022-06-01T00:00:00Z", 0.6)];
        let table = build_user_table(&tweets, &[profile("u1")], reference(), 24, 0.7).unwrap();
        assert_eq!(table.users[0].dummy, 0);
    }

    #[test]
    fn user_table_round_trips_through_csv() {
        let tweets = vec![
            tweet("u1", "2022-06-01T00:00:00Z", 0.6),
            tweet("u2", "2022-06-01T00:00:00Z", 0.1),
        ];
        let profiles = vec![profile("u1"), profile("u2")];
        let table = build_user_table(&tweets, &profiles, reference(), 24, 0.5).unwrap();
        let labels = Labels::default();
        let mut bytes = Vec::new();
        write_user_table(&mut bytes, &table.users, &labels).unwrap();
        let back = read_user_table_from(bytes.as_slice(), "users_aggregated.csv", &labels).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].user_id, "u1");
        assert_eq!(back[0].dummy, 1);
    }
}
