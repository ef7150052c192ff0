//! CSV interchange for rankings and rater studies.
//!
//! Rankings: `query_id,query_label,rank,candidate_label`, one row per hit,
//! rank 1 first. Rater study: `subject_id,truth,<one column per rater>`,
//! labels as integer category ids. No quoting — fields must be comma-free.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

use super::LabeledRanking;

/// A labeled ranking tied to its query id for interchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingRecord {
    pub query_id: String,
    pub ranking: LabeledRanking,
}

const RANKINGS_HEADER: &str = "query_id,query_label,rank,candidate_label";

pub fn write_rankings_csv(path: &Path, records: &[RankingRecord]) -> Result<()> {
    let mut out = String::from(RANKINGS_HEADER);
    out.push('\n');
    for rec in records {
        for (i, &label) in rec.ranking.retrieved_labels.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                rec.query_id,
                rec.ranking.query_label,
                i + 1,
                label
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn parse_err(path: &Path, line: usize, message: String) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    }
}

fn parse_u16(path: &Path, line: usize, field: &str, what: &str) -> Result<u16> {
    field
        .trim()
        .parse::<u16>()
        .map_err(|_| parse_err(path, line, format!("{what} {field:?} is not a small integer")))
}

/// Inverse of [`write_rankings_csv`]. Rows may arrive in any order; hits
/// are grouped by query id (queries keep first-appearance order) and
/// sorted by rank, which must be unique and positive within each query.
pub fn read_rankings_csv(path: &Path) -> Result<Vec<RankingRecord>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == RANKINGS_HEADER => {}
        Some((_, header)) => {
            return Err(parse_err(
                path,
                1,
                format!("expected header {RANKINGS_HEADER:?}, got {header:?}"),
            ));
        }
        None => return Err(Error::Empty("rankings csv")),
    }

    // query id -> (label, [(rank, candidate label)]), first-appearance order.
    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, (u16, Vec<(usize, u16)>)> =
        std::collections::HashMap::new();

    for (idx, raw) in lines {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 4 fields, got {}", fields.len()),
            ));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(parse_err(path, line_no, "empty query_id".into()));
        }
        let qlabel = parse_u16(path, line_no, fields[1], "query_label")?;
        let rank: usize = fields[2].trim().parse().map_err(|_| {
            parse_err(path, line_no, format!("rank {:?} is not an integer", fields[2]))
        })?;
        if rank == 0 {
            return Err(parse_err(path, line_no, "rank must be 1-based".into()));
        }
        let clabel = parse_u16(path, line_no, fields[3], "candidate_label")?;

        let entry = groups.entry(id.to_string()).or_insert_with(|| {
            order.push(id.to_string());
            (qlabel, Vec::new())
        });
        if entry.0 != qlabel {
            return Err(parse_err(
                path,
                line_no,
                format!("query {id:?} has conflicting labels {} and {qlabel}", entry.0),
            ));
        }
        if entry.1.iter().any(|&(r, _)| r == rank) {
            return Err(parse_err(
                path,
                line_no,
                format!("query {id:?} repeats rank {rank}"),
            ));
        }
        entry.1.push((rank, clabel));
    }

    Ok(order
        .into_iter()
        .map(|id| {
            let (query_label, mut hits) = groups.remove(&id).unwrap();
            hits.sort_unstable_by_key(|&(r, _)| r);
            RankingRecord {
                query_id: id,
                ranking: LabeledRanking {
                    query_label,
                    retrieved_labels: hits.into_iter().map(|(_, l)| l).collect(),
                },
            }
        })
        .collect())
}

/// A rater study: per subject the ground-truth label and every rater's
/// label, rectangular across subjects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RaterStudy {
    pub subject_ids: Vec<String>,
    pub truth: Vec<u16>,
    pub labels: Vec<Vec<u16>>,
}

impl RaterStudy {
    pub fn n_raters(&self) -> usize {
        self.labels.first().map_or(0, Vec::len)
    }

    /// Per-subject, per-rater correctness against the truth column.
    pub fn correctness(&self) -> Vec<Vec<bool>> {
        self.labels
            .iter()
            .zip(&self.truth)
            .map(|(row, &t)| row.iter().map(|&l| l == t).collect())
            .collect()
    }
}

/// Header `subject_id,truth,...` with one trailing column per rater.
pub fn read_rater_study_csv(path: &Path) -> Result<RaterStudy> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let n_raters = match lines.next() {
        Some((_, header)) => {
            let cols: Vec<&str> = header.split(',').collect();
            if cols.len() < 3 || cols[0].trim() != "subject_id" || cols[1].trim() != "truth" {
                return Err(parse_err(
                    path,
                    1,
                    format!("expected header starting `subject_id,truth,` with at least one rater column, got {header:?}"),
                ));
            }
            cols.len() - 2
        }
        None => return Err(Error::Empty("rater study csv")),
    };

    let mut study = RaterStudy {
        subject_ids: Vec::new(),
        truth: Vec::new(),
        labels: Vec::new(),
    };
    for (idx, raw) in lines {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != n_raters + 2 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected {} fields, got {}", n_raters + 2, fields.len()),
            ));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(parse_err(path, line_no, "empty subject_id".into()));
        }
        if study.subject_ids.iter().any(|s| s == id) {
            return Err(parse_err(path, line_no, format!("duplicate subject {id:?}")));
        }
        study.subject_ids.push(id.to_string());
        study.truth.push(parse_u16(path, line_no, fields[1], "truth")?);
        let row = fields[2..]
            .iter()
            .map(|f| parse_u16(path, line_no, f, "rater label"))
            .collect::<Result<Vec<u16>>>()?;
        study.labels.push(row);
    }
    if study.subject_ids.is_empty() {
        return Err(Error::Empty("rater study csv"));
    }
    Ok(study)
}
