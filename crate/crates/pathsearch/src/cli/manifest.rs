//! Corpus manifest: one row per slide, `id,label,class_name,report`.
//!
//! The report is the final field and is read with a bounded split, so it
//! may contain commas; ids and class names may not. Slide embeddings live
//! next to the manifest as `<id>.pemb`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.csv";
const HEADER: &str = "id,label,class_name,report";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    pub label: u16,
    pub class_name: String,
    pub report: String,
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut out = String::from(HEADER);
    out.push('\n');
    for row in rows {
        for (field, what) in [(&row.id, "id"), (&row.class_name, "class name")] {
            if field.is_empty() || field.contains(',') || field.contains('\n') {
                return Err(Error::InvalidValue {
                    key: what.into(),
                    message: format!("{field:?} must be non-empty and free of commas/newlines"),
                });
            }
        }
        if row.report.contains('\n') {
            return Err(Error::InvalidValue {
                key: "report".into(),
                message: "must be a single line".into(),
            });
        }
        writeln!(out, "{},{},{},{}", row.id, row.label, row.class_name, row.report)
            .expect("writing to a String cannot fail");
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path)?;
    let err = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        Some((_, h)) => return Err(err(1, format!("expected header {HEADER:?}, got {h:?}"))),
        None => return Err(Error::Empty("manifest")),
    }
    let mut rows = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut fields = raw.splitn(4, ',');
        let id = fields.next().unwrap_or("").trim().to_string();
        let label = fields
            .next()
            .ok_or_else(|| err(line, "missing label field".into()))?;
        let class_name = fields
            .next()
            .ok_or_else(|| err(line, "missing class_name field".into()))?
            .trim()
            .to_string();
        let report = fields
            .next()
            .ok_or_else(|| err(line, "missing report field".into()))?
            .to_string();
        if id.is_empty() {
            return Err(err(line, "empty id".into()));
        }
        if rows.iter().any(|r: &ManifestRow| r.id == id) {
            return Err(err(line, format!("duplicate id {id:?}")));
        }
        let label: u16 = label
            .trim()
            .parse()
            .map_err(|_| err(line, format!("label {label:?} is not a small integer")))?;
        rows.push(ManifestRow {
            id,
            label,
            class_name,
            report,
        });
    }
    if rows.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    Ok(rows)
}

/// Class names by label id, dense from 0. Errors on a gap or on two names
/// for one label.
pub fn label_table(rows: &[ManifestRow]) -> Result<Vec<String>> {
    let max = rows.iter().map(|r| r.label).max().unwrap_or(0);
    let mut names: Vec<Option<&str>> = vec![None; max as usize + 1];
    for row in rows {
        match names[row.label as usize] {
            None => names[row.label as usize] = Some(&row.class_name),
            Some(existing) if existing == row.class_name => {}
            Some(existing) => {
                return Err(Error::InvalidValue {
                    key: "manifest labels".into(),
                    message: format!(
                        "label {} is both {existing:?} and {:?}",
                        row.label, row.class_name
                    ),
                });
            }
        }
    }
    names
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            n.map(String::from).ok_or_else(|| Error::InvalidValue {
                key: "manifest labels".into(),
                message: format!("label ids must be dense: {i} is unused"),
            })
        })
        .collect()
}
