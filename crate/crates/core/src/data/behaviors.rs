//! `behaviors.tsv`: impression id, user id, time, space-separated history,
//! space-separated `newsid-label` candidates.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImpressionRecord {
    pub impression_id: String,
    pub user_id: String,
    pub timestamp: String,
    /// Oldest first.
    pub history: Vec<String>,
    pub candidates: Vec<(String, bool)>,
}

impl ImpressionRecord {
    pub fn clicked(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().filter(|(_, c)| *c).map(|(id, _)| id.as_str())
    }
}

pub fn parse_behaviors_tsv(path: impl AsRef<Path>) -> Result<Vec<ImpressionRecord>> {
    let path = path.as_ref();
    parse_behaviors_str(&crate::error::read_text(path)?, path)
}

fn parse_candidate(token: &str) -> Result<(String, bool)> {
    let bad = || Error::BadCandidateToken(token.to_string());
    let (id, label) = token.rsplit_once('-').ok_or_else(bad)?;
    let clicked = match label {
        "1" => true,
        "0" => false,
        _ => return Err(bad()),
    };
    if id.is_empty() {
        return Err(bad());
    }
    Ok((id.to_string(), clicked))
}

pub fn parse_behaviors_str(text: &str, path: &Path) -> Result<Vec<ImpressionRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected 5 tab-separated columns, found {}", cols.len()),
            });
        }
        let candidates = cols[4]
            .split_whitespace()
            .map(parse_candidate)
            .collect::<Result<Vec<_>>>()?;
        out.push(ImpressionRecord {
            impression_id: cols[0].to_string(),
            user_id: cols[1].to_string(),
            timestamp: cols[2].to_string(),
            history: cols[3].split_whitespace().map(str::to_string).collect(),
            candidates,
        });
    }
    Ok(out)
}

pub fn write_behaviors_tsv<W: Write>(mut w: W, records: &[ImpressionRecord]) -> Result<()> {
    for r in records {
        let cands: Vec<String> = r
            .candidates
            .iter()
            .map(|(id, c)| format!("{id}-{}", u8::from(*c)))
            .collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            r.impression_id,
            r.user_id,
            r.timestamp,
            r.history.join(" "),
            cands.join(" ")
        )?;
    }
    Ok(())
}
