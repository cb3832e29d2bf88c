//! `news.tsv`: id, category, subcategory, title, then ignored columns
//! (abstract, url, entities).

use std::io::Write;
use std::path::Path;

use indexmap::IndexSet;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NewsRecord {
    pub news_id: String,
    pub category: String,
    pub subcategory: String,
    pub title: String,
}

pub fn parse_news_tsv(path: impl AsRef<Path>) -> Result<Vec<NewsRecord>> {
    let path = path.as_ref();
    parse_news_str(&crate::error::read_text(path)?, path)
}

/// Parses news lines; `path` is only used in error messages.
pub fn parse_news_str(text: &str, path: &Path) -> Result<Vec<NewsRecord>> {
    let mut seen = IndexSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected at least 4 tab-separated columns, found {}", cols.len()),
            });
        }
        if cols[0].is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "empty news id".into(),
            });
        }
        if !seen.insert(cols[0]) {
            return Err(Error::DuplicateNewsId(cols[0].to_string()));
        }
        out.push(NewsRecord {
            news_id: cols[0].to_string(),
            category: cols[1].to_string(),
            subcategory: cols[2].to_string(),
            title: cols[3].to_string(),
        });
    }
    Ok(out)
}

pub fn write_news_tsv<W: Write>(mut w: W, records: &[NewsRecord]) -> Result<()> {
    for r in records {
        writeln!(w, "{}\t{}\t{}\t{}", r.news_id, r.category, r.subcategory, r.title)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Vec<NewsRecord>> {
        parse_news_str(text, Path::new("news.tsv"))
    }

    #[test]
    fn parses_fields_and_ignores_extra_columns() {
        let r = parse("N1\tsports\tnfl\tTexans defensive tackle D.J. Reader\tabstract\turl\t[]\t[]\n").unwrap();
        assert_eq!(
            r,
            vec![NewsRecord {
                news_id: "N1".into(),
                category: "sports".into(),
                subcategory: "nfl".into(),
                title: "Texans defensive tackle D.J. Reader".into(),
            }]
        );
    }

    #[test]
    fn empty_file_is_empty() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn short_line_names_its_line() {
        let err = parse("N1\ta\tb\tt\nN2\ta\tb\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
        assert!(err_to_string("N1\ta\tb\tt\nN2\ta\tb\n").contains(":2:"));
    }

    fn err_to_string(text: &str) -> String {
        parse(text).unwrap_err().to_string()
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(matches!(parse("N1\ta\tb\tt\nN1\tc\td\tu\n"), Err(Error::DuplicateNewsId(id)) if id == "N1"));
    }

    fn field() -> impl Strategy<Value = String> {
        "[A-Za-z0-9 .,'-]{0,12}"
    }

    proptest! {
        #[test]
        fn serialize_parse_fixed_point(rows in prop::collection::vec((field(), field(), field()), 0..8)) {
            let records: Vec<NewsRecord> = rows
                .into_iter()
                .enumerate()
                .map(|(i, (c, s, t))| NewsRecord { news_id: format!("N{i}"), category: c, subcategory: s, title: t })
                .collect();
            let mut buf = Vec::new();
            write_news_tsv(&mut buf, &records).unwrap();
            let parsed = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
            prop_assert_eq!(&parsed, &records);
            let mut again = Vec::new();
            write_news_tsv(&mut again, &parsed).unwrap();
            prop_assert_eq!(buf, again);
        }
    }
}
