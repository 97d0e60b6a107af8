//! Tab-separated corpus files in the layout of the MLQE-PE direct-assessment
//! releases (`index  original  translation  ...  mean  ...  z_mean`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SentencePair;
use crate::error::{QeError, Result};

/// A column addressed either by header name or by zero-based position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Index(usize),
    Name(String),
}

impl Column {
    fn named(name: &str) -> Self {
        Column::Name(name.to_string())
    }
}

/// Where each field lives in a TSV file.
///
/// `z_mean` and `lang` are optional: when a named column is absent from the
/// header the loader falls back to `0.0` and the default language tag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub source: Column,
    pub translation: Column,
    pub mean: Column,
    #[serde(default)]
    pub z_mean: Option<Column>,
    #[serde(default)]
    pub lang: Option<Column>,
    /// Whether the first line is a header row.
    pub header: bool,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self::mlqe_pe()
    }
}

impl ColumnMap {
    /// Header names used by the MLQE-PE DA files (plus our `lang_pair` column).
    pub fn mlqe_pe() -> Self {
        Self {
            source: Column::named("original"),
            translation: Column::named("translation"),
            mean: Column::named("mean"),
            z_mean: Some(Column::named("z_mean")),
            lang: Some(Column::named("lang_pair")),
            header: true,
        }
    }

    /// Header-less files: `index, original, translation, mean, z_mean`.
    pub fn positional() -> Self {
        Self {
            source: Column::Index(1),
            translation: Column::Index(2),
            mean: Column::Index(3),
            z_mean: Some(Column::Index(4)),
            lang: None,
            header: false,
        }
    }
}

struct Resolved {
    source: usize,
    translation: usize,
    mean: usize,
    z_mean: Option<usize>,
    lang: Option<usize>,
}

fn resolve(col: &Column, header: Option<&[&str]>, required: bool) -> Result<Option<usize>> {
    match (col, header) {
        (Column::Index(i), _) => Ok(Some(*i)),
        (Column::Name(name), Some(h)) => match h.iter().position(|c| c.trim() == name) {
            Some(i) => Ok(Some(i)),
            None if required => Err(QeError::Config(format!("missing column `{name}` in header"))),
            None => Ok(None),
        },
        (Column::Name(name), None) => Err(QeError::Config(format!(
            "column `{name}` is addressed by name but the file has no header"
        ))),
    }
}

fn parse_score(field: &str, what: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| QeError::Data {
        line,
        msg: format!("unparseable {what} `{field}`"),
    })
}

/// Reads a TSV file into sentence pairs. Pairs without a language column
/// are tagged `default_lang`.
pub fn load_mlqepe_tsv(path: &Path, columns: &ColumnMap, default_lang: &str) -> Result<Vec<SentencePair>> {
    let text = fs::read_to_string(path).map_err(|e| QeError::io(path, e))?;
    parse_tsv(&text, columns, default_lang)
}

pub fn parse_tsv(text: &str, columns: &ColumnMap, default_lang: &str) -> Result<Vec<SentencePair>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let header: Option<Vec<&str>> = if columns.header {
        let (_, h) = lines
            .next()
            .ok_or_else(|| QeError::Config("empty file has no header row".into()))?;
        Some(h.split('\t').collect())
    } else {
        None
    };
    let h = header.as_deref();
    let cols = Resolved {
        source: resolve(&columns.source, h, true)?.unwrap(),
        translation: resolve(&columns.translation, h, true)?.unwrap(),
        mean: resolve(&columns.mean, h, true)?.unwrap(),
        z_mean: columns.z_mean.as_ref().map(|c| resolve(c, h, false)).transpose()?.flatten(),
        lang: columns.lang.as_ref().map(|c| resolve(c, h, false)).transpose()?.flatten(),
    };

    let mut pairs = Vec::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let field = |i: usize| {
            fields.get(i).copied().ok_or_else(|| QeError::Data {
                line: line_no,
                msg: format!("expected at least {} columns, found {}", i + 1, fields.len()),
            })
        };
        let da_mean = parse_score(field(cols.mean)?, "mean score", line_no)?;
        if !(0.0..=100.0).contains(&da_mean) {
            return Err(QeError::Data {
                line: line_no,
                msg: format!("mean score {da_mean} outside [0, 100]"),
            });
        }
        let da_z = match cols.z_mean {
            Some(i) => parse_score(field(i)?, "z score", line_no)?,
            None => 0.0,
        };
        let lang = match cols.lang {
            Some(i) => field(i)?.trim().to_string(),
            None => default_lang.to_string(),
        };
        pairs.push(SentencePair {
            src: field(cols.source)?.to_string(),
            mt: field(cols.translation)?.to_string(),
            lang_pair: lang,
            da_mean,
            da_z,
        });
    }
    Ok(pairs)
}

/// Writes pairs with an MLQE-PE style header that [`ColumnMap::mlqe_pe`] reads back.
pub fn write_tsv(path: &Path, pairs: &[SentencePair]) -> Result<()> {
    let mut out = String::from("index\toriginal\ttranslation\tmean\tz_mean\tlang_pair\n");
    for (i, p) in pairs.iter().enumerate() {
        out.push_str(&format!(
            "{i}\t{}\t{}\t{}\t{}\t{}\n",
            p.src, p.mt, p.da_mean, p.da_z, p.lang_pair
        ));
    }
    crate::write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positional_file_without_header() {
        let text = "0\tdas haus\tthe house\t81.5\t0.7\n1\tein\ta\t40\t-1.2\n2\tx\ty\t100\t1.5\n";
        let pairs = parse_tsv(text, &ColumnMap::positional(), "de-en").unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[0].src, "das haus");
        assert_eq!(pairs[0].mt, "the house");
        assert_eq!(pairs[0].da_mean, 81.5);
        assert_eq!(pairs[1].da_z, -1.2);
        assert_eq!(pairs[2].lang_pair, "de-en");
    }

    #[test]
    fn named_columns_skip_header() {
        let text = "index\toriginal\ttranslation\tscores\tmean\tz_scores\tz_mean\n\
                    0\ta b\tc\t[50]\t50\t[0]\t0.1\n";
        let pairs = parse_tsv(text, &ColumnMap::mlqe_pe(), "si-en").unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].da_mean, 50.0);
        assert_eq!(pairs[0].da_z, 0.1);
        assert_eq!(pairs[0].lang_pair, "si-en");
    }

    #[test]
    fn bad_score_cites_line() {
        let text = "index\toriginal\ttranslation\tmean\n0\ta\tb\tabc\n";
        let err = parse_tsv(text, &ColumnMap::mlqe_pe(), "xx").unwrap_err();
        assert!(matches!(err, QeError::Data { line: 2, .. }), "{err}");
    }

    #[test]
    fn out_of_range_and_missing_column() {
        let text = "index\toriginal\ttranslation\tmean\n0\ta\tb\t101\n";
        assert!(matches!(
            parse_tsv(text, &ColumnMap::mlqe_pe(), "xx"),
            Err(QeError::Data { line: 2, .. })
        ));
        let text = "index\toriginal\tmean\n0\ta\t50\n";
        let err = parse_tsv(text, &ColumnMap::mlqe_pe(), "xx").unwrap_err();
        assert!(matches!(err, QeError::Config(ref m) if m.contains("translation")));
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        let mut p = SentencePair::new("w1 w2", "w1", "s0", 50.0);
        p.da_z = -0.25;
        write_tsv(&path, &[p.clone()]).unwrap();
        let back = load_mlqepe_tsv(&path, &ColumnMap::default(), "zz").unwrap();
        assert_eq!(back, vec![p]);
    }
}
