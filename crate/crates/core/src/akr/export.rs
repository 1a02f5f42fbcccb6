use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::KeywordTable;
use crate::corpus::RatingScale;
use crate::{Error, Result};

/// One exported row, suitable as word-cloud input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordRecord {
    pub aspect: String,
    /// Rating value of the label in opinion mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<i64>,
    pub rank: usize,
    pub word: String,
    pub score: f64,
    pub pos: Option<String>,
    pub gamma: f64,
    pub split: String,
}

fn nine_digits(x: f64) -> f64 {
    format!("{x:.8e}").parse().expect("formatted float parses")
}

pub fn keyword_records(table: &KeywordTable, aspect_names: &[String], scale: &RatingScale, split: &str) -> Vec<KeywordRecord> {
    table
        .lists
        .iter()
        .flat_map(|list| {
            list.keywords.iter().enumerate().map(move |(i, kw)| KeywordRecord {
                aspect: aspect_names[list.aspect].clone(),
                label: list.label.map(|c| scale.rating(c)),
                rank: i + 1,
                word: kw.word.clone(),
                score: nine_digits(kw.score),
                pos: kw.pos.clone(),
                gamma: table.gamma,
                split: split.to_owned(),
            })
        })
        .collect()
}

/// Line-delimited JSON, one record per ranked word.
pub fn write_keyword_table<W: Write>(records: &[KeywordRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_keyword_records<R: BufRead>(reader: R) -> Result<Vec<KeywordRecord>> {
    reader
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::io("<keywords>", e))?;
            serde_json::from_str(&line).map_err(|e| Error::Contract(format!("keyword line {}: {e}", i + 1)))
        })
        .collect()
}
