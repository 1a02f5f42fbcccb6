//! Per-token attention export: structured records and a standalone
//! highlight page.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::model::ForwardTrace;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenWeight {
    pub token: String,
    pub alpha_global: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_deliberate: Option<f64>,
    pub accumulated: f64,
}

/// Attention of one aspect over one review.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionRecord {
    pub review: String,
    pub aspect: String,
    /// Predicted rating.
    pub predicted: i64,
    pub tokens: Vec<TokenWeight>,
}

/// One record per requested aspect. `tokens` must be the (truncated) tokens
/// the trace was computed on.
pub fn attention_records(
    review: &str,
    tokens: &[String],
    trace: &ForwardTrace,
    aspects: &[usize],
    aspect_names: &[String],
    rating: impl Fn(usize) -> i64,
) -> Result<Vec<AttentionRecord>> {
    if tokens.len() != trace.len() {
        return Err(Error::Contract(format!("{} tokens for a trace of length {}", tokens.len(), trace.len())));
    }
    aspects
        .iter()
        .map(|&k| {
            let a = trace
                .aspects
                .get(k)
                .ok_or_else(|| Error::Contract(format!("aspect {k} outside {} aspects", trace.aspects.len())))?;
            let acc = a.accumulated();
            let tokens = tokens
                .iter()
                .enumerate()
                .map(|(t, tok)| TokenWeight {
                    token: tok.clone(),
                    alpha_global: a.alpha_global[t],
                    alpha_deliberate: a.alpha_deliberate.as_ref().map(|d| d[t]),
                    accumulated: acc[t],
                })
                .collect();
            Ok(AttentionRecord { review: review.to_owned(), aspect: aspect_names[k].clone(), predicted: rating(a.predicted()), tokens })
        })
        .collect()
}

pub fn write_attention<W: Write>(records: &[AttentionRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_attention<R: BufRead>(reader: R) -> Result<Vec<AttentionRecord>> {
    reader
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::io("<attention>", e))?;
            serde_json::from_str(&line).map_err(|e| Error::Contract(format!("attention line {}: {e}", i + 1)))
        })
        .collect()
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Self-contained HTML page. Each token's background opacity is its
/// accumulated weight divided by the largest weight in the record.
pub fn highlight_page(records: &[AttentionRecord], title: &str) -> String {
    let mut html = String::new();
    let _ = write!(
        html,
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{}</title>\n<style>\
body{{font-family:sans-serif;max-width:60em;margin:2em auto}}\
.rec{{margin-bottom:1.5em}}.tok{{padding:0 2px;border-radius:2px}}\
h2{{font-size:1em;margin:0 0 .3em}}</style></head><body>\n<h1>{}</h1>\n",
        escape(title),
        escape(title)
    );
    for r in records {
        let max = r.tokens.iter().map(|t| t.accumulated).fold(0.0, f64::max);
        let _ = write!(
            html,
            "<div class=\"rec\"><h2>{} &middot; {} &middot; predicted {}</h2><p>",
            escape(&r.review),
            escape(&r.aspect),
            r.predicted
        );
        for t in &r.tokens {
            let shade = if max > 0.0 { t.accumulated / max } else { 0.0 };
            let _ = write!(
                html,
                "<span class=\"tok\" data-weight=\"{:.6}\" title=\"{:.4}\" style=\"background:rgba(220,40,40,{:.3})\">{}</span> ",
                t.accumulated,
                t.accumulated,
                shade,
                escape(&t.token)
            );
        }
        html.push_str("</p></div>\n");
    }
    html.push_str("</body></html>\n");
    html
}
