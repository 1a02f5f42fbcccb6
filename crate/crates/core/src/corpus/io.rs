use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, RatingScale, Review, Split};

/// What the loader needs to know about a corpus file. Unset fields are
/// inferred: the aspect count from the first record and the scale from the
/// smallest and largest rating present.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    pub num_aspects: Option<usize>,
    pub scale: Option<RatingScale>,
    pub aspect_names: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    tokens: Vec<String>,
    labels: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pos: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    overall: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

/// Optional first line naming the aspects and the rating scale.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    aspects: Vec<String>,
    scale: RatingScale,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    header: Header,
}

pub fn load_corpus(path: &Path, schema: &SchemaConfig) -> Result<Corpus, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io { path: path.to_owned(), source })?;
    parse_corpus(BufReader::new(file), schema).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io { path: path.to_owned(), source },
        other => other,
    })
}

pub fn parse_corpus<R: BufRead>(reader: R, schema: &SchemaConfig) -> Result<Corpus, CorpusError> {
    let mut records = Vec::new();
    let mut header: Option<Header> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io { path: Default::default(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        if records.is_empty() && header.is_none() && line.trim_start().starts_with("{\"header\"") {
            let h: HeaderLine = serde_json::from_str(&line)
                .map_err(|e| CorpusError::Parse { line: i + 1, message: e.to_string() })?;
            header = Some(h.header);
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }

    let mut schema = schema.clone();
    if let Some(h) = header {
        schema.scale = schema.scale.or(Some(h.scale));
        if schema.aspect_names.is_none() && schema.num_aspects.map_or(true, |k| k == h.aspects.len()) {
            schema.aspect_names = Some(h.aspects);
        }
    }
    let num_aspects = match (schema.num_aspects, &schema.aspect_names) {
        (Some(k), _) => k,
        (None, Some(names)) => names.len(),
        (None, None) => records.first().map(|r| r.labels.len()).unwrap_or(0),
    };
    for rec in &records {
        if rec.labels.len() != num_aspects {
            return Err(CorpusError::Schema {
                id: rec.id.clone(),
                message: format!("{} labels, expected {num_aspects}", rec.labels.len()),
            });
        }
    }
    let scale = match schema.scale {
        Some(s) => s,
        None => {
            let values = records.iter().flat_map(|r| r.labels.iter().chain(&r.overall));
            let lo = values.clone().min().copied().unwrap_or(1);
            let hi = values.max().copied().unwrap_or(1);
            RatingScale::new(lo, hi)
        }
    };
    let aspect_names = match &schema.aspect_names {
        Some(names) if names.len() == num_aspects => names.clone(),
        Some(names) => {
            return Err(CorpusError::Contract(format!(
                "{} aspect names for {num_aspects} aspects",
                names.len()
            )))
        }
        None => (0..num_aspects).map(|k| format!("aspect{k}")).collect(),
    };

    let to_class = |id: &str, v: i64| {
        scale.class(v).ok_or_else(|| CorpusError::Range { id: id.to_owned(), value: v, min: scale.min, max: scale.max })
    };
    let mut reviews = Vec::with_capacity(records.len());
    for rec in records {
        let aspect_labels = rec.labels.iter().map(|&v| to_class(&rec.id, v)).collect::<Result<_, _>>()?;
        let overall_rating = rec.overall.map(|v| to_class(&rec.id, v)).transpose()?;
        reviews.push(Review {
            id: rec.id,
            tokens: rec.tokens,
            pos_tags: rec.pos,
            aspect_labels,
            overall_rating,
            split: rec.split,
        });
    }
    let corpus = Corpus { reviews, aspect_names, scale };
    corpus.validate()?;
    Ok(corpus)
}

/// Writes a header line with the aspect names and scale, then one JSON
/// record per line with ratings on the corpus scale.
pub fn write_corpus<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    let header = HeaderLine { header: Header { aspects: corpus.aspect_names.clone(), scale: corpus.scale } };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for r in &corpus.reviews {
        let rec = Record {
            id: r.id.clone(),
            tokens: r.tokens.clone(),
            labels: r.aspect_labels.iter().map(|&c| corpus.scale.rating(c)).collect(),
            pos: r.pos_tags.clone(),
            overall: r.overall_rating.map(|c| corpus.scale.rating(c)),
            split: r.split,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
