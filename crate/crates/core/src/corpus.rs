//! Record ingestion, text normalization and gazetteer lookup.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geotime::GeoPoint;
use crate::tabular::{create, csv_field, open};

/// One text item with its time and place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub text: String,
    /// Epoch seconds, UTC.
    pub timestamp: i64,
    pub location: Option<String>,
    pub coords: Option<GeoPoint>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanDoc {
    pub id: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Csv,
    Tsv,
    Jsonl,
}

impl CorpusFormat {
    /// Guesses the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("tab") => CorpusFormat::Tsv,
            Some("jsonl") | Some("ndjson") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Csv,
        }
    }
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(CorpusFormat::Csv),
            "tsv" => Ok(CorpusFormat::Tsv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::Usage(format!("unknown corpus format `{other}`"))),
        }
    }
}

#[derive(Debug, Deserialize)]
struct JsonRow {
    id: Option<serde_json::Value>,
    text: Option<String>,
    timestamp: Option<serde_json::Value>,
    location: Option<String>,
    lat: Option<f64>,
    lon: Option<f64>,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<Record>> {
    let records = match format {
        CorpusFormat::Csv => load_delimited(path, b',')?,
        CorpusFormat::Tsv => load_delimited(path, b'\t')?,
        CorpusFormat::Jsonl => load_jsonl(path)?,
    };
    let mut seen = HashSet::new();
    for rec in &records {
        if !seen.insert(rec.id.as_str()) {
            return Err(Error::Conflict(format!("duplicate record id `{}`", rec.id)));
        }
    }
    Ok(records)
}

fn parse_timestamp(raw: &str, row: usize) -> Result<i64> {
    let t: i64 = raw.trim().parse().map_err(|_| Error::Row {
        row,
        message: format!("timestamp `{raw}` is not an integer"),
    })?;
    if t < 0 {
        return Err(Error::Row {
            row,
            message: format!("negative timestamp {t}"),
        });
    }
    Ok(t)
}

fn make_coords(lat: Option<f64>, lon: Option<f64>, row: usize) -> Result<Option<GeoPoint>> {
    match (lat, lon) {
        (None, None) => Ok(None),
        (Some(lat), Some(lon)) => GeoPoint::new(lat, lon).map(Some).map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        }),
        _ => Err(Error::Row {
            row,
            message: "lat and lon must be given together".into(),
        }),
    }
}

fn build_record(
    id: String,
    text: String,
    timestamp: i64,
    location: Option<String>,
    coords: Option<GeoPoint>,
    row: usize,
) -> Result<Record> {
    if id.is_empty() {
        return Err(Error::Row {
            row,
            message: "empty id".into(),
        });
    }
    Ok(Record {
        id,
        text,
        timestamp,
        location: location.filter(|l| !l.trim().is_empty()),
        coords,
    })
}

fn load_delimited(path: &Path, delimiter: u8) -> Result<Vec<Record>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(open(path)?);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let id_col = col("id").ok_or_else(|| Error::Schema("id".into()))?;
    let text_col = col("text").ok_or_else(|| Error::Schema("text".into()))?;
    let ts_col = col("timestamp").ok_or_else(|| Error::Schema("timestamp".into()))?;
    let loc_col = col("location");
    let (lat_col, lon_col) = (col("lat"), col("lon"));

    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        // Header is row 1.
        let row = idx + 2;
        let rec = rec.map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let opt_f64 = |c: Option<usize>| -> Result<Option<f64>> {
            match c.map(field).map(str::trim) {
                None | Some("") => Ok(None),
                Some(s) => s.parse().map(Some).map_err(|_| Error::Row {
                    row,
                    message: format!("`{s}` is not a number"),
                }),
            }
        };
        let timestamp = parse_timestamp(field(ts_col), row)?;
        let coords = make_coords(opt_f64(lat_col)?, opt_f64(lon_col)?, row)?;
        out.push(build_record(
            field(id_col).to_string(),
            field(text_col).to_string(),
            timestamp,
            loc_col.map(|c| field(c).to_string()),
            coords,
            row,
        )?);
    }
    Ok(out)
}

fn load_jsonl(path: &Path) -> Result<Vec<Record>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let row = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: JsonRow = serde_json::from_str(&line).map_err(|e| Error::Row {
            row,
            message: e.to_string(),
        })?;
        let id = match parsed.id {
            Some(serde_json::Value::String(s)) => s,
            Some(v @ serde_json::Value::Number(_)) => v.to_string(),
            _ => return Err(Error::Schema("id".into())),
        };
        let text = parsed.text.ok_or_else(|| Error::Schema("text".into()))?;
        let timestamp = match parsed.timestamp {
            Some(serde_json::Value::Number(n)) => parse_timestamp(&n.to_string(), row)?,
            Some(serde_json::Value::String(s)) => parse_timestamp(&s, row)?,
            Some(other) => parse_timestamp(&other.to_string(), row)?,
            None => return Err(Error::Schema("timestamp".into())),
        };
        let coords = make_coords(parsed.lat, parsed.lon, row)?;
        out.push(build_record(
            id,
            text,
            timestamp,
            parsed.location,
            coords,
            row,
        )?);
    }
    Ok(out)
}

/// Writes records as CSV with columns `id,text,timestamp,location,lat,lon`.
pub fn write_corpus_csv(records: &[Record], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "id,text,timestamp,location,lat,lon")?;
        for r in records {
            let (lat, lon) = match r.coords {
                Some(p) => (p.lat().to_string(), p.lon().to_string()),
                None => (String::new(), String::new()),
            };
            writeln!(
                w,
                "{},{},{},{},{},{}",
                csv_field(&r.id),
                csv_field(&r.text),
                r.timestamp,
                csv_field(r.location.as_deref().unwrap_or("")),
                lat,
                lon
            )?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Built-in English stopword list.
pub const ENGLISH_STOPWORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "against",
    "all",
    "am",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "doing",
    "down",
    "during",
    "each",
    "few",
    "for",
    "from",
    "further",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "itself",
    "just",
    "me",
    "more",
    "most",
    "my",
    "myself",
    "no",
    "nor",
    "not",
    "now",
    "of",
    "off",
    "on",
    "once",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "rt",
    "same",
    "she",
    "should",
    "so",
    "some",
    "such",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "under",
    "until",
    "up",
    "very",
    "via",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "would",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
    "amp",
    "also",
    "may",
    "must",
    "us",
    "let",
    "get",
    "got",
    "im",
    "dont",
    "it's",
    "i'm",
    "don't",
    "can't",
    "won't",
    "we're",
    "you're",
    "they're",
    "that's",
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopwordSet(HashSet<String>);

impl StopwordSet {
    pub fn english() -> Self {
        Self(ENGLISH_STOPWORDS.iter().map(|s| s.to_string()).collect())
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// One token per line; blank lines and `#` comments are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(open(path)?);
        let mut set = HashSet::new();
        for line in reader.lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let word = line.trim();
            if word.is_empty() || word.starts_with('#') {
                continue;
            }
            set.insert(word.to_lowercase());
        }
        Ok(Self(set))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for StopwordSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(|s| s.into().to_lowercase()).collect())
    }
}

/// What to do with `#hashtag` and `@mention` tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TagPolicy {
    /// Keep the leading sigil and the tag text.
    #[default]
    Keep,
    Drop,
}

fn is_url(token: &str) -> bool {
    token.starts_with("http://") || token.starts_with("https://") || token.starts_with("www.")
}

/// Lowercases, splits on whitespace, removes URLs, edge punctuation and stopwords.
pub fn preprocess(text: &str, stopwords: &StopwordSet) -> Vec<String> {
    preprocess_with(text, stopwords, TagPolicy::Keep)
}

pub fn preprocess_with(text: &str, stopwords: &StopwordSet, tags: TagPolicy) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let lower = raw.to_lowercase();
            if is_url(&lower) {
                return None;
            }
            let start = lower.find(|c: char| c.is_alphanumeric())?;
            let end = lower
                .char_indices()
                .rev()
                .find(|(_, c)| c.is_alphanumeric())
                .map(|(i, c)| i + c.len_utf8())?;
            let core = &lower[start..end];
            let sigil = lower[..start]
                .chars()
                .next_back()
                .filter(|c| matches!(c, '#' | '@'));
            let token = match (sigil, tags) {
                (Some(_), TagPolicy::Drop) => return None,
                (Some(s), TagPolicy::Keep) => format!("{s}{core}"),
                (None, _) => core.to_string(),
            };
            if is_url(&token) || stopwords.contains(&token) {
                return None;
            }
            Some(token)
        })
        .collect()
}

pub fn clean_doc(record: &Record, stopwords: &StopwordSet, tags: TagPolicy) -> CleanDoc {
    CleanDoc {
        id: record.id.clone(),
        tokens: preprocess_with(&record.text, stopwords, tags),
    }
}

fn normalize_location(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Local lookup table from location strings to coordinates.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: HashMap<String, GeoPoint>,
}

impl Gazetteer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, location: &str, point: GeoPoint) {
        self.entries.insert(normalize_location(location), point);
    }

    /// Loads a `location,lat,lon` CSV with a header row. Extra columns are ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(open(path)?);
        let mut g = Self::new();
        for (idx, rec) in rdr.records().enumerate() {
            let row = idx + 2;
            let rec = rec.map_err(|e| Error::Row {
                row,
                message: e.to_string(),
            })?;
            if rec.len() < 3 {
                return Err(Error::Row {
                    row,
                    message: format!("expected location,lat,lon; found {} fields", rec.len()),
                });
            }
            let num = |s: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| Error::Row {
                    row,
                    message: format!("`{s}` is not a number"),
                })
            };
            let point = GeoPoint::new(num(&rec[1])?, num(&rec[2])?).map_err(|e| Error::Row {
                row,
                message: e.to_string(),
            })?;
            g.insert(&rec[0], point);
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Exact lookup after trimming and case-folding; no fuzzy matching.
pub fn geocode(location: &str, g: &Gazetteer) -> Result<GeoPoint> {
    g.entries
        .get(&normalize_location(location))
        .copied()
        .ok_or_else(|| Error::Lookup(location.to_string()))
}

/// Fills `coords` from the gazetteer for records that only carry a location string.
/// Records with neither are reported by id.
pub fn resolve_coords(records: &mut [Record], g: &Gazetteer) -> Result<()> {
    for rec in records.iter_mut() {
        if rec.coords.is_some() {
            continue;
        }
        match &rec.location {
            Some(loc) => rec.coords = Some(geocode(loc, g)?),
            None => {
                return Err(Error::domain(format!(
                    "record `{}` has neither a location nor coordinates",
                    rec.id
                )))
            }
        }
    }
    Ok(())
}

/// Writes `id,tokens` where tokens are space-joined.
pub fn write_docs_csv(docs: &[CleanDoc], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "id,tokens")?;
        for d in docs {
            writeln!(w, "{},{}", csv_field(&d.id), csv_field(&d.tokens.join(" ")))?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn read_docs_csv(path: &Path) -> Result<Vec<CleanDoc>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(open(path)?);
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Row {
            row: idx + 2,
            message: e.to_string(),
        })?;
        out.push(CleanDoc {
            id: rec.get(0).unwrap_or("").to_string(),
            tokens: rec
                .get(1)
                .unwrap_or("")
                .split_whitespace()
                .map(str::to_string)
                .collect(),
        });
    }
    Ok(out)
}
