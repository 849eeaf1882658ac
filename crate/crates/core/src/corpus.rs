//! Geo-tagged multimodal image records: vocabulary, validation and the
//! line-oriented JSONL corpus format.
//!
//! A corpus file starts with a header line carrying the vocabulary and the
//! patch feature dimension, followed by one image per line:
//!
//! ```text
//! {"vocab":["new york","skyline"],"feature_dim":2}
//! {"id":"a","words":["skyline"],"patches":[[0.5,1.0]],"lat":40.7,"lon":-74.0}
//! ```
//!
//! Files without a header are accepted as well; the vocabulary is then built
//! from the records in first-occurrence order.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from tokenized documents, assigning ids in
    /// first-occurrence order.
    pub fn build<D, S>(docs: &[D]) -> Result<Self>
    where
        D: AsRef<[S]>,
        S: AsRef<str>,
    {
        Self::build_filtered(docs, &HashSet::new())
    }

    /// Like [`Vocabulary::build`] but skips every word in `stop_words`.
    pub fn build_filtered<D, S>(docs: &[D], stop_words: &HashSet<String>) -> Result<Self>
    where
        D: AsRef<[S]>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary::default();
        for doc in docs {
            for word in doc.as_ref() {
                let word = word.as_ref();
                if !stop_words.contains(word) {
                    vocab.insert(word);
                }
            }
        }
        if vocab.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        Ok(vocab)
    }

    /// Wraps an ordered list of distinct tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidCorpus(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    fn insert(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(word.to_owned());
        self.index.insert(word.to_owned(), id);
        id
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Vocabulary::from_tokens(tokens).map_err(serde::de::Error::custom)
    }
}

/// A (latitude, longitude) pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub lat: f64,
    pub lon: f64,
}

impl Location {
    pub fn new(lat: f64, lon: f64) -> Self {
        Location { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::CoordinateOutOfRange {
                lat: self.lat,
                lon: self.lon,
            })
        }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.lat, self.lon]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoImage {
    pub id: String,
    pub words: Vec<u32>,
    pub patches: Vec<Vec<f64>>,
    pub location: Option<Location>,
}

impl GeoImage {
    fn check(&self, vocab_len: usize, feature_dim: usize) -> std::result::Result<(), String> {
        if let Some(&w) = self.words.iter().find(|&&w| w as usize >= vocab_len) {
            return Err(format!("image {:?}: token id {w} out of range (W={vocab_len})", self.id));
        }
        for (i, p) in self.patches.iter().enumerate() {
            if p.len() != feature_dim {
                return Err(format!(
                    "image {:?}: patch {i} has length {}, expected feature_dim {feature_dim}",
                    self.id,
                    p.len()
                ));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(format!("image {:?}: patch {i} has a non-finite value", self.id));
            }
        }
        if let Some(loc) = &self.location {
            if !loc.is_valid() {
                return Err(format!(
                    "image {:?}: location out of range (lat={}, lon={})",
                    self.id, loc.lat, loc.lon
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub images: Vec<GeoImage>,
    pub vocab: Vocabulary,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub stop_words: HashSet<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    vocab: Vec<String>,
    feature_dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    #[serde(default)]
    words: Vec<String>,
    #[serde(default)]
    patches: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lon: Option<f64>,
}

impl Record {
    fn location(&self) -> std::result::Result<Option<Location>, String> {
        match (self.lat, self.lon) {
            (Some(lat), Some(lon)) => Ok(Some(Location { lat, lon })),
            (None, None) => Ok(None),
            _ => Err(format!("image {:?}: lat and lon must be given together", self.id)),
        }
    }
}

fn is_header(line: &str) -> bool {
    matches!(serde_json::from_str::<serde_json::Value>(line),
        Ok(serde_json::Value::Object(m)) if m.contains_key("vocab"))
}

/// Reads a stop-word file: one word per line, blank lines ignored.
pub fn load_stop_words(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_patches(&self) -> usize {
        self.images.iter().map(|im| im.patches.len()).sum()
    }

    pub fn num_words(&self) -> usize {
        self.images.iter().map(|im| im.words.len()).sum()
    }

    /// Checks every corpus invariant on an in-memory corpus.
    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if self.vocab.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidCorpus("feature_dim must be positive".into()));
        }
        let mut ids = HashSet::with_capacity(self.images.len());
        for im in &self.images {
            im.check(self.vocab.len(), self.feature_dim)
                .map_err(Error::InvalidCorpus)?;
            if !ids.insert(im.id.as_str()) {
                return Err(Error::InvalidCorpus(format!("duplicate image id {:?}", im.id)));
            }
        }
        Ok(())
    }

    /// Fails unless every image carries a location.
    pub fn require_locations(&self) -> Result<()> {
        match self.images.iter().find(|im| im.location.is_none()) {
            Some(im) => Err(Error::MissingLocation(im.id.clone())),
            None => Ok(()),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Corpus> {
        Self::load_with(path, &LoadOptions::default())
    }

    pub fn load_with(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Corpus> {
        let path = path.as_ref();
        let lines = read_lines(path)?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_owned(),
            line,
            message,
        };
        let invalid = |line: usize, message: String| Error::Validation {
            path: path.to_owned(),
            line,
            message,
        };

        let mut rest = &lines[..];
        let mut header = None;
        if let Some((line_no, first)) = lines.first() {
            if is_header(first) {
                let h: Header =
                    serde_json::from_str(first).map_err(|e| parse_err(*line_no, e.to_string()))?;
                header = Some((*line_no, h));
                rest = &lines[1..];
            }
        }

        let mut records = Vec::with_capacity(rest.len());
        for (line_no, text) in rest {
            let rec: Record =
                serde_json::from_str(text).map_err(|e| parse_err(*line_no, e.to_string()))?;
            records.push((*line_no, rec));
        }
        if records.is_empty() {
            return Err(Error::EmptyCorpus);
        }

        let (vocab, feature_dim) = match header {
            Some((line_no, h)) => {
                let vocab = Vocabulary::from_tokens(
                    h.vocab
                        .into_iter()
                        .filter(|w| !opts.stop_words.contains(w))
                        .collect(),
                )
                .map_err(|e| invalid(line_no, e.to_string()))?;
                if h.feature_dim == 0 {
                    return Err(invalid(line_no, "feature_dim must be positive".into()));
                }
                (vocab, h.feature_dim)
            }
            None => {
                let docs: Vec<&[String]> = records.iter().map(|(_, r)| &r.words[..]).collect();
                let vocab = Vocabulary::build_filtered(&docs, &opts.stop_words)?;
                let dim = records
                    .iter()
                    .find_map(|(_, r)| r.patches.first().map(Vec::len))
                    .ok_or_else(|| Error::InvalidCorpus("no patches to infer feature_dim".into()))?;
                if dim == 0 {
                    return Err(Error::InvalidCorpus("feature_dim must be positive".into()));
                }
                (vocab, dim)
            }
        };

        let mut ids = HashSet::with_capacity(records.len());
        let mut images = Vec::with_capacity(records.len());
        for (line_no, rec) in records {
            let location = rec.location().map_err(|m| invalid(line_no, m))?;
            let mut words = Vec::with_capacity(rec.words.len());
            for w in &rec.words {
                if opts.stop_words.contains(w) {
                    continue;
                }
                let id = vocab.id(w).ok_or_else(|| {
                    invalid(line_no, format!("word {w:?} is not in the vocabulary"))
                })?;
                words.push(id);
            }
            let image = GeoImage {
                id: rec.id,
                words,
                patches: rec.patches,
                location,
            };
            image
                .check(vocab.len(), feature_dim)
                .map_err(|m| invalid(line_no, m))?;
            if !ids.insert(image.id.clone()) {
                return Err(invalid(line_no, format!("duplicate image id {:?}", image.id)));
            }
            images.push(image);
        }

        Ok(Corpus {
            images,
            vocab,
            feature_dim,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.validate()?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Serializes the header and all records; the caller owns validation.
    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        let header = Header {
            vocab: self.vocab.tokens().to_vec(),
            feature_dim: self.feature_dim,
        };
        write_json_line(out, &header)?;
        write_images(out, &self.images, &self.vocab)
    }
}

fn write_json_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n").map_err(|e| Error::io("<writer>", e))
}

/// Writes header-less image records, e.g. for a query file.
pub fn write_images<W: Write>(out: &mut W, images: &[GeoImage], vocab: &Vocabulary) -> Result<()> {
    for im in images {
        let rec = Record {
            id: im.id.clone(),
            words: im
                .words
                .iter()
                .map(|&w| vocab.token(w).unwrap_or_default().to_owned())
                .collect(),
            patches: im.patches.clone(),
            lat: im.location.map(|l| l.lat),
            lon: im.location.map(|l| l.lon),
        };
        write_json_line(out, &rec)?;
    }
    Ok(())
}

/// Writes a header-less query file.
pub fn save_queries(path: impl AsRef<Path>, images: &[GeoImage], vocab: &Vocabulary) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_images(&mut out, images, vocab)?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Loads query records against an existing vocabulary.
///
/// A leading header line is skipped. Words absent from `vocab` are dropped;
/// the second element of the result counts them. Locations are optional.
pub fn load_queries(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    feature_dim: usize,
) -> Result<(Vec<GeoImage>, usize)> {
    let path = path.as_ref();
    let lines = read_lines(path)?;
    let mut dropped = 0;
    let mut images = Vec::with_capacity(lines.len());
    for (i, (line_no, text)) in lines.iter().enumerate() {
        if i == 0 && is_header(text) {
            continue;
        }
        let rec: Record = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: *line_no,
            message: e.to_string(),
        })?;
        let invalid = |message: String| Error::Validation {
            path: path.to_owned(),
            line: *line_no,
            message,
        };
        let location = rec.location().map_err(invalid)?;
        let words: Vec<u32> = rec.words.iter().filter_map(|w| vocab.id(w)).collect();
        dropped += rec.words.len() - words.len();
        let image = GeoImage {
            id: rec.id,
            words,
            patches: rec.patches,
            location,
        };
        image.check(vocab.len(), feature_dim).map_err(invalid)?;
        images.push(image);
    }
    Ok((images, dropped))
}
