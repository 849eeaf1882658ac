//! Two-line model snapshot: a readable JSON header (format, version,
//! dimensions, checksum) followed by the JSON body.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelState;
use crate::error::{Error, Result};

pub const SNAPSHOT_VERSION: u32 = 1;
const FORMAT: &str = "gtmi-model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub format: String,
    pub version: u32,
    pub feature_dim: usize,
    pub vocab_size: usize,
    pub regions: usize,
    pub topics: usize,
    pub images: usize,
    pub has_assignments: bool,
    pub checksum: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

/// Writes `state`; assignments are kept only when `with_assignments` is set.
pub fn save_model(state: &ModelState, path: impl AsRef<Path>, with_assignments: bool) -> Result<()> {
    let path = path.as_ref();
    let body = if with_assignments || state.assign.is_none() {
        serde_json::to_string(state)?
    } else {
        let mut frozen = state.clone();
        frozen.assign = None;
        serde_json::to_string(&frozen)?
    };
    let header = SnapshotHeader {
        format: FORMAT.to_owned(),
        version: SNAPSHOT_VERSION,
        feature_dim: state.hyper.feature_dim,
        vocab_size: state.vocab.len(),
        regions: state.hyper.regions,
        topics: state.hyper.topics,
        images: state.images.len(),
        has_assignments: with_assignments && state.assign.is_some(),
        checksum: sha256_hex(body.as_bytes()),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    out.push_str(&body);
    out.push('\n');
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn split(text: &str) -> Result<(SnapshotHeader, &str)> {
    let (head, body) = text
        .split_once('\n')
        .ok_or_else(|| Error::CorruptSnapshot("missing body".into()))?;
    let header: SnapshotHeader =
        serde_json::from_str(head).map_err(|e| Error::CorruptSnapshot(format!("header: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::CorruptSnapshot(format!("unknown format {:?}", header.format)));
    }
    if header.version != SNAPSHOT_VERSION {
        return Err(Error::VersionMismatch {
            found: header.version,
            expected: SNAPSHOT_VERSION,
        });
    }
    Ok((header, body.strip_suffix('\n').unwrap_or(body)))
}

/// Reads only the header line.
pub fn read_header(path: impl AsRef<Path>) -> Result<SnapshotHeader> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(split(&text)?.0)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (header, body) = split(&text)?;
    if sha256_hex(body.as_bytes()) != header.checksum {
        return Err(Error::ChecksumMismatch);
    }
    let mut state: ModelState =
        serde_json::from_str(body).map_err(|e| Error::CorruptSnapshot(e.to_string()))?;
    let dims = (
        state.hyper.feature_dim,
        state.vocab.len(),
        state.hyper.regions,
        state.hyper.topics,
    );
    if dims != (header.feature_dim, header.vocab_size, header.regions, header.topics) {
        return Err(Error::CorruptSnapshot("header dimensions disagree with body".into()));
    }
    let c = &state.counts;
    if c.vocab_size != dims.1
        || c.regions != dims.2
        || c.topics != dims.3
        || c.word_topic.len() != dims.1 * dims.3
        || c.word_region.len() != dims.1 * dims.2
        || c.region_topic.len() != dims.2 * dims.3
        || c.region_patch_topic.len() != dims.2 * dims.3
        || state.visual.sum.len() != dims.3 * dims.0
        || state.geo.sums.len() != dims.2
    {
        return Err(Error::CorruptSnapshot("array sizes disagree with dimensions".into()));
    }
    state.rebuild_caches();
    Ok(state)
}
