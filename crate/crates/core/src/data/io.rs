//! Newline-delimited JSON records. Features are the raw little-endian
//! `f64` bytes, base64 encoded, so a round trip is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::ctc::LabelSequence;
use crate::tensor::Tensor;

use super::{DataError, RegimeName, Result, Utterance};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    regime: RegimeName,
    seed: u64,
    duration_sec: f64,
    frames: usize,
    d_feat: usize,
    target: Vec<usize>,
    features: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn encode(u: &Utterance) -> Record {
    let bytes: Vec<u8> = u.features.data().iter().flat_map(|x| x.to_le_bytes()).collect();
    Record {
        id: u.id.clone(),
        regime: u.regime,
        seed: u.seed,
        duration_sec: u.duration_sec,
        frames: u.features.rows(),
        d_feat: u.features.cols(),
        target: u.target.tokens().to_vec(),
        features: STANDARD.encode(bytes),
    }
}

fn decode(r: Record) -> std::result::Result<Utterance, String> {
    let bytes = STANDARD.decode(&r.features).map_err(|e| format!("features: {e}"))?;
    if bytes.len() != r.frames * r.d_feat * 8 {
        return Err(format!(
            "features hold {} bytes, expected {} for {}x{}",
            bytes.len(),
            r.frames * r.d_feat * 8,
            r.frames,
            r.d_feat
        ));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let features = Tensor::matrix(r.frames, r.d_feat, data).map_err(|e| e.to_string())?;
    let target = LabelSequence::new(r.target).map_err(|e| format!("target: {e}"))?;
    Ok(Utterance {
        id: r.id,
        features,
        target,
        duration_sec: r.duration_sec,
        regime: r.regime,
        seed: r.seed,
    })
}

pub fn write_dataset(path: impl AsRef<Path>, utterances: &[Utterance]) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for u in utterances {
        let line = serde_json::to_string(&encode(u)).expect("record serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Read every record; blank lines are skipped. Line numbers in errors are
/// 1-based.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |detail: String| DataError::Malformed { line: i + 1, detail };
        let record: Record = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        out.push(decode(record).map_err(malformed)?);
    }
    Ok(out)
}
