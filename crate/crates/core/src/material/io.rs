//! Loop export: `t_s,b_T,h_Apm` CSV plus a JSON sidecar with the same stem.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LoopRecord, MaterialError};

const HEADER: [&str; 3] = ["t_s", "b_T", "h_Apm"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopMeta {
    pub freq_hz: f64,
    #[serde(rename = "b_peak_T")]
    pub b_peak_t: f64,
    pub phase_rad: f64,
    pub params_hash: String,
}

fn sidecar(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MaterialError + '_ {
    move |source| MaterialError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn fmt_err(path: &Path, detail: impl ToString) -> MaterialError {
    MaterialError::Format {
        path: path.display().to_string(),
        detail: detail.to_string(),
    }
}

/// Writes `path` (CSV) and its `.json` sidecar.
pub fn write_loop(path: &Path, rec: &LoopRecord, params_hash: &str) -> Result<(), MaterialError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| fmt_err(path, e))?;
    w.write_record(HEADER).map_err(|e| fmt_err(path, e))?;
    for i in 0..rec.len() {
        w.write_record([rec.t[i].to_string(), rec.b[i].to_string(), rec.h[i].to_string()])
            .map_err(|e| fmt_err(path, e))?;
    }
    w.flush().map_err(io_err(path))?;

    let meta = LoopMeta {
        freq_hz: rec.freq,
        b_peak_t: rec.b_peak,
        phase_rad: rec.phase,
        params_hash: params_hash.to_string(),
    };
    let side = sidecar(path);
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    std::fs::write(&side, text).map_err(io_err(&side))
}

pub fn read_loop(path: &Path) -> Result<(LoopRecord, LoopMeta), MaterialError> {
    let side = sidecar(path);
    let text = std::fs::read_to_string(&side).map_err(io_err(&side))?;
    let meta: LoopMeta = serde_json::from_str(&text).map_err(|e| fmt_err(&side, e))?;

    let mut r = csv::Reader::from_path(path).map_err(|e| fmt_err(path, e))?;
    let header = r.headers().map_err(|e| fmt_err(path, e))?;
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(fmt_err(path, format!("expected header {}", HEADER.join(","))));
    }
    let (mut t, mut b, mut h) = (Vec::new(), Vec::new(), Vec::new());
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(|e| fmt_err(path, e))?;
        let parse = |i: usize| -> Result<f64, MaterialError> {
            row.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| fmt_err(path, format!("row {}: bad field {}", line + 2, i + 1)))
        };
        t.push(parse(0)?);
        b.push(parse(1)?);
        h.push(parse(2)?);
    }
    let rec = LoopRecord {
        t,
        b,
        h,
        freq: meta.freq_hz,
        b_peak: meta.b_peak_t,
        phase: meta.phase_rad,
    };
    Ok((rec, meta))
}
