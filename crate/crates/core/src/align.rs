//! Closed-form scale/shift alignment of monocular depth to sparse metric
//! depth.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::ScalarMap;

/// Corresponding monocular and sparse metric depth samples.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthPairs {
    pub mono: Vec<f64>,
    pub sparse: Vec<f64>,
}

impl DepthPairs {
    pub fn len(&self) -> usize {
        self.mono.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mono.is_empty()
    }
}

/// Pairs every pixel where `sparse > 0` and `mono` is finite.
pub fn collect_pairs(mono: &ScalarMap, sparse: &ScalarMap) -> Result<DepthPairs> {
    mono.ensure_same_dims(sparse)?;
    let (mono, sparse): (Vec<f64>, Vec<f64>) = mono
        .as_slice()
        .iter()
        .zip(sparse.as_slice())
        .filter(|(m, s)| m.is_finite() && s.is_finite() && **s > 0.0)
        .map(|(m, s)| (*m, *s))
        .unzip();
    if mono.len() < 2 {
        return Err(Error::InsufficientPairs { found: mono.len() });
    }
    Ok(DepthPairs { mono, sparse })
}

/// Least-squares `(a, b)` minimizing `Σ (a·mono + b − sparse)²`.
pub fn fit_scale_shift(pairs: &DepthPairs) -> Result<(f64, f64)> {
    let k = pairs.len();
    if k < 2 || pairs.sparse.len() != k {
        return Err(Error::InsufficientPairs { found: k });
    }
    let n = k as f64;
    let mean_m = pairs.mono.iter().sum::<f64>() / n;
    let mean_s = pairs.sparse.iter().sum::<f64>() / n;
    let (mut cov, mut var) = (0.0, 0.0);
    for (m, s) in pairs.mono.iter().zip(&pairs.sparse) {
        let dm = m - mean_m;
        cov += dm * (s - mean_s);
        var += dm * dm;
    }
    if !(var / n > 1e-12) {
        return Err(Error::DegenerateFit);
    }
    let a = cov / var;
    Ok((a, mean_s - a * mean_m))
}

/// `a·mono + b` elementwise. Negative results are clamped to 0 (invalid);
/// the second value is how many pixels were clamped.
pub fn apply_alignment(mono: &ScalarMap, a: f64, b: f64) -> (ScalarMap, usize) {
    let mut clamped = 0;
    let out = mono.map(|&m| {
        let v = a * m + b;
        if v < 0.0 {
            clamped += 1;
            0.0
        } else {
            v
        }
    });
    (out, clamped)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentRecord {
    pub frame_id: String,
    pub a: f64,
    pub b: f64,
    pub clamped: usize,
}

/// Alignment cache: one `frame_id a b clamped_count` line per frame.
pub fn write_alignment_cache(records: &[AlignmentRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::new();
    for r in records {
        // {:e}-free Display of f64 round-trips exactly through parse().
        writeln!(text, "{} {} {} {}", r.frame_id, r.a, r.b, r.clamped).unwrap();
    }
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_alignment_cache(path: impl AsRef<Path>) -> Result<Vec<AlignmentRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            let bad = || Error::parse(offset, format!("malformed alignment line '{trimmed}'"));
            if fields.len() != 4 {
                return Err(bad());
            }
            out.push(AlignmentRecord {
                frame_id: fields[0].to_string(),
                a: fields[1].parse().map_err(|_| bad())?,
                b: fields[2].parse().map_err(|_| bad())?,
                clamped: fields[3].parse().map_err(|_| bad())?,
            });
        }
        offset += line.len();
    }
    Ok(out)
}
