//! DesignReport: the JSON artifact written by every design command. Ids are
//! 1-based; gains are printed with `%.17g` so a report can serve as a golden
//! file.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::blocker::DesignCase;
use crate::error::{Error, Result};
use crate::fmt_g;
use crate::netmodel::NetworkFile;
use crate::spectral::Tolerances;
use crate::topology::CutPartition;
use crate::verify::{Claims, VerificationReport};

/// Blocked (or enabled) mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRecord {
    /// 1-based position in the ordered spectrum of the matrix the design
    /// acted on.
    pub index: usize,
    /// Eigenvalue of `L + B F`.
    pub lambda: Complex64,
    /// The corresponding mode of `-(L + B F)`.
    pub mode: Complex64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutRecord {
    pub v1: Vec<usize>,
    pub vcut: Vec<usize>,
    pub v2: Vec<usize>,
    pub v3: Vec<usize>,
    pub v4: Vec<usize>,
}

fn one_based(ids: &[usize]) -> Vec<usize> {
    ids.iter().map(|v| v + 1).collect()
}

fn zero_based(ids: &[usize], field: &str) -> Result<Vec<usize>> {
    ids.iter()
        .enumerate()
        .map(|(i, &v)| {
            v.checked_sub(1).ok_or_else(|| Error::Validation {
                path: format!("{field}[{i}]"),
                msg: "ids are 1-based".into(),
            })
        })
        .collect()
}

impl From<&CutPartition> for CutRecord {
    fn from(c: &CutPartition) -> Self {
        CutRecord {
            v1: one_based(&c.v1),
            vcut: one_based(&c.vcut),
            v2: one_based(&c.v2),
            v3: one_based(&c.v3),
            v4: one_based(&c.v4),
        }
    }
}

/// [`Claims`] with 1-based indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClaimsRecord {
    pub unobservable: Vec<Complex64>,
    #[serde(default)]
    pub observable: Vec<Complex64>,
    pub spectrum: Option<Vec<Complex64>>,
    pub preserved: Vec<(usize, Vec<Complex64>)>,
    pub modified: Vec<usize>,
    pub stable: bool,
    pub strict: bool,
    pub zero_columns: Vec<usize>,
}

impl From<&Claims> for ClaimsRecord {
    fn from(c: &Claims) -> Self {
        ClaimsRecord {
            unobservable: c.unobservable.clone(),
            observable: c.observable.clone(),
            spectrum: c.spectrum.clone(),
            preserved: c.preserved.iter().map(|(i, v)| (i + 1, v.clone())).collect(),
            modified: one_based(&c.modified),
            stable: c.stable,
            strict: c.strict,
            zero_columns: one_based(&c.zero_columns),
        }
    }
}

impl ClaimsRecord {
    pub fn to_claims(&self) -> Result<Claims> {
        let preserved_ids: Vec<usize> = self.preserved.iter().map(|p| p.0).collect();
        let preserved_ids = zero_based(&preserved_ids, "claims.preserved")?;
        Ok(Claims {
            unobservable: self.unobservable.clone(),
            observable: self.observable.clone(),
            spectrum: self.spectrum.clone(),
            preserved: preserved_ids
                .into_iter()
                .zip(self.preserved.iter().map(|p| p.1.clone()))
                .collect(),
            modified: zero_based(&self.modified, "claims.modified")?,
            stable: self.stable,
            strict: self.strict,
            zero_columns: zero_based(&self.zero_columns, "claims.zero_columns")?,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignReport {
    /// Subcommand that produced the report.
    pub kind: String,
    pub network: NetworkFile,
    pub tolerances: Tolerances,
    /// Row-major `q x n` gain, `%.17g`.
    pub gain: Vec<Vec<Box<RawValue>>>,
    pub provenance: String,
    pub mode: Option<ModeRecord>,
    pub case: Option<DesignCase>,
    /// 1-based indices of changed eigenvectors.
    pub modified: Vec<usize>,
    /// Blocking eigenvector (unit norm).
    pub vhat_p: Option<Vec<Complex64>>,
    pub cut: Option<CutRecord>,
    /// Shift threshold of the stabilizing regional design.
    pub d: Option<f64>,
    pub stable: Option<bool>,
    pub claims: ClaimsRecord,
    pub verification: VerificationReport,
    pub seed: u64,
}

/// Gain rows as raw `%.17g` JSON numbers.
pub fn gain_to_raw(f: &DMatrix<f64>) -> Vec<Vec<Box<RawValue>>> {
    f.row_iter()
        .map(|row| {
            row.iter()
                .map(|&x| RawValue::from_string(fmt_g(x, 17)).expect("finite gains are valid JSON"))
                .collect()
        })
        .collect()
}

impl DesignReport {
    pub fn gain_matrix(&self) -> Result<DMatrix<f64>> {
        let q = self.gain.len();
        let n = self.network.n;
        let mut f = DMatrix::zeros(q, n);
        for (i, row) in self.gain.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Validation {
                    path: format!("gain[{i}]"),
                    msg: format!("row has {} entries, expected {n}", row.len()),
                });
            }
            for (j, raw) in row.iter().enumerate() {
                f[(i, j)] = serde_json::from_str(raw.get()).map_err(|e| Error::Validation {
                    path: format!("gain[{i}][{j}]"),
                    msg: e.to_string(),
                })?;
            }
        }
        Ok(f)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        let mut lines = vec![format!("{} on {} nodes: {}", self.kind, self.network.n, self.provenance)];
        if let Some(m) = &self.mode {
            lines.push(format!(
                "mode {}: lambda = {}{:+}i, hidden mode {}{:+}i",
                m.index, m.lambda.re, m.lambda.im, m.mode.re, m.mode.im
            ));
        }
        if let Some(case) = self.case {
            lines.push(format!("case: {case:?}, modified eigenvectors {:?}", self.modified));
        }
        if let Some(cut) = &self.cut {
            lines.push(format!("cut {:?} | v1 {:?} | v2 {:?}", cut.vcut, cut.v1, cut.v2));
        }
        if let Some(d) = self.d {
            lines.push(format!("shift threshold d = {d}"));
        }
        let v = &self.verification;
        lines.push(format!(
            "observability rank {}/{}, stability {:?}, verification {}",
            v.obs_matrix_rank,
            v.n,
            v.stability,
            if v.pass { "passed" } else { "FAILED" }
        ));
        lines.join("\n")
    }
}
