//! JSON interchange format for Choi operators and states.
//!
//! A file stores one square complex matrix as rows of `[re, im]` pairs,
//! tagged with a kind (`map`, `supermap`, or `state`) and the dimensions
//! needed to interpret it. Numbers are emitted as the shortest decimal that
//! parses back to the same bits, so store-then-load is exact for finite
//! values; non-finite entries are rejected in both directions.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use supermap_core::choi::MapChoi;
use supermap_core::supermap::{SuperChoi, SupermapDims};
use supermap_core::tensor::FactoredMatrix;

/// Files whose matrix deviates from Hermitian by more than this (relative
/// to the largest entry) are rejected on load.
pub const LOAD_HERMITIAN_RTOL: f64 = 1e-9;

/// Dimension fields; which ones must be present depends on the kind.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    #[serde(rename = "in", default, skip_serializing_if = "Option::is_none")]
    pub d_in: Option<usize>,
    #[serde(rename = "out", default, skip_serializing_if = "Option::is_none")]
    pub d_out: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a0: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a1: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b1: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChoiFile {
    /// "map" (channel-like, dims in/out), "supermap" (dims a0, a1, b0, b1),
    /// or "state" (dims d).
    pub kind: String,
    pub dims: Dims,
    /// Row-major entries, each a `[re, im]` pair.
    pub matrix: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

pub fn rows_from_matrix(m: &DMatrix<Complex64>) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect()
}

pub fn matrix_from_rows(rows: &[Vec<[f64; 2]>]) -> Result<DMatrix<Complex64>, String> {
    let n = rows.len();
    if n == 0 {
        return Err("matrix has no rows".to_string());
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(format!("row {i} has {} entries, expected {n}", row.len()));
        }
    }
    let mut m = DMatrix::zeros(n, n);
    for (r, row) in rows.iter().enumerate() {
        for (c, &[re, im]) in row.iter().enumerate() {
            if !re.is_finite() || !im.is_finite() {
                return Err(format!("entry ({r}, {c}) is not finite"));
            }
            m[(r, c)] = Complex64::new(re, im);
        }
    }
    Ok(m)
}

fn require(field: Option<usize>, name: &str) -> Result<usize, String> {
    match field {
        Some(v) if v > 0 => Ok(v),
        Some(_) => Err(format!("dims.{name} must be positive")),
        None => Err(format!("dims.{name} is required for this kind")),
    }
}

impl ChoiFile {
    pub fn from_map(m: &MapChoi) -> Self {
        Self {
            kind: "map".to_string(),
            dims: Dims {
                d_in: Some(m.d_in()),
                d_out: Some(m.d_out()),
                ..Dims::default()
            },
            matrix: rows_from_matrix(m.matrix()),
            meta: None,
        }
    }

    pub fn from_supermap(s: &SuperChoi) -> Self {
        let d = s.dims();
        Self {
            kind: "supermap".to_string(),
            dims: Dims {
                a0: Some(d.a0),
                a1: Some(d.a1),
                b0: Some(d.b0),
                b1: Some(d.b1),
                ..Dims::default()
            },
            matrix: rows_from_matrix(s.matrix()),
            meta: None,
        }
    }

    pub fn from_state(s: &FactoredMatrix) -> Self {
        Self {
            kind: "state".to_string(),
            dims: Dims {
                d: Some(s.dim()),
                ..Dims::default()
            },
            matrix: rows_from_matrix(s.matrix()),
            meta: None,
        }
    }

    pub fn with_meta(mut self, meta: serde_json::Value) -> Self {
        self.meta = Some(meta);
        self
    }

    fn expected_dim(&self) -> Result<usize, String> {
        match self.kind.as_str() {
            "map" => Ok(require(self.dims.d_in, "in")? * require(self.dims.d_out, "out")?),
            "supermap" => Ok(require(self.dims.a0, "a0")?
                * require(self.dims.a1, "a1")?
                * require(self.dims.b0, "b0")?
                * require(self.dims.b1, "b1")?),
            "state" => require(self.dims.d, "d"),
            other => Err(format!(
                "unknown kind `{other}` (expected map, supermap, or state)"
            )),
        }
    }

    /// Shape-, finiteness-, and Hermiticity-checked matrix.
    pub fn checked_matrix(&self) -> Result<DMatrix<Complex64>, String> {
        let expected = self.expected_dim()?;
        let m = matrix_from_rows(&self.matrix)?;
        if m.nrows() != expected {
            return Err(format!(
                "matrix is {}x{} but dims declare {expected}",
                m.nrows(),
                m.ncols()
            ));
        }
        let scale = 1.0 + m.iter().map(|v| v.norm()).fold(0.0_f64, f64::max);
        let dev = (&m - m.adjoint())
            .iter()
            .map(|v| v.norm())
            .fold(0.0_f64, f64::max);
        if dev > LOAD_HERMITIAN_RTOL * scale {
            return Err(format!(
                "matrix is not Hermitian (deviation {dev:.3e})"
            ));
        }
        Ok(m)
    }

    pub fn as_map(&self) -> Result<MapChoi, String> {
        if self.kind != "map" {
            return Err(format!("expected a map file, found kind `{}`", self.kind));
        }
        let m = self.checked_matrix()?;
        MapChoi::new(
            m,
            require(self.dims.d_in, "in")?,
            require(self.dims.d_out, "out")?,
        )
        .map_err(|e| e.to_string())
    }

    pub fn as_supermap(&self) -> Result<SuperChoi, String> {
        if self.kind != "supermap" {
            return Err(format!(
                "expected a supermap file, found kind `{}`",
                self.kind
            ));
        }
        let m = self.checked_matrix()?;
        let dims = SupermapDims::new(
            require(self.dims.a0, "a0")?,
            require(self.dims.a1, "a1")?,
            require(self.dims.b0, "b0")?,
            require(self.dims.b1, "b1")?,
        )
        .map_err(|e| e.to_string())?;
        SuperChoi::new(m, dims).map_err(|e| e.to_string())
    }

    pub fn as_state(&self) -> Result<FactoredMatrix, String> {
        if self.kind != "state" {
            return Err(format!("expected a state file, found kind `{}`", self.kind));
        }
        let m = self.checked_matrix()?;
        FactoredMatrix::new(m, &[("S", require(self.dims.d, "d")?)]).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let file: ChoiFile = serde_json::from_str(&text)
            .map_err(|e| format!("cannot parse {}: {e}", path.display()))?;
        file.checked_matrix()
            .map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(file)
    }

    pub fn store(&self, path: &Path) -> Result<(), String> {
        for row in &self.matrix {
            for &[re, im] in row {
                if !re.is_finite() || !im.is_finite() {
                    return Err("refusing to store non-finite matrix entries".to_string());
                }
            }
        }
        let mut text = serde_json::to_string_pretty(self).map_err(|e| e.to_string())?;
        text.push('\n');
        fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
    }
}
