//! Dense matrices and the `.fmat` interchange format.
//!
//! A `.fmat` file is one UTF-8 JSON header line followed by `rows * cols`
//! little-endian `f32` values in row-major order:
//!
//! ```text
//! {"rows":2,"cols":3,"dtype":"f32","kind":"word","layer":1}\n<24 bytes>
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What one row of a matrix represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Word,
    Tr,
}

/// Words (or TRs) by embedding dimensions, for one model layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: DMatrix<f64>,
    layer_index: u32,
    unit_kind: UnitKind,
}

impl FeatureMatrix {
    pub fn new(values: DMatrix<f64>, layer_index: u32, unit_kind: UnitKind) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::invalid("feature matrix must have at least one row and column"));
        }
        if layer_index == 0 {
            return Err(Error::invalid("layer index starts at 1"));
        }
        check_finite(&values)?;
        Ok(FeatureMatrix {
            values,
            layer_index,
            unit_kind,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn layer_index(&self) -> u32 {
        self.layer_index
    }

    pub fn unit_kind(&self) -> UnitKind {
        self.unit_kind
    }

    /// Same layer and kind, new values.
    pub fn with_values(&self, values: DMatrix<f64>) -> Result<Self> {
        FeatureMatrix::new(values, self.layer_index, self.unit_kind)
    }
}

/// TRs by voxels, one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    values: DMatrix<f64>,
    subject_id: String,
    tr_seconds: f64,
}

pub const DEFAULT_TR_SECONDS: f64 = 1.5;

impl ResponseMatrix {
    pub fn new(values: DMatrix<f64>, subject_id: impl Into<String>, tr_seconds: f64) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::invalid("response matrix needs at least 2 TRs"));
        }
        if values.ncols() == 0 {
            return Err(Error::invalid("response matrix needs at least one voxel"));
        }
        if !(tr_seconds > 0.0 && tr_seconds.is_finite()) {
            return Err(Error::invalid("tr_seconds must be positive"));
        }
        check_finite(&values)?;
        Ok(ResponseMatrix {
            values,
            subject_id: subject_id.into(),
            tr_seconds,
        })
    }

    pub fn trs(&self) -> usize {
        self.values.nrows()
    }

    pub fn voxels(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn tr_seconds(&self) -> f64 {
        self.tr_seconds
    }
}

/// Either matrix kind, as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Matrix {
    Feature(FeatureMatrix),
    Response(ResponseMatrix),
}

impl Matrix {
    pub fn values(&self) -> &DMatrix<f64> {
        match self {
            Matrix::Feature(m) => m.values(),
            Matrix::Response(m) => m.values(),
        }
    }

    pub fn into_feature(self) -> Result<FeatureMatrix> {
        match self {
            Matrix::Feature(m) => Ok(m),
            Matrix::Response(_) => Err(Error::invalid("expected a feature matrix, found responses")),
        }
    }

    pub fn into_response(self) -> Result<ResponseMatrix> {
        match self {
            Matrix::Response(m) => Ok(m),
            Matrix::Feature(_) => Err(Error::invalid("expected a response matrix, found features")),
        }
    }
}

impl From<FeatureMatrix> for Matrix {
    fn from(m: FeatureMatrix) -> Self {
        Matrix::Feature(m)
    }
}

impl From<ResponseMatrix> for Matrix {
    fn from(m: ResponseMatrix) -> Self {
        Matrix::Response(m)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    rows: usize,
    cols: usize,
    dtype: String,
    kind: String,
    layer: u32,
}

pub(crate) fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if !m[(r, c)].is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(())
}

/// Write a matrix as `.fmat`. Values are narrowed to `f32`; anything that is
/// not finite after narrowing is refused.
pub fn save_matrix(m: &Matrix, path: &Path) -> Result<()> {
    let (values, kind, layer) = match m {
        Matrix::Feature(f) => (
            f.values(),
            match f.unit_kind() {
                UnitKind::Word => "word",
                UnitKind::Tr => "tr",
            },
            f.layer_index(),
        ),
        Matrix::Response(r) => (r.values(), "response", 0),
    };
    let (rows, cols) = values.shape();
    let mut payload = Vec::with_capacity(rows * cols * 4);
    for r in 0..rows {
        for c in 0..cols {
            let v = values[(r, c)] as f32;
            if !v.is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        rows,
        cols,
        dtype: "f32".to_string(),
        kind: kind.to_string(),
        layer,
    };
    let mut bytes = serde_json::to_vec(&header).expect("header serializes");
    bytes.push(b'\n');
    bytes.extend_from_slice(&payload);

    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a `.fmat` file. Response matrices take their subject id from the
/// file stem and get the default TR length.
pub fn load_matrix(path: &Path) -> Result<Matrix> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = Vec::new();
    reader
        .read_until(b'\n', &mut line)
        .map_err(|e| Error::io(path, e))?;
    if line.last() != Some(&b'\n') {
        return Err(Error::MalformedHeader("missing newline after header".into()));
    }
    line.pop();
    let header: Header =
        serde_json::from_slice(&line).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if header.dtype != "f32" {
        return Err(Error::UnsupportedDtype(header.dtype));
    }
    let mut payload = Vec::new();
    reader
        .read_to_end(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    let expected = 4 * header.rows * header.cols;
    if payload.len() != expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let values = DMatrix::from_row_iterator(
        header.rows,
        header.cols,
        payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64),
    );
    match header.kind.as_str() {
        "word" => Ok(Matrix::Feature(FeatureMatrix::new(values, header.layer, UnitKind::Word)?)),
        "tr" => Ok(Matrix::Feature(FeatureMatrix::new(values, header.layer, UnitKind::Tr)?)),
        "response" => {
            let subject = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(Matrix::Response(ResponseMatrix::new(
                values,
                subject,
                DEFAULT_TR_SECONDS,
            )?))
        }
        other => Err(Error::MalformedHeader(format!("unknown kind {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn feature(rows: usize, cols: usize, data: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(DMatrix::from_row_slice(rows, cols, data), 1, UnitKind::Word).unwrap()
    }

    #[test]
    fn two_by_three_payload_is_24_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fmat");
        let m = feature(2, 3, &[1., 2., 3., 4., 5., 6.]);
        save_matrix(&m.clone().into(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(bytes.len() - nl - 1, 24);
        assert_eq!(
            std::str::from_utf8(&bytes[..nl]).unwrap(),
            r#"{"rows":2,"cols":3,"dtype":"f32","kind":"word","layer":1}"#
        );
        // row-major: second value on disk is (0,1)
        assert_eq!(f32::from_le_bytes(bytes[nl + 5..nl + 9].try_into().unwrap()), 2.0);
        let back = load_matrix(&path).unwrap().into_feature().unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn nan_is_refused() {
        let mut v = DMatrix::from_element(2, 2, 1.0);
        v[(1, 0)] = f64::NAN;
        let err = FeatureMatrix::new(v, 1, UnitKind::Word).unwrap_err();
        assert_eq!(err.to_string(), "non-finite value at (1,0)");
    }

    #[test]
    fn out_of_f32_range_is_refused_at_write() {
        let dir = tempfile::tempdir().unwrap();
        let m = feature(1, 2, &[1.0, 1e300]);
        let err = save_matrix(&m.into(), &dir.path().join("x.fmat")).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 0, col: 1 }));
    }

    #[test]
    fn truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fmat");
        save_matrix(&feature(2, 2, &[1., 2., 3., 4.]).into(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, bytes).unwrap();
        let err = load_matrix(&path).unwrap_err();
        assert!(err.to_string().starts_with("truncated payload"), "{err}");
    }

    #[test]
    fn f64_dtype_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.fmat");
        let mut bytes =
            br#"{"rows":1,"cols":1,"dtype":"f64","kind":"word","layer":1}"#.to_vec();
        bytes.push(b'\n');
        bytes.extend_from_slice(&1.0f64.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        let err = load_matrix(&path).unwrap_err();
        assert!(err.to_string().starts_with("unsupported dtype"), "{err}");
    }

    #[test]
    fn malformed_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.fmat");
        fs::write(&path, b"{rows: 1}\n\0\0\0\0").unwrap();
        assert!(matches!(load_matrix(&path), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn response_round_trip_takes_subject_from_stem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub-07.fmat");
        let r = ResponseMatrix::new(DMatrix::from_row_slice(2, 1, &[0.5, -0.25]), "sub-07", 1.5)
            .unwrap();
        save_matrix(&r.clone().into(), &path).unwrap();
        assert_eq!(load_matrix(&path).unwrap().into_response().unwrap(), r);
    }

    #[test]
    fn full_scale_header() {
        // header only; the payload size check is what matters
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.fmat");
        let m = FeatureMatrix::new(DMatrix::zeros(8267, 768), 6, UnitKind::Word).unwrap();
        save_matrix(&m.into(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let h: Header = serde_json::from_slice(&bytes[..nl]).unwrap();
        assert_eq!((h.rows, h.cols, h.layer), (8267, 768, 6));
        assert_eq!(bytes.len() - nl - 1, 8267 * 768 * 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in proptest::collection::vec(-1e30f32..1e30f32, 36),
        ) {
            let data: Vec<f64> = seed.iter().take(rows * cols).map(|&v| v as f64).collect();
            let m = feature(rows, cols, &data);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.fmat");
            save_matrix(&m.clone().into(), &path).unwrap();
            let back = load_matrix(&path).unwrap().into_feature().unwrap();
            for (a, b) in back.values().iter().zip(m.values().iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
