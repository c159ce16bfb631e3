//! Serde helpers: complex matrices as `{rows, cols, data}` with interleaved
//! re/im entries in row-major order.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::tensor::{c64, CMatrix};

#[derive(Serialize, Deserialize)]
pub struct DenseComplex {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&CMatrix> for DenseComplex {
    fn from(m: &CMatrix) -> Self {
        let mut data = Vec::with_capacity(2 * m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)].re);
                data.push(m[(i, j)].im);
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl DenseComplex {
    pub fn to_matrix(&self) -> Result<CMatrix, String> {
        if self.data.len() != 2 * self.rows * self.cols {
            return Err(format!(
                "{} numbers for a {}x{} complex matrix",
                self.data.len(),
                self.rows,
                self.cols
            ));
        }
        Ok(DMatrix::from_fn(self.rows, self.cols, |i, j| {
            let k = 2 * (i * self.cols + j);
            c64(self.data[k], self.data[k + 1])
        }))
    }
}

pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
    DenseComplex::from(m).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMatrix, D::Error> {
    DenseComplex::deserialize(d)?.to_matrix().map_err(serde::de::Error::custom)
}
