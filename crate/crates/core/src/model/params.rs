use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Ordered segment table; spans partition `[0, total)`.
pub type SegmentTable = Arc<Vec<Segment>>;

/// Flat model weights with a named segment table. All task-vector arithmetic
/// happens on this type.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    segments: SegmentTable,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>, segments: SegmentTable) -> Result<Self> {
        let total = segments.last().map(|s| s.offset + s.len).unwrap_or(0);
        let mut cursor = 0;
        for s in segments.iter() {
            if s.offset != cursor {
                return Err(Error::InvalidArgument(format!(
                    "segment {} starts at {} but previous ended at {}",
                    s.name, s.offset, cursor
                )));
            }
            cursor += s.len;
        }
        if total != values.len() {
            return Err(Error::LengthMismatch {
                expected: total,
                got: values.len(),
            });
        }
        Ok(Self { values, segments })
    }

    /// A single-segment vector, handy for tests and small arithmetic.
    pub fn from_values(values: Vec<f64>) -> Self {
        let segments = Arc::new(vec![Segment {
            name: "all".into(),
            offset: 0,
            len: values.len(),
        }]);
        Self { values, segments }
    }

    pub fn zeros_like(other: &ParameterVector) -> Self {
        Self {
            values: vec![0.0; other.len()],
            segments: other.segments.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn segments(&self) -> &SegmentTable {
        &self.segments
    }

    pub fn same_layout(&self, other: &ParameterVector) -> bool {
        Arc::ptr_eq(&self.segments, &other.segments) || self.segments == other.segments
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let s = self.segments.iter().find(|s| s.name == name)?.clone();
        Some(&mut self.values[s.offset..s.offset + s.len])
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &ParameterVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Element-wise `a·x + b·y`.
    pub fn axpy(a: f64, x: &ParameterVector, b: f64, y: &ParameterVector) -> Result<ParameterVector> {
        if !x.same_layout(y) {
            return Err(Error::SegmentMismatch);
        }
        let values = x
            .values
            .iter()
            .zip(&y.values)
            .map(|(xi, yi)| a * xi + b * yi)
            .collect();
        Ok(ParameterVector {
            values,
            segments: x.segments.clone(),
        })
    }

    /// In-place `self += a·x`.
    pub fn add_scaled(&mut self, a: f64, x: &ParameterVector) -> Result<()> {
        if !self.same_layout(x) {
            return Err(Error::SegmentMismatch);
        }
        for (s, xi) in self.values.iter_mut().zip(&x.values) {
            *s += a * xi;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    /// Cosine similarity; zero when either side is the zero vector.
    pub fn cosine(&self, other: &ParameterVector) -> f64 {
        let d = self.norm() * other.norm();
        if d == 0.0 {
            0.0
        } else {
            self.dot(other) / d
        }
    }
}

pub fn param_axpy(a: f64, x: &ParameterVector, b: f64, y: &ParameterVector) -> Result<ParameterVector> {
    ParameterVector::axpy(a, x, b, y)
}
