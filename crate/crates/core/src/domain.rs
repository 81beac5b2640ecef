//! Axis-aligned boxes in R^d.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl AxisBox {
    /// Degenerate boxes (`lo == hi` on some axis) are allowed; inverted ones are not.
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() {
            return Err(Error::InvalidBox("zero-dimensional box".into()));
        }
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        for (j, (a, b)) in lo.iter().zip(&hi).enumerate() {
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::InvalidBox(format!("axis {j} is unbounded")));
            }
            if a > b {
                return Err(Error::InvalidBox(format!("axis {j} is inverted: [{a}, {b}]")));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(d: usize, half_width: f64) -> Result<Self> {
        Self::new(vec![-half_width; d], vec![half_width; d])
    }

    pub fn centered(center: &[f64], half_width: f64) -> Result<Self> {
        Self::new(
            center.iter().map(|c| c - half_width).collect(),
            center.iter().map(|c| c + half_width).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    /// Closed intersection; `None` when the boxes are disjoint.
    pub fn intersect(&self, other: &AxisBox) -> Option<AxisBox> {
        if other.dim() != self.dim() {
            return None;
        }
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for j in 0..self.dim() {
            let a = self.lo[j].max(other.lo[j]);
            let b = self.hi[j].min(other.hi[j]);
            if a > b {
                return None;
            }
            lo.push(a);
            hi.push(b);
        }
        Some(AxisBox { lo, hi })
    }

    pub fn expanded(&self, margin: f64) -> AxisBox {
        AxisBox {
            lo: self.lo.iter().map(|a| a - margin).collect(),
            hi: self.hi.iter().map(|b| b + margin).collect(),
        }
    }
}
