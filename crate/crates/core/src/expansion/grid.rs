//! Regular tensor grids over boxes, used as the discrete inner-product space
//! for greedy selection and least-squares fits.

use crate::domain::AxisBox;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    region: AxisBox,
    counts: Vec<usize>,
    steps: Vec<f64>,
    /// Midpoint grids place nodes at cell centers; closed grids include both endpoints.
    closed: bool,
    points: Vec<f64>,
}

impl Grid {
    /// Cell-centered grid with `counts[j]` cells along axis `j`; every node
    /// carries the cell volume as quadrature weight.
    pub fn midpoint(region: &AxisBox, counts: &[usize]) -> Result<Self> {
        Self::build(region, counts, false)
    }

    /// Grid including the box faces, for sup-norm sampling.
    pub fn closed(region: &AxisBox, counts: &[usize]) -> Result<Self> {
        Self::build(region, counts, true)
    }

    /// Midpoint grid with spacing at most `h` on every axis.
    pub fn with_spacing(region: &AxisBox, h: f64) -> Result<Self> {
        Self::midpoint(region, &counts_for_spacing(region, h)?)
    }

    fn build(region: &AxisBox, counts: &[usize], closed: bool) -> Result<Self> {
        let d = region.dim();
        if counts.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: counts.len(),
            });
        }
        if counts.iter().any(|&c| c == 0 || (closed && c < 2)) {
            return Err(Error::InvalidParameter(format!("grid counts {counts:?} too small")));
        }
        let steps: Vec<f64> = (0..d)
            .map(|j| {
                let len = region.hi()[j] - region.lo()[j];
                if closed {
                    len / (counts[j] - 1) as f64
                } else {
                    len / counts[j] as f64
                }
            })
            .collect();
        let total: usize = counts.iter().product();
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                (0..counts[j])
                    .map(|i| {
                        if closed {
                            if i + 1 == counts[j] {
                                region.hi()[j]
                            } else {
                                region.lo()[j] + i as f64 * steps[j]
                            }
                        } else {
                            region.lo()[j] + (i as f64 + 0.5) * steps[j]
                        }
                    })
                    .collect()
            })
            .collect();
        let mut points = Vec::with_capacity(total * d);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            points.extend(idx.iter().enumerate().map(|(j, &i)| axes[j][i]));
            // last axis fastest
            for j in (0..d).rev() {
                idx[j] += 1;
                if idx[j] < counts[j] {
                    break;
                }
                idx[j] = 0;
            }
        }
        Ok(Self {
            region: region.clone(),
            counts: counts.to_vec(),
            steps,
            closed,
            points,
        })
    }

    pub fn region(&self) -> &AxisBox {
        &self.region
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.points[i * d..(i + 1) * d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim())
    }

    /// Quadrature weight of each node (cell volume) for midpoint grids.
    pub fn weight(&self) -> f64 {
        self.steps.iter().product()
    }

    pub fn sample<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        self.points().map(f).collect()
    }

    pub fn try_sample<F: Fn(&[f64]) -> Result<f64>>(&self, f: F) -> Result<Vec<f64>> {
        self.points().map(f).collect()
    }

    /// Weighted inner product `sum_i w a_i b_i`.
    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weight() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.dot(a, a).sqrt()
    }

    /// Indices of nodes inside the closed box `[lo, hi]`, in grid order.
    pub fn nodes_in(&self, lo: &[f64], hi: &[f64]) -> Vec<usize> {
        let d = self.dim();
        let mut ranges = Vec::with_capacity(d);
        for j in 0..d {
            let origin = self.region.lo()[j] + if self.closed { 0.0 } else { 0.5 * self.steps[j] };
            let h = self.steps[j];
            let n = self.counts[j] as i64;
            let first = if h > 0.0 { ((lo[j] - origin) / h).ceil() as i64 } else { 0 };
            let last = if h > 0.0 { ((hi[j] - origin) / h).floor() as i64 } else { n - 1 };
            let first = first.max(0);
            let last = last.min(n - 1);
            if first > last {
                return Vec::new();
            }
            ranges.push((first as usize, last as usize));
        }
        let mut strides = vec![1usize; d];
        for j in (0..d.saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * self.counts[j + 1];
        }
        let total: usize = ranges.iter().map(|(a, b)| b - a + 1).product();
        let mut out = Vec::with_capacity(total);
        let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        for _ in 0..total {
            out.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
            for j in (0..d).rev() {
                idx[j] += 1;
                if idx[j] <= ranges[j].1 {
                    break;
                }
                idx[j] = ranges[j].0;
            }
        }
        out
    }
}

/// Cell counts giving spacing at most `h` per axis (at least one cell).
pub fn counts_for_spacing(region: &AxisBox, h: f64) -> Result<Vec<usize>> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("grid spacing must be positive, got {h}")));
    }
    Ok((0..region.dim())
        .map(|j| (((region.hi()[j] - region.lo()[j]) / h).ceil() as usize).max(1))
        .collect())
}
