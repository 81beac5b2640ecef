//! Per-chart wavelet expansions: greedy and least-squares coefficient
//! fitting, fast evaluation, error metrics and rate fits.

mod dictionary;
mod grid;
mod lsq;
mod metrics;
mod oga;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{rect, trapezoid, FrameParams, WaveletIndex, WaveletTerm};

pub use dictionary::{default_spacing, quad_inner_product, term_norm, Dictionary, InnerProduct, SparseAtom};
pub use grid::{counts_for_spacing, Grid};
pub use lsq::{truncate_scale_k, LsqFit, LsqOptions};
pub use metrics::{l2_error, rate_fit, sup_error, sup_grid, Metric, RateReport};
pub use oga::{oga_approximate, oga_on_samples, OgaRun, StopReason, DEFAULT_MAX_CONDITION};

#[derive(Clone, Debug, PartialEq)]
pub struct Expansion {
    pub chart_id: usize,
    terms: Vec<(WaveletIndex, f64)>,
}

impl Expansion {
    pub fn new(chart_id: usize, terms: Vec<(WaveletIndex, f64)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let d = terms.first().map(|(i, _)| i.dim());
        for (idx, c) in &terms {
            if !c.is_finite() {
                return Err(Error::NonFinite("expansion coefficient"));
            }
            if Some(idx.dim()) != d {
                return Err(Error::DimensionMismatch {
                    expected: d.unwrap_or(0),
                    got: idx.dim(),
                });
            }
            if !seen.insert(idx) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate term (k={}, n={:?})",
                    idx.scale, idx.lattice
                )));
            }
        }
        Ok(Self { chart_id, terms })
    }

    pub fn empty(chart_id: usize) -> Self {
        Self {
            chart_id,
            terms: Vec::new(),
        }
    }

    pub fn terms(&self) -> &[(WaveletIndex, f64)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Sum of absolute coefficients after scaling each term to unit norm `norm`.
    pub fn l1_norm(&self, norm: f64) -> f64 {
        self.terms.iter().map(|(_, c)| c.abs() * norm).sum()
    }

    /// Direct term-by-term evaluation.
    pub fn eval(&self, u: &[f64], params: &FrameParams) -> f64 {
        self.terms
            .iter()
            .map(|(idx, c)| c * WaveletTerm::new(idx, params).eval(u))
            .sum()
    }

    pub fn to_file(&self, params: &FrameParams) -> ExpansionFile {
        ExpansionFile {
            chart_id: self.chart_id,
            terms: self
                .terms
                .iter()
                .map(|(idx, c)| TermRecord {
                    k: idx.scale,
                    b: idx.offset(params),
                    coeff: *c,
                })
                .collect(),
        }
    }

    pub fn from_file(file: &ExpansionFile, params: &FrameParams) -> Result<Self> {
        let terms = file
            .terms
            .iter()
            .map(|t| {
                params.check_dim(t.b.len())?;
                Ok((WaveletIndex::from_offset(t.k, &t.b)?, t.coeff))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.chart_id, terms)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionFile {
    pub chart_id: usize,
    pub terms: Vec<TermRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermRecord {
    pub k: i32,
    pub b: Vec<f64>,
    pub coeff: f64,
}

/// Evaluates an expansion by visiting, per scale, only the lattice offsets
/// whose support contains the query point.
#[derive(Clone, Debug)]
pub struct ExpansionEvaluator {
    d: usize,
    scales: Vec<ScaleTable>,
}

#[derive(Clone, Debug)]
struct ScaleTable {
    spacing: f64,
    fine: f64,
    coarse: f64,
    amplitude: f64,
    reach: f64,
    lo: Vec<i64>,
    dims: Vec<usize>,
    coeffs: Vec<f64>,
}

const MAX_TABLE: usize = 50_000_000;

impl ExpansionEvaluator {
    pub fn new(expansion: &Expansion, params: &FrameParams) -> Result<Self> {
        let d = params.dim();
        let mut by_scale: std::collections::BTreeMap<i32, Vec<(&[i64], f64)>> = Default::default();
        for (idx, c) in expansion.terms() {
            params.check_dim(idx.dim())?;
            by_scale.entry(idx.scale).or_default().push((&idx.lattice, *c));
        }
        let mut scales = Vec::new();
        for (k, entries) in by_scale {
            let mut lo = vec![i64::MAX; d];
            let mut hi = vec![i64::MIN; d];
            for (n, _) in &entries {
                for j in 0..d {
                    lo[j] = lo[j].min(n[j]);
                    hi[j] = hi[j].max(n[j]);
                }
            }
            let dims: Vec<usize> = (0..d).map(|j| (hi[j] - lo[j] + 1) as usize).collect();
            let size = dims.iter().try_fold(1usize, |acc, &x| acc.checked_mul(x)).unwrap_or(usize::MAX);
            if size > MAX_TABLE {
                return Err(Error::InvalidParameter(format!("scale {k} terms spread over {size} lattice cells")));
            }
            let mut coeffs = vec![0.0; size];
            for (n, c) in &entries {
                let mut flat = 0usize;
                for j in 0..d {
                    flat = flat * dims[j] + (n[j] - lo[j]) as usize;
                }
                coeffs[flat] += c;
            }
            let term = WaveletTerm::new(&WaveletIndex::new(k, vec![0; d])?, params);
            scales.push(ScaleTable {
                spacing: params.spacing(k),
                fine: term.fine_dilation(),
                coarse: term.coarse_dilation(),
                amplitude: term.amplitude(),
                reach: term.half_width(),
                lo,
                dims,
                coeffs,
            });
        }
        Ok(Self { d, scales })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.eval_shifted(u, 0.0)
    }

    /// Evaluates with `shift` added inside both rect bodies of every term.
    /// With `shift = P - 2(m-d)` for a normal profile `P` this is the
    /// ambient extension of the expansion.
    pub fn eval_shifted(&self, u: &[f64], shift: f64) -> f64 {
        let d = self.d;
        let bias = 2.0 * (d as f64 - 1.0) - shift;
        let mut total = 0.0;
        let mut fine_t: Vec<Vec<f64>> = vec![Vec::new(); d];
        let mut coarse_t: Vec<Vec<f64>> = vec![Vec::new(); d];
        let mut first = vec![0usize; d];
        'scales: for s in &self.scales {
            for j in 0..d {
                let a = ((u[j] - s.reach) / s.spacing).ceil() as i64;
                let b = ((u[j] + s.reach) / s.spacing).floor() as i64;
                let a = a.max(s.lo[j]);
                let b = b.min(s.lo[j] + s.dims[j] as i64 - 1);
                if a > b {
                    continue 'scales;
                }
                first[j] = (a - s.lo[j]) as usize;
                fine_t[j].clear();
                coarse_t[j].clear();
                for n in a..=b {
                    let y = u[j] - n as f64 * s.spacing;
                    fine_t[j].push(trapezoid(s.fine * y));
                    coarse_t[j].push(trapezoid(s.coarse * y));
                }
            }
            let mut idx = vec![0usize; d];
            loop {
                let mut flat = 0usize;
                let (mut fs, mut cs) = (0.0, 0.0);
                for j in 0..d {
                    flat = flat * s.dims[j] + first[j] + idx[j];
                    fs += fine_t[j][idx[j]];
                    cs += coarse_t[j][idx[j]];
                }
                let c = s.coeffs[flat];
                if c != 0.0 {
                    total += c * s.amplitude * (rect(fs - bias) - 0.5 * rect(cs - bias));
                }
                let mut j = d;
                loop {
                    if j == 0 {
                        continue 'scales;
                    }
                    j -= 1;
                    idx[j] += 1;
                    if idx[j] < fine_t[j].len() {
                        break;
                    }
                    idx[j] = 0;
                }
            }
        }
        total
    }
}
