//! Orthogonal greedy algorithm in the discrete `L2(box)` of a dictionary grid.

use log::debug;
use serde::Serialize;

use crate::error::{Error, Result};

use super::dictionary::Dictionary;
use super::Expansion;

/// Selection stops before an atom that would push the Gram condition
/// estimate past this value.
pub const DEFAULT_MAX_CONDITION: f64 = 1e12;

/// Residual norms at or below this fraction of `||f||` count as an exact fit.
const EXACT_FIT: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    ExactFit,
    IllConditioned { condition: f64 },
    Exhausted,
}

/// A finished greedy run. Prefixes of the selection are themselves valid
/// runs: the first `n` steps are identical for any budget `N >= n`.
#[derive(Clone, Debug)]
pub struct OgaRun {
    selected: Vec<usize>,
    /// Column `j` holds `R[0..=j, j]` of `G = Q R`.
    r_cols: Vec<Vec<f64>>,
    /// `<f, q_j>`.
    z: Vec<f64>,
    residual_norms: Vec<f64>,
    stop: StopReason,
    residual: Vec<f64>,
}

pub fn oga_approximate<F: Fn(&[f64]) -> f64>(f: F, dict: &Dictionary, n: usize) -> Result<OgaRun> {
    let values = dict.grid().sample(f);
    oga_on_samples(&values, dict, n)
}

/// Runs up to `n` greedy steps on grid samples of the target.
pub fn oga_on_samples(values: &[f64], dict: &Dictionary, n: usize) -> Result<OgaRun> {
    oga_with_condition(values, dict, n, DEFAULT_MAX_CONDITION)
}

pub(crate) fn oga_with_condition(values: &[f64], dict: &Dictionary, n: usize, max_condition: f64) -> Result<OgaRun> {
    if n == 0 {
        return Err(Error::InvalidParameter("OGA needs at least one step".into()));
    }
    let grid = dict.grid();
    if values.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("OGA target samples"));
    }
    let w = grid.weight();
    let mut r = values.to_vec();
    let f_norm = grid.norm(&r);
    let mut residual_norms = vec![f_norm];
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut r_cols: Vec<Vec<f64>> = Vec::new();
    let mut z = Vec::new();
    let mut selected: Vec<usize> = Vec::new();
    let mut taken = vec![false; dict.len()];
    let (mut diag_min, mut diag_max) = (f64::INFINITY, 0.0f64);
    let mut stop = StopReason::Budget;

    while selected.len() < n {
        if residual_norms.last().copied().unwrap_or(0.0) <= EXACT_FIT * f_norm {
            stop = StopReason::ExactFit;
            break;
        }
        // strict comparison keeps the lowest (k, b) among ties
        let mut best: Option<(usize, f64)> = None;
        for (i, atom) in dict.atoms().iter().enumerate() {
            if taken[i] {
                continue;
            }
            let c = (w * atom.dot(&r)).abs();
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((i, c));
            }
        }
        let Some((pick, _)) = best else {
            stop = StopReason::Exhausted;
            break;
        };

        // orthogonalize the atom against the current basis, twice
        let mut v = vec![0.0; grid.len()];
        dict.atom(pick).add_to(&mut v, 1.0);
        let mut col = vec![0.0; q.len() + 1];
        for _ in 0..2 {
            for (j, qj) in q.iter().enumerate() {
                let p = grid.dot(qj, &v);
                col[j] += p;
                v.iter_mut().zip(qj).for_each(|(a, b)| *a -= p * b);
            }
        }
        let rho = grid.norm(&v);
        let lo = diag_min.min(rho);
        let hi = diag_max.max(rho);
        let condition = if lo > 0.0 { (hi / lo).powi(2) } else { f64::INFINITY };
        if condition > max_condition {
            debug!("OGA stopped after {} steps: Gram condition estimate {condition:.3e}", selected.len());
            stop = StopReason::IllConditioned { condition };
            break;
        }
        diag_min = lo;
        diag_max = hi;
        col[q.len()] = rho;
        v.iter_mut().for_each(|a| *a /= rho);

        let zj = grid.dot(&v, &r);
        r.iter_mut().zip(&v).for_each(|(a, b)| *a -= zj * b);
        // second projection guards against drift in long runs
        let again = grid.dot(&v, &r);
        r.iter_mut().zip(&v).for_each(|(a, b)| *a -= again * b);

        taken[pick] = true;
        selected.push(pick);
        q.push(v);
        r_cols.push(col);
        z.push(zj + again);
        residual_norms.push(grid.norm(&r));
    }
    Ok(OgaRun {
        selected,
        r_cols,
        z,
        residual_norms,
        stop,
        residual: r,
    })
}

impl OgaRun {
    pub fn steps(&self) -> usize {
        self.selected.len()
    }

    /// Dictionary positions in selection order.
    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    /// `||r_0|| = ||f||, ||r_1||, ..., ||r_steps||`.
    pub fn residual_norms(&self) -> &[f64] {
        &self.residual_norms
    }

    pub fn stop_reason(&self) -> &StopReason {
        &self.stop
    }

    /// Grid samples of the final residual.
    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    /// Coefficients on the unit-norm atoms of the projection onto the first
    /// `n` selections (clamped to the number of steps taken).
    pub fn normalized_coefficients(&self, n: usize) -> Vec<f64> {
        let n = n.min(self.steps());
        let mut beta = self.z[..n].to_vec();
        for j in (0..n).rev() {
            beta[j] /= self.r_cols[j][j];
            let bj = beta[j];
            for (i, b) in beta.iter_mut().enumerate().take(j) {
                *b -= self.r_cols[j][i] * bj;
            }
        }
        beta
    }

    /// The `n`-term approximant as a frame expansion (raw `psi_{k,b}` coefficients).
    pub fn expansion(&self, dict: &Dictionary, chart_id: usize, n: usize) -> Result<Expansion> {
        let beta = self.normalized_coefficients(n);
        let terms = beta
            .iter()
            .zip(&self.selected)
            .map(|(b, &i)| (dict.indices()[i].clone(), b / dict.norms()[i]))
            .collect();
        Expansion::new(chart_id, terms)
    }
}
