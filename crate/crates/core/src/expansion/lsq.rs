//! Least-squares fit over all frame terms up to a scale.

use faer::{Col, Mat, Side};
use log::debug;
use serde::Serialize;

use crate::domain::AxisBox;
use crate::error::{Error, Result};
use crate::frame::{lattice_offsets, FrameParams, WaveletIndex, WaveletTerm, MAX_SCALE, MIN_SCALE};

use super::dictionary::default_spacing;
use super::grid::{counts_for_spacing, Grid};
use super::Expansion;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LsqOptions {
    pub k_min: i32,
    /// Minimum ratio of grid points to terms.
    pub oversample: f64,
    /// Eigenvalues of the normal matrix below `rel_cutoff * max` are treated as zero.
    pub rel_cutoff: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            k_min: -2,
            oversample: 4.0,
            rel_cutoff: 1e-12,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LsqFit {
    pub expansion: Expansion,
    pub grid_points: usize,
    pub terms: usize,
    pub rank: usize,
    /// RMS residual on the fit grid, `(sum w (f - Ac)^2 / |box|)^{1/2}`.
    pub rms_residual: f64,
}

/// All terms with `k_min <= k <= k_max` meeting `region`, fitted to `f` by
/// least squares on a midpoint grid with spacing at most `2^{-(k_max+2)/d}`.
pub fn truncate_scale_k<F: Fn(&[f64]) -> f64>(
    f: F,
    params: &FrameParams,
    region: &AxisBox,
    k_max: i32,
    opts: &LsqOptions,
) -> Result<LsqFit> {
    params.check_dim(region.dim())?;
    let d = params.dim();
    if opts.k_min > k_max || opts.k_min < MIN_SCALE || k_max > MAX_SCALE {
        return Err(Error::InvalidParameter(format!(
            "scale range [{}, {k_max}] must be ordered and inside [{MIN_SCALE}, {MAX_SCALE}]",
            opts.k_min
        )));
    }
    if !(region.volume() > 0.0) {
        return Err(Error::InvalidBox("fit box has zero volume".into()));
    }
    let mut indices: Vec<WaveletIndex> = Vec::new();
    for k in opts.k_min..=k_max {
        indices.extend(lattice_offsets(k, region, params)?);
    }
    let n = indices.len();

    let mut counts = counts_for_spacing(region, default_spacing(d, k_max))?;
    let total: usize = counts.iter().product();
    let want = (opts.oversample * n as f64).ceil();
    if (total as f64) < want {
        let grow = (want / total as f64).powf(1.0 / d as f64);
        counts.iter_mut().for_each(|c| *c = (*c as f64 * grow).ceil() as usize);
    }
    let grid = Grid::midpoint(region, &counts)?;
    let p = grid.len();
    let rhs_vals = grid.sample(&f);
    if rhs_vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares target samples"));
    }

    // design matrix by rows: (term, value) pairs active at each node
    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); p];
    for (col, idx) in indices.iter().enumerate() {
        let term = WaveletTerm::new(idx, params);
        let support = idx.support_box(params);
        for node in grid.nodes_in(support.lo(), support.hi()) {
            let v = term.eval(grid.point(node));
            if v != 0.0 {
                rows[node].push((col as u32, v));
            }
        }
    }
    let w = grid.weight();
    let mut normal = Mat::<f64>::zeros(n, n);
    let mut rhs = Col::<f64>::zeros(n);
    for (row, &y) in rows.iter().zip(&rhs_vals) {
        for (a, &(i, vi)) in row.iter().enumerate() {
            let i = i as usize;
            rhs[i] += w * vi * y;
            for &(j, vj) in &row[a..] {
                // row entries are in increasing column order, so j >= i
                normal[(j as usize, i)] += w * vi * vj;
            }
        }
    }
    for j in 0..n {
        for i in 0..j {
            normal[(i, j)] = normal[(j, i)];
        }
    }

    let evd = normal
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("eigendecomposition failed: {e:?}")))?;
    let u = evd.U();
    let s = evd.S().column_vector();
    let lmax = (0..n).map(|i| s[i]).fold(0.0f64, f64::max);
    let cutoff = opts.rel_cutoff * lmax;
    let inv: Vec<f64> = (0..n).map(|i| if s[i] > cutoff { 1.0 / s[i] } else { 0.0 }).collect();
    let rank = inv.iter().filter(|&&v| v != 0.0).count();
    if rank < n {
        debug!(
            "normal equations rank-deficient at K={k_max}: pseudo-inverse drops {} of {n} directions",
            n - rank
        );
    }
    let pinv_apply = |b: &Col<f64>| -> Col<f64> {
        let mut t = u.transpose() * b;
        for i in 0..n {
            t[i] *= inv[i];
        }
        u * &t
    };
    let mut coef = pinv_apply(&rhs);
    // one step of iterative refinement on the normal equations
    let resid = &rhs - &normal * &coef;
    coef = &coef + pinv_apply(&resid);

    let mut sq = 0.0;
    for (row, &y) in rows.iter().zip(&rhs_vals) {
        let fit: f64 = row.iter().map(|&(i, v)| v * coef[i as usize]).sum();
        sq += w * (y - fit) * (y - fit);
    }
    let terms: Vec<(WaveletIndex, f64)> = indices.into_iter().enumerate().map(|(i, idx)| (idx, coef[i])).collect();
    Ok(LsqFit {
        expansion: Expansion::new(0, terms)?,
        grid_points: p,
        terms: n,
        rank,
        rms_residual: (sq / region.volume()).sqrt(),
    })
}
