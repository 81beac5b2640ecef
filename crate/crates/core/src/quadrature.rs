//! Tensor-product midpoint quadrature with Richardson extrapolation, and a
//! seeded Monte Carlo estimator for higher-dimensional integrals.
//!
//! Integrands are vector valued so that several moments can share one pass
//! over the grid. Each axis is split at caller-supplied cut points (kinks of
//! the integrand); every segment is then refined uniformly, so cell sizes
//! halve exactly from one level to the next.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::AxisBox;
use crate::error::{Error, Result};

/// Per-axis cut points, including both endpoints.
#[derive(Clone, Debug)]
pub struct Partition {
    axes: Vec<Vec<f64>>,
    base_cells: Vec<Vec<usize>>,
}

impl Partition {
    /// Builds a partition of `domain`, adding every cut that falls strictly
    /// inside the domain. `cells_per_longest` sets the coarsest resolution:
    /// the longest segment gets that many cells and shorter ones proportionally
    /// fewer (at least one).
    pub fn new(domain: &AxisBox, cuts: &[Vec<f64>], cells_per_longest: usize) -> Result<Self> {
        if !cuts.is_empty() && cuts.len() != domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                got: cuts.len(),
            });
        }
        let mut axes = Vec::with_capacity(domain.dim());
        for j in 0..domain.dim() {
            let (lo, hi) = (domain.lo()[j], domain.hi()[j]);
            let mut pts = vec![lo, hi];
            if let Some(c) = cuts.get(j) {
                pts.extend(c.iter().copied().filter(|&v| v > lo && v < hi));
            }
            pts.sort_by(|a, b| a.total_cmp(b));
            pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + b.abs()));
            axes.push(pts);
        }
        let longest = axes
            .iter()
            .flat_map(|p| p.windows(2).map(|w| w[1] - w[0]))
            .fold(0.0_f64, f64::max);
        let h0 = if longest > 0.0 {
            longest / cells_per_longest.max(1) as f64
        } else {
            1.0
        };
        let base_cells = axes
            .iter()
            .map(|p| {
                p.windows(2)
                    .map(|w| (((w[1] - w[0]) / h0) - 1e-9).ceil().max(1.0) as usize)
                    .collect()
            })
            .collect();
        Ok(Self { axes, base_cells })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Midpoint nodes and weights along each axis at refinement `level`.
    pub fn nodes(&self, level: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        let factor = 1usize << level;
        self.axes
            .iter()
            .zip(&self.base_cells)
            .map(|(pts, cells)| {
                let mut nodes = Vec::new();
                let mut weights = Vec::new();
                for (w, &c) in pts.windows(2).zip(cells) {
                    let n = c * factor;
                    let h = (w[1] - w[0]) / n as f64;
                    for i in 0..n {
                        nodes.push(w[0] + (i as f64 + 0.5) * h);
                        weights.push(h);
                    }
                }
                (nodes, weights)
            })
            .collect()
    }

    pub fn points_at(&self, level: usize) -> usize {
        self.base_cells
            .iter()
            .map(|c| c.iter().sum::<usize>() << level)
            .product()
    }
}

/// Sums `w(x) f(x)` over a tensor grid given per-axis nodes and weights.
pub fn tensor_sum<F>(nodes: &[(Vec<f64>, Vec<f64>)], n_out: usize, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let d = nodes.len();
    let mut acc = vec![0.0; n_out];
    if nodes.iter().any(|(n, _)| n.is_empty()) {
        return acc;
    }
    let mut idx = vec![0usize; d];
    let mut x: Vec<f64> = nodes.iter().map(|(n, _)| n[0]).collect();
    let mut out = vec![0.0; n_out];
    let mut line = vec![0.0; n_out];
    let inner = d - 1;
    loop {
        let outer_w: f64 = (0..inner).map(|j| nodes[j].1[idx[j]]).product();
        line.iter_mut().for_each(|v| *v = 0.0);
        let (xs, ws) = &nodes[inner];
        for (xi, wi) in xs.iter().zip(ws) {
            x[inner] = *xi;
            out.iter_mut().for_each(|v| *v = 0.0);
            f(&x, &mut out);
            for (l, o) in line.iter_mut().zip(&out) {
                *l += wi * o;
            }
        }
        for (a, l) in acc.iter_mut().zip(&line) {
            *a += outer_w * l;
        }
        // odometer over the outer axes
        let mut j = inner;
        loop {
            if j == 0 {
                return acc;
            }
            j -= 1;
            idx[j] += 1;
            if idx[j] < nodes[j].0.len() {
                x[j] = nodes[j].0[idx[j]];
                break;
            }
            idx[j] = 0;
            x[j] = nodes[j].0[0];
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Richardson {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub min_level: usize,
    pub max_level: usize,
    pub cells_per_longest: usize,
    /// Refuse to start a level with more grid points than this.
    pub max_points: usize,
}

impl Default for Richardson {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-14,
            min_level: 2,
            max_level: 12,
            cells_per_longest: 2,
            max_points: 60_000_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Integral {
    pub values: Vec<f64>,
    /// Difference between the last two extrapolated estimates (max over components).
    pub error: f64,
    pub level: usize,
    pub evaluations: usize,
    pub converged: bool,
}

impl Integral {
    pub fn value(&self) -> f64 {
        self.values[0]
    }
}

/// Midpoint rule on successively halved grids, extrapolated with a
/// Richardson table assuming an error expansion in h^2, h^3, h^4, ...
/// (integrands with kinks produce odd powers).
pub fn integrate<F>(partition: &Partition, n_out: usize, opts: &Richardson, mut f: F) -> Result<Integral>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut table: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut evaluations = 0usize;
    let mut last_error = f64::INFINITY;
    for level in 0..=opts.max_level {
        let points = partition.points_at(level);
        if level > 0 && points > opts.max_points {
            break;
        }
        let raw = tensor_sum(&partition.nodes(level), n_out, &mut f);
        evaluations += points;
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("quadrature"));
        }
        let mut row = vec![raw];
        for j in 1..=level {
            let factor = 2f64.powi(j as i32 + 1) - 1.0;
            let prev_row = &table[level - 1][j - 1];
            let cur = &row[j - 1];
            let next: Vec<f64> = cur
                .iter()
                .zip(prev_row)
                .map(|(c, p)| c + (c - p) / factor)
                .collect();
            row.push(next);
        }
        if level > 0 {
            let best = &row[level];
            let prev_best = &table[level - 1][level - 1];
            let err = best
                .iter()
                .zip(prev_best)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let scale = best.iter().map(|v| v.abs()).fold(0.0, f64::max);
            last_error = err;
            if level >= opts.min_level && (err <= opts.rel_tol * scale || err <= opts.abs_tol) {
                return Ok(Integral {
                    values: best.clone(),
                    error: err,
                    level,
                    evaluations,
                    converged: true,
                });
            }
        }
        table.push(row);
    }
    let level = table.len().saturating_sub(1);
    let values = table
        .last()
        .map(|r| r[r.len() - 1].clone())
        .unwrap_or_else(|| vec![0.0; n_out]);
    Ok(Integral {
        values,
        error: last_error,
        level,
        evaluations,
        converged: false,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct MonteCarloEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Plain Monte Carlo over a box with a seeded ChaCha stream.
pub fn monte_carlo<F>(domain: &AxisBox, samples: usize, seed: u64, mut f: F) -> Result<MonteCarloEstimate>
where
    F: FnMut(&[f64]) -> f64,
{
    if samples < 2 {
        return Err(Error::InvalidParameter("monte carlo needs at least 2 samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = domain.dim();
    let mut x = vec![0.0; d];
    let (mut mean, mut m2) = (0.0, 0.0);
    for i in 0..samples {
        for j in 0..d {
            x[j] = rng.gen_range(domain.lo()[j]..=domain.hi()[j]);
        }
        let v = f(&x);
        if !v.is_finite() {
            return Err(Error::NonFinite("monte carlo integrand"));
        }
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let vol = domain.volume();
    let var = m2 / (samples - 1) as f64;
    Ok(MonteCarloEstimate {
        value: vol * mean,
        std_error: vol * (var / samples as f64).sqrt(),
        samples,
    })
}
