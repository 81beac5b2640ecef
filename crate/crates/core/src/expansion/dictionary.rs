use log::debug;

use crate::domain::AxisBox;
use crate::error::{Error, Result};
use crate::frame::{lattice_offsets, FrameParams, WaveletIndex, WaveletTerm, MAX_SCALE, MIN_SCALE};
use crate::quadrature::{integrate, monte_carlo, Partition, Richardson};

use super::grid::Grid;

/// Samples of one unit-normalized atom on the nodes where it can be nonzero.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAtom {
    pub nodes: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseAtom {
    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.nodes
            .iter()
            .zip(&self.values)
            .map(|(&i, v)| v * dense[i as usize])
            .sum()
    }

    pub fn add_to(&self, dense: &mut [f64], scale: f64) {
        for (&i, v) in self.nodes.iter().zip(&self.values) {
            dense[i as usize] += scale * v;
        }
    }
}

/// Grid spacing that resolves the finest scale `k_max`: `2^{-(k_max+2)/d}`.
pub fn default_spacing(d: usize, k_max: i32) -> f64 {
    (-(k_max as f64 + 2.0) / d as f64).exp2()
}

/// The truncated frame over a box, with every element sampled on a grid and
/// normalized to unit norm in the grid's discrete `L2(box)`.
#[derive(Clone, Debug)]
pub struct Dictionary {
    params: FrameParams,
    grid: Grid,
    k_min: i32,
    k_max: i32,
    indices: Vec<WaveletIndex>,
    norms: Vec<f64>,
    atoms: Vec<SparseAtom>,
}

impl Dictionary {
    pub fn new(params: &FrameParams, region: &AxisBox, k_min: i32, k_max: i32) -> Result<Self> {
        let grid = Grid::with_spacing(region, default_spacing(params.dim(), k_max))?;
        Self::on_grid(params, grid, k_min, k_max)
    }

    pub fn on_grid(params: &FrameParams, grid: Grid, k_min: i32, k_max: i32) -> Result<Self> {
        params.check_dim(grid.dim())?;
        if k_min > k_max || k_min < MIN_SCALE || k_max > MAX_SCALE {
            return Err(Error::InvalidParameter(format!(
                "scale range [{k_min}, {k_max}] must be ordered and inside [{MIN_SCALE}, {MAX_SCALE}]"
            )));
        }
        if !(grid.region().volume() > 0.0) {
            return Err(Error::InvalidBox("dictionary box has zero volume".into()));
        }
        let mut indices = Vec::new();
        let mut norms = Vec::new();
        let mut atoms = Vec::new();
        let mut dropped = 0usize;
        for k in k_min..=k_max {
            for idx in lattice_offsets(k, grid.region(), params)? {
                let term = WaveletTerm::new(&idx, params);
                let support = idx.support_box(params);
                let nodes = grid.nodes_in(support.lo(), support.hi());
                let mut kept = Vec::with_capacity(nodes.len());
                let mut values = Vec::with_capacity(nodes.len());
                for i in nodes {
                    let v = term.eval(grid.point(i));
                    if v != 0.0 {
                        kept.push(i as u32);
                        values.push(v);
                    }
                }
                let norm = (grid.weight() * values.iter().map(|v| v * v).sum::<f64>()).sqrt();
                if !(norm > 0.0) {
                    // support only grazes the box between grid nodes
                    dropped += 1;
                    continue;
                }
                values.iter_mut().for_each(|v| *v /= norm);
                indices.push(idx);
                norms.push(norm);
                atoms.push(SparseAtom { nodes: kept, values });
            }
        }
        if dropped > 0 {
            debug!("dictionary: dropped {dropped} terms with no grid support");
        }
        if indices.is_empty() {
            return Err(Error::InvalidParameter("dictionary is empty".into()));
        }
        Ok(Self {
            params: *params,
            grid,
            k_min,
            k_max,
            indices,
            norms,
            atoms,
        })
    }

    pub fn params(&self) -> &FrameParams {
        &self.params
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn region(&self) -> &AxisBox {
        self.grid.region()
    }

    pub fn scale_range(&self) -> (i32, i32) {
        (self.k_min, self.k_max)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[WaveletIndex] {
        &self.indices
    }

    /// Discrete `L2(box)` norm of each raw frame element.
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn atom(&self, i: usize) -> &SparseAtom {
        &self.atoms[i]
    }

    pub fn atoms(&self) -> &[SparseAtom] {
        &self.atoms
    }

    pub fn position(&self, idx: &WaveletIndex) -> Option<usize> {
        self.indices.binary_search(idx).ok()
    }

    /// Grid samples of `sum_j c_j g_j` over unit-norm atoms.
    pub fn combine(&self, coeffs: &[(usize, f64)]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for &(i, c) in coeffs {
            self.atoms[i].add_to(&mut out, c);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerProduct {
    pub value: f64,
    /// Richardson change between the last two levels, or the Monte Carlo standard error.
    pub error: f64,
    pub monte_carlo: bool,
}

const MC_SAMPLES: usize = 1_000_000;

/// `int f psi_{k,b}` over `region` intersected with the term's support box.
/// Tensor midpoint with Richardson refinement for `d <= 2`, Monte Carlo otherwise.
pub fn quad_inner_product<F: Fn(&[f64]) -> f64>(
    f: F,
    idx: &WaveletIndex,
    params: &FrameParams,
    region: &AxisBox,
) -> Result<InnerProduct> {
    params.check_dim(idx.dim())?;
    params.check_dim(region.dim())?;
    let dom = match idx.support_box(params).intersect(region) {
        Some(b) if b.volume() > 0.0 => b,
        _ => {
            return Ok(InnerProduct {
                value: 0.0,
                error: 0.0,
                monte_carlo: false,
            })
        }
    };
    let term = WaveletTerm::new(idx, params);
    let d = params.dim();
    if d >= 3 {
        let est = monte_carlo(&dom, MC_SAMPLES, 0, |x| f(x) * term.eval(x))?;
        if !est.value.is_finite() {
            return Err(Error::NonFinite("inner product integrand"));
        }
        return Ok(InnerProduct {
            value: est.value,
            error: est.std_error,
            monte_carlo: true,
        });
    }
    let b = term.offset();
    let cuts: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let mut c: Vec<f64> = [term.fine_dilation(), term.coarse_dilation()]
                .iter()
                .flat_map(|s| [-3.0, -1.0, 1.0, 3.0].map(|t| b[j] + t / s))
                .filter(|&v| v > dom.lo()[j] && v < dom.hi()[j])
                .collect();
            c.sort_by(f64::total_cmp);
            c
        })
        .collect();
    let part = Partition::new(&dom, &cuts, 2)?;
    let opts = Richardson {
        rel_tol: 1e-7,
        abs_tol: 1e-13,
        min_level: 2,
        max_level: 12,
        max_points: 20_000_000,
        ..Richardson::default()
    };
    let r = integrate(&part, 1, &opts, |x, out| out[0] = f(x) * term.eval(x))?;
    if !r.converged {
        debug!("inner product quadrature stopped at level {} with change {:.2e}", r.level, r.error);
    }
    Ok(InnerProduct {
        value: r.value(),
        error: r.error,
        monte_carlo: false,
    })
}

/// `||psi_{k,b}||_{L2(R^d)}`, the same for every `(k, b)`.
pub fn term_norm(params: &FrameParams) -> Result<f64> {
    let d = params.dim();
    let idx = WaveletIndex::new(0, vec![0; d])?;
    let term = WaveletTerm::new(&idx, params);
    let end = term.half_width();
    // psi is even in every coordinate: integrate over the positive orthant
    let orthant = AxisBox::new(vec![0.0; d], vec![end; d])?;
    let s = term.coarse_dilation();
    let mut cut: Vec<f64> = vec![1.0, 3.0, 1.0 / s, 3.0 / s]
        .into_iter()
        .filter(|&v| v > 0.0 && v < end)
        .collect();
    cut.sort_by(f64::total_cmp);
    cut.dedup();
    let part = Partition::new(&orthant, &vec![cut; d], 2)?;
    let opts = Richardson {
        rel_tol: 1e-10,
        abs_tol: 1e-15,
        min_level: 2,
        max_level: 10,
        max_points: 30_000_000,
        ..Richardson::default()
    };
    let r = integrate(&part, 1, &opts, |x, out| {
        let v = term.eval(x);
        out[0] = v * v;
    })?;
    Ok((r.value() * (1u64 << d) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atoms_are_unit_norm() {
        let params = FrameParams::new(2).unwrap();
        let region = AxisBox::cube(2, 1.0).unwrap();
        let dict = Dictionary::new(&params, &region, -1, 2).unwrap();
        for atom in dict.atoms() {
            let n: f64 = dict.grid().weight() * atom.values.iter().map(|v| v * v).sum::<f64>();
            assert!((n - 1.0).abs() < 1e-12);
        }
        // sorted by (k, lattice) so binary search works
        assert!(dict.indices().windows(2).all(|w| w[0] < w[1]));
        let i = dict.indices()[5].clone();
        assert_eq!(dict.position(&i), Some(5));
    }

    #[test]
    fn rejects_bad_scale_range() {
        let params = FrameParams::new(1).unwrap();
        let region = AxisBox::cube(1, 1.0).unwrap();
        assert!(Dictionary::new(&params, &region, 2, 1).is_err());
        assert!(Dictionary::new(&params, &region, -9, 1).is_err());
    }
}
