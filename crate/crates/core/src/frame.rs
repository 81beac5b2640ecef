//! Scaling functions and wavelets assembled from rectifier units.
//!
//! Everything here is built from `rect(x) = max(0, x)`:
//!
//! * the trapezoid `t(x) = rect(x+3) - rect(x+1) - rect(x-1) + rect(x-3)`,
//! * the scaling function `phi(x) = C_d rect(sum_j t(x_j) - 2(d-1))`,
//! * the averaging kernels `S_k(x, b) = 2^k phi(2^{k/d} (x - b))`,
//! * the wavelets `psi_{k,b} = 2^{-k/2} (S_k - S_{k-1})`.
//!
//! Offsets live on the lattice `2^{-k/d} Z^d`; a [`WaveletIndex`] stores the
//! integer lattice coordinates so the lattice invariant holds by construction.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::domain::AxisBox;
use crate::error::{Error, Result};
use crate::quadrature::{integrate, Partition, Richardson};

/// Scales accepted by [`WaveletIndex::new`].
pub const MIN_SCALE: i32 = -8;
pub const MAX_SCALE: i32 = 16;

/// Largest intrinsic dimension with a tabulated normalization constant.
pub const MAX_DIM: usize = 4;

/// C_d values computed by [`normalization_constant`], as decimal strings.
pub const CONSTANTS_FIXTURE: &str = include_str!("../fixtures/c_d.json");

#[inline]
pub fn rect(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `rect(x+3) - rect(x+1) - rect(x-1) + rect(x-3)`, evaluated in the
/// equivalent clamped form so that it is exactly zero off `(-3, 3)`.
#[inline]
pub fn trapezoid(x: f64) -> f64 {
    (3.0 - x.abs()).clamp(0.0, 2.0)
}

/// Trapezoid of height 2 with plateau `[-plateau, plateau]` and support
/// `[-support, support]`; the normal-direction profile of ambient wavelets.
#[inline]
pub fn trapezoid_r(x: f64, plateau: f64, support: f64) -> f64 {
    2.0 * ((support - x.abs()) / (support - plateau)).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameParams {
    d: usize,
    c_d: f64,
}

impl FrameParams {
    /// Uses the tabulated constant for `d`.
    pub fn new(d: usize) -> Result<Self> {
        let table = tabulated_constants()?;
        let c_d = *table.get(&d).ok_or(Error::UnsupportedDimension(d))?;
        Self::with_constant(d, c_d)
    }

    /// Computes the constant by quadrature instead of reading the table.
    pub fn from_quadrature(d: usize) -> Result<Self> {
        Self::with_constant(d, normalization_constant(d)?)
    }

    pub fn with_constant(d: usize, c_d: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::UnsupportedDimension(0));
        }
        if !(c_d.is_finite() && c_d > 0.0) {
            return Err(Error::InvalidParameter(format!("C_d must be positive, got {c_d}")));
        }
        Ok(Self { d, c_d })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn constant(&self) -> f64 {
        self.c_d
    }

    /// Lattice spacing `2^{-k/d}` at scale `k`.
    pub fn spacing(&self, k: i32) -> f64 {
        (-(k as f64) / self.d as f64).exp2()
    }

    /// Dilation factor `2^{k/d}` at scale `k`.
    pub fn dilation(&self, k: i32) -> f64 {
        (k as f64 / self.d as f64).exp2()
    }

    /// Per-axis half-width of the support of `psi_{k,b}`, i.e. of its coarser
    /// `phi` term: `3 * 2^{-(k-1)/d}`.
    pub fn support_half_width(&self, k: i32) -> f64 {
        3.0 * self.spacing(k - 1)
    }

    pub(crate) fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got,
            });
        }
        Ok(())
    }
}

/// Parses a `{"d": "C_d"}` fixture.
pub fn parse_constants(json: &str) -> Result<BTreeMap<usize, f64>> {
    let raw: BTreeMap<String, String> = serde_json::from_str(json)?;
    raw.into_iter()
        .map(|(k, v)| {
            let d = k.parse::<usize>().map_err(|e| Error::Parse(format!("dimension {k:?}: {e}")))?;
            let c = v.parse::<f64>().map_err(|e| Error::Parse(format!("constant {v:?}: {e}")))?;
            Ok((d, c))
        })
        .collect()
}

pub fn format_constants(table: &BTreeMap<usize, f64>) -> String {
    let raw: BTreeMap<String, String> = table.iter().map(|(d, c)| (d.to_string(), c.to_string())).collect();
    let mut s = serde_json::to_string_pretty(&raw).expect("string map serializes");
    s.push('\n');
    s
}

fn tabulated_constants() -> Result<&'static BTreeMap<usize, f64>> {
    static TABLE: OnceLock<std::result::Result<BTreeMap<usize, f64>, String>> = OnceLock::new();
    TABLE
        .get_or_init(|| parse_constants(CONSTANTS_FIXTURE).map_err(|e| e.to_string()))
        .as_ref()
        .map_err(|e| Error::Parse(e.clone()))
}

/// `rect(sum_j t(s (x_j - b_j)) - 2(d-1))`, i.e. `phi / C_d` at dilation `s`.
#[inline]
fn phi_body(x: &[f64], center: &[f64], dilation: f64) -> f64 {
    let d = x.len();
    let sum: f64 = x
        .iter()
        .zip(center)
        .map(|(xi, bi)| trapezoid(dilation * (xi - bi)))
        .sum();
    rect(sum - 2.0 * (d as f64 - 1.0))
}

#[inline]
fn phi_body_origin(x: &[f64], dilation: f64) -> f64 {
    let d = x.len();
    let sum: f64 = x.iter().map(|xi| trapezoid(dilation * xi)).sum();
    rect(sum - 2.0 * (d as f64 - 1.0))
}

/// Integral of `rect(sum_j t(x_j) - 2(d-1))` over `R^d`, by tensor midpoint
/// quadrature on the positive orthant (the integrand is even in every axis).
pub fn unnormalized_phi_integral(d: usize) -> Result<f64> {
    if d == 0 || d > MAX_DIM {
        return Err(Error::UnsupportedDimension(d));
    }
    let orthant = AxisBox::new(vec![0.0; d], vec![3.0; d])?;
    let cuts = vec![vec![1.0]; d];
    // grid vertices stay on the integer lattice, where all kinks of the
    // integrand pass, so the error expansion is clean in h
    let part = Partition::new(&orthant, &cuts, 2)?;
    let opts = Richardson {
        rel_tol: 1e-11,
        min_level: 2,
        max_level: 8,
        max_points: 120_000_000,
        ..Richardson::default()
    };
    let r = integrate(&part, 1, &opts, |x, out| out[0] = phi_body_origin(x, 1.0))?;
    if !r.converged && r.error > 1e-9 * r.value().abs() {
        return Err(Error::InvalidParameter(format!(
            "normalization quadrature for d={d} stalled at relative change {:.3e}",
            r.error / r.value().abs()
        )));
    }
    Ok(r.value() * (1u64 << d) as f64)
}

/// `C_d` such that `phi` integrates to one.
pub fn normalization_constant(d: usize) -> Result<f64> {
    static CACHE: [OnceLock<f64>; MAX_DIM] = [OnceLock::new(), OnceLock::new(), OnceLock::new(), OnceLock::new()];
    if d == 0 || d > MAX_DIM {
        return Err(Error::UnsupportedDimension(d));
    }
    if let Some(c) = CACHE[d - 1].get() {
        return Ok(*c);
    }
    let c = 1.0 / unnormalized_phi_integral(d)?;
    Ok(*CACHE[d - 1].get_or_init(|| c))
}

pub fn scaling_phi(x: &[f64], params: &FrameParams) -> Result<f64> {
    params.check_dim(x.len())?;
    Ok(params.c_d * phi_body_origin(x, 1.0))
}

/// `psi(x) = phi(x) - phi(2^{-1/d} x) / 2`.
pub fn mother_psi(x: &[f64], params: &FrameParams) -> Result<f64> {
    params.check_dim(x.len())?;
    let shrink = params.dilation(-1);
    Ok(params.c_d * (phi_body_origin(x, 1.0) - 0.5 * phi_body_origin(x, shrink)))
}

/// `S_k(x, b) = 2^k phi(2^{k/d}(x - b))`.
pub fn s_kernel(x: &[f64], b: &[f64], k: i32, params: &FrameParams) -> Result<f64> {
    params.check_dim(x.len())?;
    params.check_dim(b.len())?;
    Ok((k as f64).exp2() * params.c_d * phi_body(x, b, params.dilation(k)))
}

/// `psi_{k,b}(x) = 2^{k/2} psi(2^{k/d}(x - b))`.
pub fn psi_kb(x: &[f64], idx: &WaveletIndex, params: &FrameParams) -> Result<f64> {
    params.check_dim(x.len())?;
    params.check_dim(idx.dim())?;
    let dil = params.dilation(idx.scale);
    let b = idx.offset(params);
    let y: Vec<f64> = x.iter().zip(&b).map(|(xi, bi)| dil * (xi - bi)).collect();
    Ok((idx.scale as f64 / 2.0).exp2() * mother_psi(&y, params)?)
}

/// One frame element: scale `k` and the integer coordinates `n` of its
/// offset `b = 2^{-k/d} n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WaveletIndex {
    pub scale: i32,
    pub lattice: Vec<i64>,
}

impl WaveletIndex {
    pub fn new(scale: i32, lattice: Vec<i64>) -> Result<Self> {
        if !(MIN_SCALE..=MAX_SCALE).contains(&scale) {
            return Err(Error::InvalidParameter(format!(
                "scale {scale} outside [{MIN_SCALE}, {MAX_SCALE}]"
            )));
        }
        if lattice.is_empty() {
            return Err(Error::UnsupportedDimension(0));
        }
        Ok(Self { scale, lattice })
    }

    /// Recovers lattice coordinates from a real offset, enforcing that every
    /// component is an integer multiple of `2^{-k/d}` to 1e-12 relative.
    pub fn from_offset(scale: i32, b: &[f64]) -> Result<Self> {
        let d = b.len();
        if d == 0 {
            return Err(Error::UnsupportedDimension(0));
        }
        let spacing = (-(scale as f64) / d as f64).exp2();
        let lattice = b
            .iter()
            .map(|&v| {
                let n = (v / spacing).round();
                let tol = 1e-12 * v.abs().max(spacing);
                if !v.is_finite() || (n * spacing - v).abs() > tol {
                    Err(Error::OffLattice { scale, value: v })
                } else {
                    Ok(n as i64)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(scale, lattice)
    }

    pub fn dim(&self) -> usize {
        self.lattice.len()
    }

    pub fn offset(&self, params: &FrameParams) -> Vec<f64> {
        let s = params.spacing(self.scale);
        self.lattice.iter().map(|&n| n as f64 * s).collect()
    }

    /// Closed axis-aligned box containing the support of `psi_{k,b}`.
    pub fn support_box(&self, params: &FrameParams) -> AxisBox {
        let hw = params.support_half_width(self.scale);
        AxisBox::centered(&self.offset(params), hw).expect("finite offsets")
    }
}

/// All lattice offsets at scale `k` whose wavelet support box meets `region`,
/// in lexicographic order of the lattice coordinates.
pub fn lattice_offsets(k: i32, region: &AxisBox, params: &FrameParams) -> Result<Vec<WaveletIndex>> {
    params.check_dim(region.dim())?;
    if !(MIN_SCALE..=MAX_SCALE).contains(&k) {
        return Err(Error::InvalidParameter(format!("scale {k} outside [{MIN_SCALE}, {MAX_SCALE}]")));
    }
    let s = params.spacing(k);
    let hw = params.support_half_width(k);
    let ranges: Vec<(i64, i64)> = (0..params.d)
        .map(|j| {
            let lo = (region.lo()[j] - hw) / s;
            let hi = (region.hi()[j] + hw) / s;
            // touching supports count as intersecting
            ((lo - 1e-9).ceil() as i64, (hi + 1e-9).floor() as i64)
        })
        .collect();
    if ranges.iter().any(|(a, b)| a > b) {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut cur: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    loop {
        out.push(WaveletIndex {
            scale: k,
            lattice: cur.clone(),
        });
        let mut j = params.d;
        loop {
            if j == 0 {
                return Ok(out);
            }
            j -= 1;
            if cur[j] < ranges[j].1 {
                cur[j] += 1;
                break;
            }
            cur[j] = ranges[j].0;
        }
    }
}

/// A wavelet with its offset and dilations resolved, for repeated evaluation.
/// Evaluates the kernel-difference form `2^{-k/2}(S_k - S_{k-1})`.
#[derive(Clone, Debug)]
pub struct WaveletTerm {
    offset: Vec<f64>,
    fine: f64,
    coarse: f64,
    amplitude: f64,
    half_width: f64,
}

impl WaveletTerm {
    pub fn new(idx: &WaveletIndex, params: &FrameParams) -> Self {
        Self {
            offset: idx.offset(params),
            fine: params.dilation(idx.scale),
            coarse: params.dilation(idx.scale - 1),
            amplitude: (idx.scale as f64 / 2.0).exp2() * params.c_d,
            half_width: params.support_half_width(idx.scale),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.offset.len();
        let (mut fine, mut coarse) = (0.0, 0.0);
        for (xi, bi) in x.iter().zip(&self.offset) {
            let y = xi - bi;
            fine += trapezoid(self.fine * y);
            coarse += trapezoid(self.coarse * y);
        }
        let bias = 2.0 * (d as f64 - 1.0);
        self.amplitude * (rect(fine - bias) - 0.5 * rect(coarse - bias))
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Dilation of the fine kernel, `2^{k/d}`.
    pub fn fine_dilation(&self) -> f64 {
        self.fine
    }

    /// Dilation of the coarse kernel, `2^{(k-1)/d}`.
    pub fn coarse_dilation(&self) -> f64 {
        self.coarse
    }

    /// `2^{k/2} C_d`.
    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }
}

/// Radii of the normal-direction extension of chart wavelets to `R^m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbientExtensionParams {
    pub m: usize,
    pub d: usize,
    pub r1: f64,
    pub r2: f64,
}

impl AmbientExtensionParams {
    pub fn new(m: usize, d: usize, r1: f64, r2: f64) -> Result<Self> {
        if d == 0 || m <= d {
            return Err(Error::InvalidParameter(format!(
                "ambient dimension {m} must exceed intrinsic dimension {d}"
            )));
        }
        if !(r1 > 0.0 && r1 < r2 && r2.is_finite()) {
            return Err(Error::InvalidParameter(format!("need 0 < r1 < r2, got r1={r1}, r2={r2}")));
        }
        Ok(Self { m, d, r1, r2 })
    }

    /// `r1 = delta/2`, `r2 = (sqrt 3 / 2) delta`.
    pub fn from_delta(m: usize, d: usize, delta: f64) -> Result<Self> {
        Self::new(m, d, 0.5 * delta, 0.5 * 3f64.sqrt() * delta)
    }

    pub fn codim(&self) -> usize {
        self.m - self.d
    }

    /// Per-coordinate plateau half-width `r1 / sqrt(m-d)`.
    pub fn plateau(&self) -> f64 {
        self.r1 / (self.codim() as f64).sqrt()
    }

    /// Per-coordinate support half-width `r2 / sqrt(m-d)`.
    pub fn support(&self) -> f64 {
        self.r2 / (self.codim() as f64).sqrt()
    }

    /// `sum_j t_r(v_j)` over the normal coordinates.
    pub fn normal_profile(&self, normal: &[f64]) -> f64 {
        let (a1, a2) = (self.plateau(), self.support());
        normal.iter().map(|&v| trapezoid_r(v, a1, a2)).sum()
    }
}

/// Wavelet extended to `R^m`; `x` holds chart-local coordinates, tangent first.
pub fn ambient_psi(x: &[f64], idx: &WaveletIndex, ext: &AmbientExtensionParams, params: &FrameParams) -> Result<f64> {
    if ext.d != params.d {
        return Err(Error::DimensionMismatch {
            expected: params.d,
            got: ext.d,
        });
    }
    if x.len() != ext.m {
        return Err(Error::DimensionMismatch {
            expected: ext.m,
            got: x.len(),
        });
    }
    params.check_dim(idx.dim())?;
    let (tangent, normal) = x.split_at(ext.d);
    Ok(ambient_term_value(
        &WaveletTerm::new(idx, params),
        tangent,
        ext.normal_profile(normal),
        ext.m,
    ))
}

/// `2^{k/2} C_d (rect(A_k + T) - rect(A_{k-1} + T)/2)` with `T` the summed
/// normal profile and the bias `-2(m-1)` folded in.
#[inline]
pub(crate) fn ambient_term_value(term: &WaveletTerm, tangent: &[f64], normal_profile: f64, m: usize) -> f64 {
    let (mut fine, mut coarse) = (0.0, 0.0);
    for (xi, bi) in tangent.iter().zip(&term.offset) {
        let y = xi - bi;
        fine += trapezoid(term.fine * y);
        coarse += trapezoid(term.coarse * y);
    }
    let bias = 2.0 * (m as f64 - 1.0);
    term.amplitude * (rect(fine + normal_profile - bias) - 0.5 * rect(coarse + normal_profile - bias))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Moments {
    /// Integral of the function.
    pub zeroth: f64,
    /// Integral of `x_j` times the function, per axis.
    pub first: Vec<f64>,
}

/// Quadrature of `[g, x_1 g, ..., x_d g]` for `g(x) = phi(dilation (x - center)) / C_d`.
/// The grid is aligned with the kinks of `g`, so Richardson converges fast.
fn phi_term_moments(center: &[f64], dilation: f64, opts: &Richardson) -> Result<Vec<f64>> {
    let d = center.len();
    let hw = 3.0 / dilation;
    let region = AxisBox::centered(center, hw)?;
    let cuts: Vec<Vec<f64>> = center.iter().map(|c| vec![c - 1.0 / dilation, c + 1.0 / dilation]).collect();
    let part = Partition::new(&region, &cuts, 2)?;
    let r = integrate(&part, d + 1, opts, |x, out| {
        let g = phi_body(x, center, dilation);
        out[0] = g;
        for j in 0..d {
            out[j + 1] = x[j] * g;
        }
    })?;
    Ok(r.values)
}

fn moment_options() -> Richardson {
    Richardson {
        rel_tol: 1e-10,
        abs_tol: 1e-13,
        min_level: 2,
        max_level: 9,
        max_points: 40_000_000,
        ..Richardson::default()
    }
}

/// Zeroth and first moments of `psi_{k,b}`, integrating its two kernel terms
/// on grids aligned with their own kinks.
pub fn moment_check(idx: &WaveletIndex, params: &FrameParams) -> Result<Moments> {
    params.check_dim(idx.dim())?;
    let b = idx.offset(params);
    let opts = moment_options();
    let fine = phi_term_moments(&b, params.dilation(idx.scale), &opts)?;
    let coarse = phi_term_moments(&b, params.dilation(idx.scale - 1), &opts)?;
    let amp = (idx.scale as f64 / 2.0).exp2() * params.c_d;
    let combined: Vec<f64> = fine.iter().zip(&coarse).map(|(f, c)| amp * (f - 0.5 * c)).collect();
    if combined.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("moment quadrature"));
    }
    Ok(Moments {
        zeroth: combined[0],
        first: combined[1..].to_vec(),
    })
}

/// Moments of the scaling function itself (zeroth moment should be one).
pub fn scaling_moments(params: &FrameParams) -> Result<Moments> {
    let origin = vec![0.0; params.d];
    let v = phi_term_moments(&origin, 1.0, &moment_options())?;
    Ok(Moments {
        zeroth: params.c_d * v[0],
        first: v[1..].iter().map(|x| params.c_d * x).collect(),
    })
}
