//! `frame-selfcheck`: normalization, vanishing moments, the amplitude bound,
//! per-scale support counts and the kernel-difference identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::frame::{moment_check, psi_kb, s_kernel, scaling_moments, FrameParams, WaveletIndex, WaveletTerm};

use super::{HarnessError, Stage, TOOL_VERSION};

pub const NORMALIZATION_TOL: f64 = 1e-6;
pub const MOMENT_TOL: f64 = 1e-6;
pub const BOUND_SLACK: f64 = 1e-12;
pub const IDENTITY_TOL: f64 = 1e-12;

const BOUND_SCALES: std::ops::RangeInclusive<i32> = -2..=4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value of the checked quantity; `None` when skipped.
    pub value: Option<f64>,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelfCheckReport {
    pub tool_version: &'static str,
    pub d: usize,
    pub constant: f64,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
}

impl SelfCheckReport {
    pub fn first_failure(&self) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| !c.passed)
    }
}

pub fn frame_selfcheck(d: usize, constant: Option<f64>) -> Result<SelfCheckReport, HarnessError> {
    if !(1..=3).contains(&d) {
        return Err(HarnessError::Config(format!("frame-selfcheck supports d in 1..=3, got {d}")));
    }
    let params = match constant {
        Some(c) => FrameParams::with_constant(d, c),
        None => FrameParams::new(d),
    }
    .map_err(|e| HarnessError::Config(e.to_string()))?;

    let checks = vec![
        normalization(&params)?,
        moments(&params)?,
        bound(&params)?,
        support_count(&params)?,
        identity(&params)?,
    ];
    let passed = checks.iter().all(|c| c.passed);
    Ok(SelfCheckReport {
        tool_version: TOOL_VERSION,
        d,
        constant: params.constant(),
        checks,
        passed,
    })
}

fn normalization(p: &FrameParams) -> Result<CheckOutcome, HarnessError> {
    let m = scaling_moments(p).stage("normalization")?;
    let dev = (m.zeroth - 1.0).abs();
    Ok(CheckOutcome {
        name: "normalization",
        passed: dev <= NORMALIZATION_TOL,
        value: Some(dev),
        tolerance: NORMALIZATION_TOL,
        detail: format!("integral of phi = {:.12}", m.zeroth),
    })
}

fn moments(p: &FrameParams) -> Result<CheckOutcome, HarnessError> {
    let d = p.dim();
    let cases: [(i32, i64); 4] = [(0, 0), (1, 1), (-1, 2), (3, -1)];
    let mut worst: f64 = 0.0;
    for (k, n) in cases {
        let idx = WaveletIndex::new(k, vec![n; d]).stage("moments")?;
        let m = moment_check(&idx, p).stage("moments")?;
        worst = m.first.iter().fold(worst.max(m.zeroth.abs()), |w, v| w.max(v.abs()));
    }
    Ok(CheckOutcome {
        name: "moments",
        passed: worst <= MOMENT_TOL,
        value: Some(worst),
        tolerance: MOMENT_TOL,
        detail: format!("max |zeroth|, |first| over {} indices", cases.len()),
    })
}

/// `sup |psi_{k,b}| <= 2^{k/2 - 2}` on a grid through the centre of the support.
fn bound(p: &FrameParams) -> Result<CheckOutcome, HarnessError> {
    let d = p.dim();
    let n: usize = [0, 2001, 201, 41][d];
    let mut worst = f64::NEG_INFINITY;
    for k in BOUND_SCALES {
        let idx = WaveletIndex::new(k, vec![1; d]).stage("bound")?;
        let term = WaveletTerm::new(&idx, p);
        let hw = p.support_half_width(k);
        let b = idx.offset(p);
        let step = 2.0 * hw / (n - 1) as f64;
        let mut sup: f64 = 0.0;
        let mut x = vec![0.0; d];
        for flat in 0..n.pow(d as u32) {
            let mut r = flat;
            for j in 0..d {
                x[j] = b[j] - hw + (r % n) as f64 * step;
                r /= n;
            }
            sup = sup.max(term.eval(&x).abs());
        }
        worst = worst.max(sup - (k as f64 / 2.0 - 2.0).exp2());
    }
    Ok(CheckOutcome {
        name: "bound",
        passed: worst <= BOUND_SLACK,
        value: Some(worst),
        tolerance: BOUND_SLACK,
        detail: format!("max of sup|psi_k,b| - 2^(k/2-2) over k in {BOUND_SCALES:?}"),
    })
}

/// Brute force over a lattice window wider than the support; skipped for `d = 3`.
fn support_count(p: &FrameParams) -> Result<CheckOutcome, HarnessError> {
    let d = p.dim();
    let limit = 12usize.pow(d as u32);
    if d > 2 {
        return Ok(CheckOutcome {
            name: "support_count",
            passed: true,
            value: None,
            tolerance: limit as f64,
            detail: "skipped for d = 3".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0usize;
    for k in BOUND_SCALES {
        let s = p.spacing(k);
        let reach = (2.0 * p.support_half_width(k) / s).ceil() as i64 + 1;
        let span = (2 * reach + 1) as usize;
        for _ in 0..50 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let centre: Vec<i64> = x.iter().map(|v| (v / s).round() as i64).collect();
            let mut count = 0usize;
            for flat in 0..span.pow(d as u32) {
                let mut r = flat;
                let lattice: Vec<i64> = (0..d)
                    .map(|j| {
                        let off = (r % span) as i64 - reach;
                        r /= span;
                        centre[j] + off
                    })
                    .collect();
                let idx = WaveletIndex::new(k, lattice).stage("support_count")?;
                if psi_kb(&x, &idx, p).stage("support_count")? != 0.0 {
                    count += 1;
                }
            }
            worst = worst.max(count);
        }
    }
    Ok(CheckOutcome {
        name: "support_count",
        passed: worst <= limit,
        value: Some(worst as f64),
        tolerance: limit as f64,
        detail: "max number of overlapping terms per scale at random points".into(),
    })
}

/// `psi_{k,b} = 2^{-k/2} (S_k(., b) - S_{k-1}(., b))`.
fn identity(p: &FrameParams) -> Result<CheckOutcome, HarnessError> {
    let d = p.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.gen_range(-4..=8);
        let lattice: Vec<i64> = (0..d).map(|_| rng.gen_range(-20..=20)).collect();
        let idx = WaveletIndex::new(k, lattice).stage("identity")?;
        let b = idx.offset(p);
        let hw = p.support_half_width(k);
        let x: Vec<f64> = b.iter().map(|bi| bi + rng.gen_range(-1.2 * hw..1.2 * hw)).collect();
        let direct = psi_kb(&x, &idx, p).stage("identity")?;
        let via = (-(k as f64) / 2.0).exp2()
            * (s_kernel(&x, &b, k, p).stage("identity")? - s_kernel(&x, &b, k - 1, p).stage("identity")?);
        let scale = direct.abs().max(via.abs()).max((k as f64 / 2.0).exp2() * p.constant());
        worst = worst.max((direct - via).abs() / scale);
    }
    Ok(CheckOutcome {
        name: "identity",
        passed: worst <= IDENTITY_TOL,
        value: Some(worst),
        tolerance: IDENTITY_TOL,
        detail: "relative deviation at 1000 random points".into(),
    })
}
