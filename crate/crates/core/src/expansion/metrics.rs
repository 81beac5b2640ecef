use serde::{Deserialize, Serialize};

use crate::domain::AxisBox;
use crate::error::{Error, Result};
use crate::frame::FrameParams;
use crate::quadrature::{integrate, Partition, Richardson};

use super::dictionary::default_spacing;
use super::grid::{counts_for_spacing, Grid};
use super::{Expansion, ExpansionEvaluator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    L2Squared,
    Sup,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::L2Squared => "l2_squared",
            Metric::Sup => "sup",
        }
    }
}

/// `||f - sum alpha psi||_{L2(region)}` by Richardson-refined midpoint quadrature.
pub fn l2_error<F: Fn(&[f64]) -> f64>(
    f: F,
    expansion: &Expansion,
    params: &FrameParams,
    region: &AxisBox,
) -> Result<f64> {
    params.check_dim(region.dim())?;
    let ev = ExpansionEvaluator::new(expansion, params)?;
    let part = Partition::new(region, &vec![Vec::new(); region.dim()], 16)?;
    let opts = Richardson {
        rel_tol: 1e-6,
        abs_tol: 1e-24,
        min_level: 2,
        max_level: 10,
        max_points: 4_000_000,
        ..Richardson::default()
    };
    let r = integrate(&part, 1, &opts, |x, out| {
        let e = f(x) - ev.eval(x);
        out[0] = e * e;
    })?;
    Ok(r.value().max(0.0).sqrt())
}

/// Closed grid over `region` with spacing at most half of `2^{-(k_max+2)/d}`.
pub fn sup_grid(region: &AxisBox, d: usize, k_max: i32) -> Result<Grid> {
    let counts = counts_for_spacing(region, 0.5 * default_spacing(d, k_max))?;
    Grid::closed(region, &counts.iter().map(|c| c + 1).collect::<Vec<_>>())
}

/// Max of `|f - sum alpha psi|` over [`sup_grid`] for the given finest scale.
pub fn sup_error<F: Fn(&[f64]) -> f64>(
    f: F,
    expansion: &Expansion,
    params: &FrameParams,
    region: &AxisBox,
    k_max: i32,
) -> Result<f64> {
    params.check_dim(region.dim())?;
    let ev = ExpansionEvaluator::new(expansion, params)?;
    let grid = sup_grid(region, params.dim(), k_max)?;
    let mut worst: f64 = 0.0;
    for x in grid.points() {
        let e = (f(x) - ev.eval(x)).abs();
        if !e.is_finite() {
            return Err(Error::NonFinite("sup error"));
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub ns: Vec<u64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `ln error` against `ln N`.
    pub slope: f64,
    pub intercept: f64,
    pub metric: Metric,
}

pub fn rate_fit(ns: &[u64], errors: &[f64], metric: Metric) -> Result<RateReport> {
    if ns.len() != errors.len() {
        return Err(Error::DimensionMismatch {
            expected: ns.len(),
            got: errors.len(),
        });
    }
    if ns.len() < 3 {
        return Err(Error::InvalidParameter("rate fit needs at least 3 points".into()));
    }
    if ns.windows(2).any(|w| w[0] >= w[1]) || ns[0] == 0 {
        return Err(Error::InvalidParameter("N values must be positive and strictly increasing".into()));
    }
    if errors.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::InvalidParameter("errors must be positive and finite".into()));
    }
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    Ok(RateReport {
        ns: ns.to_vec(),
        errors: errors.to_vec(),
        slope,
        intercept: my - slope * mx,
        metric,
    })
}
