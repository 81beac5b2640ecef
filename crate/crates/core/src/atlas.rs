//! Ball-covering atlases with tangent-plane charts and a smooth partition of unity.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::domain::AxisBox;
use crate::error::{Error, Result};
use crate::frame::AmbientExtensionParams;
use crate::manifold::{ManifoldModel, ModelDescriptor};

const ORTHO_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    anchor: DVector<f64>,
    tangent: DMatrix<f64>,
    normal: DMatrix<f64>,
    /// `[T | N]^T`, cached for coordinate maps.
    frame_t: DMatrix<f64>,
    delta: f64,
}

impl Chart {
    pub fn new(anchor: DVector<f64>, tangent: DMatrix<f64>, normal: DMatrix<f64>, delta: f64) -> Result<Self> {
        let m = anchor.len();
        if tangent.nrows() != m || normal.nrows() != m || tangent.ncols() + normal.ncols() != m {
            return Err(Error::InvalidParameter(format!(
                "chart bases have shapes {}x{} and {}x{} for ambient dimension {m}",
                tangent.nrows(),
                tangent.ncols(),
                normal.nrows(),
                normal.ncols()
            )));
        }
        if tangent.ncols() == 0 || !(delta > 0.0) {
            return Err(Error::InvalidParameter("chart needs d >= 1 and delta > 0".into()));
        }
        let full = DMatrix::from_columns(
            &tangent
                .column_iter()
                .chain(normal.column_iter())
                .map(|c| c.into_owned())
                .collect::<Vec<_>>(),
        );
        let frame_t = full.transpose();
        let chart = Self {
            anchor,
            tangent,
            normal,
            frame_t,
            delta,
        };
        let dev = chart.gram_deviation();
        if dev > ORTHO_TOL {
            return Err(Error::InvalidParameter(format!("chart frame not orthonormal (Gram deviation {dev:e})")));
        }
        Ok(chart)
    }

    pub fn anchor(&self) -> &DVector<f64> {
        &self.anchor
    }

    pub fn tangent_basis(&self) -> &DMatrix<f64> {
        &self.tangent
    }

    pub fn normal_basis(&self) -> &DMatrix<f64> {
        &self.normal
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn dim(&self) -> usize {
        self.tangent.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.anchor.len()
    }

    /// Max entry of `|[T|N]^T [T|N] - I|`.
    pub fn gram_deviation(&self) -> f64 {
        let g = &self.frame_t * self.frame_t.transpose();
        let m = g.nrows();
        (g - DMatrix::identity(m, m)).abs().max()
    }

    /// All m local coordinates: tangent part first, then normal part.
    pub fn local(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.ambient_dim();
        if x.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: x.len() });
        }
        let diff = DVector::from_iterator(m, x.iter().zip(self.anchor.iter()).map(|(a, b)| a - b));
        Ok((&self.frame_t * diff).data.into())
    }

    /// `(T^T (x - a), N^T (x - a))`.
    pub fn coords(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut u = self.local(x)?;
        let v = u.split_off(self.dim());
        Ok((u, v))
    }

    pub fn reconstruct(&self, u: &[f64], v: &[f64]) -> DVector<f64> {
        &self.anchor + &self.tangent * DVector::from_column_slice(u) + &self.normal * DVector::from_column_slice(v)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        dist(x, self.anchor.as_slice()) < self.delta
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug)]
pub struct Atlas {
    pub charts: Vec<Chart>,
    pub delta: f64,
    pub r1: f64,
    pub r2: f64,
    pub c_gamma_bound: Option<u64>,
    pub seed: u64,
    pub model: Option<ModelDescriptor>,
}

impl Atlas {
    pub fn len(&self) -> usize {
        self.charts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.charts.first().map_or(0, Chart::dim)
    }

    pub fn ambient_dim(&self) -> usize {
        self.charts.first().map_or(0, Chart::ambient_dim)
    }

    pub fn chart(&self, i: usize) -> Result<&Chart> {
        self.charts.get(i).ok_or(Error::UnknownChart(i))
    }

    pub fn extension(&self) -> Result<AmbientExtensionParams> {
        AmbientExtensionParams::new(self.ambient_dim(), self.dim(), self.r1, self.r2)
    }

    /// Tangent-coordinate bounding box of the samples whose normal
    /// coordinates all lie inside the per-coordinate support of the ambient
    /// extension, i.e. the on-manifold region where chart `i`'s wavelets can
    /// be nonzero.
    pub fn active_tangent_box(&self, i: usize, samples: &[DVector<f64>]) -> Result<AxisBox> {
        let chart = self.chart(i)?;
        let a2 = self.extension()?.support();
        let d = chart.dim();
        let mut lo = vec![0.0; d];
        let mut hi = vec![0.0; d];
        for x in samples {
            let (u, v) = chart.coords(x.as_slice())?;
            if v.iter().all(|vj| vj.abs() < a2) {
                for j in 0..d {
                    lo[j] = f64::min(lo[j], u[j]);
                    hi[j] = f64::max(hi[j], u[j]);
                }
            }
        }
        AxisBox::new(lo, hi)
    }

    pub fn to_file(&self) -> AtlasFile {
        AtlasFile {
            delta: self.delta,
            r1: self.r1,
            r2: self.r2,
            c_gamma_bound: self.c_gamma_bound,
            seed: self.seed,
            model: self.model.clone(),
            charts: self
                .charts
                .iter()
                .map(|c| ChartFile {
                    anchor: c.anchor.iter().copied().collect(),
                    tangent: rows(&c.tangent),
                    normal: rows(&c.normal),
                })
                .collect(),
        }
    }

    pub fn from_file(file: &AtlasFile) -> Result<Self> {
        if (file.r2 / file.r1 - 3f64.sqrt()).abs() > 1e-12 {
            return Err(Error::InvalidParameter("atlas radii must satisfy r2/r1 = sqrt(3)".into()));
        }
        let charts = file
            .charts
            .iter()
            .map(|c| {
                let m = c.anchor.len();
                Chart::new(
                    DVector::from_vec(c.anchor.clone()),
                    from_rows(m, &c.tangent)?,
                    from_rows(m, &c.normal)?,
                    file.delta,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            charts,
            delta: file.delta,
            r1: file.r1,
            r2: file.r2,
            c_gamma_bound: file.c_gamma_bound,
            seed: file.seed,
            model: file.model.clone(),
        })
    }
}

fn rows(mat: &DMatrix<f64>) -> Vec<Vec<f64>> {
    mat.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(m: usize, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: rows.len() });
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse("ragged basis matrix".into()));
    }
    Ok(DMatrix::from_fn(m, cols, |i, j| rows[i][j]))
}

/// On-disk atlas: bases stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtlasFile {
    pub delta: f64,
    pub r1: f64,
    pub r2: f64,
    pub c_gamma_bound: Option<u64>,
    pub seed: u64,
    pub model: Option<ModelDescriptor>,
    pub charts: Vec<ChartFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartFile {
    pub anchor: Vec<f64>,
    pub tangent: Vec<Vec<f64>>,
    pub normal: Vec<Vec<f64>>,
}

/// `ceil(2^d SA / delta^d * T_d)` with `T_d = d ln d + 5d`.
pub fn covering_bound(d: usize, surface_area: f64, delta: f64) -> Result<u64> {
    if d == 0 || !(surface_area > 0.0) || !(delta > 0.0) || !surface_area.is_finite() || !delta.is_finite() {
        return Err(Error::InvalidParameter("covering bound needs positive d, area and delta".into()));
    }
    let df = d as f64;
    let thickness = df * df.ln() + 5.0 * df;
    let raw = df.exp2() * surface_area / delta.powi(d as i32) * thickness;
    // absorb last-bit rounding so exact integers are not bumped up
    let c = (raw * (1.0 - 4.0 * f64::EPSILON)).ceil();
    if c > u64::MAX as f64 {
        return Err(Error::InvalidParameter("covering bound overflows".into()));
    }
    Ok(c as u64)
}

/// Greedy farthest-point cover of the sample cloud by balls of radius
/// `delta/2`, with one tangent-plane chart per anchor.
pub fn build_atlas(model: &ManifoldModel, delta: f64, samples: &[DVector<f64>], seed: u64) -> Result<Atlas> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    if samples.is_empty() {
        return Err(Error::SparseSampling("no samples".into()));
    }
    let m = model.ambient_dim();
    let d = model.dim();
    if let Some(x) = samples.iter().find(|x| x.len() != m) {
        return Err(Error::DimensionMismatch { expected: m, got: x.len() });
    }
    let radius = 0.5 * delta;
    let mut anchors = vec![0usize];
    let mut nearest: Vec<f64> = samples.iter().map(|x| (x - &samples[0]).norm()).collect();
    loop {
        let (far, far_dist) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        if far_dist <= radius {
            break;
        }
        anchors.push(far);
        for (n, x) in nearest.iter_mut().zip(samples) {
            *n = n.min((x - &samples[far]).norm());
        }
    }
    if let Some(i) = nearest.iter().position(|&v| v > radius) {
        return Err(Error::SparseSampling(format!("sample {i} is not covered after the greedy pass")));
    }

    let mut charts = Vec::with_capacity(anchors.len());
    for &ai in &anchors {
        let anchor = samples[ai].clone();
        let tangent = match model.analytic_tangent(&anchor) {
            Some(t) => t,
            None => pca_tangent(&anchor, samples, radius, d)?,
        };
        let lead = model.in_span_normal(&tangent);
        let normal = balanced_normal_basis(&tangent, lead.as_ref());
        charts.push(Chart::new(anchor, tangent, normal, delta)?);
    }
    let c_gamma_bound = model
        .surface_area()
        .map(|sa| covering_bound(d, sa, delta))
        .transpose()?;
    Ok(Atlas {
        charts,
        delta,
        r1: 0.5 * delta,
        r2: 0.5 * 3f64.sqrt() * delta,
        c_gamma_bound,
        seed,
        model: Some(model.descriptor().clone()),
    })
}

/// Top-`d` principal directions of the samples within `radius` of `anchor`.
fn pca_tangent(anchor: &DVector<f64>, samples: &[DVector<f64>], radius: f64, d: usize) -> Result<DMatrix<f64>> {
    let near: Vec<&DVector<f64>> = samples.iter().filter(|x| (*x - anchor).norm() <= radius).collect();
    if near.len() < d + 1 {
        return Err(Error::SparseSampling(format!(
            "only {} samples within delta/2 of an anchor; need at least {}",
            near.len(),
            d + 1
        )));
    }
    let m = anchor.len();
    let mean = near.iter().fold(DVector::zeros(m), |acc, x| acc + *x) / near.len() as f64;
    let mut cov = DMatrix::zeros(m, m);
    for x in &near {
        let c = *x - &mean;
        cov += &c * c.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let cols: Vec<DVector<f64>> = order[..d]
        .iter()
        .map(|&j| {
            let v = eig.eigenvectors.column(j).into_owned();
            // fix the sign so the largest-magnitude entry is positive
            let pivot = v.iter().copied().fold(0.0f64, |p, e| if e.abs() > p.abs() { e } else { p });
            if pivot < 0.0 {
                -v
            } else {
                v
            }
        })
        .collect();
    let mut basis = DMatrix::from_columns(&cols);
    orthonormalize_columns(&mut basis);
    Ok(basis)
}

fn orthonormalize_columns(mat: &mut DMatrix<f64>) {
    for j in 0..mat.ncols() {
        for _ in 0..2 {
            for i in 0..j {
                let p = mat.column(i).dot(&mat.column(j));
                let ci = mat.column(i).into_owned();
                let mut cj = mat.column_mut(j);
                cj -= ci * p;
            }
        }
        let n = mat.column(j).norm();
        mat.column_mut(j).unscale_mut(n);
    }
}

/// Orthonormal complement of `tangent`. When `lead` is given, the basis is
/// rotated so that `lead` has equal coordinates `1/sqrt(m-d)` along every
/// normal direction; the per-coordinate plateau of the ambient extension
/// then covers exactly the displacement ball of radius `r1` along `lead`.
pub fn balanced_normal_basis(tangent: &DMatrix<f64>, lead: Option<&DVector<f64>>) -> DMatrix<f64> {
    let m = tangent.nrows();
    let c = m - tangent.ncols();
    let mut accepted: Vec<DVector<f64>> = Vec::with_capacity(c);
    let candidates = lead
        .into_iter()
        .cloned()
        .chain((0..m).map(|j| DVector::from_fn(m, |i, _| if i == j { 1.0 } else { 0.0 })));
    for cand in candidates {
        if accepted.len() == c {
            break;
        }
        let mut v = cand;
        for _ in 0..2 {
            for t in tangent.column_iter() {
                v -= t * t.dot(&v);
            }
            for a in &accepted {
                v -= a * a.dot(&v);
            }
        }
        if v.norm() > 1e-6 {
            accepted.push(v.normalize());
        }
    }
    let w = DMatrix::from_columns(&accepted);
    if lead.is_none() || c == 1 {
        return w;
    }
    // Householder reflection taking e_1 to the all-equal unit vector
    let target = DVector::from_element(c, 1.0 / (c as f64).sqrt());
    let mut e1 = DVector::zeros(c);
    e1[0] = 1.0;
    let h = &e1 - &target;
    let reflect = DMatrix::identity(c, c) - &h * h.transpose() * (2.0 / h.norm_squared());
    w * reflect
}

/// `exp(1 - 1/(1 - t^2))` on `[0, 1)`, zero beyond.
pub fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - t * t)).exp()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PartitionOfUnity<'a> {
    atlas: &'a Atlas,
}

impl<'a> PartitionOfUnity<'a> {
    pub fn new(atlas: &'a Atlas) -> Self {
        Self { atlas }
    }

    pub fn atlas(&self) -> &'a Atlas {
        self.atlas
    }

    /// Nonzero weights `eta_i(x) = beta_i(x) / sum_j beta_j(x)`.
    pub fn weights(&self, x: &[f64]) -> Result<Vec<(usize, f64)>> {
        let mut raw = Vec::new();
        for (i, c) in self.atlas.charts.iter().enumerate() {
            if x.len() != c.ambient_dim() {
                return Err(Error::DimensionMismatch {
                    expected: c.ambient_dim(),
                    got: x.len(),
                });
            }
            let b = bump(dist(x, c.anchor.as_slice()) / c.delta);
            if b > 0.0 {
                raw.push((i, b));
            }
        }
        let total: f64 = raw.iter().map(|(_, b)| b).sum();
        if !(total > 0.0) {
            return Err(Error::Uncovered);
        }
        Ok(raw.into_iter().map(|(i, b)| (i, b / total)).collect())
    }

    pub fn weight(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.atlas.chart(i)?;
        Ok(self
            .weights(x)?
            .into_iter()
            .find(|(j, _)| *j == i)
            .map_or(0.0, |(_, w)| w))
    }
}

/// Point of chart `i`'s ball with tangent coordinates `u`.
pub fn chart_inverse(chart: &Chart, model: &ManifoldModel, u: &[f64]) -> Result<DVector<f64>> {
    if u.len() != chart.dim() {
        return Err(Error::DimensionMismatch {
            expected: chart.dim(),
            got: u.len(),
        });
    }
    match lift_in_ball(chart, model, u)? {
        Some(x) => Ok(x),
        None => Err(Error::OutsideChartImage),
    }
}

/// `Ok(None)` when `u` is not in the projected image of the chart's ball.
fn lift_in_ball(chart: &Chart, model: &ManifoldModel, u: &[f64]) -> Result<Option<DVector<f64>>> {
    let norm_u = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    // |u| <= |x - a| < delta for any point of the ball
    if norm_u >= chart.delta {
        return Ok(None);
    }
    Ok(model
        .lift(&chart.anchor, &chart.tangent, u)?
        .filter(|x| chart.contains(x.as_slice())))
}

/// `f_i(u) = f(x) eta_i(x)` for `x` the lift of `u` into chart `i`'s ball,
/// and zero outside the chart image.
pub struct ChartFunction<'a, F> {
    f: F,
    chart_id: usize,
    pou: PartitionOfUnity<'a>,
    model: &'a ManifoldModel,
}

impl<'a, F: Fn(&[f64]) -> f64> ChartFunction<'a, F> {
    pub fn new(f: F, chart_id: usize, pou: PartitionOfUnity<'a>, model: &'a ManifoldModel) -> Result<Self> {
        pou.atlas().chart(chart_id)?;
        Ok(Self {
            f,
            chart_id,
            pou,
            model,
        })
    }

    pub fn chart(&self) -> &'a Chart {
        &self.pou.atlas().charts[self.chart_id]
    }

    pub fn eval(&self, u: &[f64]) -> Result<f64> {
        let chart = self.chart();
        if u.len() != chart.dim() {
            return Err(Error::DimensionMismatch {
                expected: chart.dim(),
                got: u.len(),
            });
        }
        match lift_in_ball(chart, self.model, u)? {
            None => Ok(0.0),
            Some(x) => {
                let w = self.pou.weight(self.chart_id, x.as_slice())?;
                if w == 0.0 {
                    return Ok(0.0);
                }
                let fx = (self.f)(x.as_slice());
                if !fx.is_finite() {
                    return Err(Error::NonFinite("target function value"));
                }
                Ok(fx * w)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiiReport {
    pub charts: usize,
    pub samples: usize,
    pub r1: f64,
    pub r2: f64,
    pub tolerance: f64,
    /// Largest distance from an in-ball sample to its tangent-plane projection.
    pub max_first_kind: f64,
    /// Smallest such distance among off-ball samples whose projection lies in the chart image.
    pub min_second_kind: Option<f64>,
    pub first_kind_violations: usize,
    pub second_kind_violations: usize,
    /// In-ball samples with some normal coordinate beyond the per-coordinate plateau.
    pub plateau_violations: usize,
    pub passed: bool,
}

pub fn verify_radii(atlas: &Atlas, model: &ManifoldModel, samples: &[DVector<f64>], tolerance: f64) -> Result<RadiiReport> {
    let ext = atlas.extension()?;
    let plateau = ext.plateau();
    let mut max_first: f64 = 0.0;
    let mut min_second: Option<f64> = None;
    let (mut first_bad, mut second_bad, mut plateau_bad) = (0, 0, 0);
    for chart in &atlas.charts {
        for x in samples {
            let (u, v) = chart.coords(x.as_slice())?;
            let normal_dist = v.iter().map(|t| t * t).sum::<f64>().sqrt();
            if chart.contains(x.as_slice()) {
                max_first = max_first.max(normal_dist);
                if normal_dist > atlas.r1 + tolerance {
                    first_bad += 1;
                }
                if v.iter().any(|t| t.abs() > plateau + tolerance) {
                    plateau_bad += 1;
                }
            } else if lift_in_ball(chart, model, &u)?.is_some() {
                min_second = Some(min_second.map_or(normal_dist, |s: f64| s.min(normal_dist)));
                if normal_dist < atlas.r2 - tolerance {
                    second_bad += 1;
                }
            }
        }
    }
    Ok(RadiiReport {
        charts: atlas.len(),
        samples: samples.len(),
        r1: atlas.r1,
        r2: atlas.r2,
        tolerance,
        max_first_kind: max_first,
        min_second_kind: min_second,
        first_kind_violations: first_bad,
        second_kind_violations: second_bad,
        plateau_violations: plateau_bad,
        passed: first_bad == 0 && second_bad == 0 && plateau_bad == 0,
    })
}
