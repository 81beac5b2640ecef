//! Synthetic manifolds isometrically embedded in R^m.
//!
//! Each model lives in a low-dimensional base space R^n (n = 2 for the
//! circle, 3 for the sphere and swiss roll, d for a flat patch) and is mapped
//! into R^m by `x = shift + E y` with `E` an m-by-n matrix with orthonormal
//! columns.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifoldKind {
    /// Unit circle.
    Circle,
    /// Unit sphere in R^3.
    Sphere2,
    /// The cube `[-half_width, half_width]^d`.
    FlatPatch { d: usize, half_width: f64 },
    /// `(t cos t, h, t sin t)` for `t` in `[t_min, t_max]`, `h` in `[0, height]`.
    SwissRoll { t_min: f64, t_max: f64, height: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescriptor {
    pub manifold: ManifoldKind,
    /// Ambient dimension.
    pub m: usize,
    /// Seed for a random orthonormal embedding and shift; `None` pads the
    /// base coordinates with zeros.
    #[serde(default)]
    pub embedding_seed: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct ManifoldModel {
    descriptor: ModelDescriptor,
    d: usize,
    embedding: DMatrix<f64>,
    shift: DVector<f64>,
}

impl ManifoldModel {
    pub fn new(descriptor: ModelDescriptor) -> Result<Self> {
        let (d, n) = match &descriptor.manifold {
            ManifoldKind::Circle => (1, 2),
            ManifoldKind::Sphere2 => (2, 3),
            ManifoldKind::FlatPatch { d, half_width } => {
                if *d == 0 || !(*half_width > 0.0) {
                    return Err(Error::InvalidParameter("flat patch needs d >= 1 and half_width > 0".into()));
                }
                (*d, *d)
            }
            ManifoldKind::SwissRoll { t_min, t_max, height } => {
                if !(*t_min > 0.0 && t_max > t_min && *height > 0.0) {
                    return Err(Error::InvalidParameter("swiss roll needs 0 < t_min < t_max and height > 0".into()));
                }
                (2, 3)
            }
        };
        let m = descriptor.m;
        if m < n || m <= d {
            return Err(Error::InvalidParameter(format!(
                "ambient dimension {m} too small for a {d}-manifold with base dimension {n}"
            )));
        }
        let (embedding, shift) = match descriptor.embedding_seed {
            None => {
                let mut e = DMatrix::zeros(m, n);
                for j in 0..n {
                    e[(j, j)] = 1.0;
                }
                (e, DVector::zeros(m))
            }
            Some(seed) => random_embedding(m, n, seed),
        };
        Ok(Self {
            descriptor,
            d,
            embedding,
            shift,
        })
    }

    pub fn circle(m: usize, embedding_seed: Option<u64>) -> Result<Self> {
        Self::new(ModelDescriptor {
            manifold: ManifoldKind::Circle,
            m,
            embedding_seed,
        })
    }

    pub fn sphere2(m: usize, embedding_seed: Option<u64>) -> Result<Self> {
        Self::new(ModelDescriptor {
            manifold: ManifoldKind::Sphere2,
            m,
            embedding_seed,
        })
    }

    pub fn flat_patch(d: usize, half_width: f64, m: usize, embedding_seed: Option<u64>) -> Result<Self> {
        Self::new(ModelDescriptor {
            manifold: ManifoldKind::FlatPatch { d, half_width },
            m,
            embedding_seed,
        })
    }

    pub fn descriptor(&self) -> &ModelDescriptor {
        &self.descriptor
    }

    pub fn kind(&self) -> &ManifoldKind {
        &self.descriptor.manifold
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn ambient_dim(&self) -> usize {
        self.descriptor.m
    }

    pub fn base_dim(&self) -> usize {
        self.embedding.ncols()
    }

    pub fn embedding(&self) -> &DMatrix<f64> {
        &self.embedding
    }

    pub fn surface_area(&self) -> Option<f64> {
        Some(match &self.descriptor.manifold {
            ManifoldKind::Circle => 2.0 * PI,
            ManifoldKind::Sphere2 => 4.0 * PI,
            ManifoldKind::FlatPatch { d, half_width } => (2.0 * half_width).powi(*d as i32),
            ManifoldKind::SwissRoll { t_min, t_max, height } => {
                let prim = |t: f64| 0.5 * (t * (1.0 + t * t).sqrt() + t.asinh());
                height * (prim(*t_max) - prim(*t_min))
            }
        })
    }

    pub fn embed(&self, base: &[f64]) -> DVector<f64> {
        &self.shift + &self.embedding * DVector::from_column_slice(base)
    }

    pub fn to_base(&self, x: &DVector<f64>) -> DVector<f64> {
        self.embedding.tr_mul(&(x - &self.shift))
    }

    /// Distance-like residual of the model equation: the component of `x`
    /// outside the embedded base space plus the base-space equation error.
    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        let y = self.to_base(x);
        let off_span = (x - self.embed(y.as_slice())).norm();
        let on = match &self.descriptor.manifold {
            ManifoldKind::Circle | ManifoldKind::Sphere2 => (y.norm() - 1.0).abs(),
            ManifoldKind::FlatPatch { half_width, .. } => {
                y.iter().map(|v| (v.abs() - half_width).max(0.0)).fold(0.0, f64::max)
            }
            ManifoldKind::SwissRoll { t_min, t_max, height } => {
                let t = (y[0] * y[0] + y[2] * y[2]).sqrt();
                let on_curve = (DVector::from_vec(swiss_point(t, y[1])) - &y).norm();
                let out_of_range = (t_min - t).max(t - t_max).max(-y[1]).max(y[1] - height).max(0.0);
                on_curve + out_of_range
            }
        };
        off_span + on
    }

    /// `n` points on the manifold. Circle, sphere and flat patch are sampled
    /// uniformly in surface measure analytically; the swiss roll by rejection.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        if n == 0 {
            return Err(Error::InvalidParameter("need at least one sample".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let base: Vec<f64> = match &self.descriptor.manifold {
                ManifoldKind::Circle => {
                    let th: f64 = rng.gen_range(0.0..2.0 * PI);
                    vec![th.cos(), th.sin()]
                }
                ManifoldKind::Sphere2 => loop {
                    let g: [f64; 3] = [
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                    ];
                    let r = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                    if r > 1e-12 {
                        break g.iter().map(|v| v / r).collect();
                    }
                },
                ManifoldKind::FlatPatch { d, half_width } => {
                    (0..*d).map(|_| rng.gen_range(-half_width..=*half_width)).collect()
                }
                ManifoldKind::SwissRoll { t_min, t_max, height } => {
                    let t: f64 = rng.gen_range(*t_min..=*t_max);
                    let accept: f64 = rng.gen_range(0.0..1.0);
                    if accept * (1.0 + t_max * t_max).sqrt() > (1.0 + t * t).sqrt() {
                        continue;
                    }
                    let h: f64 = rng.gen_range(0.0..=*height);
                    swiss_point(t, h)
                }
            };
            out.push(self.embed(&base));
        }
        Ok(out)
    }

    /// Analytic orthonormal tangent basis (m by d) at a manifold point, for
    /// models where one is available to the atlas builder.
    pub fn analytic_tangent(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let y = self.to_base(x);
        let base = match &self.descriptor.manifold {
            ManifoldKind::Circle => DMatrix::from_column_slice(2, 1, &[-y[1], y[0]]).normalize(),
            ManifoldKind::Sphere2 => {
                let p = y.normalize();
                // any vector not parallel to p seeds the first tangent direction
                let seed = if p[0].abs() < 0.9 {
                    DVector::from_vec(vec![1.0, 0.0, 0.0])
                } else {
                    DVector::from_vec(vec![0.0, 1.0, 0.0])
                };
                let t1 = (&seed - &p * p.dot(&seed)).normalize();
                let t2 = p.cross(&t1);
                DMatrix::from_columns(&[t1, t2])
            }
            ManifoldKind::FlatPatch { d, .. } => DMatrix::identity(*d, *d),
            ManifoldKind::SwissRoll { .. } => return None,
        };
        Some(&self.embedding * base)
    }

    /// Unit vector in the embedded base space orthogonal to `tangent`, when
    /// the base space has exactly one extra dimension.
    pub fn in_span_normal(&self, tangent: &DMatrix<f64>) -> Option<DVector<f64>> {
        if self.base_dim() != self.d + 1 {
            return None;
        }
        let mut best: Option<DVector<f64>> = None;
        for col in self.embedding.column_iter() {
            let mut v = col.into_owned();
            for _ in 0..2 {
                for t in tangent.column_iter() {
                    v -= t * t.dot(&v);
                }
            }
            if best.as_ref().is_none_or(|b| v.norm() > b.norm()) {
                best = Some(v);
            }
        }
        best.filter(|v| v.norm() > 1e-8).map(|v| v.normalize())
    }

    /// The manifold point near `anchor` whose tangent coordinates
    /// `T^T (x - anchor)` equal `u`; `Ok(None)` when no such point exists on
    /// the anchor's sheet.
    pub fn lift(&self, anchor: &DVector<f64>, tangent: &DMatrix<f64>, u: &[f64]) -> Result<Option<DVector<f64>>> {
        let a = self.to_base(anchor);
        let tb = self.embedding.tr_mul(tangent);
        let uv = DVector::from_column_slice(u);
        let base = match &self.descriptor.manifold {
            ManifoldKind::Circle | ManifoldKind::Sphere2 => {
                let r2 = uv.norm_squared();
                if r2 >= 1.0 {
                    return Ok(None);
                }
                // y = a + T u + s a with (1+s)^2 + |u|^2 = 1 on the near branch
                &a * (1.0 - r2).sqrt() + &tb * &uv
            }
            ManifoldKind::FlatPatch { half_width, .. } => {
                let y = &a + &tb * &uv;
                if y.iter().any(|v| v.abs() > *half_width * (1.0 + 1e-12)) {
                    return Ok(None);
                }
                y
            }
            ManifoldKind::SwissRoll { t_min, t_max, height } => {
                match swiss_newton(&a, &tb, &uv)? {
                    Some((t, h)) if t >= *t_min && t <= *t_max && h >= 0.0 && h <= *height => swiss_point(t, h).into(),
                    _ => return Ok(None),
                }
            }
        };
        Ok(Some(self.embed(base.as_slice())))
    }
}

fn swiss_point(t: f64, h: f64) -> Vec<f64> {
    vec![t * t.cos(), h, t * t.sin()]
}

fn swiss_params(y: &DVector<f64>) -> (f64, f64) {
    ((y[0] * y[0] + y[2] * y[2]).sqrt(), y[1])
}

/// Newton iteration for `T_b^T (X(t, h) - a) = u` started at the anchor's parameters.
fn swiss_newton(a: &DVector<f64>, tb: &DMatrix<f64>, u: &DVector<f64>) -> Result<Option<(f64, f64)>> {
    let (mut t, mut h) = swiss_params(a);
    for _ in 0..60 {
        let x = DVector::from_vec(swiss_point(t, h));
        let f = tb.tr_mul(&(x - a)) - u;
        if f.norm() <= 1e-13 {
            return Ok(Some((t, h)));
        }
        let dx_dt = DVector::from_vec(vec![t.cos() - t * t.sin(), 0.0, t.sin() + t * t.cos()]);
        let dx_dh = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let jac = tb.tr_mul(&DMatrix::from_columns(&[dx_dt, dx_dh]));
        let step = match jac.lu().solve(&f) {
            Some(s) => s,
            None => return Ok(None),
        };
        t -= step[0];
        h -= step[1];
        if !t.is_finite() || !h.is_finite() {
            return Err(Error::InversionFailed("swiss roll Newton iteration diverged".into()));
        }
    }
    let x = DVector::from_vec(swiss_point(t, h));
    if (tb.tr_mul(&(x - a)) - u).norm() <= 1e-10 {
        Ok(Some((t, h)))
    } else {
        Err(Error::InversionFailed("swiss roll Newton iteration did not converge".into()))
    }
}

/// Orthonormal m-by-n embedding from the QR factor of a Gaussian matrix,
/// plus a shift with entries in [-1, 1].
fn random_embedding(m: usize, n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let shift = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..=1.0));
    (q, shift)
}
