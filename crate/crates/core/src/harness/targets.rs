//! Target functions on the ambient space, evaluated at manifold points.

use nalgebra::DVector;

use crate::atlas::{Atlas, Chart};
use crate::expansion::{Expansion, ExpansionEvaluator, ExpansionFile};
use crate::frame::FrameParams;
use crate::manifold::{ManifoldKind, ManifoldModel};

use super::config::TargetSpec;
use super::{HarnessError, Stage};

pub enum Target {
    Gaussian {
        model: ManifoldModel,
        center: DVector<f64>,
        sigma: f64,
    },
    Harmonic {
        model: ManifoldModel,
        axis: DVector<f64>,
    },
    Combination {
        chart: Chart,
        evaluator: ExpansionEvaluator,
        terms: usize,
    },
}

impl Target {
    pub fn new(spec: &TargetSpec, model: &ManifoldModel, atlas: &Atlas, params: &FrameParams) -> Result<Self, HarnessError> {
        let n = model.base_dim();
        match spec {
            TargetSpec::GaussianBump { sigma, center } => {
                let center = match center {
                    Some(c) => c.clone(),
                    None => match model.kind() {
                        ManifoldKind::FlatPatch { .. } => vec![0.0; n],
                        ManifoldKind::Sphere2 => vec![0.0, 0.0, 1.0],
                        ManifoldKind::Circle => vec![1.0, 0.0],
                        ManifoldKind::SwissRoll { .. } => {
                            return Err(HarnessError::Config("gaussian_bump on a swiss roll needs an explicit center".into()))
                        }
                    },
                };
                if center.len() != n {
                    return Err(HarnessError::Config(format!("gaussian_bump center needs {n} base coordinates")));
                }
                Ok(Target::Gaussian {
                    model: model.clone(),
                    center: DVector::from_vec(center),
                    sigma: *sigma,
                })
            }
            TargetSpec::SphereHarmonic { axis } => {
                if !matches!(model.kind(), ManifoldKind::Sphere2) {
                    return Err(HarnessError::Config("sphere_harmonic needs a sphere2 model".into()));
                }
                let axis = DVector::from_vec(axis.clone().unwrap_or_else(|| vec![0.0, 0.0, 1.0]));
                if axis.len() != 3 || !(axis.norm() > 0.0) || !axis.norm().is_finite() {
                    return Err(HarnessError::Config("sphere_harmonic axis must be a nonzero 3-vector".into()));
                }
                Ok(Target::Harmonic {
                    model: model.clone(),
                    axis: axis.normalize(),
                })
            }
            TargetSpec::FiniteCombination { terms } => {
                let file = ExpansionFile {
                    chart_id: 0,
                    terms: terms.clone(),
                };
                let exp = Expansion::from_file(&file, params).map_err(|e| HarnessError::Config(format!("finite_combination: {e}")))?;
                let chart = atlas.chart(0).stage("target")?.clone();
                Ok(Target::Combination {
                    chart,
                    evaluator: ExpansionEvaluator::new(&exp, params).stage("target")?,
                    terms: exp.len(),
                })
            }
        }
    }

    /// Number of planted terms for a finite combination.
    pub fn planted_terms(&self) -> Option<usize> {
        match self {
            Target::Combination { terms, .. } => Some(*terms),
            _ => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Target::Gaussian { model, center, sigma } => {
                let y = model.to_base(&DVector::from_column_slice(x));
                (-(y - center).norm_squared() / (2.0 * sigma * sigma)).exp()
            }
            Target::Harmonic { model, axis } => {
                let t = model.to_base(&DVector::from_column_slice(x)).dot(axis);
                0.5 * (3.0 * t * t - 1.0)
            }
            Target::Combination { chart, evaluator, .. } => match chart.coords(x) {
                Ok((u, _)) => evaluator.eval(&u),
                Err(_) => f64::NAN,
            },
        }
    }
}
