use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::AxisBox;
use crate::expansion::{Metric, TermRecord};
use crate::frame::{MAX_SCALE, MIN_SCALE};
use crate::manifold::ModelDescriptor;

use super::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelDescriptor,
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
    /// Manifold samples used for the atlas, the radii preflight and the active boxes.
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub scales: Scales,
    /// OGA budgets per chart, strictly increasing.
    #[serde(default)]
    pub n_schedule: Vec<usize>,
    pub method: Method,
    pub target: TargetSpec,
    pub metric: Metric,
    /// Spacing of the per-chart fitting grid; defaults to `2^{-(k_max+2)/d}`.
    #[serde(default)]
    pub grid_spacing: Option<f64>,
    /// Input box on which the rect simulation of the first layer must agree.
    #[serde(default)]
    pub validity_box: Option<BoxSpec>,
    #[serde(default = "default_equivalence_points")]
    pub equivalence_points: usize,
    /// Fresh manifold samples for end-to-end errors.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    /// Overrides the default slope threshold used by `--assert`.
    #[serde(default)]
    pub assert_slope: Option<f64>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

fn default_samples() -> usize {
    4000
}

fn default_equivalence_points() -> usize {
    10_000
}

fn default_eval_samples() -> usize {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scales {
    pub k_min: i32,
    pub k_max: i32,
    /// Truncation scales for rate sweeps; each must lie in `[k_min, k_max]`.
    #[serde(default)]
    pub k_list: Option<Vec<i32>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Oga,
    Truncation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// `exp(-|x - c|^2 / (2 sigma^2))` with `c` given in base coordinates.
    GaussianBump {
        sigma: f64,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    /// Zonal degree-2 harmonic `(3 t^2 - 1)/2`, `t = <y, axis>`, on the sphere.
    SphereHarmonic {
        #[serde(default)]
        axis: Option<Vec<f64>>,
    },
    /// `sum c psi_{k,b}` in the tangent coordinates of chart 0.
    FiniteCombination { terms: Vec<TermRecord> },
}

/// Axis-aligned cube `center +- half_width`; the center defaults to the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    pub half_width: f64,
}

impl BoxSpec {
    pub fn to_box(&self, m: usize) -> Result<AxisBox, HarnessError> {
        let center = self.center.clone().unwrap_or_else(|| vec![0.0; m]);
        if center.len() != m {
            return Err(HarnessError::Config(format!("validity_box center needs {m} entries")));
        }
        AxisBox::centered(&center, self.half_width).map_err(|e| HarnessError::Config(format!("validity_box: {e}")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if self.samples == 0 || self.eval_samples == 0 {
            return bad("samples and eval_samples must be positive".into());
        }
        let s = &self.scales;
        if s.k_min > s.k_max || s.k_min < MIN_SCALE || s.k_max > MAX_SCALE {
            return bad(format!(
                "scales must satisfy {MIN_SCALE} <= k_min <= k_max <= {MAX_SCALE}, got [{}, {}]",
                s.k_min, s.k_max
            ));
        }
        if let Some(ks) = &s.k_list {
            if ks.is_empty() || ks.windows(2).any(|w| w[0] >= w[1]) || ks.iter().any(|k| *k < s.k_min || *k > s.k_max) {
                return bad("k_list must be strictly increasing and inside [k_min, k_max]".into());
            }
        }
        if self.n_schedule.windows(2).any(|w| w[0] >= w[1]) || self.n_schedule.first() == Some(&0) {
            return bad("n_schedule must be positive and strictly increasing".into());
        }
        if self.method == Method::Oga && self.n_schedule.is_empty() {
            return bad("method oga needs a non-empty n_schedule".into());
        }
        if let Some(h) = self.grid_spacing {
            if !(h > 0.0 && h.is_finite()) {
                return bad(format!("grid_spacing must be positive, got {h}"));
            }
        }
        if let TargetSpec::GaussianBump { sigma, .. } = &self.target {
            if !(*sigma > 0.0 && sigma.is_finite()) {
                return bad(format!("gaussian_bump sigma must be positive, got {sigma}"));
            }
        }
        if let TargetSpec::FiniteCombination { terms } = &self.target {
            if terms.is_empty() {
                return bad("finite_combination needs at least one term".into());
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON of everything that determines results.
    /// The output directory is left out so that runs written to different
    /// places still agree byte for byte.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let text = serde_json::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
