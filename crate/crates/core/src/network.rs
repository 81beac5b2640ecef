//! Explicit sparse depth-4 rectifier networks compiled from an atlas and
//! per-chart wavelet expansions.
//!
//! Unit layout, all chart-major:
//!
//! 1. linear, `m` units per chart: local coordinates `[T|N]^T (x - a)`;
//! 2. rect, per term `8d` trapezoid pieces (fine scale then coarse, each
//!    coordinate, offsets `3, 1, -1, -3`), then per chart `4(m-d)` pieces of
//!    the normal profile;
//! 3. rect, per term the fine and coarse bodies with bias `-2(m-1)`;
//! 4. linear, one output with `alpha 2^{k/2} C_d (1, -1/2)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::atlas::Atlas;
use crate::domain::AxisBox;
use crate::error::{Error, Result};
use crate::expansion::Expansion;
use crate::frame::{ambient_term_value, rect, FrameParams, WaveletIndex, WaveletTerm};

const OFFSETS: [f64; 4] = [3.0, 1.0, -1.0, -3.0];
/// `t(y) = rect(y+3) - rect(y+1) - rect(y-1) + rect(y-3)`.
const SIGNS: [f64; 4] = [1.0, -1.0, -1.0, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Linear,
    Relu,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub width: usize,
    pub bias: Vec<f64>,
    /// `(row, col, value)` sorted by row then column; `row` indexes this
    /// layer's units and `col` the previous layer's (or the input).
    pub weights: Vec<(usize, usize, f64)>,
}

impl Layer {
    fn new(kind: LayerKind) -> Self {
        Self {
            kind,
            width: 0,
            bias: Vec::new(),
            weights: Vec::new(),
        }
    }

    fn push_unit(&mut self, bias: f64) -> usize {
        self.bias.push(bias);
        self.width += 1;
        self.width - 1
    }

    fn connect(&mut self, row: usize, col: usize, value: f64) {
        if value != 0.0 {
            self.weights.push((row, col, value));
        }
    }

    fn finish(&mut self) {
        self.weights.sort_by_key(|a| (a.0, a.1));
    }

    fn apply(&self, input: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for &(r, c, v) in &self.weights {
            out[r] += v * input[c];
        }
        if self.kind == LayerKind::Relu {
            out.iter_mut().for_each(|y| *y = rect(*y));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReluNetwork {
    m: usize,
    d: usize,
    /// Constant added to every first-layer output by [`relu_simulate_linear`].
    input_shift: f64,
    layers: Vec<Layer>,
}

impl ReluNetwork {
    pub fn new(m: usize, d: usize, input_shift: f64, layers: Vec<Layer>) -> Result<Self> {
        if layers.len() != 4 {
            return Err(Error::InvalidParameter(format!("network needs 4 layers, got {}", layers.len())));
        }
        if d == 0 || m <= d {
            return Err(Error::InvalidParameter(format!("need m > d >= 1, got m={m}, d={d}")));
        }
        if !input_shift.is_finite() {
            return Err(Error::NonFinite("input shift"));
        }
        let mut prev = m;
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.width {
                return Err(Error::InvalidParameter(format!("layer {} bias length differs from width", l + 1)));
            }
            if layer.bias.iter().chain(layer.weights.iter().map(|w| &w.2)).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("network parameter"));
            }
            if layer.weights.iter().any(|&(r, c, _)| r >= layer.width || c >= prev) {
                return Err(Error::InvalidParameter(format!("layer {} has an out-of-range connection", l + 1)));
            }
            if layer.weights.windows(2).any(|w| (w[0].0, w[0].1) >= (w[1].0, w[1].1)) {
                return Err(Error::InvalidParameter(format!("layer {} triplets not strictly sorted", l + 1)));
            }
            prev = layer.width;
        }
        if layers[3].width != 1 || layers[3].kind != LayerKind::Linear || layers[2].kind != LayerKind::Relu {
            return Err(Error::InvalidParameter("last layer must be a single linear unit after a rect layer".into()));
        }
        if layers[1].kind != LayerKind::Relu {
            return Err(Error::InvalidParameter("second layer must be rect".into()));
        }
        if !layers[0].width.is_multiple_of(m) {
            return Err(Error::InvalidParameter("first layer width is not a multiple of m".into()));
        }
        Ok(Self {
            m,
            d,
            input_shift,
            layers,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn input_shift(&self) -> f64 {
        self.input_shift
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn widths(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|l| self.layers[l].width)
    }

    pub fn nonzero_weights(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn to_file(&self) -> Result<NetworkFile> {
        Ok(NetworkFile {
            m: self.m,
            d: self.d,
            input_shift: fmt_f64(self.input_shift),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    kind: l.kind,
                    width: l.width,
                    bias: l.bias.iter().copied().map(fmt_f64).collect(),
                    weights: l.weights.iter().map(|&(r, c, v)| (r, c, fmt_f64(v))).collect(),
                })
                .collect(),
            manifest: count_units(self)?,
        })
    }

    /// Rebuilds the network and checks the stored manifest against a recount.
    pub fn from_file(file: &NetworkFile) -> Result<Self> {
        let layers = file
            .layers
            .iter()
            .map(|l| {
                Ok(Layer {
                    kind: l.kind,
                    width: l.width,
                    bias: l.bias.iter().map(|s| parse_f64(s)).collect::<Result<_>>()?,
                    weights: l
                        .weights
                        .iter()
                        .map(|(r, c, v)| Ok((*r, *c, parse_f64(v)?)))
                        .collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = Self::new(file.m, file.d, parse_f64(&file.input_shift)?, layers)?;
        if count_units(&net)? != file.manifest {
            return Err(Error::InvalidParameter("stored manifest disagrees with network structure".into()));
        }
        Ok(net)
    }
}

fn fmt_f64(v: f64) -> String {
    // Debug prints the shortest string that parses back to the same bits
    format!("{v:?}")
}

fn parse_f64(s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Parse(format!("not a decimal number: {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::NonFinite("serialized network value"));
    }
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub m: usize,
    pub d: usize,
    pub input_shift: String,
    pub layers: Vec<LayerFile>,
    pub manifest: CompilationManifest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerFile {
    pub kind: LayerKind,
    pub width: usize,
    pub bias: Vec<String>,
    pub weights: Vec<(usize, usize, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompilationManifest {
    pub m: usize,
    pub d: usize,
    pub charts: usize,
    pub terms_per_chart: Vec<usize>,
    pub total_terms: usize,
    /// Distinct `(k, b)` across charts; reported only, the network does not share terms.
    pub distinct_terms: usize,
    pub widths: [usize; 4],
    pub nonzero_weights: usize,
    /// `C(m + 4(m-d)) + 1`.
    pub c1: usize,
    /// `(8d + 2) C`.
    pub c2: usize,
}

/// `(m C, 8d N + 4C(m-d), 2N, 1)` for `C` charts and `N` terms in total.
pub fn expected_widths(charts: usize, m: usize, d: usize, total_terms: usize) -> [usize; 4] {
    [m * charts, 8 * d * total_terms + 4 * charts * (m - d), 2 * total_terms, 1]
}

/// Upper bound on nonzero weights added per term: `8d(d+1) + 2(8d + 4(m-d) + 1) + 2`.
pub fn connection_budget_per_term(d: usize, m: usize) -> usize {
    8 * d * (d + 1) + 2 * (8 * d + 4 * (m - d) + 1) + 2
}

fn manifest_constants(charts: usize, m: usize, d: usize) -> (usize, usize) {
    (charts * (m + 4 * (m - d)) + 1, (8 * d + 2) * charts)
}

/// Number of distinct `(k, b)` across all expansions.
pub fn shared_term_count(expansions: &[Expansion]) -> usize {
    expansions
        .iter()
        .flat_map(|e| e.terms().iter().map(|(i, _)| i))
        .collect::<BTreeSet<_>>()
        .len()
}

fn terms_by_chart<'e>(atlas: &Atlas, expansions: &'e [Expansion], params: &FrameParams) -> Result<Vec<Vec<(&'e WaveletIndex, f64)>>> {
    let d = atlas.dim();
    params.check_dim(d)?;
    let mut per_chart = vec![Vec::new(); atlas.len()];
    for e in expansions {
        let slot = per_chart.get_mut(e.chart_id).ok_or(Error::UnknownChart(e.chart_id))?;
        for (idx, c) in e.terms() {
            params.check_dim(idx.dim())?;
            if !c.is_finite() {
                return Err(Error::NonFinite("expansion coefficient"));
            }
            slot.push((idx, *c));
        }
    }
    Ok(per_chart)
}

pub fn compile_network(
    atlas: &Atlas,
    expansions: &[Expansion],
    params: &FrameParams,
) -> Result<(ReluNetwork, CompilationManifest)> {
    let (m, d) = (atlas.ambient_dim(), atlas.dim());
    if m <= d {
        return Err(Error::InvalidParameter(format!("ambient dimension {m} must exceed {d}")));
    }
    let ext = atlas.extension()?;
    let per_chart = terms_by_chart(atlas, expansions, params)?;
    let (a1, a2) = (ext.plateau(), ext.support());
    let profile_slope = 2.0 / (a2 - a1);
    let body_bias = -2.0 * (m as f64 - 1.0);

    let mut l1 = Layer::new(LayerKind::Linear);
    let mut l2 = Layer::new(LayerKind::Relu);
    let mut l3 = Layer::new(LayerKind::Relu);
    let mut l4 = Layer::new(LayerKind::Linear);
    l4.push_unit(0.0);

    for (i, chart) in atlas.charts.iter().enumerate() {
        let base = i * m;
        let frame: Vec<Vec<f64>> = chart
            .tangent_basis()
            .column_iter()
            .chain(chart.normal_basis().column_iter())
            .map(|c| c.iter().copied().collect())
            .collect();
        for row in &frame {
            let shift: f64 = row.iter().zip(chart.anchor().iter()).map(|(w, a)| w * a).sum();
            let unit = l1.push_unit(-shift);
            for (c, &w) in row.iter().enumerate() {
                l1.connect(unit, c, w);
            }
        }

        let first_body = l3.width;
        for &(idx, alpha) in &per_chart[i] {
            let term = WaveletTerm::new(idx, params);
            let b = term.offset();
            let fine_body = l3.push_unit(body_bias);
            let coarse_body = l3.push_unit(body_bias);
            for (body, sigma) in [(fine_body, term.fine_dilation()), (coarse_body, term.coarse_dilation())] {
                for (j, bj) in b.iter().enumerate() {
                    for (c, s) in OFFSETS.iter().zip(SIGNS) {
                        let unit = l2.push_unit(c - sigma * bj);
                        l2.connect(unit, base + j, sigma);
                        l3.connect(body, unit, s);
                    }
                }
            }
            let w = alpha * term.amplitude();
            l4.connect(0, fine_body, w);
            l4.connect(0, coarse_body, -0.5 * w);
        }

        // normal profile pieces, shared by every body of this chart
        for r in 0..m - d {
            for (off, s) in [a2, a1, -a1, -a2].iter().zip(SIGNS) {
                let unit = l2.push_unit(*off);
                l2.connect(unit, base + d + r, 1.0);
                for body in first_body..l3.width {
                    l3.connect(body, unit, s * profile_slope);
                }
            }
        }
    }
    for l in [&mut l1, &mut l2, &mut l3, &mut l4] {
        l.finish();
    }
    let net = ReluNetwork::new(m, d, 0.0, vec![l1, l2, l3, l4])?;
    let manifest = count_units(&net)?;
    let declared: Vec<usize> = per_chart.iter().map(Vec::len).collect();
    if manifest.terms_per_chart != declared || manifest.distinct_terms != shared_term_count(expansions) {
        return Err(Error::InvalidParameter("compiled structure does not match the expansions".into()));
    }
    Ok((net, manifest))
}

/// A wavelet term recovered from the network weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TermSource {
    pub chart: usize,
    pub index: WaveletIndex,
    /// Layer-3 units of the fine and coarse bodies.
    pub bodies: (usize, usize),
}

/// Recovers chart and `(k, b)` of every term from the layer-2 weights and
/// biases: the four pieces of a trapezoid on coordinate `j` have biases
/// `c - sigma b_j` with offsets `c` summing to zero.
pub fn term_sources(net: &ReluNetwork) -> Result<Vec<TermSource>> {
    let (m, d) = (net.m, net.d);
    let [l1, l2, l3, _] = [0, 1, 2, 3].map(|l| &net.layers[l]);
    let mut piece: Vec<Option<(usize, f64)>> = vec![None; l2.width];
    for &(r, c, v) in &l2.weights {
        if piece[r].replace((c, v)).is_some() {
            return Err(Error::InvalidParameter(format!("layer-2 unit {r} has more than one input")));
        }
    }
    let mut inputs: Vec<Vec<usize>> = vec![Vec::new(); l3.width];
    for &(r, c, _) in &l3.weights {
        inputs[r].push(c);
    }
    if l3.width % 2 != 0 {
        return Err(Error::InvalidParameter("layer 3 must hold pairs of bodies".into()));
    }
    let mut out = Vec::with_capacity(l3.width / 2);
    for p in 0..l3.width / 2 {
        let body = 2 * p;
        let mut by_coord: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        for &u in &inputs[body] {
            let (col, sigma) = piece[u].ok_or_else(|| Error::InvalidParameter(format!("layer-2 unit {u} has no input")))?;
            if col % m < d {
                by_coord.entry(col).or_default().push((sigma, l2.bias[u] + sigma * net.input_shift));
            }
        }
        let cols: Vec<usize> = by_coord.keys().copied().collect();
        if cols.len() != d || cols.iter().any(|c| c / m != cols[0] / m) || cols[0] / m >= l1.width / m {
            return Err(Error::InvalidParameter(format!("body {body} does not read d coordinates of one chart")));
        }
        let sigma = by_coord[&cols[0]][0].0;
        let k = (d as f64 * sigma.log2()).round() as i32;
        let spacing = (-(k as f64) / d as f64).exp2();
        let lattice = cols
            .iter()
            .map(|c| {
                let pieces = &by_coord[c];
                let mean = pieces.iter().map(|p| p.1).sum::<f64>() / pieces.len() as f64;
                (-mean / sigma / spacing).round() as i64
            })
            .collect();
        out.push(TermSource {
            chart: cols[0] / m,
            index: WaveletIndex::new(k, lattice)?,
            bodies: (body, body + 1),
        });
    }
    Ok(out)
}

/// Recounts the manifest from the network structure alone.
pub fn count_units(net: &ReluNetwork) -> Result<CompilationManifest> {
    let (m, d) = (net.m, net.d);
    let charts = net.layers[0].width / m;
    let sources = term_sources(net)?;
    let mut terms_per_chart = vec![0; charts];
    for s in &sources {
        terms_per_chart[s.chart] += 1;
    }
    let distinct = sources.iter().map(|s| &s.index).collect::<BTreeSet<_>>().len();
    let (c1, c2) = manifest_constants(charts, m, d);
    Ok(CompilationManifest {
        m,
        d,
        charts,
        terms_per_chart,
        total_terms: sources.len(),
        distinct_terms: distinct,
        widths: net.widths(),
        nonzero_weights: net.nonzero_weights(),
        c1,
        c2,
    })
}

fn check_input(net: &ReluNetwork, x: &[f64]) -> Result<()> {
    if x.len() != net.m {
        return Err(Error::DimensionMismatch {
            expected: net.m,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network input"));
    }
    Ok(())
}

pub fn evaluate_network(net: &ReluNetwork, x: &[f64]) -> Result<f64> {
    check_input(net, x)?;
    let mut a = x.to_vec();
    for layer in &net.layers {
        a = layer.apply(&a);
    }
    Ok(a[0])
}

/// Copy of the network with the output weights of chart `chart`'s terms removed.
pub fn mask_chart(net: &ReluNetwork, chart: usize) -> Result<ReluNetwork> {
    let drop: BTreeSet<usize> = term_sources(net)?
        .into_iter()
        .filter(|s| s.chart == chart)
        .flat_map(|s| [s.bodies.0, s.bodies.1])
        .collect();
    let mut layers = net.layers.clone();
    layers[3].weights.retain(|(_, c, _)| !drop.contains(c));
    ReluNetwork::new(net.m, net.d, net.input_shift, layers)
}

/// Per-chart sums `sum_terms alpha psi~(x)` in each chart's local coordinates.
pub fn analytic_contributions(
    atlas: &Atlas,
    expansions: &[Expansion],
    params: &FrameParams,
    x: &[f64],
) -> Result<Vec<f64>> {
    let m = atlas.ambient_dim();
    if x.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: x.len() });
    }
    let ext = atlas.extension()?;
    let per_chart = terms_by_chart(atlas, expansions, params)?;
    let mut out = vec![0.0; atlas.len()];
    for (i, terms) in per_chart.iter().enumerate() {
        if terms.is_empty() {
            continue;
        }
        let (u, v) = atlas.charts[i].coords(x)?;
        let profile = ext.normal_profile(&v);
        out[i] = terms
            .iter()
            .map(|(idx, c)| c * ambient_term_value(&WaveletTerm::new(idx, params), &u, profile, m))
            .sum();
    }
    Ok(out)
}

/// The compiled network's defining sum, computed without the network.
pub fn analytic_evaluate(atlas: &Atlas, expansions: &[Expansion], params: &FrameParams, x: &[f64]) -> Result<f64> {
    Ok(analytic_contributions(atlas, expansions, params, x)?.iter().sum())
}

/// Smallest shift keeping every first-layer pre-activation nonnegative on `region`.
pub fn required_shift(net: &ReluNetwork, region: &AxisBox) -> Result<f64> {
    if region.dim() != net.m {
        return Err(Error::DimensionMismatch {
            expected: net.m,
            got: region.dim(),
        });
    }
    let l1 = &net.layers[0];
    let center: Vec<f64> = region.lo().iter().zip(region.hi()).map(|(a, b)| 0.5 * (a + b)).collect();
    let half: Vec<f64> = region.lo().iter().zip(region.hi()).map(|(a, b)| 0.5 * (b - a)).collect();
    let mut at_center = l1.bias.clone();
    let mut spread = vec![0.0; l1.width];
    for &(r, c, v) in &l1.weights {
        at_center[r] += v * center[c];
        spread[r] += v.abs() * half[c];
    }
    Ok(at_center
        .iter()
        .zip(&spread)
        .map(|(a, s)| a.abs() + s)
        .fold(0.0, f64::max))
}

/// Replaces the linear first layer by rect units with bias shifted by `shift`,
/// and compensates in the second layer. Outputs agree on `region`; outside it
/// the rect may clamp.
pub fn relu_simulate_linear(net: &ReluNetwork, shift: f64, region: &AxisBox) -> Result<ReluNetwork> {
    if net.layers[0].kind != LayerKind::Linear {
        return Err(Error::InvalidParameter("first layer is already rectified".into()));
    }
    let required = required_shift(net, region)?;
    if !(shift >= required) || !shift.is_finite() {
        return Err(Error::BiasTooSmall { bias: shift, required });
    }
    let mut layers = net.layers.clone();
    layers[0].kind = LayerKind::Relu;
    layers[0].bias.iter_mut().for_each(|b| *b += shift);
    let l2 = &mut layers[1];
    for &(r, _, v) in &l2.weights {
        l2.bias[r] -= v * shift;
    }
    ReluNetwork::new(net.m, net.d, net.input_shift + shift, layers)
}
