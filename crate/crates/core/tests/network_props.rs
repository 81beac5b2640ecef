//! Compiled networks against width formulas worked out by hand, a dense
//! matrix evaluator written here, and the analytic per-chart sum.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rectnet::atlas::{Atlas, Chart};
use rectnet::domain::AxisBox;
use rectnet::error::Error;
use rectnet::expansion::Expansion;
use rectnet::frame::{ambient_psi, psi_kb, AmbientExtensionParams, FrameParams, WaveletIndex};
use rectnet::network::*;

fn random_chart(rng: &mut ChaCha8Rng, m: usize, d: usize, delta: f64) -> Chart {
    let g = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let anchor = DVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0));
    Chart::new(anchor, q.columns(0, d).into_owned(), q.columns(d, m - d).into_owned(), delta).unwrap()
}

fn atlas_of(charts: Vec<Chart>, delta: f64) -> Atlas {
    Atlas {
        charts,
        delta,
        r1: 0.5 * delta,
        r2: 0.5 * 3f64.sqrt() * delta,
        c_gamma_bound: None,
        seed: 0,
        model: None,
    }
}

fn random_terms(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Vec<(WaveletIndex, f64)> {
    let mut out: Vec<(WaveletIndex, f64)> = Vec::new();
    while out.len() < n {
        let k = rng.gen_range(-1..=3);
        let reach = (3.0 * (k as f64 / d as f64).exp2()).ceil() as i64;
        let lattice = (0..d).map(|_| rng.gen_range(-reach..=reach)).collect();
        let idx = WaveletIndex::new(k, lattice).unwrap();
        if out.iter().all(|(i, _)| *i != idx) {
            out.push((idx, rng.gen_range(-2.0..2.0)));
        }
    }
    out
}

struct Setup {
    atlas: Atlas,
    expansions: Vec<Expansion>,
    params: FrameParams,
}

fn random_setup(seed: u64, charts: usize, m: usize, d: usize, per_chart: &[usize]) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let delta = 1.0;
    let atlas = atlas_of((0..charts).map(|_| random_chart(&mut rng, m, d, delta)).collect(), delta);
    let expansions = per_chart
        .iter()
        .enumerate()
        .map(|(i, &n)| Expansion::new(i, random_terms(&mut rng, d, n)).unwrap())
        .collect();
    Setup {
        atlas,
        expansions,
        params: FrameParams::new(d).unwrap(),
    }
}

/// Points near the charts, with normal offsets straddling the plateau and
/// support radii, plus a share of unstructured points.
fn probe_points(atlas: &Atlas, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ext = atlas.extension().unwrap();
    let m = atlas.ambient_dim();
    let d = atlas.dim();
    (0..n)
        .map(|p| {
            if p % 5 == 4 {
                return (0..m).map(|_| rng.gen_range(-5.0..5.0)).collect();
            }
            let c = &atlas.charts[rng.gen_range(0..atlas.len())];
            let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let v: Vec<f64> = (0..m - d).map(|_| rng.gen_range(-1.2..1.2) * ext.support()).collect();
            c.reconstruct(&u, &v).iter().copied().collect()
        })
        .collect()
}

/// Independent evaluator: each layer as a dense matrix.
fn dense_eval(net: &ReluNetwork, x: &[f64]) -> f64 {
    let mut a = DVector::from_column_slice(x);
    for layer in net.layers() {
        let mut w = DMatrix::zeros(layer.width, a.len());
        for &(r, c, v) in &layer.weights {
            w[(r, c)] = v;
        }
        a = w * a + DVector::from_column_slice(&layer.bias);
        if layer.kind == LayerKind::Relu {
            a.apply(|y| *y = y.max(0.0));
        }
    }
    a[0]
}

fn assert_equivalent(net: &ReluNetwork, s: &Setup, points: &[Vec<f64>]) {
    for x in points {
        let a = analytic_evaluate(&s.atlas, &s.expansions, &s.params, x).unwrap();
        let b = evaluate_network(net, x).unwrap();
        assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "x={x:?}: network {b} vs analytic {a}");
    }
}

#[test]
fn plug_in_widths_three_charts() {
    let s = random_setup(1, 3, 3, 2, &[10, 10, 10]);
    let (net, man) = compile_network(&s.atlas, &s.expansions, &s.params).unwrap();
    assert_eq!(net.widths(), [9, 492, 60, 1]);
    assert_eq!(man.widths, [9, 492, 60, 1]);
    assert_eq!(man.terms_per_chart, vec![10, 10, 10]);
    assert_eq!(man.total_terms, 30);
}

#[test]
fn plug_in_widths_single_term() {
    let s = random_setup(2, 1, 2, 1, &[1]);
    let (net, _) = compile_network(&s.atlas, &s.expansions, &s.params).unwrap();
    assert_eq!(net.widths(), [2, 12, 2, 1]);
}

#[test]
fn empty_expansions_give_zero_network() {
    let s = random_setup(3, 4, 5, 2, &[]);
    let (net, man) = compile_network(&s.atlas, &[], &s.params).unwrap();
    assert_eq!(net.widths(), [20, 4 * 4 * 3, 0, 1]);
    assert_eq!(man.total_terms, 0);
    for x in probe_points(&s.atlas, 200, 4) {
        assert_eq!(evaluate_network(&net, &x).unwrap(), 0.0);
    }
    // an empty expansion object for a chart is the same as none
    let (net2, _) = compile_network(&s.atlas, &[Expansion::empty(2)], &s.params).unwrap();
    assert_eq!(net, net2);
}

#[test]
fn rejects_unknown_chart_and_bad_input() {
    let s = random_setup(5, 2, 4, 2, &[2, 2]);
    let bad = vec![Expansion::new(7, vec![(WaveletIndex::new(0, vec![0, 0]).unwrap(), 1.0)]).unwrap()];
    assert!(matches!(compile_network(&s.atlas, &bad, &s.params), Err(Error::UnknownChart(7))));
    let (net, _) = compile_network(&s.atlas, &s.expansions, &s.params).unwrap();
    assert!(evaluate_network(&net, &[0.0; 3]).is_err());
    assert!(evaluate_network(&net, &[f64::NAN, 0.0, 0.0, 0.0]).is_err());
    let wrong_d = FrameParams::new(3).unwrap();
    assert!(compile_network(&s.atlas, &s.expansions, &wrong_d).is_err());
}

#[test]
fn single_flat_chart_single_term() {
    let m = 3;
    let chart = Chart::new(
        DVector::from_vec(vec![0.3, -0.2, 1.0]),
        DMatrix::identity(m, 2),
        DMatrix::from_column_slice(m, 1, &[0.0, 0.0, 1.0]),
        1.0,
    )
    .unwrap();
    let atlas = atlas_of(vec![chart], 1.0);
    let params = FrameParams::new(2).unwrap();
    let idx = WaveletIndex::new(1, vec![1, -1]).unwrap();
    let alpha = -0.75;
    let exps = vec![Expansion::new(0, vec![(idx.clone(), alpha)]).unwrap()];
    let (net, _) = compile_network(&atlas, &exps, &params).unwrap();
    let ext = AmbientExtensionParams::new(3, 2, 0.5, 0.5 * 3f64.sqrt()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..2000 {
        let x: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let local = atlas.charts[0].local(&x).unwrap();
        let want = alpha * ambient_psi(&local, &idx, &ext, &params).unwrap();
        let got = evaluate_network(&net, &x).unwrap();
        assert!((want - got).abs() <= 1e-12 * (1.0 + want.abs()), "{want} vs {got}");
    }
}

#[test]
fn plateau_reduces_to_tangent_wavelet() {
    let s = random_setup(7, 1, 6, 2, &[1]);
    let (idx, alpha) = s.expansions[0].terms()[0].clone();
    let chart = &s.atlas.charts[0];
    let plateau = s.atlas.extension().unwrap().plateau();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..500 {
        let u: Vec<f64> = (0..2).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-plateau..plateau)).collect();
        let x: Vec<f64> = chart.reconstruct(&u, &v).iter().copied().collect();
        let a = analytic_evaluate(&s.atlas, &s.expansions, &s.params, &x).unwrap();
        let want = alpha * psi_kb(&u, &idx, &s.params).unwrap();
        assert!((a - want).abs() <= 1e-10 * (1.0 + want.abs()), "{a} vs {want}");
    }
}

#[test]
fn far_points_evaluate_to_zero() {
    let s = random_setup(9, 3, 5, 2, &[6, 6, 6]);
    let (net, _) = compile_network(&s.atlas, &s.expansions, &s.params).unwrap();
    let r2 = s.atlas.r2;
    for (i, c) in s.atlas.charts.iter().enumerate() {
        // beyond r2 along one normal axis of this chart, far from the others
        let mut v = vec![0.0; 3];
        v[i % 3] = 50.0 * r2;
        let x: Vec<f64> = c.reconstruct(&[0.1, -0.2], &v).iter().copied().collect();
        let contributions = analytic_contributions(&s.atlas, &s.expansions, &s.params, &x).unwrap();
        assert_eq!(contributions[i], 0.0);
    }
    let x = vec![1e3; 5];
    assert_eq!(analytic_evaluate(&s.atlas, &s.expansions, &s.params, &x).unwrap(), 0.0);
    assert_eq!(evaluate_network(&net, &x).unwrap(), 0.0);
}

#[test]
fn network_matches_dense_oracle_and_analytic_sum() {
    for (seed, (c, m, d)) in [(1, 2, 1), (2, 4, 2), (3, 6, 3), (2, 10, 2)].into_iter().enumerate() {
        let per: Vec<usize> = (0..c).map(|i| 3 + 2 * i).collect();
        let s = random_setup(100 + seed as u64, c, m, d, &per);
        let (net, _) = compile_network(&s.atlas, &s.expansions, &s.params).unwrap();
        let points = probe_points(&s.atlas, 10_000, seed as u64);
        for x in points.iter().take(500) {
            let a = dense_eval(&net, x);
            let b = evaluate_network(&net, x).unwrap();
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        assert_equivalent(&net, &s, &points);
    }
}

#[test]
fn manifest_recount_and_constants() {
    let s = random_setup(11, 3, 7, 3, &[4, 0, 9]);
    let (net, man) = compile_network(&s.atlas, &s.expansions, &s.params).unwrap();
    assert_eq!(count_units(&net).unwrap(), man);
    assert_eq!(man.c1, 3 * (7 + 4 * 4) + 1);
    assert_eq!(man.c2, (8 * 3 + 2) * 3);
    assert_eq!(man.terms_per_chart, vec![4, 0, 9]);
    let sources = term_sources(&net).unwrap();
    let want: Vec<(usize, WaveletIndex)> = s
        .expansions
        .iter()
        .flat_map(|e| e.terms().iter().map(move |(i, _)| (e.chart_id, i.clone())))
        .collect();
    let got: Vec<(usize, WaveletIndex)> = sources.into_iter().map(|t| (t.chart, t.index)).collect();
    assert_eq!(got, want);
}

#[test]
fn shared_terms_counted_once() {
    let s = random_setup(12, 2, 4, 2, &[5]);
    let terms = s.expansions[0].terms().to_vec();
    let exps = vec![Expansion::new(0, terms.clone()).unwrap(), Expansion::new(1, terms).unwrap()];
    assert_eq!(shared_term_count(&exps), 5);
    let (_, man) = compile_network(&s.atlas, &exps, &s.params).unwrap();
    assert_eq!(man.total_terms, 10);
    assert_eq!(man.distinct_terms, 5);
}

#[test]
fn nonzeros_grow_within_budget() {
    for (m, d) in [(2, 1), (5, 2), (9, 3)] {
        let small = random_setup(13, 2, m, d, &[3, 3]);
        let large = random_setup(13, 2, m, d, &[13, 13]);
        let (a, _) = compile_network(&small.atlas, &small.expansions, &small.params).unwrap();
        let (b, _) = compile_network(&large.atlas, &large.expansions, &large.params).unwrap();
        let per_term = (b.nonzero_weights() - a.nonzero_weights()) as f64 / 20.0;
        assert!(per_term <= connection_budget_per_term(d, m) as f64, "m={m} d={d}: {per_term}");
    }
}

#[test]
fn simulated_first_layer_agrees_on_box() {
    let s = random_setup(14, 3, 5, 2, &[4, 5, 6]);
    let (net, man) = compile_network(&s.atlas, &s.expansions, &s.params).unwrap();
    let region = AxisBox::cube(5, 4.0).unwrap();
    let need = required_shift(&net, &region).unwrap();
    assert!(matches!(
        relu_simulate_linear(&net, 0.5 * need, &region),
        Err(Error::BiasTooSmall { .. })
    ));
    let sim = relu_simulate_linear(&net, need + 1.0, &region).unwrap();
    assert_eq!(sim.widths(), net.widths());
    assert_eq!(sim.layers()[0].kind, LayerKind::Relu);
    assert_eq!(count_units(&sim).unwrap(), man);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let points: Vec<Vec<f64>> = (0..10_000).map(|_| (0..5).map(|_| rng.gen_range(-4.0..4.0)).collect()).collect();
    for x in &points {
        let a = evaluate_network(&net, x).unwrap();
        let b = evaluate_network(&sim, x).unwrap();
        assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }
    assert_equivalent(&sim, &s, &points);
}

#[test]
fn masking_a_chart_removes_exactly_its_sum() {
    let s = random_setup(16, 3, 4, 2, &[5, 5, 5]);
    let (net, _) = compile_network(&s.atlas, &s.expansions, &s.params).unwrap();
    for (p, x) in probe_points(&s.atlas, 300, 17).iter().enumerate() {
        let i = p % 3;
        let parts = analytic_contributions(&s.atlas, &s.expansions, &s.params, x).unwrap();
        let masked = evaluate_network(&mask_chart(&net, i).unwrap(), x).unwrap();
        let want: f64 = parts.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).sum();
        assert!((masked - want).abs() <= 1e-9 * (1.0 + want.abs()));
    }
}

#[test]
fn json_round_trip_is_bit_exact() {
    let s = random_setup(18, 2, 4, 2, &[3, 4]);
    let (net, _) = compile_network(&s.atlas, &s.expansions, &s.params).unwrap();
    let sim = relu_simulate_linear(&net, 40.0, &AxisBox::cube(4, 3.0).unwrap()).unwrap();
    for n in [&net, &sim] {
        let json = serde_json::to_string(&n.to_file().unwrap()).unwrap();
        let back = ReluNetwork::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(&back, n);
        assert_eq!(serde_json::to_string(&back.to_file().unwrap()).unwrap(), json);
    }
    let mut file = net.to_file().unwrap();
    file.manifest.total_terms += 1;
    assert!(ReluNetwork::from_file(&file).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn widths_follow_formula(seed in 0u64..1000, charts in 1usize..=5, d in 1usize..=3, extra in 1usize..=9, sizes in prop::collection::vec(0usize..=20, 5)) {
        let m = d + extra;
        let s = random_setup(seed, charts, m, d, &sizes[..charts]);
        let (net, man) = compile_network(&s.atlas, &s.expansions, &s.params).unwrap();
        let total: usize = sizes[..charts].iter().sum();
        prop_assert_eq!(net.widths(), expected_widths(charts, m, d, total));
        prop_assert_eq!(man.c1, charts * (m + 4 * (m - d)) + 1);
        prop_assert_eq!(man.c2, (8 * d + 2) * charts);
        prop_assert_eq!(count_units(&net).unwrap(), man);
    }
}
