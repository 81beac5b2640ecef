//! Frame functions checked against oracles that do not share code with the
//! implementation: closed-form integrals, plain Monte Carlo, brute-force
//! lattice enumeration and uniform grids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rectnet::domain::AxisBox;
use rectnet::frame::*;

/// Exact integral of `rect(sum_j t(x_j) - 2(d-1))`.
///
/// With `a_j = 2 - t(x_j)` the pushforward of Lebesgue measure on `[-3, 3]`
/// is an atom of mass 2 at `a = 0` plus density 2 on `(0, 2)`. The integrand
/// is `rect(2 - sum a_j)`, and the integral of that over the simplex in `s`
/// continuous coordinates is `2^{s+1}/(s+1)!`.
fn exact_phi_integral(d: usize) -> f64 {
    let mut total = 0.0;
    for s in 0..=d {
        let binom = (0..s).fold(1.0, |acc, i| acc * (d - i) as f64 / (i + 1) as f64);
        let fact: f64 = (1..=s + 1).map(|i| i as f64).product();
        total += binom * 2f64.powi(d as i32) * 2f64.powi(s as i32 + 1) / fact;
    }
    total
}

#[test]
fn exact_oracle_reproduces_one_eighth() {
    assert_eq!(exact_phi_integral(1), 8.0);
    assert!((exact_phi_integral(2) - 88.0 / 3.0).abs() < 1e-12);
}

#[test]
fn normalization_constant_matches_closed_form() {
    for d in 1..=3 {
        let c = normalization_constant(d).unwrap();
        let exact = 1.0 / exact_phi_integral(d);
        assert!(((c - exact) / exact).abs() < 1e-8, "d={d}: {c} vs {exact}");
    }
}

#[test]
fn tabulated_constants_match_quadrature() {
    for d in 1..=3 {
        let tab = FrameParams::new(d).unwrap().constant();
        let quad = normalization_constant(d).unwrap();
        assert!(((tab - quad) / quad).abs() < 1e-12);
    }
}

#[test]
fn monte_carlo_integral_of_phi_d1() {
    let p = FrameParams::new(1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 10_000_000;
    let mut sum = 0.0;
    for _ in 0..n {
        let x: f64 = rng.gen_range(-3.0..3.0);
        sum += scaling_phi(&[x], &p).unwrap();
    }
    let integral = 6.0 * sum / n as f64;
    assert!((0.999..=1.001).contains(&integral), "{integral}");
}

#[test]
fn two_dimensional_peak_values() {
    let c2 = 1.0 / exact_phi_integral(2);
    let p = FrameParams::new(2).unwrap();
    assert!((scaling_phi(&[0.0, 0.0], &p).unwrap() - 2.0 * c2).abs() < 1e-12);
    assert!((mother_psi(&[0.0, 0.0], &p).unwrap() - c2).abs() < 1e-12);
}

#[test]
fn s_kernel_integrates_to_one() {
    // d = 1, k = 3: support [-3/8, 3/8], kinks on the 1/8 lattice; an aligned
    // midpoint grid is exact for piecewise linear functions
    let p = FrameParams::new(1).unwrap();
    let n = 6 * 1024;
    let h = 0.75 / n as f64;
    let sum: f64 = (0..n)
        .map(|i| s_kernel(&[-0.375 + (i as f64 + 0.5) * h], &[0.0], 3, &p).unwrap() * h)
        .sum();
    assert!((sum - 1.0).abs() < 1e-6, "{sum}");

    // d = 2, k = 2: fine uniform grid
    let p2 = FrameParams::new(2).unwrap();
    let hw = 3.0 * p2.spacing(2);
    let n = 1200;
    let h = 2.0 * hw / n as f64;
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = [-hw + (i as f64 + 0.5) * h, -hw + (j as f64 + 0.5) * h];
            sum += s_kernel(&x, &[0.0, 0.0], 2, &p2).unwrap() * h * h;
        }
    }
    assert!((sum - 1.0).abs() < 1e-5, "{sum}");
}

#[test]
fn kernel_difference_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for d in 1..=3 {
        let p = FrameParams::new(d).unwrap();
        for _ in 0..1000 {
            let k = rng.gen_range(-4..=8);
            let lattice: Vec<i64> = (0..d).map(|_| rng.gen_range(-20..=20)).collect();
            let idx = WaveletIndex::new(k, lattice).unwrap();
            let b = idx.offset(&p);
            let hw = p.support_half_width(k);
            let x: Vec<f64> = b.iter().map(|bi| bi + rng.gen_range(-1.2 * hw..1.2 * hw)).collect();
            let direct = psi_kb(&x, &idx, &p).unwrap();
            let via_kernels =
                (-(k as f64) / 2.0).exp2() * (s_kernel(&x, &b, k, &p).unwrap() - s_kernel(&x, &b, k - 1, &p).unwrap());
            assert!(
                (direct - via_kernels).abs() <= 1e-12 * (1.0 + direct.abs()),
                "d={d} k={k}: {direct} vs {via_kernels}"
            );
            let fast = WaveletTerm::new(&idx, &p).eval(&x);
            assert!((direct - fast).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }
}

#[test]
fn wavelet_bound_on_dense_grids() {
    for (d, n) in [(1usize, 4001usize), (2, 241), (3, 61)] {
        let p = FrameParams::new(d).unwrap();
        for k in -2..=4 {
            let idx = WaveletIndex::new(k, vec![1; d]).unwrap();
            let term = WaveletTerm::new(&idx, &p);
            let hw = p.support_half_width(k);
            let b = idx.offset(&p);
            let step = 2.0 * hw / (n - 1) as f64;
            let mut sup: f64 = 0.0;
            let mut x = vec![0.0; d];
            let total = n.pow(d as u32);
            for flat in 0..total {
                let mut r = flat;
                for j in 0..d {
                    x[j] = b[j] - hw + (r % n) as f64 * step;
                    r /= n;
                }
                sup = sup.max(term.eval(&x).abs());
            }
            let bound = (k as f64 / 2.0 - 2.0).exp2();
            assert!(sup <= bound + 1e-12, "d={d} k={k}: {sup} > {bound}");
        }
    }
}

#[test]
fn support_count_per_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for d in 1..=2usize {
        let p = FrameParams::new(d).unwrap();
        let limit = 12usize.pow(d as u32);
        for k in -2..=4 {
            let s = p.spacing(k);
            for _ in 0..200 {
                let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
                // brute force over a lattice neighbourhood far wider than the support
                let reach = (8.0 * p.support_half_width(k) / s).ceil() as i64;
                let centre: Vec<i64> = x.iter().map(|v| (v / s).round() as i64).collect();
                let mut count = 0usize;
                let span = (2 * reach + 1) as usize;
                for flat in 0..span.pow(d as u32) {
                    let mut r = flat;
                    let lattice: Vec<i64> = (0..d)
                        .map(|j| {
                            let off = (r % span) as i64 - reach;
                            r /= span;
                            centre[j] + off
                        })
                        .collect();
                    let idx = WaveletIndex::new(k, lattice).unwrap();
                    if psi_kb(&x, &idx, &p).unwrap() != 0.0 {
                        count += 1;
                    }
                }
                assert!(count <= limit, "d={d} k={k}: {count} terms at {x:?}");
                assert!(count > 0);
            }
        }
    }
}

#[test]
fn vanishing_moments() {
    let p1 = FrameParams::new(1).unwrap();
    let m = moment_check(&WaveletIndex::new(0, vec![0]).unwrap(), &p1).unwrap();
    assert!(m.zeroth.abs() <= 1e-6 && m.first[0].abs() <= 1e-6, "{m:?}");

    let p2 = FrameParams::new(2).unwrap();
    let m = moment_check(&WaveletIndex::new(1, vec![2, -1]).unwrap(), &p2).unwrap();
    assert!(m.zeroth.abs() <= 1e-6, "{m:?}");
    assert!(m.first.iter().all(|v| v.abs() <= 1e-6), "{m:?}");

    let p3 = FrameParams::new(3).unwrap();
    let m = moment_check(&WaveletIndex::new(-1, vec![1, 0, -2]).unwrap(), &p3).unwrap();
    assert!(m.zeroth.abs() <= 1e-6 && m.first.iter().all(|v| v.abs() <= 1e-6), "{m:?}");
}

#[test]
fn scaling_function_moment_is_one() {
    let p = FrameParams::new(1).unwrap();
    let m = scaling_moments(&p).unwrap();
    assert!((m.zeroth - 1.0).abs() <= 1e-6);
    assert!(m.first[0].abs() <= 1e-12);
}

#[test]
fn combined_wavelet_moments_on_plain_grid() {
    // same moments from a uniform grid over the joint support, no alignment
    let p = FrameParams::new(2).unwrap();
    let idx = WaveletIndex::new(1, vec![2, -1]).unwrap();
    let term = WaveletTerm::new(&idx, &p);
    let b = idx.offset(&p);
    let hw = p.support_half_width(1);
    let n = 1500;
    let h = 2.0 * hw / n as f64;
    let (mut m0, mut m1) = (0.0, [0.0; 2]);
    for i in 0..n {
        for j in 0..n {
            let x = [b[0] - hw + (i as f64 + 0.5) * h, b[1] - hw + (j as f64 + 0.5) * h];
            let v = term.eval(&x) * h * h;
            m0 += v;
            m1[0] += x[0] * v;
            m1[1] += x[1] * v;
        }
    }
    assert!(m0.abs() < 1e-4 && m1[0].abs() < 1e-4 && m1[1].abs() < 1e-4, "{m0} {m1:?}");
}

#[test]
fn averaging_kernel_decay_spot_check() {
    // S_k(x,0) <= C 2^{-k eps} / (2^{-k} + rho(x,0))^{1+eps}, eps = 1, with
    // rho(x,y) = |x-y|^d the volume quasi-metric on R^d. C is fitted at k = 0
    // and then held fixed for other scales.
    for d in 1..=2usize {
        let p = FrameParams::new(d).unwrap();
        let ratio = |k: i32, x: &[f64]| {
            let s = s_kernel(x, &vec![0.0; d], k, &p).unwrap();
            let rho = x.iter().map(|v| v * v).sum::<f64>().sqrt().powi(d as i32);
            s * (2f64.powi(-k) + rho).powi(2) / 2f64.powi(-k)
        };
        let n = 200;
        let grid = |k: i32| -> Vec<Vec<f64>> {
            let hw = 4.0 * p.spacing(k);
            let pts: Vec<f64> = (0..=n).map(|i| -hw + 2.0 * hw * i as f64 / n as f64).collect();
            if d == 1 {
                pts.iter().map(|&a| vec![a]).collect()
            } else {
                pts.iter().flat_map(|&a| pts.iter().map(move |&b| vec![a, b])).collect()
            }
        };
        let c = grid(0).iter().map(|x| ratio(0, x)).fold(0.0, f64::max);
        for k in -3..=6 {
            for x in grid(k) {
                assert!(ratio(k, &x) <= c * (1.0 + 1e-9), "d={d} k={k} x={x:?}");
            }
        }
    }
}

#[test]
fn lattice_offsets_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for d in 1..=2usize {
        let p = FrameParams::new(d).unwrap();
        for _ in 0..20 {
            let k = rng.gen_range(-2..=4);
            let lo: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..1.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|v| v + rng.gen_range(0.0..2.0)).collect();
            let region = AxisBox::new(lo.clone(), hi.clone()).unwrap();
            let got = lattice_offsets(k, &region, &p).unwrap();
            let s = p.spacing(k);
            let hw = p.support_half_width(k);
            let r = 200i64;
            let mut expected = Vec::new();
            let span = (2 * r + 1) as usize;
            for flat in 0..span.pow(d as u32) {
                let mut rem = flat;
                let n: Vec<i64> = (0..d)
                    .map(|_| {
                        let v = (rem % span) as i64 - r;
                        rem /= span;
                        v
                    })
                    .collect();
                let meets = (0..d).all(|j| {
                    let b = n[j] as f64 * s;
                    b + hw >= lo[j] && b - hw <= hi[j]
                });
                if meets {
                    expected.push(WaveletIndex::new(k, n).unwrap());
                }
            }
            expected.sort();
            assert_eq!(got, expected);
        }
    }
}
