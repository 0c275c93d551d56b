//! Operator contracts, the Dirichlet composite and the benchmark suite.

mod common;

use proptest::prelude::*;
use rand::Rng;

use msdiff::degrade::jpeg::{dct8, idct8, roundtrip_plane};
use msdiff::degrade::{
    apply_additive_gaussian, apply_blur, apply_composite, apply_deadline, apply_fog, apply_jpeg, apply_kind,
    apply_poisson, apply_salt_pepper, apply_stripes, apply_zero_mean_gaussian, benchmark_case, benchmark_suite,
    degradation_stats, gaussian_kernel, sample_dirichlet, DegradationKind, DegradationKind::*, DegradationParams,
    DegradationSpec, K,
};
use msdiff::hsidata::HsiCube;

fn constant(h: usize, w: usize, c: usize, v: f32) -> HsiCube {
    HsiCube::new(h, w, c, vec![v; h * w * c]).unwrap()
}

fn random_cube(h: usize, w: usize, c: usize, lo: f32, hi: f32, seed: u64) -> HsiCube {
    let mut r = common::rng(seed);
    HsiCube::new(h, w, c, (0..h * w * c).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

fn diffs(a: &HsiCube, b: &HsiCube) -> Vec<f64> {
    a.values().iter().zip(b.values()).map(|(&x, &y)| y as f64 - x as f64).collect()
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

#[test]
fn every_operator_is_identity_at_zero_intensity() {
    let cube = random_cube(9, 11, 5, 0.0, 1.0, 1);
    let p = DegradationParams::default();
    for kind in DegradationKind::ALL {
        let out = apply_kind(kind, &cube, 0.0, 7, &p).unwrap();
        assert_eq!(out.values(), cube.values(), "{kind}");
    }
    assert!(apply_kind(Fog, &cube, 1.5, 0, &p).is_err());
    assert!(apply_kind(Fog, &cube, -0.1, 0, &p).is_err());
}

#[test]
fn zero_mean_gaussian_variance_and_determinism() {
    let cube = constant(50, 50, 40, 0.5);
    let out = apply_zero_mean_gaussian(&cube, 0.5, 3).unwrap();
    let (m, v) = mean_var(&diffs(&cube, &out));
    assert!(m.abs() < 1e-3);
    assert!((v - 0.01).abs() < 0.05 * 0.01, "variance {v}");
    assert_eq!(out, apply_zero_mean_gaussian(&cube, 0.5, 3).unwrap());
    assert_ne!(out, apply_zero_mean_gaussian(&cube, 0.5, 4).unwrap());
}

#[test]
fn additive_gaussian_has_band_heterogeneous_variance() {
    let (h, w, c) = (60, 60, 16);
    let cube = constant(h, w, c, 0.5);
    let out = apply_additive_gaussian(&cube, 0.5, 9).unwrap();
    let d = diffs(&cube, &out);
    let vars: Vec<f64> = (0..c)
        .map(|b| mean_var(&d.iter().skip(b).step_by(c).copied().collect::<Vec<_>>()).1)
        .collect();
    let (lo, hi) = vars.iter().fold((f64::MAX, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    assert!(hi < 0.1f64.powi(2) * 1.1, "per-band std capped by 0.2 s: {vars:?}");
    assert!(hi > 4.0 * lo, "variances should differ across bands: {vars:?}");
    assert_eq!(out, apply_additive_gaussian(&cube, 0.5, 9).unwrap());
}

#[test]
fn poisson_statistics() {
    // Q = 1000 (1 - s) + 10 s = 901 at s = 0.1.
    let cube = constant(100, 100, 10, 0.5);
    let out = apply_poisson(&cube, 0.1, 5).unwrap();
    let vals: Vec<f64> = out.values().iter().map(|&v| v as f64).collect();
    let (m, v) = mean_var(&vals);
    assert!((m - 0.5).abs() < 0.005, "mean {m}");
    let expected = 0.5 / 901.0;
    assert!((v - expected).abs() < 0.05 * expected, "variance {v} vs {expected}");

    let zeros = constant(10, 10, 4, 0.0);
    assert!(apply_poisson(&zeros, 0.9, 1).unwrap().values().iter().all(|&v| v == 0.0));
}

#[test]
fn salt_pepper_fraction_and_forced_probability() {
    let (h, w, c) = (64, 64, 8);
    let cube = random_cube(h, w, c, 0.1, 0.9, 2);
    let s = 0.5;
    let out = apply_salt_pepper(&cube, s, 11).unwrap();
    let n = (h * w * c) as f64;
    let corrupted = out.values().iter().zip(cube.values()).filter(|(a, b)| a != b).count() as f64;
    assert!(out.values().iter().zip(cube.values()).all(|(&a, &b)| a == b || a == 0.0 || a == 1.0));
    let p = 0.2 * s;
    let sd = (n * p * (1.0 - p)).sqrt();
    assert!((corrupted - n * p).abs() < 3.0 * sd, "{corrupted} vs {}", n * p);

    let forced = DegradationParams {
        salt_pepper_max_prob: 1.0,
        ..DegradationParams::default()
    };
    let all = apply_kind(SaltPepper, &cube, 1.0, 3, &forced).unwrap();
    assert!(all.values().iter().all(|&v| v == 0.0 || v == 1.0));
}

#[test]
fn stripes_hit_periodic_columns_of_some_bands() {
    let (h, w, c) = (6, 40, 10);
    let cube = constant(h, w, c, 0.5);
    let s = 0.7;
    let out = apply_stripes(&cube, s, 13).unwrap();
    let mut hit_bands = 0;
    for b in 0..c {
        let cols: Vec<usize> = (0..w).filter(|&j| out.get(0, j, b) != cube.get(0, j, b)).collect();
        for r in 0..h {
            for j in 0..w {
                assert_eq!(out.get(r, j, b) != cube.get(r, j, b), cols.contains(&j), "whole columns only");
            }
        }
        if cols.is_empty() {
            continue;
        }
        hit_bands += 1;
        assert!(cols[0] < 8);
        assert_eq!(cols, (cols[0]..w).step_by(8).collect::<Vec<_>>());
        let delta = out.get(0, cols[0], b) as f64 - 0.5;
        assert!(delta.abs() <= 0.3 * s + 1e-7);
    }
    assert_eq!(hit_bands, (s * c as f64 / 2.0).ceil() as usize);
}

#[test]
fn deadline_zeroes_exact_column_counts() {
    let (h, w, c) = (5, 37, 12);
    let cube = random_cube(h, w, c, 0.1, 0.9, 4);
    let s = 0.6;
    let out = apply_deadline(&cube, s, 17).unwrap();
    let expected_cols = (0.1 * s * w as f64).ceil() as usize;
    let mut hit_bands = 0;
    for b in 0..c {
        let zeroed: Vec<usize> = (0..w).filter(|&j| (0..h).all(|r| out.get(r, j, b) == 0.0)).collect();
        for r in 0..h {
            for j in 0..w {
                if !zeroed.contains(&j) {
                    assert_eq!(out.get(r, j, b), cube.get(r, j, b));
                }
            }
        }
        if !zeroed.is_empty() {
            hit_bands += 1;
            assert_eq!(zeroed.len(), expected_cols);
        }
    }
    assert_eq!(hit_bands, (s * c as f64 / 2.0).ceil() as usize);
}

#[test]
fn blur_contracts() {
    let flat = constant(12, 15, 3, 0.4);
    let out = apply_blur(&flat, 0.8, 0).unwrap();
    assert!(out.values().iter().all(|&v| (v - 0.4).abs() < 1e-6));

    // sigma = 2 s = 1 at s = 0.5, radius 3
    let (h, w) = (21, 21);
    let mut impulse = constant(h, w, 1, 0.0);
    let centre = impulse.index(10, 10, 0);
    impulse.values_mut()[centre] = 1.0;
    let out = apply_blur(&impulse, 0.5, 0).unwrap();
    let k = gaussian_kernel(1.0);
    assert_eq!(k.len(), 7);
    assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    for r in 0..h {
        for c in 0..w {
            let (dr, dc) = (r as isize - 10, c as isize - 10);
            let expected = if dr.abs() <= 3 && dc.abs() <= 3 {
                k[(dr + 3) as usize] * k[(dc + 3) as usize]
            } else {
                0.0
            };
            assert!((out.get(r, c, 0) as f64 - expected).abs() < 1e-7);
        }
    }

    let mut mass = constant(32, 32, 2, 0.0);
    let mut rng = common::rng(8);
    for r in 10..22 {
        for c in 10..22 {
            for b in 0..2 {
                let i = mass.index(r, c, b);
                mass.values_mut()[i] = rng.random_range(0.0..1.0);
            }
        }
    }
    let out = apply_blur(&mass, 0.5, 0).unwrap();
    for b in 0..2 {
        let before: f64 = mass.band_plane(b).iter().sum::<f64>() / 1024.0;
        let after: f64 = out.band_plane(b).iter().sum::<f64>() / 1024.0;
        assert!((before - after).abs() < 1e-6, "band {b}: {before} vs {after}");
    }
}

#[test]
fn fog_closed_form() {
    let cube = random_cube(7, 8, 3, 0.0, 1.0, 5);
    let out = apply_fog(&cube, 0.5, 0).unwrap();
    for (&x, &y) in cube.values().iter().zip(out.values()) {
        assert!((y as f64 - (0.6 * x as f64 + 0.36)).abs() < 1e-6);
    }
    let opaque = DegradationParams {
        fog_max_opacity: 1.0,
        ..DegradationParams::default()
    };
    let out = apply_kind(Fog, &cube, 1.0, 0, &opaque).unwrap();
    assert!(out.values().iter().all(|&v| (v - 0.9).abs() < 1e-7));
}

#[test]
fn jpeg_contracts() {
    let block = [0.37; 64];
    let rec = roundtrip_plane(&block, 8, 8, 0.02);
    assert!(rec.iter().all(|v| (v - 0.37).abs() < 1e-3));

    let mut r = common::rng(6);
    for _ in 0..10 {
        let b: [f64; 64] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
        let back = idct8(&dct8(&b));
        assert!(b.iter().zip(&back).all(|(x, y)| (x - y).abs() < 1e-10));
    }

    let (h, w) = (24, 20);
    let textured: Vec<f32> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            (0.5 + 0.25 * (0.9 * x).sin() * (0.7 * y).cos() + 0.1 * (2.3 * x + 1.1 * y).sin()) as f32
        })
        .collect();
    let cube = HsiCube::new(h, w, 1, textured).unwrap();
    let mse = |s: f64| -> f64 {
        let out = apply_jpeg(&cube, s, 0).unwrap();
        degradation_stats(&cube, &out).unwrap().band_mse[0]
    };
    let (a, b, c) = (mse(0.2), mse(0.5), mse(0.8));
    assert!(a <= b && b <= c, "{a} {b} {c}");
    assert!(a > 0.0);
}

#[test]
fn dirichlet_examples() {
    assert_eq!(sample_dirichlet(1, 1.0, 3).unwrap(), vec![1.0]);
    assert!(sample_dirichlet(0, 1.0, 3).is_err());
    assert!(sample_dirichlet(3, 0.0, 3).is_err());
    for k in [3, K] {
        let mut mean = vec![0.0; k];
        let n = 10_000;
        for seed in 0..n {
            let w = sample_dirichlet(k, 1.0, seed).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|&x| x >= 0.0));
            for (m, x) in mean.iter_mut().zip(&w) {
                *m += x / n as f64;
            }
        }
        for m in mean {
            assert!((m - 1.0 / k as f64).abs() < 0.02, "k {k}: {m}");
        }
    }
}

fn one_hot(kind: DegradationKind) -> [f64; K] {
    let mut w = [0.0; K];
    w[kind.index()] = 1.0;
    w
}

#[test]
fn composite_reductions() {
    let cube = random_cube(16, 16, 4, 0.0, 1.0, 9);
    let p = DegradationParams::default();
    let rho0 = DegradationSpec::new([1.0 / K as f64; K], 0.0, 3).unwrap();
    assert_eq!(apply_composite(&cube, &rho0, &p).unwrap(), cube);

    for kind in DegradationKind::ALL {
        for rho in [0.05, 0.2] {
            let spec = DegradationSpec::new(one_hot(kind), rho, 41).unwrap();
            let expected = apply_kind(kind, &cube, (K as f64 * rho).min(1.0), kind.derive_seed(41), &p).unwrap();
            assert_eq!(apply_composite(&cube, &spec, &p).unwrap(), expected, "{kind}");
        }
    }

    let spec = DegradationSpec::random(1.0, 77);
    assert_eq!(apply_composite(&cube, &spec, &p).unwrap(), apply_composite(&cube, &spec, &p).unwrap());
    assert!(DegradationSpec::new([0.5; K], 0.5, 0).is_err());
    assert!(DegradationSpec::new(one_hot(Fog), 1.2, 0).is_err());
}

#[test]
fn benchmark_suite_composition() {
    let suite = benchmark_suite();
    let labels: Vec<_> = suite.iter().map(|c| c.label).collect();
    assert_eq!(labels, ["C-3-1", "C-3-2", "C-3-3", "C-3-4", "C-5-1", "C-5-2", "C-7", "C-9"]);
    let kinds = |l: &str| benchmark_case(l).unwrap().kinds;
    assert_eq!(kinds("C-3-1"), [Deadline, Poisson, SaltPepper]);
    assert_eq!(kinds("C-3-2"), [Jpeg, Blur, Fog]);
    assert_eq!(kinds("C-3-3"), [AdditiveGaussian, Stripes, ZeroMeanGaussian]);
    assert_eq!(kinds("C-3-4"), [Poisson, Blur, Fog]);
    assert_eq!(kinds("C-5-1"), [Deadline, Stripes, Blur, SaltPepper, Fog]);
    assert_eq!(kinds("C-5-2"), [Jpeg, AdditiveGaussian, Poisson, ZeroMeanGaussian, SaltPepper]);
    let c7 = kinds("C-7");
    assert_eq!(c7.len(), 7);
    assert!(!c7.contains(&AdditiveGaussian) && !c7.contains(&Stripes));
    assert_eq!(kinds("C-9").len(), 9);
    assert!(suite.iter().all(|c| c.intensity == 0.5));
    assert!(benchmark_case("C-4").is_err());
}

#[test]
fn benchmark_application_is_sequential_in_listing_order() {
    let cube = random_cube(12, 12, 4, 0.0, 1.0, 10);
    let p = DegradationParams::default();
    let case = benchmark_case("C-3-2").unwrap();
    let mut expected = cube.clone();
    for kind in [Jpeg, Blur, Fog] {
        expected = apply_kind(kind, &expected, 0.5, kind.derive_seed(6), &p).unwrap();
    }
    assert_eq!(case.apply(&cube, 6, &p).unwrap(), expected);
}

#[test]
fn stats_report_changes() {
    let cube = constant(4, 5, 2, 0.5);
    let mut other = cube.clone();
    let i = other.index(1, 1, 1);
    other.values_mut()[i] = 0.0;
    let st = degradation_stats(&cube, &other).unwrap();
    assert_eq!(st.band_mse, vec![0.0, 0.25 / 20.0]);
    assert_eq!(st.changed_fraction, 1.0 / 40.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn outputs_stay_in_unit_range_and_are_deterministic(seed in any::<u64>(), s in 0.0f64..=1.0, k in 0usize..K) {
        let kind = DegradationKind::ALL[k];
        let cube = random_cube(9, 10, 3, 0.0, 1.0, seed);
        let p = DegradationParams::default();
        let out = apply_kind(kind, &cube, s, seed, &p).unwrap();
        prop_assert!(out.values().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(out, apply_kind(kind, &cube, s, seed, &p).unwrap());
    }

    #[test]
    fn dirichlet_lies_on_the_simplex(seed in any::<u64>(), k in 1usize..12, alpha in 0.05f64..5.0) {
        let w = sample_dirichlet(k, alpha, seed).unwrap();
        prop_assert_eq!(w.len(), k);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_specs_are_valid(seed in any::<u64>()) {
        let spec = DegradationSpec::random(1.0, seed);
        prop_assert!(spec.validate().is_ok());
        prop_assert!(spec.kind_intensities().iter().all(|s| (0.0..=1.0).contains(s)));
    }
}
