mod common;

use common::{negated, random_points, toy_net};
use heatsdf::field::{NeuralField, ScalarField};
use heatsdf::heat::{blend_mu, blend_mu_derivative, heat_loss};
use heatsdf::metrics::{e_eik, BandSet};
use heatsdf::oracle::AnalyticShape;
use heatsdf::sampling::{sample_volume, stream_rng, SurfaceBatch, VolumeBatch};
use heatsdf::sdf::{eta_delta, eta_delta_derivative, fit_loss, normal_loss, region_loss, RegionBatch};
use heatsdf::{FieldSample, Vec3, DOMAIN_VOLUME};

const DELTA: f64 = 0.005;

fn unit_targets(points: &[Vec3]) -> Vec<Vec3> {
    // unsigned-distance directions of the plane x₃ = 0
    points.iter().map(|p| Vec3::z() * p.z.signum()).collect()
}

/// Field points at which `|φ| ≥ δ`, so the blend is exactly 0 or 1.
fn off_zero_set(phi: &NeuralField, n: usize, seed: u64) -> VolumeBatch {
    let mut rng = stream_rng(seed, 0);
    let mut points = Vec::new();
    while points.len() < n {
        let b = sample_volume(&mut rng, n);
        points.extend(b.points.into_iter().filter(|p| phi.eval(p).abs() >= DELTA));
    }
    points.truncate(n);
    VolumeBatch {
        points,
        domain_volume: DOMAIN_VOLUME,
    }
}

#[test]
fn normal_term_expands_to_unsmoothed_identity() {
    for seed in 0..10 {
        let phi = toy_net(seed);
        let vol = off_zero_set(&phi, 500, seed);
        let targets = unit_targets(&vol.points);
        let (loss, _) = normal_loss(&phi, &targets, &vol, DELTA).unwrap();
        let w = vol.sample_weight();
        let expanded: f64 = vol
            .points
            .iter()
            .zip(&targets)
            .map(|(p, n)| {
                let s = phi.eval_with_gradient(p);
                w * (s.gradient.norm_squared() - 2.0 * s.value.signum() * s.gradient.dot(n) + 1.0)
            })
            .sum();
        assert!((loss - expanded).abs() <= 1e-10 * expanded.abs(), "{loss} vs {expanded}");
    }
}

#[test]
fn normal_term_branches() {
    let phi = toy_net(3);
    let vol = off_zero_set(&phi, 400, 1);
    let targets = unit_targets(&vol.points);
    let w = vol.sample_weight();
    for (p, n) in vol.points.iter().zip(&targets) {
        let single = VolumeBatch {
            points: vec![*p],
            domain_volume: w,
        };
        let (l, _) = normal_loss(&phi, &[*n], &single, DELTA).unwrap();
        let s = phi.eval_with_gradient(p);
        let expect = if eta_delta(s.value, DELTA) == 1.0 {
            (s.gradient + n).norm_squared()
        } else {
            (s.gradient - n).norm_squared()
        };
        assert!((l / w - expect).abs() <= 1e-12 * expect.max(1.0));
    }
}

#[test]
fn sign_flip_symmetry_without_region_term() {
    let mut rng = stream_rng(4, 0);
    for seed in 0..10 {
        let phi = toy_net(seed);
        let minus = negated(&phi);
        let vol = sample_volume(&mut rng, 300);
        let targets = unit_targets(&vol.points);
        let surf = SurfaceBatch {
            points: random_points(50, seed, 0.8).into_iter().map(|p| Vec3::new(p.x, p.y, 0.0)).collect(),
            weights: vec![1.0 / 50.0; 50],
        };
        let total = |f: &NeuralField| normal_loss(f, &targets, &vol, DELTA).unwrap().0 + 100.0 * fit_loss(f, &surf).0;
        let (a, b) = (total(&phi), total(&minus));
        assert!((a - b).abs() <= 1e-12 * a.abs(), "{a} vs {b}");
        for p in &vol.points {
            assert_eq!(minus.eval(p), -phi.eval(p));
        }
    }
}

#[test]
fn losses_are_non_negative() {
    let mut rng = stream_rng(5, 0);
    for seed in 0..20 {
        let phi = toy_net(seed);
        let vol = sample_volume(&mut rng, 200);
        let targets = unit_targets(&vol.points);
        assert!(normal_loss(&phi, &targets, &vol, DELTA).unwrap().0 >= 0.0);
        let surf = SurfaceBatch {
            points: random_points(30, seed, 1.0),
            weights: vec![1.0 / 30.0; 30],
        };
        assert!(fit_loss(&phi, &surf).0 >= 0.0);
        let cells = RegionBatch {
            inside: random_points(40, seed + 100, 0.3),
            outside: random_points(40, seed + 200, 1.1),
            inside_weight: 1e-3,
            outside_weight: 1e-3,
        };
        assert!(region_loss(&phi, &cells, DELTA).0 >= 0.0);
    }
}

#[test]
fn heat_constant_optimum() {
    let mut rng = stream_rng(6, 0);
    let vol = sample_volume(&mut rng, 100);
    let surf = SurfaceBatch {
        points: random_points(20, 1, 0.5),
        weights: vec![0.05; 20],
    };
    let arch = common::toy_architecture();
    let loss = |c: f64| heat_loss(&NeuralField::constant(arch, c).unwrap(), &vol, &surf, 0.005).0;
    // golden-section search over constants
    let (mut a, mut b) = (0.0, 1.0);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let (c, d) = (b - g * (b - a), a + g * (b - a));
        if loss(c) < loss(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let c_star = 1.0 / DOMAIN_VOLUME;
    assert!(((a + b) / 2.0 - c_star).abs() < 1e-9, "{} vs {c_star}", (a + b) / 2.0);
}

#[test]
fn profiles_are_monotone_c1_and_bounded() {
    let fd = |f: &dyn Fn(f64) -> f64, x: f64, h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    let eta = |s: f64| eta_delta(s, DELTA);
    let h = 1e-7 * DELTA;
    for edge in [-DELTA, DELTA] {
        // derivatives scale like 1/δ
        assert!((fd(&eta, edge, h) - eta_delta_derivative(edge, DELTA)).abs() * DELTA < 1e-6);
        assert!((fd(&eta, edge - h, h) - fd(&eta, edge + h, h)).abs() * DELTA < 1e-6);
    }
    let mut prev = 1.0;
    for i in 0..=4000 {
        let s = -2.0 * DELTA + 4.0 * DELTA * i as f64 / 4000.0;
        let v = eta(s);
        assert!((0.0..=1.0).contains(&v) && v <= prev);
        prev = v;
    }
    let hm = 1e-7;
    for edge in [0.0, 1.0] {
        assert!((fd(&blend_mu, edge, hm) - blend_mu_derivative(edge)).abs() < 1e-6);
    }
}

struct Shifted<F>(F, f64);

impl<F: ScalarField> ScalarField for Shifted<F> {
    fn value(&self, x: &Vec3) -> f64 {
        self.0.value(x) + self.1
    }
    fn sample(&self, x: &Vec3) -> FieldSample {
        let s = self.0.sample(x);
        FieldSample {
            value: s.value + self.1,
            gradient: s.gradient,
        }
    }
}

#[test]
fn eikonal_measure_ignores_constant_shifts() {
    let phi = toy_net(9);
    let band = BandSet::from_oracle(|p| AnalyticShape::sphere().sdf(p), 0.1, 2000, 1).unwrap();
    let base = e_eik(&phi, &band.points);
    assert_eq!(e_eik(&Shifted(&phi, 0.37), &band.points), base);
}
