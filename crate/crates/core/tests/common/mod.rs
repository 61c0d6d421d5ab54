#![allow(dead_code)]

use std::collections::VecDeque;

use heatsdf::field::{Architecture, NeuralField};
use heatsdf::sampling::stream_rng;
use heatsdf::Vec3;
use rand::Rng;

/// 113 parameters.
pub fn toy_architecture() -> Architecture {
    Architecture::new(8, 2)
}

pub fn toy_net(seed: u64) -> NeuralField {
    NeuralField::init_siren(toy_architecture(), seed).unwrap()
}

pub fn random_points(n: usize, seed: u64, half: f64) -> Vec<Vec3> {
    let mut rng = stream_rng(seed, 77);
    (0..n)
        .map(|_| Vec3::new(rng.random_range(-half..half), rng.random_range(-half..half), rng.random_range(-half..half)))
        .collect()
}

/// Relative error `‖g − g_fd‖ / ‖g_fd‖` of a parameter gradient against
/// central differences.
pub fn parameter_gradient_error(field: &NeuralField, loss: impl Fn(&NeuralField) -> (f64, Vec<f64>)) -> f64 {
    let (_, g) = loss(field);
    let step = 1e-6;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..field.parameters.len() {
        let mut p = field.clone();
        p.parameters[i] += step;
        let lp = loss(&p).0;
        p.parameters[i] -= 2.0 * step;
        let lm = loss(&p).0;
        let fd = (lp - lm) / (2.0 * step);
        num += (g[i] - fd).powi(2);
        den += fd * fd;
    }
    num.sqrt() / den.sqrt().max(1e-8)
}

/// `−φ` as a network: negated output layer.
pub fn negated(field: &NeuralField) -> NeuralField {
    let mut f = field.clone();
    let h = f.architecture.hidden_dim;
    let n = f.parameters.len();
    for v in &mut f.parameters[n - h - 1..] {
        *v = -*v;
    }
    f
}

/// Points on the sphere of radius 0.5 from a Fibonacci lattice.
pub fn fibonacci_sphere(n: usize, radius: f64) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let t = golden * i as f64;
            Vec3::new(r * t.cos(), y, r * t.sin()) * radius
        })
        .collect()
}

/// Six-connected flood from every empty boundary cell, written
/// independently of the library.
pub fn brute_force_outside(dims: [usize; 3], occupied: &[bool]) -> Vec<bool> {
    let idx = |c: [usize; 3]| (c[0] * dims[1] + c[1]) * dims[2] + c[2];
    let mut outside = vec![false; occupied.len()];
    let mut queue = VecDeque::new();
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let c = [i, j, k];
                let edge = (0..3).any(|a| c[a] == 0 || c[a] == dims[a] - 1);
                if edge && !occupied[idx(c)] {
                    outside[idx(c)] = true;
                    queue.push_back(c);
                }
            }
        }
    }
    while let Some(c) = queue.pop_front() {
        for a in 0..3 {
            for up in [false, true] {
                let mut n = c;
                if up {
                    if n[a] + 1 == dims[a] {
                        continue;
                    }
                    n[a] += 1;
                } else {
                    if n[a] == 0 {
                        continue;
                    }
                    n[a] -= 1;
                }
                if !occupied[idx(n)] && !outside[idx(n)] {
                    outside[idx(n)] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    outside
}
