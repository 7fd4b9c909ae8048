//! Analytic gradients against central finite differences.

#![allow(clippy::needless_range_loop)]

use privrisk_core::numopt::{
    euclidean_loss, mlp_backward, mlp_forward, sigmoid_ce_loss, smoothed_multilabel_hinge, MultiLabelObjective,
    Objective, Parameters,
};
use privrisk_core::{LinearModel, LossKind, MlpRiskHead};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
/// Denominator floor: below this magnitude both gradients count as zero.
const FLOOR: f64 = 1e-6;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[i] += H;
    minus[i] -= H;
    (f(&plus) - f(&minus)) / (2.0 * H)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_bools(rng: &mut ChaCha8Rng, n: usize) -> Vec<bool> {
    (0..n).map(|_| rng.random_bool(0.5)).collect()
}

#[test]
fn sigmoid_ce_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..12);
        let s = random_vec(&mut rng, n, 8.0);
        let t = random_bools(&mut rng, n);
        let (_, g) = sigmoid_ce_loss(&s, &t).unwrap();
        for i in 0..n {
            let num = central(|v| sigmoid_ce_loss(v, &t).unwrap().0, &s, i);
            worst = worst.max(rel_err(g[i], num));
        }
    }
    assert!(worst < TOL, "worst relative error {worst:e}");
}

#[test]
fn smoothed_hinge_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    while instances < 200 {
        let gamma = rng.random_range(0.1..2.0);
        let n = rng.random_range(1..12);
        let s = random_vec(&mut rng, n, 3.0);
        let t = random_bools(&mut rng, n);
        // Keep every margin clear of the two knots by more than the step.
        let near_knot = s.iter().zip(&t).any(|(&v, &b)| {
            let m = if b { v } else { -v };
            (m - 1.0).abs() < 1e-3 || (m - (1.0 - gamma)).abs() < 1e-3
        });
        if near_knot {
            continue;
        }
        instances += 1;
        let (_, g) = smoothed_multilabel_hinge(&s, &t, gamma).unwrap();
        for i in 0..n {
            let num = central(|v| smoothed_multilabel_hinge(v, &t, gamma).unwrap().0, &s, i);
            worst = worst.max(rel_err(g[i], num));
        }
    }
    assert!(worst < TOL, "worst relative error {worst:e}");
}

#[test]
fn euclidean_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..12);
        let p = random_vec(&mut rng, n, 5.0);
        let t = random_vec(&mut rng, n, 5.0);
        let (_, g) = euclidean_loss(&p, &t).unwrap();
        for i in 0..n {
            let num = central(|v| euclidean_loss(v, &t).unwrap().0, &p, i);
            worst = worst.max(rel_err(g[i], num));
        }
    }
    assert!(worst < TOL, "worst relative error {worst:e}");
}

#[test]
fn linear_objective_parameter_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for instance in 0..100 {
        let loss = if instance % 2 == 0 { LossKind::SigmoidCe } else { LossKind::SmoothedHinge };
        let features = vec![random_vec(&mut rng, 5, 2.0)];
        let labels = vec![random_bools(&mut rng, 4)];
        let model = LinearModel::glorot(4, 5, &mut rng);
        let obj = MultiLabelObjective::new(&features, &labels, loss, 1.0).unwrap();
        let mut grads = model.zeros_like();
        obj.accumulate(&model, 0, &mut grads);
        let theta = model.flatten();
        let analytic = grads.flatten();
        let f = |p: &[f64]| {
            let mut m = model.clone();
            m.assign_flat(p).unwrap();
            obj.loss(&m, 0)
        };
        for i in 0..theta.len() {
            worst = worst.max(rel_err(analytic[i], central(f, &theta, i)));
        }
    }
    assert!(worst < TOL, "worst relative error {worst:e}");
}

struct MlpCase {
    head: MlpRiskHead,
    x: Vec<f64>,
    target: Vec<f64>,
}

impl MlpCase {
    fn new(rng: &mut ChaCha8Rng, d: usize, p: usize) -> Self {
        let mut head = MlpRiskHead::init(d, p, rng);
        // Non-zero biases so their gradients are exercised away from init.
        for layer in [&mut head.layer1, &mut head.layer2, &mut head.output] {
            layer.bias = random_vec(rng, layer.out_dim, 0.5);
        }
        Self {
            head,
            x: random_vec(rng, d, 2.0),
            target: random_vec(rng, p, 5.0).into_iter().map(f64::abs).collect(),
        }
    }

    fn loss_at(&self, theta: &[f64]) -> f64 {
        let mut h = self.head.clone();
        h.assign_flat(theta).unwrap();
        euclidean_loss(&mlp_forward(&h, &self.x).unwrap(), &self.target).unwrap().0
    }

    fn analytic(&self) -> Vec<f64> {
        let out = mlp_forward(&self.head, &self.x).unwrap();
        let (_, g) = euclidean_loss(&out, &self.target).unwrap();
        mlp_backward(&self.head, &self.x, &g).unwrap().flatten()
    }
}

#[test]
fn mlp_every_parameter_on_a_few_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..3 {
        let case = MlpCase::new(&mut rng, 4, 3);
        let theta = case.head.flatten();
        let analytic = case.analytic();
        assert_eq!(theta.len(), analytic.len());
        let mut worst: f64 = 0.0;
        for i in 0..theta.len() {
            worst = worst.max(rel_err(analytic[i], central(|p| case.loss_at(p), &theta, i)));
        }
        assert!(worst < TOL, "worst relative error {worst:e}");
    }
}

#[test]
fn mlp_sampled_parameters_and_directions_on_many_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..120 {
        let d = rng.random_range(1..10);
        let p = rng.random_range(1..6);
        let case = MlpCase::new(&mut rng, d, p);
        let theta = case.head.flatten();
        let analytic = case.analytic();

        // A few coordinates from every parameter block.
        let mut offset = 0;
        for len in case.head.blocks().iter().map(|b| b.values.len()) {
            for _ in 0..6 {
                let i = offset + rng.random_range(0..len);
                worst = worst.max(rel_err(analytic[i], central(|q| case.loss_at(q), &theta, i)));
            }
            offset += len;
        }

        // A random direction through all parameters at once.
        let v = random_vec(&mut rng, theta.len(), 1.0);
        let along = |t: f64| {
            let q: Vec<f64> = theta.iter().zip(&v).map(|(a, b)| a + t * b).collect();
            case.loss_at(&q)
        };
        let numeric = (along(H) - along(-H)) / (2.0 * H);
        let exact: f64 = analytic.iter().zip(&v).map(|(a, b)| a * b).sum();
        worst = worst.max(rel_err(exact, numeric));
    }
    assert!(worst < TOL, "worst relative error {worst:e}");
}
