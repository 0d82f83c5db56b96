use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::{finite_diff_check, Tensor};

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn ams(f: &Tensor<f64>, labels: &[usize], w: &Tensor<f64>, scale: f64, m: f64) -> f64 {
    let mut g = Graph::new();
    let fv = g.input(f.clone());
    let wv = g.input(w.clone());
    let cfg = AMSoftmaxConfig {
        scale,
        num_classes: w.shape()[1],
    };
    let l = am_softmax_loss(&mut g, fv, labels, wv, &cfg, m).unwrap();
    g.value(l).data()[0]
}

/// Straightforward cross-entropy over cosine logits, sharing no code with
/// the graph implementation.
fn reference_ce(f: &Tensor<f64>, labels: &[usize], w: &Tensor<f64>) -> f64 {
    let (n, d) = (f.shape()[0], f.shape()[1]);
    let c = w.shape()[1];
    let mut total = 0.0;
    for i in 0..n {
        let row = &f.data()[i * d..(i + 1) * d];
        let fnorm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let logits: Vec<f64> = (0..c)
            .map(|j| {
                let col: Vec<f64> = (0..d).map(|k| w.data()[k * c + j]).collect();
                let wnorm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
                row.iter().zip(&col).map(|(a, b)| a * b).sum::<f64>() / (fnorm * wnorm)
            })
            .collect();
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        total += -(logits[labels[i]].exp() / z).ln();
    }
    total / n as f64
}

#[test]
fn zero_margin_unit_scale_is_plain_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        let n = rng.gen_range(1..9);
        let d = rng.gen_range(2..12);
        let f = randn(&[n, d], &mut rng);
        let w = randn(&[d, 2], &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let a = ams(&f, &labels, &w, 1.0, 0.0);
        let b = reference_ce(&f, &labels, &w);
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn hand_evaluated_single_sample() {
    // cos(target) = 1, cos(other) = -1, s = 15, m = 0.2:
    // -log(e^{12} / (e^{12} + e^{-15})) = log(1 + e^{-27}).
    let f = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
    let w = Tensor::new(vec![2, 2], vec![-1.0, 1.0, 0.0, 0.0]).unwrap();
    let loss = ams(&f, &[1], &w, 15.0, 0.2);
    let expect = (-27.0f64).exp().ln_1p();
    assert!((loss - expect).abs() < 1e-15, "{loss} vs {expect}");
    assert!((expect - 1.88e-12).abs() < 1e-14);
}

#[test]
fn label_swap_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let e = randn(&[1, 5], &mut rng);
    let f = Tensor::new(vec![2, 5], [e.data(), e.data()].concat()).unwrap();
    let w = randn(&[5, 2], &mut rng);
    let swapped: Vec<f64> = w.data().chunks(2).flat_map(|r| [r[1], r[0]]).collect();
    let ws = Tensor::new(vec![5, 2], swapped).unwrap();
    let a = ams(&f, &[0, 1], &w, 15.0, 0.3);
    let b = ams(&f, &[1, 0], &ws, 15.0, 0.3);
    assert!((a - b).abs() < 1e-12);
    let e1 = Tensor::new(vec![1, 5], e.data().to_vec()).unwrap();
    let l0 = ams(&e1, &[0], &w, 15.0, 0.3);
    let l1 = ams(&e1, &[1], &ws, 15.0, 0.3);
    assert_eq!(l0.to_bits(), l1.to_bits());
}

#[test]
fn invalid_margin_and_label() {
    let f = Tensor::new(vec![1, 2], vec![1.0, 0.5]).unwrap();
    let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let cfg = AMSoftmaxConfig::default();
    for (m, label) in [(1.0, 0usize), (-0.1, 0), (0.2, 2)] {
        let mut g = Graph::<f64>::new();
        let fv = g.input(f.clone());
        let wv = g.input(w.clone());
        let r = am_softmax_loss(&mut g, fv, &[label], wv, &cfg, m);
        match label {
            2 => assert!(matches!(r, Err(Error::Input(_)))),
            _ => assert!(matches!(r, Err(Error::Config(_)))),
        }
    }
}

#[test]
fn gradients_wrt_embeddings_and_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let f = randn(&[4, 6], &mut rng);
    let w = randn(&[6, 2], &mut rng);
    let labels = [0, 1, 1, 0];
    let cfg = AMSoftmaxConfig::default();
    let r = finite_diff_check(
        |g, x| {
            let wv = g.input(w.clone());
            am_softmax_loss(g, x, &labels, wv, &cfg, 0.35)
        },
        &f,
        1e-4,
    )
    .unwrap();
    assert!(r.pass, "embeddings {}", r.max_rel_error);
    let r = finite_diff_check(
        |g, x| {
            let fv = g.input(f.clone());
            am_softmax_loss(g, fv, &labels, x, &cfg, 0.35)
        },
        &w,
        1e-4,
    )
    .unwrap();
    assert!(r.pass, "weights {}", r.max_rel_error);
}

#[test]
fn margin_schedule_endpoints() {
    let s = MarginSchedule::default();
    s.validate().unwrap();
    assert_eq!(margin_for_duration(1.0, &s), 0.2);
    assert_eq!(margin_for_duration(6.0, &s), 0.5);
    assert!((margin_for_duration(64_600.0 / 16_000.0, &s) - 0.38225).abs() < 1e-12);
    assert_eq!(margin_for_duration(0.3, &s), 0.2);
    assert_eq!(margin_for_duration(9.0, &s), 0.5);
}

#[test]
fn inconsistent_schedule_is_rejected() {
    let s = MarginSchedule {
        b: 0.2,
        ..MarginSchedule::default()
    };
    assert!(matches!(s.validate(), Err(Error::Config(_))));
}

fn wce(logits: &[f64], labels: &[usize], weights: &[f64]) -> f64 {
    let n = labels.len();
    let mut g = Graph::new();
    let x = g.input(Tensor::new(vec![n, 2], logits.to_vec()).unwrap());
    let l = weighted_ce_loss(&mut g, x, labels, weights).unwrap();
    g.value(l).data()[0]
}

#[test]
fn weighted_ce_examples() {
    assert!((wce(&[0.0, 0.0], &[1], &[1.0, 1.0]) - std::f64::consts::LN_2).abs() < 1e-15);
    let logits: [f64; 6] = [0.3, -1.2, 2.0, 0.5, -0.7, 0.1];
    let labels = [0, 1, 1];
    let plain = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let r = &logits[2 * i..2 * i + 2];
            (r[0].exp() + r[1].exp()).ln() - r[l]
        })
        .sum::<f64>()
        / 3.0;
    assert!((wce(&logits, &labels, &[0.5, 0.5]) - plain).abs() < 1e-12);

    // Unnormalized weighted sums double with the weights; the
    // weight-normalized mean used here does not move.
    let a = wce(&logits, &labels, &[0.1, 0.9]);
    let b = wce(&logits, &labels, &[0.2, 1.8]);
    assert!((a - b).abs() < 1e-15);
    let nll: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let r = &logits[2 * i..2 * i + 2];
            (r[0].exp() + r[1].exp()).ln() - r[l]
        })
        .collect();
    let raw = |w: [f64; 2]| labels.iter().zip(&nll).map(|(&l, v)| w[l] * v).sum::<f64>();
    assert!((raw([0.2, 1.8]) - 2.0 * raw([0.1, 0.9])).abs() < 1e-12);
    let normalized = raw([0.1, 0.9]) / (0.1 + 0.9 + 0.9);
    assert!((a - normalized).abs() < 1e-12);
}

#[test]
fn non_positive_weights_are_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros(vec![1, 2]));
    assert!(weighted_ce_loss(&mut g, x, &[0], &[0.0, 1.0]).is_err());
}

fn batch() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<usize>)> {
    (1usize..6, 2usize..8).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(-2.0f64..2.0, n * d),
            prop::collection::vec(-2.0f64..2.0, d * 2),
            prop::collection::vec(0usize..2, n),
        )
    })
}

fn tensors(f: &[f64], w: &[f64], n: usize) -> Option<(Tensor<f64>, Tensor<f64>)> {
    let d = f.len() / n;
    let ok = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() > 1e-3;
    if !f.chunks(d).all(ok) || !(0..2).all(|j| ok(&w.iter().skip(j).step_by(2).copied().collect::<Vec<_>>())) {
        return None;
    }
    Some((Tensor::new(vec![n, d], f.to_vec()).unwrap(), Tensor::new(vec![d, 2], w.to_vec()).unwrap()))
}

proptest! {
    #[test]
    fn scaling_embeddings_does_not_change_loss((f, w, labels) in batch(), k in 0.1f64..10.0) {
        let n = labels.len();
        let Some((ft, wt)) = tensors(&f, &w, n) else { return Ok(()) };
        let scaled = Tensor::new(ft.shape().to_vec(), f.iter().map(|v| v * k).collect()).unwrap();
        let a = ams(&ft, &labels, &wt, 15.0, 0.3);
        let b = ams(&scaled, &labels, &wt, 15.0, 0.3);
        prop_assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
    }

    #[test]
    fn loss_is_monotone_in_margin((f, w, labels) in batch(), m1 in 0.0f64..0.9, dm in 0.001f64..0.09) {
        let n = labels.len();
        let Some((ft, wt)) = tensors(&f, &w, n) else { return Ok(()) };
        let a = ams(&ft, &labels, &wt, 15.0, m1);
        let b = ams(&ft, &labels, &wt, 15.0, m1 + dm);
        prop_assert!(a >= 0.0);
        prop_assert!(b >= a, "{} then {}", a, b);
        // Strict increase is visible whenever the loss has not underflowed.
        if a > 1e-9 {
            prop_assert!(b > a);
        }
    }

    #[test]
    fn margin_is_affine(d1 in 1.0f64..6.0, d3 in 1.0f64..6.0) {
        let s = MarginSchedule::default();
        let d2 = (d1 + d3) / 2.0;
        let lhs = margin_for_duration(d1, &s) + margin_for_duration(d3, &s);
        prop_assert!((lhs - 2.0 * margin_for_duration(d2, &s)).abs() < 1e-12);
    }
}
