//! Warper checks against independent oracles: central finite differences for
//! the hand-written backward pass, and a dense shift for the sampler.

use densewarp::heatmap::{render_gaussian, Heatmap, Keypoint2D};
use densewarp::warper::{
    loss_and_gradient, sample_loss, warper_train, TrainHyper, TrainSample, WarpInput, WarperWeights, OFFSET_SCALE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn render(j: usize, size: usize, pts: &[(f64, f64)]) -> Heatmap {
    let kps: Vec<_> = pts
        .iter()
        .take(j)
        .enumerate()
        .map(|(i, p)| Keypoint2D::new(i, p.0, p.1))
        .collect();
    render_gaussian(&kps, size, size, 2.0).unwrap()
}

/// Lifts a heatmap off zero so no output sits on the clamp boundary.
fn lifted(h: &Heatmap) -> Heatmap {
    let data = h.data().iter().map(|v| 0.05 + 0.9 * v).collect();
    Heatmap::from_data(h.view, h.frame, h.joints(), h.width(), h.height(), data).unwrap()
}

fn perturbed_weights(joints: usize, channels: usize, seed: u64) -> WarperWeights {
    let mut w = WarperWeights::new(1, joints, channels, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for t in w.tensors_mut() {
        t.bias.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    }
    for head in &mut w.offset_heads {
        // head outputs are scaled by OFFSET_SCALE pixels: offsets sit near a
        // quarter pixel and never reach an integer, where the sampler kinks
        head.weight
            .mapv_inplace(|_| rng.random_range(-0.01..0.01) / OFFSET_SCALE);
        head.bias
            .mapv_inplace(|_| (0.25 + rng.random_range(-0.05..0.05)) / OFFSET_SCALE);
    }
    // keep every rectifier input well away from its kink: half the channels
    // firmly on, half firmly off
    for block in &mut w.residual_blocks {
        block.conv1.weight.mapv_inplace(|v| 0.2 * v);
        for (k, b) in block.conv1.bias.iter_mut().enumerate() {
            *b = if k % 2 == 0 { 0.6 } else { -0.6 };
        }
    }
    w.output_head.weight.mapv_inplace(|v| v + rng.random_range(-0.02..0.02));
    w.output_head.bias.fill(0.02);
    w
}

#[test]
fn analytic_gradients_match_central_differences() {
    let (j, size, c) = (2, 16, 16);
    let anchor = lifted(&render(j, size, &[(6.3, 7.1), (9.6, 8.2)]));
    let corrected = lifted(&render(j, size, &[(7.0, 7.4), (9.1, 9.0)]));
    let target = render(j, size, &[(7.2, 7.6), (8.9, 9.3)]);
    let sample = TrainSample {
        input: WarpInput {
            corrected,
            anchor,
            relative_offset: 1,
        },
        target,
    };
    let weights = perturbed_weights(j, c, 11);
    let (_, grad) = loss_and_gradient(&weights, &sample).unwrap();

    let eps = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n_tensors = weights.tensors().len();
    assert_eq!(n_tensors, 1 + 6 + 5 + 1);
    for t in 0..n_tensors {
        let (rows, cols) = weights.tensors()[t].weight.dim();
        let nb = weights.tensors()[t].bias.len();
        // every bias entry plus a random subset of kernel entries
        let mut picks: Vec<(bool, usize, usize)> = (0..nb).map(|b| (true, b, 0)).collect();
        for _ in 0..24 {
            picks.push((false, rng.random_range(0..rows), rng.random_range(0..cols)));
        }
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for (is_bias, r, col) in picks {
            let eval = |delta: f64| {
                let mut w = weights.clone();
                let p = &mut w.tensors_mut()[t];
                if is_bias {
                    p.bias[r] += delta;
                } else {
                    p.weight[[r, col]] += delta;
                }
                sample_loss(&w, &sample).unwrap()
            };
            numeric.push((eval(eps) - eval(-eps)) / (2.0 * eps));
            let g = grad.tensors()[t];
            analytic.push(if is_bias { g.bias[r] } else { g.weight[[r, col]] });
        }
        let diff = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = analytic
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
        assert!(scale > 0.0, "tensor {t} has an all-zero gradient sample");
        let rel = diff / scale;
        assert!(rel < 1e-4, "tensor {t}: relative gradient error {rel:e}");
    }
}

/// A static scene seen through a detector with a constant one-pixel bias: the
/// anchor sits one pixel right of the truth, the fused estimate on the truth.
fn static_biased_samples(count: usize) -> Vec<TrainSample> {
    let truth: Vec<(f64, f64)> = (0..17)
        .map(|j| {
            let a = j as f64 * 0.37;
            (15.5 + 7.0 * a.cos(), 15.5 + 9.0 * a.sin())
        })
        .collect();
    let shifted: Vec<(f64, f64)> = truth.iter().map(|p| (p.0 + 1.0, p.1)).collect();
    let target = render(17, 32, &truth);
    let anchor = render(17, 32, &shifted);
    (0..count)
        .map(|_| TrainSample {
            input: WarpInput {
                corrected: target.clone(),
                anchor: anchor.clone(),
                relative_offset: 1,
            },
            target: target.clone(),
        })
        .collect()
}

#[test]
fn static_training_converges() {
    let data = static_biased_samples(16);
    let hyper = TrainHyper {
        lr: 1.0,
        epochs: 50,
        batch: 8,
        ..Default::default()
    };
    let (_, report) = warper_train(&data, 1, &hyper).unwrap();
    assert!(report.final_loss() < 0.1 * report.initial_loss());
}
