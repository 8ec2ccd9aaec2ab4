#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voltavision::data::{LabeledDataset, Sample};
use voltavision::Tensor;

/// Separable 32x32 images: class `c` lights up channel `c % 3` in a
/// class-specific quadrant, plus uniform noise.
pub fn separable_dataset(per_class: &[usize], seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for (class, &count) in per_class.iter().enumerate() {
        for _ in 0..count {
            let mut img = Tensor::zeros((1, 3, 32, 32));
            for c in 0..3 {
                for h in 0..32 {
                    for w in 0..32 {
                        let quadrant = (h / 16) * 2 + w / 16;
                        let lit = c == class % 3 && quadrant == class % 4;
                        let base = if lit { 0.8 } else { -0.6 };
                        img.set(0, c, h, w, base + rng.gen_range(-0.2..0.2));
                    }
                }
            }
            samples.push(Sample { image: img, label: class });
        }
    }
    LabeledDataset {
        class_names: (0..per_class.len()).map(|c| format!("class_{c}")).collect(),
        samples,
        source: format!("synthetic(seed={seed})"),
        coarse_labels: None,
    }
}

/// Harder synthetic data: every class is a blocky random prototype at
/// amplitude 0.4 over a shared background, buried in uniform noise of
/// amplitude `noise`.
pub fn noisy_dataset(labels: &[usize], classes: usize, noise: f32, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = |rng: &mut ChaCha8Rng| -> Vec<f32> { (0..3 * 8 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let background = block(&mut rng);
    let prototypes: Vec<Vec<f32>> = (0..classes).map(|_| block(&mut rng)).collect();
    let samples = labels
        .iter()
        .map(|&label| {
            let mut img = Tensor::zeros((1, 3, 32, 32));
            for c in 0..3 {
                for h in 0..32 {
                    for w in 0..32 {
                        let b = c * 64 + (h / 4) * 8 + w / 4;
                        let v = 0.4 * background[b] + 0.4 * prototypes[label][b] + rng.gen_range(-noise..noise);
                        img.set(0, c, h, w, v);
                    }
                }
            }
            Sample { image: img, label }
        })
        .collect();
    LabeledDataset {
        class_names: (0..classes).map(|c| format!("class_{c}")).collect(),
        samples,
        source: format!("synthetic(classes={classes}, noise={noise}, seed={seed})"),
        coarse_labels: None,
    }
}
