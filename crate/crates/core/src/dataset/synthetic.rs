use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{Corpus, Segment, Split, VideoFeatures};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Parameters of the synthetic feature-video generator.
///
/// Each class owns a few unit-norm sub-action prototypes. A video is noise
/// with one embedded action: the class's sub-actions, possibly reordered,
/// each stretched by a random speed factor. Same-class videos therefore share
/// content but not its timing or order.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub subactions_per_class: usize,
    pub feature_dim: usize,
    pub video_length_range: (usize, usize),
    pub action_length_range: (usize, usize),
    pub noise_sigma: f64,
    pub permutation_probability: f64,
    pub speed_jitter_range: (f64, f64),
    pub videos_per_class: usize,
    pub train_classes: usize,
    pub val_classes: usize,
    pub test_classes: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 10,
            subactions_per_class: 3,
            feature_dim: 32,
            video_length_range: (24, 64),
            action_length_range: (8, 24),
            noise_sigma: 0.15,
            permutation_probability: 0.5,
            speed_jitter_range: (0.75, 1.25),
            videos_per_class: 20,
            train_classes: 8,
            val_classes: 1,
            test_classes: 1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::param(format!("dataset.{field}: {why}")));
        if self.num_classes == 0 {
            return bad("num_classes", "must be positive");
        }
        if self.subactions_per_class == 0 {
            return bad("subactions_per_class", "must be positive");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim", "must be positive");
        }
        if self.videos_per_class == 0 {
            return bad("videos_per_class", "must be positive");
        }
        let (lo, hi) = self.video_length_range;
        if lo == 0 || lo > hi {
            return bad("video_length_range", "needs 1 <= min <= max");
        }
        let (lo, hi) = self.action_length_range;
        if lo == 0 || lo > hi {
            return bad("action_length_range", "needs 1 <= min <= max");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma", "must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.permutation_probability) {
            return bad("permutation_probability", "must lie in [0, 1]");
        }
        let (lo, hi) = self.speed_jitter_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("speed_jitter_range", "needs 0 < min <= max");
        }
        if self.train_classes + self.val_classes + self.test_classes != self.num_classes {
            return bad(
                "train_classes",
                "train + val + test class counts must equal num_classes",
            );
        }
        Ok(())
    }
}

fn unit_vector<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Near-equal split of `total` into `parts` positive durations.
fn even_parts(total: usize, parts: usize) -> Vec<usize> {
    let base = total / parts;
    let extra = total % parts;
    (0..parts)
        .map(|i| (base + usize::from(i < extra)).max(1))
        .collect()
}

pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.feature_dim;
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::param(e.to_string()))?;

    let labels: Vec<String> = (0..spec.num_classes).map(|c| format!("c{c:02}")).collect();
    let prototypes: Vec<Vec<Vec<f64>>> = labels
        .iter()
        .map(|_| {
            (0..spec.subactions_per_class)
                .map(|_| unit_vector(d, &mut rng))
                .collect()
        })
        .collect();

    let mut splits = BTreeMap::new();
    for (c, label) in labels.iter().enumerate() {
        let split = if c < spec.train_classes {
            Split::Train
        } else if c < spec.train_classes + spec.val_classes {
            Split::Val
        } else {
            Split::Test
        };
        splits.insert(label.clone(), split);
    }

    let mut videos = Vec::with_capacity(spec.num_classes * spec.videos_per_class);
    for (c, label) in labels.iter().enumerate() {
        for v in 0..spec.videos_per_class {
            let action_len = rng.random_range(spec.action_length_range.0..=spec.action_length_range.1);
            let mut order: Vec<usize> = (0..spec.subactions_per_class).collect();
            if rng.random_bool(spec.permutation_probability) {
                order.shuffle(&mut rng);
            }
            let durations: Vec<usize> = even_parts(action_len, spec.subactions_per_class)
                .into_iter()
                .map(|base| {
                    let (lo, hi) = spec.speed_jitter_range;
                    let factor = if lo < hi { rng.random_range(lo..=hi) } else { lo };
                    ((base as f64 * factor).round() as usize).max(1)
                })
                .collect();
            let total: usize = durations.iter().sum();
            let length = rng
                .random_range(spec.video_length_range.0..=spec.video_length_range.1)
                .max(total);
            let start = rng.random_range(0..=length - total);

            let mut frames = Matrix::zeros(length, d);
            if spec.noise_sigma > 0.0 {
                for x in frames.as_mut_slice() {
                    *x = noise.sample(&mut rng);
                }
            }
            let mut t = start;
            for (&sub, &dur) in order.iter().zip(&durations) {
                for _ in 0..dur {
                    for (x, p) in frames.row_mut(t).iter_mut().zip(&prototypes[c][sub]) {
                        *x += p;
                    }
                    t += 1;
                }
            }
            videos.push(VideoFeatures::new(
                format!("{label}_{v:03}"),
                label.clone(),
                frames,
                vec![Segment::new(start, start + total)?],
            )?);
        }
    }
    Corpus::new(videos, splits)
}
