//! Hash heads, the pairwise loss and the two-stage training schedule.

pub mod codes;
pub mod loss;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::nn::{Activation, Mlp};
use crate::rng::Rng;

pub use codes::{binarize, BinaryCode, RelaxedCode};
pub use loss::{pair_loss, pair_loss_grad, weighted_objective, LossParams, PairLabels};
pub use train::{train_stage1, train_stage2, Stage1, Stage2, TrainConfig, TrainingData, ViewSubset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadTag {
    Basic,
    View(usize),
}

/// Maps a descriptor to a relaxed code in (-1, 1)^q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashHead {
    pub tag: HeadTag,
    pub net: Mlp,
}

impl HashHead {
    pub fn new(tag: HeadTag, input: usize, hidden: &[usize], q: usize, rng: &mut Rng) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(q);
        Self {
            tag,
            net: Mlp::new(&sizes, Activation::Relu, Activation::Tanh, rng),
        }
    }

    pub fn bits(&self) -> usize {
        self.net.output_dim()
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        self.net.forward(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};

    #[test]
    fn head_output_is_open_interval() {
        let mut r = rng::stream(0, Stream::Init);
        let head = HashHead::new(HeadTag::Basic, 5, &[8], 12, &mut r);
        for scale in [0.0, 1.0, 1e3] {
            let out = head.encode(&[scale, -scale, 0.5 * scale, scale, 2.0]);
            assert_eq!(out.len(), 12);
            assert!(out.iter().all(|v| v.abs() <= 1.0));
        }
    }
}
