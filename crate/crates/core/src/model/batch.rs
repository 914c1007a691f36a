use crate::ctc::LabelSequence;
use crate::data::Utterance;
use crate::tensor::Tensor;

/// Padded minibatch. Padding frames are zero and padding target slots are
/// `0`; the per-utterance lengths say which entries are real.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `[B, T_max, d_feat]`
    pub features: Tensor,
    pub feature_lengths: Vec<usize>,
    /// `[B, U_max]` row-major.
    pub targets: Vec<usize>,
    pub target_lengths: Vec<usize>,
}

impl Batch {
    pub fn from_utterances<'a>(utts: impl IntoIterator<Item = &'a Utterance>) -> Batch {
        let utts: Vec<&Utterance> = utts.into_iter().collect();
        let d_feat = utts.first().map_or(0, |u| u.features.cols());
        let t_max = utts.iter().map(|u| u.frames()).max().unwrap_or(0);
        let u_max = utts.iter().map(|u| u.target.len()).max().unwrap_or(0);
        let mut features = vec![0.0; utts.len() * t_max * d_feat];
        let mut targets = vec![0; utts.len() * u_max];
        for (b, u) in utts.iter().enumerate() {
            let base = b * t_max * d_feat;
            features[base..base + u.features.len()].copy_from_slice(u.features.data());
            targets[b * u_max..b * u_max + u.target.len()].copy_from_slice(u.target.tokens());
        }
        Batch {
            ids: utts.iter().map(|u| u.id.clone()).collect(),
            features: Tensor::new(vec![utts.len(), t_max, d_feat], features).expect("consistent shape"),
            feature_lengths: utts.iter().map(|u| u.frames()).collect(),
            targets,
            target_lengths: utts.iter().map(|u| u.target.len()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.feature_lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature_lengths.is_empty()
    }

    pub fn max_frames(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn d_feat(&self) -> usize {
        self.features.shape()[2]
    }

    /// Unpadded `[T_b, d_feat]` features of utterance `b`.
    pub fn utterance_features(&self, b: usize) -> Tensor {
        let (t_max, d) = (self.max_frames(), self.d_feat());
        let start = b * t_max * d;
        let data = self.features.data()[start..start + self.feature_lengths[b] * d].to_vec();
        Tensor::matrix(self.feature_lengths[b], d, data).expect("consistent shape")
    }

    pub fn target(&self, b: usize) -> LabelSequence {
        let u_max = self.targets.len() / self.len().max(1);
        let tokens = self.targets[b * u_max..b * u_max + self.target_lengths[b]].to_vec();
        LabelSequence::new(tokens).expect("targets never hold blank")
    }
}
