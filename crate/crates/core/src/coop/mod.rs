//! Cooperation classifier: trajectory embedding, Gumbel-softmax interaction
//! selection, masked inter-pedestrian attention, temporal pooling and a
//! two-class head, with hand-written gradients.

mod dataset;
mod gumbel;
mod net;
mod train;

use std::path::Path;

use crate::error::Result;
use crate::sensing::TrajectoryHistory;
use crate::sim::WorldState;
use crate::tensor_io::{self, ParamKind};

pub use dataset::{generate_dataset, sample_from_history, separable_dataset};
pub use gumbel::{gumbel_select, with_self_loops};
pub use net::{
    backward, coop_loss, displacement_features, embed_trajectories, forward, inter_attention, loss_and_grad,
    sample_loss, CoopDims, CoopNetParams, CoopSample, LayerParams, DISPLACEMENT_SCALE,
};
pub use train::{
    accuracy, inference_selection, predict, train_coop, train_from, CoopTrainConfig, TrainedCoop,
    INFERENCE_TEMPERATURE, SELECTION_EPS,
};

/// Minimum valid history entries before the classifier is trusted; below
/// it a pedestrian is treated as non-cooperative.
pub const MIN_VALID_STEPS: usize = 2;

/// Cooperation probability for each of `visible`, in order.
pub fn infer_cooperation(params: &CoopNetParams, history: &TrajectoryHistory, world: &WorldState, visible: &[u32]) -> Vec<f64> {
    let trusted: Vec<u32> = visible
        .iter()
        .copied()
        .filter(|&id| history.window(id).is_some_and(|w| w.valid_count() >= MIN_VALID_STEPS))
        .collect();
    let probs = match sample_from_history(history, world, &trusted) {
        Some(sample) => predict(params, &sample),
        None => Vec::new(),
    };
    visible
        .iter()
        .map(|id| trusted.iter().position(|t| t == id).map_or(0.0, |k| probs[k]))
        .collect()
}

impl CoopNetParams {
    pub fn save(&self, path: &Path) -> Result<()> {
        tensor_io::save(path, ParamKind::Coop, &self.dims.to_header(), self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        tensor_io::load(path, ParamKind::Coop, |h| CoopDims::from_header(h).map(CoopNetParams::zeros))
    }
}
