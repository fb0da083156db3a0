//! Sparse-GP layers, the deep stack, its GVI objective and predictions.

pub mod layer;
pub mod model;
pub mod objective;
pub mod predict;

pub use layer::{layer_moments, layer_sample, GaussianMoments, LayerState, MeanFunction, VARIANCE_FLOOR};
pub use model::{DgpModel, ModelConfig, ParamBlock, ParamLayout, Transform};
pub use objective::{
    divergence_term, draw_path_noise, gvi_objective, gvi_objective_with_noise, model_forward,
    model_forward_with_noise, GviConfig, PathNoise,
};
pub use predict::{predict, Predictive};
