//! Feed-forward surrogates for the conventional fit: model, training,
//! inference and the `MWNET1` file format.

pub mod data;
mod fused;
pub mod gradcheck;
pub mod infer;
pub mod io;
pub mod model;
pub mod train;

pub use data::{build_dataset, label_from_parts, make_labels, normalize_input, LabeledVoxels, DIST_LABEL_SUM, GMT2_LABEL_SCALE};
pub use gradcheck::{gradient_check, gradient_check_adaptive, relative_error, GradCheckReport};
pub use infer::{infer_volume, infer_volume_with, mwf_from_outputs, VolumeInference};
pub use io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC};
pub use model::{HeadKind, Mlp, MlpModel, Real, LEAKY_SLOPE, PAPER_HIDDEN};
pub use train::{
    batch_size_at, dataset_mse, loss_and_gradients, lr_at, train, train_model, Dataset, EpochRecord, Gradients,
    Profile, TrainConfig, TrainLog,
};
