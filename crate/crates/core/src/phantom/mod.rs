//! Synthetic cohort generation standing in for acquired multi-echo data.

mod cohort;
mod cube;
mod noise;
mod split;
mod truth;
mod tukey;

pub use cohort::{derive_seed, make_cohort, make_subject, ClassMix, CohortConfig, Subject, FLIP_QUANTUM_DEG};
pub use cube::{read_cube, write_cube, CubeManifest, EchoCube, CUBE_MAGIC};
pub use noise::{add_noise, add_noise_in_place, NoiseModel};
pub use split::{split_subjects, Partition, SplitScheme, SubjectKind};
pub use truth::{make_voxel_truth, truth_amplitudes, PoolSpec, TissueClass, VoxelTruth};
pub use tukey::{tukey_apodize, tukey_window};
