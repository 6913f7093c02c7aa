//! Data generation, noise, self-supervised training, rollouts and
//! verification suites.

pub mod data;
pub mod loss;
pub mod noise;
pub mod rollout;
pub mod train;
pub mod verify;

pub use data::{
    gen_dataset, gen_pinned_dataset, load_dataset, save_dataset, Dataset, DatasetRanges,
    TrainSample,
};
pub use loss::{physics_loss, physics_loss_at, sample_loss, SampleLoss};
pub use noise::{apply_noise, NoiseConfig};
pub use rollout::{
    diag_export, load_trajectory, read_diag, rollout, save_trajectory, Policy, Scene, SceneFile,
};
pub use train::{thread_pool, StepLog, TrainConfig, Trainer};
