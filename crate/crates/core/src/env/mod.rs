//! Navigation benchmark: a point agent crosses a four-passage junction and a
//! narrow gate to reach the goal.

mod dataset;
mod expert;
mod map;
mod rollout;
mod sim;

pub use dataset::{
    generate_dataset, load_dataset, save_dataset, ChunkPairs, DemoDataset, Normalizer, DATASET_MAGIC, DATASET_VERSION,
};
pub use expert::{scripted_expert, Demonstration, ExpertConfig};
pub use map::{default_map, NavMap, Passage, Point, Rect};
pub use rollout::{
    classify_passage, rollout, rollouts, ChunkPolicy, ExpertReplay, InferenceRecord, NetPolicy, Plan, TrajectoryRecord,
};
pub use sim::{clip_action, step, EnvState, Status};
