//! Knowledge-graph embedding on the Lorentz hyperboloid.
//!
//! Entities are points on the hyperboloid, each relation is a block-diagonal
//! rotation of the space coordinates, and a triple is scored by the negative
//! squared Lorentzian distance between the rotated head and the tail plus two
//! entity biases. Training uses Riemannian Adam for the points; evaluation is
//! filtered MRR / Hits@k over both prediction directions.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod manifold;
pub mod model;
pub mod optim;
pub mod training;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use data::{augment_inverse, load_augmented, load_dataset, KgDataset, Split, Triple};
pub use error::{Error, Result};
pub use evaluation::{evaluate, evaluate_by_category, filtered_rank, Metrics, RankReport, TiePolicy};
pub use manifold::{LorentzPoint, TangentVector};
pub use model::{ModelState, RelationParams};
pub use training::{fit, initialize, TrainConfig};
