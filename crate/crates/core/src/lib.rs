//! Context-guided sequential search over region proposals in synthetic
//! indoor scenes.
//!
//! The crate simulates scenes with class co-occurrence and proximity
//! structure, trains a linear exploration policy by iterative imitation of
//! a groundtruth expert, and measures detection quality against the number
//! of regions processed. A determinant-optimal row selector picks compact
//! background example subsets for training.

pub mod catalog;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod geom;
pub mod policy;
pub mod rng;
pub mod scene;
pub mod search;
pub mod subset;

pub use catalog::{ClassCatalog, ClassId, Label};
pub use config::GenConfig;
pub use error::{Error, Result};
pub use eval::{
    average_precision, budget_grid, curve_from_traces, curve_full_strategy,
    curve_proposal_rank, curve_scene_context, APCurve, APMode, CurvePoint, EvalOptions,
    MatchMode, MethodTag,
};
pub use features::{FeatureSchema, SchemaKind, StateFeatures};
pub use geom::BBox;
pub use policy::{
    hamming_loss, load_model, oracle_predict, save_model, train_cost_sensitive,
    DatasetAggregate, Policy, PredictionList, RegionPrediction, Standardizer, TrainConfig,
    TrainingExample,
};
pub use scene::{
    classify_region, generate_corpus, generate_scene, read_corpus, split_by_index,
    write_corpus, Detection, Region, Scene, SimClassifier,
};
pub use search::{
    collect_rollout, dagger_train, seq_explore, DaggerConfig, ExplorationTrace,
    IterationDiagnostics, RolloutMode, RolloutOutput, SearchOptions, TraceStep,
};
pub use subset::{center_features, logdet_add_remove, select_subset, SubsetProblem, SubsetSolution};
