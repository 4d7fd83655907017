//! Sequential exploration of scene regions driven by belief scores, and the
//! iterative imitation loop that trains the scorer from expert rollouts.

use crate::catalog::{ClassId, Label};
use crate::config::GenConfig;
use crate::error::{Error, Result};
use crate::features::{
    assemble_unary_only, assemble_with_context, non_maximal_suppress, FeatureSchema, SchemaKind,
    SentinelParams, DEFAULT_NMS_IOU,
};
use crate::policy::{
    train_cost_sensitive, DatasetAggregate, Policy, TrainConfig, TrainingExample,
};
use crate::rng::{derive_seed, rng_from, unit};
use crate::scene::{split_by_index, Detection, Region, Scene, SimClassifier};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

/// Who scores the unexplored regions during a rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RolloutMode {
    /// Trained policy beliefs.
    Policy,
    /// Groundtruth expert: belief 1 on query regions, 0 elsewhere.
    Oracle,
    /// Per-pass coin flip: expert with probability `beta`, policy otherwise.
    Mixture { beta: f64 },
}

impl RolloutMode {
    fn validate(self) -> Result<()> {
        if let RolloutMode::Mixture { beta } = self {
            if !(beta.is_finite() && (0.0..=1.0).contains(&beta)) {
                return Err(Error::argument(format!(
                    "mixture beta must lie in [0, 1], got {beta}"
                )));
            }
        }
        Ok(())
    }

    /// A strict mixture re-randomizes every pass, so score reuse is off.
    fn is_strict_mixture(self) -> bool {
        matches!(self, RolloutMode::Mixture { beta } if beta > 0.0 && beta < 1.0)
    }

    fn needs_policy(self) -> bool {
        match self {
            RolloutMode::Policy => true,
            RolloutMode::Oracle => false,
            RolloutMode::Mixture { beta } => beta < 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// IoU threshold for duplicate suppression of explored detections.
    pub nms_iou: f64,
    /// Reuse the previous pass's scores after a background detection.
    pub background_skip: bool,
    /// Detector noise stream selector.
    pub noise_seed: u64,
    /// Coin stream selector for mixture rollouts.
    pub mixture_seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            nms_iou: DEFAULT_NMS_IOU,
            background_skip: true,
            noise_seed: 0,
            mixture_seed: 0,
        }
    }
}

/// One exploration step. `belief` is the score under which the region was
/// chosen; the forced first step has none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub region_id: u32,
    pub belief: Option<f64>,
    pub detection: Detection,
}

/// Record of a full rollout on one scene. `classification_calls` counts
/// region scorings summed over passes, the budgeted quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationTrace {
    pub scene_id: u64,
    pub query_class: ClassId,
    pub steps: Vec<TraceStep>,
    pub classification_calls: usize,
}

impl ExplorationTrace {
    pub fn explored_ids(&self) -> Vec<u32> {
        self.steps.iter().map(|s| s.region_id).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for step in &self.steps {
            if step.region_id != step.detection.region_id {
                return Err(Error::Invariant(format!(
                    "trace step region {} carries detection for region {}",
                    step.region_id, step.detection.region_id
                )));
            }
            if !seen.insert(step.region_id) {
                return Err(Error::Invariant(format!(
                    "trace for scene {} explores region {} twice",
                    self.scene_id, step.region_id
                )));
            }
        }
        Ok(())
    }
}

struct Collector<'a> {
    schema: FeatureSchema,
    background_filter: Option<&'a HashSet<(u64, u32)>>,
    examples: Vec<TrainingExample>,
}

impl Collector<'_> {
    fn admit(&self, scene: &Scene, region: &Region, label: bool) -> bool {
        if label || !region.gt_class.is_background() {
            return true;
        }
        match self.background_filter {
            Some(keep) => keep.contains(&(scene.id, region.id)),
            None => true,
        }
    }
}

/// Explores up to `budget` regions of `scene`, always starting from the
/// rank-0 proposal. After each detector call the remaining regions are
/// rescored and the highest belief is explored next (first maximum in
/// proposal-rank order on ties). When `allow_skip` holds and the newest
/// detection is background, the previous scores are reused instead of
/// rescoring, since background detections never alter the context features
/// and never alter groundtruth labels.
fn run_rollout(
    config: &GenConfig,
    scene: &Scene,
    query: ClassId,
    budget: usize,
    mode: RolloutMode,
    policy: Option<&Policy>,
    opts: &SearchOptions,
    allow_skip: bool,
    mut collector: Option<&mut Collector<'_>>,
) -> Result<ExplorationTrace> {
    mode.validate()?;
    if budget == 0 {
        return Err(Error::argument("exploration budget must be at least 1"));
    }
    if !scene.catalog.contains_id(query) {
        return Err(Error::UnknownClass(format!("class id {}", query.0)));
    }
    let policy = if mode.needs_policy() {
        let p = policy.ok_or_else(|| {
            Error::argument("this rollout mode scores with a policy but none was given")
        })?;
        if p.schema().class_count != scene.catalog.len() {
            return Err(Error::SchemaMismatch {
                expected: format!("policy over {} classes", scene.catalog.len()),
                got: format!("{} classes", p.schema().class_count),
            });
        }
        Some(p)
    } else {
        policy
    };
    if let Some(col) = &collector {
        if col.schema.class_count != scene.catalog.len() {
            return Err(Error::SchemaMismatch {
                expected: format!("collection schema over {} classes", scene.catalog.len()),
                got: format!("{} classes", col.schema.class_count),
            });
        }
    }

    let mut trace = ExplorationTrace {
        scene_id: scene.id,
        query_class: query,
        steps: Vec::new(),
        classification_calls: 0,
    };
    if scene.regions.is_empty() {
        return Ok(trace);
    }

    let classifier = SimClassifier::new(config);
    let sentinel = SentinelParams::for_scene(scene);
    let class_count = scene.catalog.len();
    let mut mix_rng = mode
        .is_strict_mixture()
        .then(|| rng_from(&[0x31c5, opts.mixture_seed, scene.id]));
    let skip_enabled = allow_skip && mix_rng.is_none();

    let mut unexplored: Vec<&Region> = scene.regions[1..].iter().collect();
    let mut explored: Vec<(Region, Detection)> = Vec::new();
    let mut current: &Region = &scene.regions[0];
    let mut current_belief: Option<f64> = None;
    let mut cached_beliefs: Option<Vec<f64>> = None;

    loop {
        let detection = classifier.classify(scene, current.id, opts.noise_seed)?;
        explored.push((current.clone(), detection.clone()));
        trace.steps.push(TraceStep {
            region_id: current.id,
            belief: current_belief,
            detection: detection.clone(),
        });
        if trace.steps.len() >= budget || unexplored.is_empty() {
            break;
        }

        let reuse = skip_enabled
            && detection.predicted_class.is_background()
            && cached_beliefs.is_some();
        let beliefs = if reuse {
            cached_beliefs.take().unwrap()
        } else {
            let use_oracle = match mode {
                RolloutMode::Oracle => true,
                RolloutMode::Policy => false,
                RolloutMode::Mixture { beta } => {
                    if let Some(rng) = mix_rng.as_mut() {
                        unit(rng) < beta
                    } else {
                        beta >= 1.0
                    }
                }
            };
            trace.classification_calls += unexplored.len();
            let kept = non_maximal_suppress(&explored, opts.nms_iou);
            let mut beliefs = Vec::with_capacity(unexplored.len());
            for region in &unexplored {
                let label = region.gt_class == Label::Class(query);
                let wants_full = |schema: &FeatureSchema| schema.kind == SchemaKind::Full;
                let need_full = policy.map_or(false, |p| !use_oracle && wants_full(p.schema()))
                    || collector.as_ref().map_or(false, |c| wants_full(&c.schema));
                let need_unary = policy
                    .map_or(false, |p| !use_oracle && !wants_full(p.schema()))
                    || collector.as_ref().map_or(false, |c| !wants_full(&c.schema));
                let full_feat = if need_full {
                    Some(assemble_with_context(
                        region,
                        &kept,
                        class_count,
                        &sentinel,
                    )?)
                } else {
                    None
                };
                let unary_feat = if need_unary {
                    Some(assemble_unary_only(region))
                } else {
                    None
                };
                let belief = if use_oracle {
                    if label {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    let p = policy.unwrap();
                    let feat = if wants_full(p.schema()) {
                        full_feat.as_ref().unwrap()
                    } else {
                        unary_feat.as_ref().unwrap()
                    };
                    p.predict(feat)?.belief
                };
                if let Some(col) = collector.as_mut() {
                    if col.admit(scene, region, label) {
                        let feat = if wants_full(&col.schema) {
                            full_feat.clone().unwrap()
                        } else {
                            unary_feat.clone().unwrap()
                        };
                        col.examples.push(TrainingExample {
                            features: feat.into_values(),
                            label,
                            weight: 1.0,
                        });
                    }
                }
                beliefs.push(belief);
            }
            beliefs
        };

        let mut best = 0;
        for i in 1..beliefs.len() {
            if beliefs[i] > beliefs[best] {
                best = i;
            }
        }
        current = unexplored.remove(best);
        current_belief = Some(beliefs[best]);
        let mut rest = beliefs;
        rest.remove(best);
        cached_beliefs = Some(rest);
    }
    Ok(trace)
}

/// Public rollout entry point. Score reuse after background detections is
/// governed by `opts.background_skip`.
pub fn seq_explore(
    config: &GenConfig,
    scene: &Scene,
    query: ClassId,
    budget: usize,
    mode: RolloutMode,
    policy: Option<&Policy>,
    opts: &SearchOptions,
) -> Result<ExplorationTrace> {
    run_rollout(
        config,
        scene,
        query,
        budget,
        mode,
        policy,
        opts,
        opts.background_skip,
        None,
    )
}

/// A rollout plus the supervised examples gathered at every scored state.
#[derive(Debug, Clone)]
pub struct RolloutOutput {
    pub trace: ExplorationTrace,
    pub examples: Vec<TrainingExample>,
}

/// Runs a rollout while recording one example per unexplored region at every
/// scoring pass, labeled by the groundtruth expert. Score reuse is disabled
/// here so every visited state contributes examples. Negatives on
/// groundtruth-background regions can be restricted to `background_filter`.
pub fn collect_rollout(
    config: &GenConfig,
    scene: &Scene,
    query: ClassId,
    budget: usize,
    mode: RolloutMode,
    policy: Option<&Policy>,
    schema: FeatureSchema,
    opts: &SearchOptions,
    background_filter: Option<&HashSet<(u64, u32)>>,
) -> Result<RolloutOutput> {
    let mut collector = Collector {
        schema,
        background_filter,
        examples: Vec::new(),
    };
    let trace = run_rollout(
        config,
        scene,
        query,
        budget,
        mode,
        policy,
        opts,
        false,
        Some(&mut collector),
    )?;
    Ok(RolloutOutput {
        trace,
        examples: collector.examples,
    })
}

#[derive(Debug, Clone)]
pub struct DaggerConfig {
    pub schema: FeatureSchema,
    /// Expert mixing decay base; iteration i rolls out with beta0^(i-1).
    pub beta0: f64,
    /// Tail fraction of the corpus held out for model selection.
    pub val_fraction: f64,
    pub nms_iou: f64,
    pub noise_seed: u64,
    /// Seeds the mixture coin streams.
    pub seed: u64,
    pub train: TrainConfig,
    /// When set, negatives on groundtruth-background regions are kept only
    /// for (scene id, region id) pairs in this set.
    pub background_subset: Option<HashSet<(u64, u32)>>,
}

impl DaggerConfig {
    pub fn new(schema: FeatureSchema) -> Self {
        DaggerConfig {
            schema,
            beta0: 0.0,
            val_fraction: 0.25,
            nms_iou: DEFAULT_NMS_IOU,
            noise_seed: 0,
            seed: 0,
            train: TrainConfig::default(),
            background_subset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub examples_added: usize,
    pub aggregate_size: usize,
    /// Fraction of state labels the freshly trained policy gets wrong on its
    /// own rollouts over the training scenes.
    pub train_hamming: f64,
    /// Same measure on the held-out scenes; drives model selection.
    pub val_hamming: f64,
    pub selected: bool,
}

fn mean_state_hamming(
    config: &GenConfig,
    scenes: &[Scene],
    query: ClassId,
    budget: Option<usize>,
    policy: &Policy,
    cfg: &DaggerConfig,
) -> Result<f64> {
    let counts: Vec<(usize, usize)> = scenes
        .par_iter()
        .map(|scene| -> Result<(usize, usize)> {
            if scene.regions.is_empty() {
                return Ok((0, 0));
            }
            let b = budget.unwrap_or(scene.regions.len()).max(1);
            let opts = SearchOptions {
                nms_iou: cfg.nms_iou,
                background_skip: false,
                noise_seed: cfg.noise_seed,
                mixture_seed: 0,
            };
            let out = collect_rollout(
                config,
                scene,
                query,
                b,
                RolloutMode::Policy,
                Some(policy),
                cfg.schema,
                &opts,
                None,
            )?;
            let mut wrong = 0;
            for ex in &out.examples {
                let pred = policy.predict(&crate::features::StateFeatures::from_values(
                    ex.features.clone(),
                ))?;
                if pred.label != ex.label {
                    wrong += 1;
                }
            }
            Ok((wrong, out.examples.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let wrong: usize = counts.iter().map(|c| c.0).sum();
    let total: usize = counts.iter().map(|c| c.1).sum();
    if total == 0 {
        Ok(0.0)
    } else {
        Ok(wrong as f64 / total as f64)
    }
}

/// Iterative imitation training. Iteration 1 rolls out the groundtruth
/// expert; iteration i rolls out an expert/policy mixture with probability
/// beta0^(i-1) of the expert per pass, using the most recent policy.
/// Examples accumulate across iterations and the scorer is refit on the
/// full pool each time. Returns the candidate with the lowest held-out
/// Hamming fraction (earliest iteration on ties) plus per-iteration
/// diagnostics.
pub fn dagger_train(
    config: &GenConfig,
    corpus: &[Scene],
    query: ClassId,
    iterations: usize,
    budget: Option<usize>,
    cfg: &DaggerConfig,
) -> Result<(Policy, Vec<IterationDiagnostics>)> {
    if iterations == 0 {
        return Err(Error::argument("need at least one training iteration"));
    }
    if corpus.is_empty() {
        return Err(Error::DegenerateData("empty training corpus".into()));
    }
    if !(cfg.beta0.is_finite() && (0.0..=1.0).contains(&cfg.beta0)) {
        return Err(Error::argument(format!(
            "beta0 must lie in [0, 1], got {}",
            cfg.beta0
        )));
    }
    if !(cfg.val_fraction.is_finite() && (0.0..1.0).contains(&cfg.val_fraction)) {
        return Err(Error::argument(format!(
            "val_fraction must lie in [0, 1), got {}",
            cfg.val_fraction
        )));
    }
    if cfg.schema.class_count != corpus[0].catalog.len() {
        return Err(Error::SchemaMismatch {
            expected: format!("schema over {} classes", corpus[0].catalog.len()),
            got: format!("{} classes", cfg.schema.class_count),
        });
    }
    if !corpus[0].catalog.contains_id(query) {
        return Err(Error::UnknownClass(format!("class id {}", query.0)));
    }

    let (train_scenes, holdout) = split_by_index(corpus, cfg.val_fraction);
    if train_scenes.is_empty() {
        return Err(Error::DegenerateData(
            "holdout fraction leaves no training scenes".into(),
        ));
    }
    let val_scenes = if holdout.is_empty() {
        train_scenes
    } else {
        holdout
    };

    let mut aggregate = DatasetAggregate::new(cfg.schema.len());
    let mut diagnostics: Vec<IterationDiagnostics> = Vec::new();
    let mut latest: Option<Policy> = None;
    let mut best: Option<(f64, usize, Policy)> = None;

    for iteration in 1..=iterations {
        let beta = cfg.beta0.powi(iteration as i32 - 1);
        let mode = if beta >= 1.0 {
            RolloutMode::Oracle
        } else if beta <= 0.0 {
            RolloutMode::Policy
        } else {
            RolloutMode::Mixture { beta }
        };
        let mixture_seed = derive_seed(cfg.seed, iteration as u64);
        let rollout_policy = latest.as_ref();
        let batches: Vec<Vec<TrainingExample>> = train_scenes
            .par_iter()
            .map(|scene| -> Result<Vec<TrainingExample>> {
                if scene.regions.is_empty() {
                    return Ok(Vec::new());
                }
                let b = budget.unwrap_or(scene.regions.len()).max(1);
                let opts = SearchOptions {
                    nms_iou: cfg.nms_iou,
                    background_skip: false,
                    noise_seed: cfg.noise_seed,
                    mixture_seed,
                };
                let out = collect_rollout(
                    config,
                    scene,
                    query,
                    b,
                    mode,
                    rollout_policy,
                    cfg.schema,
                    &opts,
                    cfg.background_subset.as_ref(),
                )?;
                Ok(out.examples)
            })
            .collect::<Result<Vec<_>>>()?;
        let examples: Vec<TrainingExample> = batches.into_iter().flatten().collect();
        let examples_added = examples.len();
        aggregate.extend_iteration(examples)?;

        let candidate = train_cost_sensitive(&aggregate, cfg.schema, &cfg.train)?;
        let train_hamming =
            mean_state_hamming(config, train_scenes, query, budget, &candidate, cfg)?;
        let val_hamming = mean_state_hamming(config, val_scenes, query, budget, &candidate, cfg)?;

        diagnostics.push(IterationDiagnostics {
            iteration,
            examples_added,
            aggregate_size: aggregate.len(),
            train_hamming,
            val_hamming,
            selected: false,
        });
        let better = match &best {
            Some((loss, _, _)) => val_hamming < *loss,
            None => true,
        };
        if better {
            best = Some((val_hamming, iteration, candidate.clone()));
        }
        latest = Some(candidate);
    }

    let (_, chosen_iteration, chosen) = best.expect("at least one iteration ran");
    for d in &mut diagnostics {
        d.selected = d.iteration == chosen_iteration;
    }
    Ok((chosen, diagnostics))
}
