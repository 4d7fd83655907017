//! Average-precision curves over exploration budgets for the three region
//! ordering strategies.

use crate::catalog::{ClassId, Label};
use crate::config::GenConfig;
use crate::error::{Error, Result};
use crate::features::{assemble_unary_only, SchemaKind};
use crate::policy::Policy;
use crate::scene::{Detection, Scene, SimClassifier};
use crate::search::{seq_explore, ExplorationTrace, RolloutMode, SearchOptions};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::{HashMap, HashSet};

/// Region ordering strategy under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MethodTag {
    /// Objectness ranking as proposed.
    ProposalRank,
    /// One-shot reranking by scene-level beliefs.
    SceneContext,
    /// Sequential exploration with detection feedback.
    ScenePlusObjects,
}

impl MethodTag {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodTag::ProposalRank => "proposal_rank",
            MethodTag::SceneContext => "scene_context",
            MethodTag::ScenePlusObjects => "scene_plus_objects",
        }
    }
}

/// How detections are matched to groundtruth positives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchMode {
    /// A detection is correct iff its region is a groundtruth positive.
    RegionId,
    /// Greedy box matching at this IoU threshold, one match per positive.
    Iou(f64),
}

/// Whether precision-recall pools all scenes or averages per-scene values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum APMode {
    Pooled,
    PerScene,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub noise_seed: u64,
    pub nms_iou: f64,
    pub match_mode: MatchMode,
    pub ap_mode: APMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            noise_seed: 0,
            nms_iou: crate::features::DEFAULT_NMS_IOU,
            match_mode: MatchMode::RegionId,
            ap_mode: APMode::Pooled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    /// Per-scene exploration budget this point was computed at.
    pub regions_processed: usize,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct APCurve {
    pub method: MethodTag,
    pub query: ClassId,
    pub points: Vec<CurvePoint>,
}

/// Budgets at every multiple of `interval`, plus `max` itself when the
/// multiples stop short of it.
pub fn budget_grid(interval: usize, max: usize) -> Result<Vec<usize>> {
    if interval == 0 || max == 0 {
        return Err(Error::argument("budget interval and maximum must be positive"));
    }
    let mut grid: Vec<usize> = (1..=max / interval).map(|i| i * interval).collect();
    if grid.last() != Some(&max) {
        grid.push(max);
    }
    Ok(grid)
}

fn validate_budgets(budgets: &[usize]) -> Result<()> {
    if budgets.is_empty() {
        return Err(Error::argument("need at least one budget"));
    }
    for pair in budgets.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::argument(
                "budgets must be strictly increasing".to_string(),
            ));
        }
    }
    if budgets[0] == 0 {
        return Err(Error::argument("budgets must be positive"));
    }
    Ok(())
}

/// All-points interpolated average precision. `hits` carries one entry per
/// detection, already sorted by decreasing score, flagged true on correct
/// detections. Returns 0 when there are no positives.
pub fn average_precision(hits: &[bool], positives: usize) -> f64 {
    if positives == 0 || hits.is_empty() {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, &hit) in hits.iter().enumerate() {
        if hit {
            tp += 1;
        }
        recall.push(tp as f64 / positives as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    // precision envelope: best achievable at this recall or beyond
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..recall.len() {
        if recall[i] > prev_recall {
            ap += (recall[i] - prev_recall) * precision[i];
            prev_recall = recall[i];
        }
    }
    ap
}

/// One candidate detection for the query class.
#[derive(Debug, Clone, Copy, PartialEq)]
struct QueryDetection {
    scene_id: u64,
    region_id: u32,
    confidence: f64,
}

/// Marks each detection correct or not under the matching mode. Detections
/// must belong to `scene` and are processed in decreasing confidence.
fn match_scene_detections(
    scene: &Scene,
    dets: &mut [QueryDetection],
    query: ClassId,
    mode: MatchMode,
) -> Result<HashMap<(u64, u32), bool>> {
    dets.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap()
            .then(a.region_id.cmp(&b.region_id))
    });
    let mut flags = HashMap::new();
    match mode {
        MatchMode::RegionId => {
            for d in dets.iter() {
                let region = scene
                    .region(d.region_id)
                    .ok_or(Error::UnknownRegion(d.region_id))?;
                flags.insert(
                    (d.scene_id, d.region_id),
                    region.gt_class == Label::Class(query),
                );
            }
        }
        MatchMode::Iou(threshold) => {
            let positives: Vec<_> = scene
                .regions
                .iter()
                .filter(|r| r.gt_class == Label::Class(query))
                .collect();
            let mut taken = vec![false; positives.len()];
            for d in dets.iter() {
                let region = scene
                    .region(d.region_id)
                    .ok_or(Error::UnknownRegion(d.region_id))?;
                let mut best: Option<(usize, f64)> = None;
                for (gi, g) in positives.iter().enumerate() {
                    if taken[gi] {
                        continue;
                    }
                    let iou = region.bbox.iou(&g.bbox);
                    if iou >= threshold && best.map_or(true, |(_, b)| iou > b) {
                        best = Some((gi, iou));
                    }
                }
                let hit = if let Some((gi, _)) = best {
                    taken[gi] = true;
                    true
                } else {
                    false
                };
                flags.insert((d.scene_id, d.region_id), hit);
            }
        }
    }
    Ok(flags)
}

/// Computes AP from per-scene detection lists under the pooled or per-scene
/// convention. `per_scene` pairs each scene with its detections.
fn ap_from_detections(
    corpus: &[Scene],
    per_scene: &[(usize, Vec<QueryDetection>)],
    query: ClassId,
    opts: &EvalOptions,
) -> Result<f64> {
    match opts.ap_mode {
        APMode::Pooled => {
            let mut flags: HashMap<(u64, u32), bool> = HashMap::new();
            let mut pooled: Vec<QueryDetection> = Vec::new();
            for (scene_idx, dets) in per_scene {
                let scene = &corpus[*scene_idx];
                let mut local = dets.clone();
                flags.extend(match_scene_detections(
                    scene,
                    &mut local,
                    query,
                    opts.match_mode,
                )?);
                pooled.extend(local);
            }
            pooled.sort_by(|a, b| {
                b.confidence
                    .partial_cmp(&a.confidence)
                    .unwrap()
                    .then(a.scene_id.cmp(&b.scene_id))
                    .then(a.region_id.cmp(&b.region_id))
            });
            let hits: Vec<bool> = pooled
                .iter()
                .map(|d| flags[&(d.scene_id, d.region_id)])
                .collect();
            let positives: usize = corpus.iter().map(|s| s.positive_count(query)).sum();
            Ok(average_precision(&hits, positives))
        }
        APMode::PerScene => {
            let mut total = 0.0;
            let mut counted = 0usize;
            for (scene_idx, dets) in per_scene {
                let scene = &corpus[*scene_idx];
                let positives = scene.positive_count(query);
                if positives == 0 {
                    continue;
                }
                let mut local = dets.clone();
                let flags =
                    match_scene_detections(scene, &mut local, query, opts.match_mode)?;
                let hits: Vec<bool> = local
                    .iter()
                    .map(|d| flags[&(d.scene_id, d.region_id)])
                    .collect();
                total += average_precision(&hits, positives);
                counted += 1;
            }
            if counted == 0 {
                Ok(0.0)
            } else {
                Ok(total / counted as f64)
            }
        }
    }
}

fn query_detections(steps: &[(u32, Detection)], query: ClassId, scene_id: u64) -> Vec<QueryDetection> {
    steps
        .iter()
        .filter(|(_, det)| det.predicted_class == Label::Class(query))
        .map(|(region_id, det)| QueryDetection {
            scene_id,
            region_id: *region_id,
            confidence: det.confidence,
        })
        .collect()
}

/// Shared curve assembly: each scene provides an ordered list of
/// classified regions; budget prefixes of that order give the points.
fn curve_from_orders(
    corpus: &[Scene],
    orders: Vec<Vec<(u32, Detection)>>,
    query: ClassId,
    budgets: &[usize],
    method: MethodTag,
    opts: &EvalOptions,
) -> Result<APCurve> {
    let mut points = Vec::with_capacity(budgets.len());
    for &budget in budgets {
        let per_scene: Vec<(usize, Vec<QueryDetection>)> = orders
            .iter()
            .enumerate()
            .map(|(scene_idx, order)| {
                let prefix = &order[..budget.min(order.len())];
                (
                    scene_idx,
                    query_detections(prefix, query, corpus[scene_idx].id),
                )
            })
            .collect();
        let ap = ap_from_detections(corpus, &per_scene, query, opts)?;
        points.push(CurvePoint {
            regions_processed: budget,
            ap,
        });
    }
    Ok(APCurve {
        method,
        query,
        points,
    })
}

fn classify_order(
    config: &GenConfig,
    scene: &Scene,
    order: impl Iterator<Item = u32>,
    noise_seed: u64,
) -> Result<Vec<(u32, Detection)>> {
    let classifier = SimClassifier::new(config);
    order
        .map(|id| Ok((id, classifier.classify(scene, id, noise_seed)?)))
        .collect()
}

/// Baseline: regions processed in proposal-rank order.
pub fn curve_proposal_rank(
    config: &GenConfig,
    corpus: &[Scene],
    query: ClassId,
    budgets: &[usize],
    opts: &EvalOptions,
) -> Result<APCurve> {
    validate_budgets(budgets)?;
    let orders: Vec<Vec<(u32, Detection)>> = corpus
        .par_iter()
        .map(|scene| {
            classify_order(
                config,
                scene,
                scene.regions.iter().map(|r| r.id),
                opts.noise_seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    curve_from_orders(corpus, orders, query, budgets, MethodTag::ProposalRank, opts)
}

/// One-shot reranking by scene-level beliefs from a unary-schema policy.
/// Ties fall back to proposal rank.
pub fn curve_scene_context(
    config: &GenConfig,
    corpus: &[Scene],
    query: ClassId,
    policy: &Policy,
    budgets: &[usize],
    opts: &EvalOptions,
) -> Result<APCurve> {
    validate_budgets(budgets)?;
    if policy.schema().kind != SchemaKind::UnaryOnly {
        return Err(Error::SchemaMismatch {
            expected: "a unary-schema policy for scene-level reranking".into(),
            got: policy.schema().version().to_string(),
        });
    }
    let orders: Vec<Vec<(u32, Detection)>> = corpus
        .par_iter()
        .map(|scene| {
            let mut scored: Vec<(f64, u32)> = scene
                .regions
                .iter()
                .map(|r| {
                    let belief = policy.predict(&assemble_unary_only(r))?.belief;
                    Ok((belief, r.id))
                })
                .collect::<Result<Vec<_>>>()?;
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            classify_order(
                config,
                scene,
                scored.into_iter().map(|(_, id)| id),
                opts.noise_seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    curve_from_orders(corpus, orders, query, budgets, MethodTag::SceneContext, opts)
}

/// Sequential exploration: one rollout per scene at the largest budget,
/// with smaller budgets read off as prefixes of the same walk.
pub fn curve_full_strategy(
    config: &GenConfig,
    corpus: &[Scene],
    query: ClassId,
    policy: Option<&Policy>,
    mode: RolloutMode,
    budgets: &[usize],
    opts: &EvalOptions,
) -> Result<APCurve> {
    validate_budgets(budgets)?;
    let max_budget = *budgets.last().unwrap();
    let search_opts = SearchOptions {
        nms_iou: opts.nms_iou,
        background_skip: true,
        noise_seed: opts.noise_seed,
        mixture_seed: 0,
    };
    let traces: Vec<ExplorationTrace> = corpus
        .par_iter()
        .map(|scene| {
            seq_explore(config, scene, query, max_budget, mode, policy, &search_opts)
        })
        .collect::<Result<Vec<_>>>()?;
    curve_from_traces(corpus, &traces, query, budgets, opts)
}

/// Budget curve replayed from stored rollout traces. Traces must cover a
/// subset of `corpus` scenes, at most one per scene; scenes without a trace
/// contribute no detections but keep their positives in the denominator.
pub fn curve_from_traces(
    corpus: &[Scene],
    traces: &[ExplorationTrace],
    query: ClassId,
    budgets: &[usize],
    opts: &EvalOptions,
) -> Result<APCurve> {
    validate_budgets(budgets)?;
    let index_of: HashMap<u64, usize> = corpus
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id, i))
        .collect();
    let mut orders: Vec<Vec<(u32, Detection)>> = vec![Vec::new(); corpus.len()];
    let mut seen = HashSet::new();
    for trace in traces {
        trace.validate()?;
        if trace.query_class != query {
            return Err(Error::argument(format!(
                "trace for scene {} searched class {} but the curve is for class {}",
                trace.scene_id, trace.query_class.0, query.0
            )));
        }
        let &idx = index_of.get(&trace.scene_id).ok_or_else(|| {
            Error::argument(format!("trace references unknown scene {}", trace.scene_id))
        })?;
        if !seen.insert(trace.scene_id) {
            return Err(Error::argument(format!(
                "two traces cover scene {}",
                trace.scene_id
            )));
        }
        orders[idx] = trace
            .steps
            .iter()
            .map(|s| (s.region_id, s.detection.clone()))
            .collect();
    }
    curve_from_orders(
        corpus,
        orders,
        query,
        budgets,
        MethodTag::ScenePlusObjects,
        opts,
    )
}
