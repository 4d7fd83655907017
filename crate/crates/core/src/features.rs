//! Feature assembly for the exploration policy.
//!
//! A state feature vector for a candidate region is the concatenation of its
//! six unary components, one six-component slot per catalog class holding
//! the element-wise minimum of pairwise features against the explored
//! regions detected as that class, and a trailing bias fixed at 1.

use crate::catalog::ClassId;
use crate::error::{Error, Result};
use crate::scene::{Detection, Region, Scene};
use serde::{Deserialize, Serialize};

pub const UNARY_LEN: usize = 6;
pub const PAIR_LEN: usize = 6;

/// Default overlap threshold for suppressing duplicate detections.
pub const DEFAULT_NMS_IOU: f64 = 0.3;

/// Physical bounds used for the empty-slot placeholders.
pub const DIST_BACK_BOUND: f64 = 8.0;
pub const HEIGHT_BOUND: f64 = 3.0;

/// objectness, proposal rank, mean depth, distance to back wall, min and
/// max height above ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnaryFeatures(pub [f64; UNARY_LEN]);

/// overlap IoU, area ratio, centroid distance, and absolute differences of
/// wall distance and the two heights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFeatures(pub [f64; PAIR_LEN]);

/// One [`PairFeatures`]-shaped slot per catalog class, min-pooled.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateFeatures {
    values: Vec<f64>,
}

impl AggregateFeatures {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slot(&self, class: ClassId) -> &[f64] {
        &self.values[class.0 * PAIR_LEN..(class.0 + 1) * PAIR_LEN]
    }
}

/// Assembled input to the policy. Layout is fixed by a [`FeatureSchema`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures {
    values: Vec<f64>,
}

impl StateFeatures {
    pub fn from_values(values: Vec<f64>) -> Self {
        StateFeatures { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemaKind {
    /// Unary components plus bias; no explored-set context.
    UnaryOnly,
    /// Unary, per-class min-pooled pairwise slots, bias.
    Full,
}

/// Shape contract between feature assembly and a trained policy. The
/// version string is embedded in model files; loading fails on mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSchema {
    pub kind: SchemaKind,
    pub class_count: usize,
}

impl FeatureSchema {
    pub fn full(class_count: usize) -> Self {
        FeatureSchema {
            kind: SchemaKind::Full,
            class_count,
        }
    }

    pub fn unary_only(class_count: usize) -> Self {
        FeatureSchema {
            kind: SchemaKind::UnaryOnly,
            class_count,
        }
    }

    pub fn len(&self) -> usize {
        match self.kind {
            SchemaKind::UnaryOnly => UNARY_LEN + 1,
            SchemaKind::Full => UNARY_LEN + PAIR_LEN * self.class_count + 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the bias component (always last).
    pub fn bias_index(&self) -> usize {
        self.len() - 1
    }

    pub fn version(&self) -> &'static str {
        match self.kind {
            SchemaKind::UnaryOnly => "unary-v1",
            SchemaKind::Full => "full-v1",
        }
    }

    pub fn from_version(version: &str, class_count: usize) -> Result<Self> {
        let kind = match version {
            "unary-v1" => SchemaKind::UnaryOnly,
            "full-v1" => SchemaKind::Full,
            other => {
                return Err(Error::SchemaMismatch {
                    expected: "unary-v1 or full-v1".into(),
                    got: other.into(),
                })
            }
        };
        Ok(FeatureSchema { kind, class_count })
    }
}

/// Placeholder values for class slots with no explored representative:
/// zero overlap and area ratio, and distances pinned at scene bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SentinelParams {
    pub centroid_distance: f64,
    pub dist_back: f64,
    pub height: f64,
}

impl SentinelParams {
    pub fn for_scene(scene: &Scene) -> Self {
        SentinelParams {
            centroid_distance: scene.image_width.hypot(scene.image_height),
            dist_back: DIST_BACK_BOUND,
            height: HEIGHT_BOUND,
        }
    }

    pub fn pair_values(&self) -> [f64; PAIR_LEN] {
        [
            0.0,
            0.0,
            self.centroid_distance,
            self.dist_back,
            self.height,
            self.height,
        ]
    }
}

pub fn unary_features(region: &Region) -> UnaryFeatures {
    UnaryFeatures([
        region.objectness_score,
        region.proposal_rank as f64,
        region.mean_depth,
        region.mean_dist_back,
        region.min_height,
        region.max_height,
    ])
}

/// Symmetric geometric relation between two regions. Zero-area boxes are
/// rejected: every ratio below would be meaningless.
pub fn pair_features(a: &Region, b: &Region) -> Result<PairFeatures> {
    if !a.bbox.is_valid() {
        return Err(Error::DegenerateBox(a.id));
    }
    if !b.bbox.is_valid() {
        return Err(Error::DegenerateBox(b.id));
    }
    let area_a = a.bbox.area();
    let area_b = b.bbox.area();
    Ok(PairFeatures([
        a.bbox.iou(&b.bbox),
        area_a.min(area_b) / area_a.max(area_b),
        a.bbox.centroid_distance(&b.bbox),
        (a.mean_dist_back - b.mean_dist_back).abs(),
        (a.min_height - b.min_height).abs(),
        (a.max_height - b.max_height).abs(),
    ]))
}

/// Per-class greedy duplicate suppression over explored detections.
/// Within each predicted class, entries are ranked by confidence (ties by
/// region id) and an entry is dropped when its IoU with an already kept
/// entry of the same class exceeds `iou_threshold`. Background detections
/// pass through untouched. Input order is preserved in the output.
pub fn non_maximal_suppress(
    explored: &[(Region, Detection)],
    iou_threshold: f64,
) -> Vec<(Region, Detection)> {
    let mut keep = vec![true; explored.len()];
    let mut by_class: std::collections::BTreeMap<ClassId, Vec<usize>> =
        std::collections::BTreeMap::new();
    for (i, (_, det)) in explored.iter().enumerate() {
        if let Some(c) = det.predicted_class.class() {
            by_class.entry(c).or_default().push(i);
        }
    }
    for (_, mut idxs) in by_class {
        idxs.sort_by(|&a, &b| {
            let ca = explored[a].1.confidence;
            let cb = explored[b].1.confidence;
            cb.partial_cmp(&ca)
                .unwrap()
                .then(explored[a].0.id.cmp(&explored[b].0.id))
        });
        let mut kept_here: Vec<usize> = Vec::new();
        for &i in &idxs {
            let suppressed = kept_here
                .iter()
                .any(|&j| explored[i].0.bbox.iou(&explored[j].0.bbox) > iou_threshold);
            if suppressed {
                keep[i] = false;
            } else {
                kept_here.push(i);
            }
        }
    }
    explored
        .iter()
        .enumerate()
        .filter(|(i, _)| keep[*i])
        .map(|(_, e)| e.clone())
        .collect()
}

/// Min-pools pairwise features from `candidate` to the kept explored
/// regions, one slot per predicted class. Background detections never
/// contribute. Empty slots carry the sentinel placeholders.
pub fn aggregate_pair_features(
    candidate: &Region,
    kept: &[(Region, Detection)],
    class_count: usize,
    sentinel: &SentinelParams,
) -> Result<AggregateFeatures> {
    let base = sentinel.pair_values();
    let mut values = vec![0.0; class_count * PAIR_LEN];
    for slot in 0..class_count {
        values[slot * PAIR_LEN..(slot + 1) * PAIR_LEN].copy_from_slice(&base);
    }
    let mut filled = vec![false; class_count];
    for (region, det) in kept {
        let Some(class) = det.predicted_class.class() else {
            continue;
        };
        if class.0 >= class_count {
            return Err(Error::SchemaMismatch {
                expected: format!("class ids below {class_count}"),
                got: format!("class id {}", class.0),
            });
        }
        let pf = pair_features(candidate, region)?;
        let slot = &mut values[class.0 * PAIR_LEN..(class.0 + 1) * PAIR_LEN];
        if !filled[class.0] {
            slot.copy_from_slice(&pf.0);
            filled[class.0] = true;
        } else {
            for (s, v) in slot.iter_mut().zip(pf.0.iter()) {
                *s = s.min(*v);
            }
        }
    }
    Ok(AggregateFeatures { values })
}

/// Full-schema state vector: unary, suppressed-and-pooled context, bias.
pub fn assemble_state_features(
    candidate: &Region,
    explored: &[(Region, Detection)],
    class_count: usize,
    iou_threshold: f64,
    sentinel: &SentinelParams,
) -> Result<StateFeatures> {
    let kept = non_maximal_suppress(explored, iou_threshold);
    assemble_with_context(candidate, &kept, class_count, sentinel)
}

/// Same as [`assemble_state_features`] but with suppression already done,
/// for callers scoring many candidates against one explored set.
pub fn assemble_with_context(
    candidate: &Region,
    kept: &[(Region, Detection)],
    class_count: usize,
    sentinel: &SentinelParams,
) -> Result<StateFeatures> {
    let unary = unary_features(candidate);
    let agg = aggregate_pair_features(candidate, kept, class_count, sentinel)?;
    let mut values = Vec::with_capacity(UNARY_LEN + class_count * PAIR_LEN + 1);
    values.extend_from_slice(&unary.0);
    values.extend_from_slice(agg.values());
    values.push(1.0);
    Ok(StateFeatures { values })
}

/// Unary-only state vector: unary components plus bias.
pub fn assemble_unary_only(candidate: &Region) -> StateFeatures {
    let unary = unary_features(candidate);
    let mut values = Vec::with_capacity(UNARY_LEN + 1);
    values.extend_from_slice(&unary.0);
    values.push(1.0);
    StateFeatures { values }
}
