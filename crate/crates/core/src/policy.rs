//! Linear exploration policy: cost-sensitive logistic training, prediction,
//! the groundtruth oracle, and Hamming loss between label lists.

use crate::catalog::{ClassCatalog, ClassId, Label};
use crate::error::{Error, Result};
use crate::features::{FeatureSchema, StateFeatures};
use crate::scene::Scene;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Per-component affine normalization fitted on a training set and stored
/// in the model file. Components with (near) zero variance pass through
/// unchanged so the bias survives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(len: usize) -> Self {
        Standardizer {
            mean: vec![0.0; len],
            std: vec![1.0; len],
        }
    }

    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, len: usize) -> Self {
        let mut count = 0usize;
        let mut mean = vec![0.0; len];
        for row in rows.clone() {
            debug_assert_eq!(row.len(), len);
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
            count += 1;
        }
        if count == 0 {
            return Standardizer::identity(len);
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let mut var = vec![0.0; len];
        for row in rows {
            for ((v, m), x) in var.iter_mut().zip(&mean).zip(row) {
                let d = x - m;
                *v += d * d;
            }
        }
        let mut std = vec![1.0; len];
        for ((s, v), m) in std.iter_mut().zip(&var).zip(&mut mean) {
            let sd = (v / count as f64).sqrt();
            if sd < 1e-12 {
                // constant component: leave it alone
                *m = 0.0;
            } else {
                *s = sd;
            }
        }
        Standardizer { mean, std }
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = (x[i] - self.mean[i]) / self.std[i];
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: bool,
    pub belief: f64,
}

/// Linear scorer over standardized state features. Belief is the raw
/// margin; the binary label is `belief > threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    schema: FeatureSchema,
    weights: Vec<f64>,
    standardizer: Standardizer,
    threshold: f64,
}

impl Policy {
    pub fn new(
        schema: FeatureSchema,
        weights: Vec<f64>,
        standardizer: Standardizer,
        threshold: f64,
    ) -> Result<Self> {
        if weights.len() != schema.len() {
            return Err(Error::SchemaMismatch {
                expected: format!("{} weights", schema.len()),
                got: format!("{}", weights.len()),
            });
        }
        if standardizer.len() != schema.len() {
            return Err(Error::SchemaMismatch {
                expected: format!("{} standardizer components", schema.len()),
                got: format!("{}", standardizer.len()),
            });
        }
        if weights.iter().any(|w| !w.is_finite())
            || !threshold.is_finite()
            || standardizer.mean.iter().any(|v| !v.is_finite())
            || standardizer.std.iter().any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::Argument("non-finite policy parameters".into()));
        }
        Ok(Policy {
            schema,
            weights,
            standardizer,
            threshold,
        })
    }

    /// All-zero weights: belief 0 everywhere, every label negative.
    pub fn zero(schema: FeatureSchema) -> Self {
        Policy {
            weights: vec![0.0; schema.len()],
            standardizer: Standardizer::identity(schema.len()),
            threshold: 0.0,
            schema,
        }
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn predict(&self, features: &StateFeatures) -> Result<Prediction> {
        let x = features.values();
        if x.len() != self.schema.len() {
            return Err(Error::SchemaMismatch {
                expected: format!("{} feature components", self.schema.len()),
                got: format!("{}", x.len()),
            });
        }
        let mut belief = 0.0;
        for i in 0..x.len() {
            belief += self.weights[i] * (x[i] - self.standardizer.mean[i])
                / self.standardizer.std[i];
        }
        Ok(Prediction {
            label: belief > self.threshold,
            belief,
        })
    }
}

/// Predicted or oracle labels for the unexplored regions of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPrediction {
    pub region_id: u32,
    pub label: bool,
    pub belief: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionList {
    items: Vec<RegionPrediction>,
}

impl PredictionList {
    pub fn new(items: Vec<RegionPrediction>) -> Self {
        PredictionList { items }
    }

    pub fn items(&self) -> &[RegionPrediction] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Groundtruth labels: positive iff the region's class equals the query.
/// Beliefs are exactly 1.0/0.0 so downstream argmax selection of an oracle
/// list walks positives in proposal-rank order.
pub fn oracle_predict(scene: &Scene, query: ClassId, unexplored: &[u32]) -> Result<PredictionList> {
    let mut items = Vec::with_capacity(unexplored.len());
    for &id in unexplored {
        let region = scene.region(id).ok_or(Error::UnknownRegion(id))?;
        let label = region.gt_class == Label::Class(query);
        items.push(RegionPrediction {
            region_id: id,
            label,
            belief: if label { 1.0 } else { 0.0 },
        });
    }
    Ok(PredictionList { items })
}

/// Number of positions where the two lists disagree. The lists must cover
/// the same regions in the same order.
pub fn hamming_loss(a: &PredictionList, b: &PredictionList) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::PredictionMismatch(format!(
            "lengths {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut loss = 0;
    for (x, y) in a.items.iter().zip(&b.items) {
        if x.region_id != y.region_id {
            return Err(Error::PredictionMismatch(format!(
                "region {} vs {}",
                x.region_id, y.region_id
            )));
        }
        if x.label != y.label {
            loss += 1;
        }
    }
    Ok(loss)
}

/// One supervised example: raw (unstandardized) features, oracle label,
/// and a non-negative cost weight.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub features: Vec<f64>,
    pub label: bool,
    pub weight: f64,
}

/// Append-only pool of training examples with per-iteration provenance.
/// Examples are stored flat; iteration boundaries are kept as counts so
/// diagnostics can report growth. Batches may be produced concurrently and
/// appended in any fixed order; content is a multiset, training consumes it
/// in storage order.
#[derive(Debug, Clone, Default)]
pub struct DatasetAggregate {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<bool>,
    weights: Vec<f64>,
    iteration_counts: Vec<usize>,
}

impl DatasetAggregate {
    pub fn new(dim: usize) -> Self {
        DatasetAggregate {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iteration_counts(&self) -> &[usize] {
        &self.iteration_counts
    }

    /// Appends one iteration's batch and records its size.
    pub fn extend_iteration(&mut self, examples: Vec<TrainingExample>) -> Result<()> {
        for ex in &examples {
            if ex.features.len() != self.dim {
                return Err(Error::SchemaMismatch {
                    expected: format!("{} feature components", self.dim),
                    got: format!("{}", ex.features.len()),
                });
            }
            if !(ex.weight.is_finite() && ex.weight >= 0.0) {
                return Err(Error::Argument("example weight must be >= 0".into()));
            }
        }
        self.iteration_counts.push(examples.len());
        for ex in examples {
            self.features.extend_from_slice(&ex.features);
            self.labels.push(ex.label);
            self.weights.push(ex.weight);
        }
        Ok(())
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> bool {
        self.labels[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    fn rows(&self) -> impl Iterator<Item = &[f64]> + Clone {
        self.features.chunks_exact(self.dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// L2 penalty on all weights except the bias.
    pub l2: f64,
    /// Stop when the gradient's max-norm falls below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Scale example costs by inverse label frequency.
    pub class_balance: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l2: 1e-4,
            tol: 1e-8,
            max_iters: 100,
            class_balance: true,
        }
    }
}

fn log1p_exp(m: f64) -> f64 {
    // ln(1 + e^m), stable for large |m|
    if m > 0.0 {
        m + (-m).exp().ln_1p()
    } else {
        m.exp().ln_1p()
    }
}

/// Weighted L2-regularized logistic regression, fitted by damped Newton
/// iterations on the full batch. Deterministic: fixed start, fixed order,
/// no stochastic steps. The objective is the cost-weighted mean logistic
/// loss, so duplicating the whole dataset leaves the optimum unchanged.
pub fn train_cost_sensitive(
    aggregate: &DatasetAggregate,
    schema: FeatureSchema,
    config: &TrainConfig,
) -> Result<Policy> {
    let dim = aggregate.dim();
    if dim != schema.len() {
        return Err(Error::SchemaMismatch {
            expected: format!("{} feature components", schema.len()),
            got: format!("{dim}"),
        });
    }
    let n = aggregate.len();
    if n == 0 {
        return Err(Error::DegenerateData("no training examples".into()));
    }
    let n_pos = (0..n).filter(|&i| aggregate.label(i)).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateData(format!(
            "need both labels, got {n_pos} positive / {n_neg} negative"
        )));
    }

    let standardizer = Standardizer::fit(aggregate.rows(), dim);
    let (balance_pos, balance_neg) = if config.class_balance {
        (
            n as f64 / (2.0 * n_pos as f64),
            n as f64 / (2.0 * n_neg as f64),
        )
    } else {
        (1.0, 1.0)
    };

    let mut cost = vec![0.0; n];
    let mut total_cost = 0.0;
    for i in 0..n {
        let c = aggregate.weight(i)
            * if aggregate.label(i) {
                balance_pos
            } else {
                balance_neg
            };
        cost[i] = c;
        total_cost += c;
    }
    if total_cost <= 0.0 {
        return Err(Error::DegenerateData("all example costs are zero".into()));
    }

    let bias = schema.bias_index();
    let lambda = config.l2;
    let mut w = DVector::<f64>::zeros(dim);

    // The standardized design matrix is materialized one chunk at a time so
    // the Hessian and all margins come from matrix products instead of
    // per-example outer loops.
    const CHUNK: usize = 4096;
    let mut block = DMatrix::<f64>::zeros(CHUNK, dim);
    let fill_block = |block: &mut DMatrix<f64>, start: usize, rows: usize| {
        for r in 0..rows {
            let raw = aggregate.feature_row(start + r);
            for c in 0..dim {
                block[(r, c)] = (raw[c] - standardizer.mean[c]) / standardizer.std[c];
            }
        }
    };

    let objective = |block: &mut DMatrix<f64>, w: &DVector<f64>| -> f64 {
        let mut loss = 0.0;
        let mut start = 0;
        while start < n {
            let rows = CHUNK.min(n - start);
            fill_block(block, start, rows);
            let z = block.rows(0, rows) * w;
            for r in 0..rows {
                let y = if aggregate.label(start + r) { 1.0 } else { -1.0 };
                loss += cost[start + r] * log1p_exp(-y * z[r]);
            }
            start += rows;
        }
        let mut reg = 0.0;
        for j in 0..dim {
            if j != bias {
                reg += w[j] * w[j];
            }
        }
        loss / total_cost + 0.5 * lambda * reg
    };

    let mut converged = false;
    for _ in 0..config.max_iters {
        let mut grad = DVector::<f64>::zeros(dim);
        let mut hess = DMatrix::<f64>::zeros(dim, dim);
        let mut start = 0;
        while start < n {
            let rows = CHUNK.min(n - start);
            fill_block(&mut block, start, rows);
            let z = block.rows(0, rows) * &w;
            let mut g_vec = DVector::<f64>::zeros(rows);
            let mut h_scale = vec![0.0; rows];
            for r in 0..rows {
                let i = start + r;
                let y = if aggregate.label(i) { 1.0 } else { -1.0 };
                // sigma(-y z) in a stable form
                let s = 1.0 / (1.0 + (y * z[r]).exp());
                g_vec[r] = cost[i] * (-y) * s / total_cost;
                h_scale[r] = (cost[i] * s * (1.0 - s) / total_cost).sqrt();
            }
            grad.gemv_tr(1.0, &block.rows(0, rows), &g_vec, 1.0);
            for r in 0..rows {
                for c in 0..dim {
                    block[(r, c)] *= h_scale[r];
                }
            }
            hess.gemm_tr(1.0, &block.rows(0, rows), &block.rows(0, rows), 1.0);
            start += rows;
        }
        for j in 0..dim {
            if j != bias {
                grad[j] += lambda * w[j];
                hess[(j, j)] += lambda;
            }
            hess[(j, j)] += 1e-12;
        }

        let grad_inf = grad.amax();
        if grad_inf <= config.tol {
            converged = true;
            break;
        }

        let chol = nalgebra::Cholesky::new(hess)
            .ok_or_else(|| Error::Invariant("logistic Hessian not positive definite".into()))?;
        let direction = -chol.solve(&grad);

        // Backtracking line search with an Armijo bound.
        let j0 = objective(&mut block, &w);
        let slope: f64 = grad.dot(&direction);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &w + &direction * step;
            if objective(&mut block, &cand) <= j0 + 1e-4 * step * slope {
                w = cand;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No descent at machine precision: treat as converged.
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("training stopped at max_iters without reaching tolerance");
    }

    Policy::new(schema, w.iter().copied().collect(), standardizer, 0.0)
}

/// Serialized model format. `feature_schema` pins the layout version and
/// `classes` pins the catalog; both are validated on load.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    feature_schema: String,
    classes: Vec<String>,
    query_class: Option<String>,
    feature_mean: Vec<f64>,
    feature_std: Vec<f64>,
    weights: Vec<f64>,
    threshold: f64,
}

pub fn save_model(
    path: &Path,
    policy: &Policy,
    catalog: &ClassCatalog,
    query: Option<ClassId>,
) -> Result<()> {
    if policy.schema().class_count != catalog.len() {
        return Err(Error::SchemaMismatch {
            expected: format!("{} classes", policy.schema().class_count),
            got: format!("{}", catalog.len()),
        });
    }
    let file = ModelFile {
        feature_schema: policy.schema().version().to_string(),
        classes: catalog.names().to_vec(),
        query_class: query.map(|q| catalog.name(q).to_string()),
        feature_mean: policy.standardizer().mean.clone(),
        feature_std: policy.standardizer().std.clone(),
        weights: policy.weights().to_vec(),
        threshold: policy.threshold(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(Policy, ClassCatalog, Option<ClassId>)> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    let catalog = ClassCatalog::new(file.classes)?;
    let schema = FeatureSchema::from_version(&file.feature_schema, catalog.len())?;
    let standardizer = Standardizer {
        mean: file.feature_mean,
        std: file.feature_std,
    };
    let policy = Policy::new(schema, file.weights, standardizer, file.threshold)?;
    let query = match file.query_class {
        Some(name) => Some(
            catalog
                .index_of(&name)
                .ok_or_else(|| Error::UnknownClass(name))?,
        ),
        None => None,
    };
    Ok((policy, catalog, query))
}
