//! Scene generator configuration and its flat key-value text format.
//!
//! Keys use dotted namespaces, e.g. `cooccur.bed.pillow=0.9`. Lines starting
//! with `#` and blank lines are skipped. When a key appears twice the later
//! line wins, so base files can be extended by appending overrides.

use crate::catalog::{ClassCatalog, ClassId, Label, BACKGROUND_NAME};
use crate::error::{Error, Result};

pub const DEFAULT_CLASSES: [&str; 8] = [
    "bed",
    "sofa",
    "table",
    "lamp",
    "pillow",
    "nightstand",
    "counter",
    "chair",
];

/// Gaussian parameters; draws are clamped by the consumer where a physical
/// range applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalParams {
    pub mean: f64,
    pub spread: f64,
}

/// Closed uniform range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeParams {
    pub lo: f64,
    pub hi: f64,
}

/// Per-class geometry distributions used when planting a region.
#[derive(Debug, Clone, PartialEq)]
pub struct GeomProfile {
    pub depth: NormalParams,
    pub dist_back: NormalParams,
    pub min_height: RangeParams,
    /// max_height = min_height + extent.
    pub extent: RangeParams,
    /// Box side lengths as a fraction of the shorter image dimension.
    pub size_frac: RangeParams,
}

/// Presence dependency: when `anchor` is planted, `target` is planted too
/// with probability `prob` (on top of the target's own base presence draw).
#[derive(Debug, Clone, PartialEq)]
pub struct PairRule {
    pub anchor: ClassId,
    pub target: ClassId,
    pub prob: f64,
}

/// Placement dependency: when both classes are planted, the target centroid
/// sits at a distance drawn from `distance` (pixels) from the anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityRule {
    pub anchor: ClassId,
    pub target: ClassId,
    pub distance: NormalParams,
}

/// Simulated detector confusion. Default rows put `accuracy` mass on the
/// true class, half the remainder on background, and spread the rest over
/// the other classes; background rows put `background_accuracy` on
/// background and the remainder uniformly over classes. `rows` overrides a
/// whole row at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionSpec {
    pub accuracy: f64,
    pub background_accuracy: f64,
    pub rows: Vec<(Label, Vec<(Label, f64)>)>,
}

impl ConfusionSpec {
    /// Probability row over columns [class 0, .., class C-1, background].
    pub fn row(&self, gt: Label, class_count: usize) -> Vec<f64> {
        if let Some((_, entries)) = self.rows.iter().find(|(l, _)| *l == gt) {
            let mut row = vec![0.0; class_count + 1];
            for (label, p) in entries {
                let col = match label {
                    Label::Background => class_count,
                    Label::Class(c) => c.0,
                };
                row[col] = *p;
            }
            return row;
        }
        let mut row = vec![0.0; class_count + 1];
        match gt {
            Label::Background => {
                row[class_count] = self.background_accuracy;
                let rest = (1.0 - self.background_accuracy) / class_count as f64;
                for slot in row.iter_mut().take(class_count) {
                    *slot = rest;
                }
            }
            Label::Class(c) => {
                let rest = 1.0 - self.accuracy;
                if class_count == 1 {
                    row[c.0] = self.accuracy;
                    row[class_count] = rest;
                } else {
                    let off = 0.5 * rest / (class_count - 1) as f64;
                    for slot in row.iter_mut().take(class_count) {
                        *slot = off;
                    }
                    row[c.0] = self.accuracy;
                    row[class_count] = 0.5 * rest;
                }
            }
        }
        row
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    /// Upper bound on regions per scene; ranking keeps the top_k noisiest
    /// objectness scores when a scene overflows.
    pub top_k: usize,
    pub image_width: f64,
    pub image_height: f64,
    pub catalog: ClassCatalog,
    /// Base presence probability per class, catalog order.
    pub presence: Vec<f64>,
    pub cooccur: Vec<PairRule>,
    pub proximity: Vec<ProximityRule>,
    /// Uniform range for the number of background regions; `None` fills the
    /// scene up to `top_k`.
    pub background_count: Option<(usize, usize)>,
    pub objectness_object: NormalParams,
    pub objectness_background: NormalParams,
    /// Per-class override of `objectness_object`.
    pub objectness_class: Vec<Option<NormalParams>>,
    /// Spread of the noise added to objectness before ranking.
    pub rank_noise: f64,
    pub class_geom: Vec<GeomProfile>,
    pub background_geom: GeomProfile,
    pub confusion: ConfusionSpec,
    pub confidence_correct: NormalParams,
    pub confidence_incorrect: NormalParams,
}

fn default_class_geom(index: usize) -> GeomProfile {
    let i = index as f64;
    GeomProfile {
        depth: NormalParams {
            mean: 1.2 + 0.55 * i,
            spread: 0.35,
        },
        dist_back: NormalParams {
            mean: 0.4 + 0.35 * i,
            spread: 0.3,
        },
        min_height: RangeParams {
            lo: 0.05 * i,
            hi: 0.3 + 0.05 * i,
        },
        extent: RangeParams { lo: 0.2, hi: 0.9 },
        size_frac: RangeParams { lo: 0.08, hi: 0.28 },
    }
}

fn default_background_geom() -> GeomProfile {
    GeomProfile {
        depth: NormalParams {
            mean: 3.5,
            spread: 2.0,
        },
        dist_back: NormalParams {
            mean: 1.8,
            spread: 1.2,
        },
        min_height: RangeParams { lo: 0.0, hi: 1.2 },
        extent: RangeParams { lo: 0.05, hi: 1.0 },
        size_frac: RangeParams { lo: 0.03, hi: 0.3 },
    }
}

impl Default for GenConfig {
    fn default() -> Self {
        let catalog =
            ClassCatalog::new(DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect())
                .expect("default catalog is valid");
        GenConfig::with_catalog(catalog)
    }
}

impl GenConfig {
    pub fn with_catalog(catalog: ClassCatalog) -> Self {
        let c = catalog.len();
        GenConfig {
            top_k: 100,
            image_width: 640.0,
            image_height: 480.0,
            presence: vec![0.6; c],
            cooccur: Vec::new(),
            proximity: Vec::new(),
            background_count: None,
            objectness_object: NormalParams {
                mean: 0.65,
                spread: 0.15,
            },
            objectness_background: NormalParams {
                mean: 0.45,
                spread: 0.15,
            },
            objectness_class: vec![None; c],
            rank_noise: 0.08,
            class_geom: (0..c).map(default_class_geom).collect(),
            background_geom: default_background_geom(),
            confusion: ConfusionSpec {
                accuracy: 0.9,
                background_accuracy: 0.95,
                rows: Vec::new(),
            },
            confidence_correct: NormalParams {
                mean: 0.75,
                spread: 0.12,
            },
            confidence_incorrect: NormalParams {
                mean: 0.4,
                spread: 0.15,
            },
            catalog,
        }
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(
                    format!("line {}", lineno + 1),
                    format!("expected key=value, got `{line}`"),
                ));
            };
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }

        // The catalog must exist before class-keyed entries can resolve.
        let catalog = match pairs.iter().rev().find(|(k, _)| k == "classes") {
            Some((_, v)) => {
                ClassCatalog::new(v.split(',').map(|s| s.trim().to_string()).collect())?
            }
            None => ClassCatalog::new(
                DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
            )?,
        };
        let mut cfg = GenConfig::with_catalog(catalog);

        for (key, value) in &pairs {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn class_id(&self, key: &str, name: &str) -> Result<ClassId> {
        self.catalog
            .index_of(name)
            .ok_or_else(|| Error::config(key, format!("unknown class `{name}`")))
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let segs: Vec<&str> = key.split('.').collect();
        match segs.as_slice() {
            ["classes"] => {} // consumed in the catalog pre-pass
            ["top_k"] => self.top_k = parse_usize(key, value)?,
            ["image", "width"] => self.image_width = parse_f64(key, value)?,
            ["image", "height"] => self.image_height = parse_f64(key, value)?,
            ["presence", "default"] => {
                let p = parse_f64(key, value)?;
                self.presence.fill(p);
            }
            ["presence", name] => {
                let id = self.class_id(key, name)?;
                self.presence[id.0] = parse_f64(key, value)?;
            }
            ["cooccur", a, b] => {
                let anchor = self.class_id(key, a)?;
                let target = self.class_id(key, b)?;
                let prob = parse_f64(key, value)?;
                self.cooccur.retain(|r| (r.anchor, r.target) != (anchor, target));
                self.cooccur.push(PairRule {
                    anchor,
                    target,
                    prob,
                });
            }
            ["proximity", a, b] => {
                let anchor = self.class_id(key, a)?;
                let target = self.class_id(key, b)?;
                let distance = parse_normal(key, value)?;
                self.proximity
                    .retain(|r| (r.anchor, r.target) != (anchor, target));
                self.proximity.push(ProximityRule {
                    anchor,
                    target,
                    distance,
                });
            }
            ["background", "count"] => {
                let (lo, hi) = parse_usize_pair(key, value)?;
                self.background_count = Some((lo, hi));
            }
            ["objectness", "object"] => self.objectness_object = parse_normal(key, value)?,
            ["objectness", "background"] => {
                self.objectness_background = parse_normal(key, value)?
            }
            ["objectness", "rank_noise"] => self.rank_noise = parse_f64(key, value)?,
            ["objectness", "class", name] => {
                let id = self.class_id(key, name)?;
                self.objectness_class[id.0] = Some(parse_normal(key, value)?);
            }
            ["geom", who, field] => {
                let profile = if *who == BACKGROUND_NAME {
                    &mut self.background_geom
                } else {
                    let id = self.class_id(key, who)?;
                    &mut self.class_geom[id.0]
                };
                match *field {
                    "depth" => profile.depth = parse_normal(key, value)?,
                    "dist_back" => profile.dist_back = parse_normal(key, value)?,
                    "min_height" => profile.min_height = parse_range(key, value)?,
                    "extent" => profile.extent = parse_range(key, value)?,
                    "size" => profile.size_frac = parse_range(key, value)?,
                    _ => return Err(Error::config(key, "unknown geometry field")),
                }
            }
            ["confusion", "accuracy"] => self.confusion.accuracy = parse_f64(key, value)?,
            ["confusion", "background_accuracy"] => {
                self.confusion.background_accuracy = parse_f64(key, value)?
            }
            ["confusion", "row", who] => {
                let row_label = self.parse_row_label(key, who)?;
                let mut entries = Vec::new();
                for item in value.split(',') {
                    let Some((name, p)) = item.split_once(':') else {
                        return Err(Error::config(
                            key,
                            format!("expected label:prob, got `{item}`"),
                        ));
                    };
                    let label = self.parse_row_label(key, name.trim())?;
                    entries.push((label, parse_f64(key, p.trim())?));
                }
                self.confusion.rows.retain(|(l, _)| *l != row_label);
                self.confusion.rows.push((row_label, entries));
            }
            ["confidence", "correct"] => self.confidence_correct = parse_normal(key, value)?,
            ["confidence", "incorrect"] => {
                self.confidence_incorrect = parse_normal(key, value)?
            }
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    fn parse_row_label(&self, key: &str, name: &str) -> Result<Label> {
        if name == BACKGROUND_NAME {
            Ok(Label::Background)
        } else {
            Ok(Label::Class(self.class_id(key, name)?))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::config("top_k", "must be at least 1"));
        }
        if !(self.image_width.is_finite() && self.image_width > 0.0) {
            return Err(Error::config("image.width", "must be positive"));
        }
        if !(self.image_height.is_finite() && self.image_height > 0.0) {
            return Err(Error::config("image.height", "must be positive"));
        }
        for (i, p) in self.presence.iter().enumerate() {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::config(
                    format!("presence.{}", self.catalog.name(ClassId(i))),
                    "probability must be in [0, 1]",
                ));
            }
        }
        for rule in &self.cooccur {
            let field = format!(
                "cooccur.{}.{}",
                self.catalog.name(rule.anchor),
                self.catalog.name(rule.target)
            );
            if rule.anchor == rule.target {
                return Err(Error::config(field, "classes must differ"));
            }
            if !(0.0..=1.0).contains(&rule.prob) {
                return Err(Error::config(field, "probability must be in [0, 1]"));
            }
        }
        for rule in &self.proximity {
            let field = format!(
                "proximity.{}.{}",
                self.catalog.name(rule.anchor),
                self.catalog.name(rule.target)
            );
            if rule.anchor == rule.target {
                return Err(Error::config(field, "classes must differ"));
            }
            validate_normal(&field, &rule.distance)?;
            if rule.distance.mean < 0.0 {
                return Err(Error::config(field, "distance mean must be >= 0"));
            }
        }
        if let Some((lo, hi)) = self.background_count {
            if lo > hi {
                return Err(Error::config("background.count", "lo must be <= hi"));
            }
        }
        validate_normal("objectness.object", &self.objectness_object)?;
        validate_normal("objectness.background", &self.objectness_background)?;
        for (i, ov) in self.objectness_class.iter().enumerate() {
            if let Some(p) = ov {
                validate_normal(
                    &format!("objectness.class.{}", self.catalog.name(ClassId(i))),
                    p,
                )?;
            }
        }
        if !(self.rank_noise.is_finite() && self.rank_noise >= 0.0) {
            return Err(Error::config("objectness.rank_noise", "must be >= 0"));
        }
        for (i, g) in self.class_geom.iter().enumerate() {
            validate_geom(&format!("geom.{}", self.catalog.name(ClassId(i))), g)?;
        }
        validate_geom(&format!("geom.{BACKGROUND_NAME}"), &self.background_geom)?;
        if !(0.0..=1.0).contains(&self.confusion.accuracy) {
            return Err(Error::config("confusion.accuracy", "must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.confusion.background_accuracy) {
            return Err(Error::config(
                "confusion.background_accuracy",
                "must be in [0, 1]",
            ));
        }
        for (label, entries) in &self.confusion.rows {
            let field = format!(
                "confusion.row.{}",
                self.catalog.label_name(*label)
            );
            let mut sum = 0.0;
            for (_, p) in entries {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::config(&field, "probabilities must be in [0, 1]"));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::config(&field, format!("row sums to {sum}, not 1")));
            }
        }
        validate_normal("confidence.correct", &self.confidence_correct)?;
        validate_normal("confidence.incorrect", &self.confidence_incorrect)?;
        if self.confidence_correct.mean < self.confidence_incorrect.mean {
            return Err(Error::config(
                "confidence.correct",
                "correct confidence mean must be >= incorrect mean",
            ));
        }
        Ok(())
    }
}

fn validate_normal(field: &str, p: &NormalParams) -> Result<()> {
    if !(p.mean.is_finite() && p.spread.is_finite() && p.spread >= 0.0) {
        return Err(Error::config(field, "expected finite mean and spread >= 0"));
    }
    Ok(())
}

fn validate_geom(prefix: &str, g: &GeomProfile) -> Result<()> {
    validate_normal(&format!("{prefix}.depth"), &g.depth)?;
    if g.depth.mean <= 0.0 {
        return Err(Error::config(
            format!("{prefix}.depth"),
            "mean depth must be positive",
        ));
    }
    validate_normal(&format!("{prefix}.dist_back"), &g.dist_back)?;
    for (name, r) in [
        ("min_height", &g.min_height),
        ("extent", &g.extent),
        ("size", &g.size_frac),
    ] {
        let field = format!("{prefix}.{name}");
        if !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi) {
            return Err(Error::config(&field, "expected lo <= hi"));
        }
        if r.lo < 0.0 {
            return Err(Error::config(&field, "must be >= 0"));
        }
    }
    if g.size_frac.lo <= 0.0 || g.size_frac.hi > 0.9 {
        return Err(Error::config(
            format!("{prefix}.size"),
            "side fraction must be in (0, 0.9]",
        ));
    }
    Ok(())
}

fn parse_f64(field: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| Error::config(field, format!("`{value}` is not a number")))
}

fn parse_usize(field: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| Error::config(field, format!("`{value}` is not a non-negative integer")))
}

fn split_pair<'v>(field: &str, value: &'v str) -> Result<(&'v str, &'v str)> {
    value
        .split_once(',')
        .map(|(a, b)| (a.trim(), b.trim()))
        .ok_or_else(|| Error::config(field, format!("expected two comma-separated values, got `{value}`")))
}

fn parse_normal(field: &str, value: &str) -> Result<NormalParams> {
    let (a, b) = split_pair(field, value)?;
    Ok(NormalParams {
        mean: parse_f64(field, a)?,
        spread: parse_f64(field, b)?,
    })
}

fn parse_range(field: &str, value: &str) -> Result<RangeParams> {
    let (a, b) = split_pair(field, value)?;
    Ok(RangeParams {
        lo: parse_f64(field, a)?,
        hi: parse_f64(field, b)?,
    })
}

fn parse_usize_pair(field: &str, value: &str) -> Result<(usize, usize)> {
    let (a, b) = split_pair(field, value)?;
    Ok((parse_usize(field, a)?, parse_usize(field, b)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        GenConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_dotted_keys() {
        let text = "\
# comment
classes=bed,lamp,table
top_k=20
image.width=320
image.height=240
presence.default=0.5
presence.bed=1.0
cooccur.bed.lamp=0.9
proximity.bed.lamp=40,5
objectness.class.table=0.95,0.02
geom.lamp.depth=1.0,0.1
geom.background.size=0.05,0.2
confusion.row.bed=bed:0.8,background:0.2
background.count=3,7
";
        let cfg = GenConfig::parse(text).unwrap();
        assert_eq!(cfg.top_k, 20);
        assert_eq!(cfg.catalog.len(), 3);
        assert_eq!(cfg.presence, vec![1.0, 0.5, 0.5]);
        assert_eq!(cfg.cooccur.len(), 1);
        assert_eq!(cfg.cooccur[0].prob, 0.9);
        assert_eq!(cfg.proximity[0].distance.mean, 40.0);
        assert!(cfg.objectness_class[2].is_some());
        assert_eq!(cfg.class_geom[1].depth.mean, 1.0);
        assert_eq!(cfg.background_geom.size_frac.lo, 0.05);
        assert_eq!(cfg.background_count, Some((3, 7)));
        let row = cfg.confusion.row(Label::Class(ClassId(0)), 3);
        assert!((row[0] - 0.8).abs() < 1e-12);
        assert!((row[3] - 0.2).abs() < 1e-12);
        assert_eq!(row[1], 0.0);
    }

    #[test]
    fn unknown_key_names_the_field() {
        let err = GenConfig::parse("bogus.key=1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus.key"), "{msg}");
    }

    #[test]
    fn unknown_class_is_rejected() {
        let err = GenConfig::parse("classes=bed\npresence.sofa=0.5\n").unwrap_err();
        assert!(err.to_string().contains("sofa"));
    }

    #[test]
    fn out_of_range_probability_is_rejected() {
        let err = GenConfig::parse("presence.bed=1.5\n").unwrap_err();
        assert!(err.to_string().contains("presence.bed"));
    }

    #[test]
    fn confusion_row_must_sum_to_one() {
        let err = GenConfig::parse("confusion.row.bed=bed:0.5,background:0.4\n").unwrap_err();
        assert!(err.to_string().contains("confusion.row.bed"));
    }

    #[test]
    fn default_confusion_rows_sum_to_one() {
        let cfg = GenConfig::default();
        let c = cfg.catalog.len();
        for label in cfg
            .catalog
            .ids()
            .map(Label::Class)
            .chain(std::iter::once(Label::Background))
        {
            let row = cfg.confusion.row(label, c);
            assert_eq!(row.len(), c + 1);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "{label:?} sums to {sum}");
        }
    }

    #[test]
    fn later_keys_win() {
        let cfg = GenConfig::parse("top_k=10\ntop_k=30\n").unwrap();
        assert_eq!(cfg.top_k, 30);
    }
}
