//! Synthetic desk-scale datasets, the threshold-sample split, and
//! feature-space augmentations.
//!
//! Classes are isotropic Gaussian clusters whose means sit evenly on a
//! circle in the first two feature dimensions. A configurable fraction of
//! the unlabeled pool is "hard": displaced from its own cluster toward a
//! neighbouring one, so its features resemble the wrong class.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Evaluator, HiddenLabels};
use crate::seeds::{content_hash, rng_for};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub classes: usize,
    pub feature_dim: usize,
    pub per_class_labeled: usize,
    pub unlabeled_count: usize,
    pub test_count: usize,
    /// Distance between neighbouring cluster means.
    pub separation: f64,
    pub cluster_std: f64,
    /// Hard examples are shifted by `overlap * (other_mean - own_mean)`.
    pub overlap: f64,
    pub hard_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            feature_dim: 2,
            per_class_labeled: 4,
            unlabeled_count: 3000,
            test_count: 1500,
            separation: 4.0,
            cluster_std: 1.0,
            overlap: 0.6,
            hard_fraction: 0.15,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("need at least 2 classes"));
        }
        if self.feature_dim < 2 {
            return Err(Error::config("feature_dim must be at least 2"));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::config("separation must be finite and nonnegative"));
        }
        if !(self.cluster_std >= 0.0 && self.cluster_std.is_finite()) {
            return Err(Error::config("cluster_std must be finite and nonnegative"));
        }
        if !(self.overlap >= 0.0 && self.overlap.is_finite()) {
            return Err(Error::config(format!("overlap must be >= 0, got {}", self.overlap)));
        }
        if !(0.0..1.0).contains(&self.hard_fraction) {
            return Err(Error::config(format!(
                "hard_fraction must lie in [0, 1), got {}",
                self.hard_fraction
            )));
        }
        Ok(())
    }

    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let c = self.classes as f64;
        let radius = self.separation / (2.0 * (std::f64::consts::PI / c).sin());
        (0..self.classes)
            .map(|k| {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / c;
                let mut m = vec![0.0; self.feature_dim];
                m[0] = radius * angle.cos();
                m[1] = radius * angle.sin();
                m
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledExample {
    pub id: u64,
    pub features: Vec<f64>,
}

/// All splits of one generated dataset. Threshold samples carry the
/// virtual label `classes` implicitly.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub classes: usize,
    pub feature_dim: usize,
    pub seed: u64,
    pub labeled: Vec<LabeledExample>,
    pub threshold_samples: Vec<UnlabeledExample>,
    pub unlabeled: Vec<UnlabeledExample>,
    pub test: Vec<LabeledExample>,
    hidden: HiddenLabels,
}

/// Everything training code may touch: unlabeled features without labels.
#[derive(Clone, Debug)]
pub struct TrainingView {
    pub classes: usize,
    pub feature_dim: usize,
    pub labeled: Vec<LabeledExample>,
    pub threshold_samples: Vec<UnlabeledExample>,
    pub unlabeled: Vec<UnlabeledExample>,
    pub test: Vec<LabeledExample>,
}

impl DatasetBundle {
    pub fn virtual_class(&self) -> usize {
        self.classes
    }

    pub fn total(&self) -> usize {
        self.labeled.len() + self.threshold_samples.len() + self.unlabeled.len() + self.test.len()
    }

    /// Separates the training-visible data from the gold labels.
    pub fn split(self) -> (TrainingView, Evaluator) {
        (
            TrainingView {
                classes: self.classes,
                feature_dim: self.feature_dim,
                labeled: self.labeled,
                threshold_samples: self.threshold_samples,
                unlabeled: self.unlabeled,
                test: self.test,
            },
            Evaluator::new(self.hidden),
        )
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.labeled
            .iter()
            .map(|e| e.id)
            .chain(self.threshold_samples.iter().map(|e| e.id))
            .chain(self.unlabeled.iter().map(|e| e.id))
            .chain(self.test.iter().map(|e| e.id))
    }

    /// Number of hidden labels held (equals the unlabeled pool size).
    pub fn hidden_label_count(&self) -> usize {
        self.hidden.len()
    }
}

fn gaussian_point(rng: &mut ChaCha8Rng, center: &[f64], std: f64) -> Vec<f64> {
    center
        .iter()
        .map(|&m| m + std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Generates a bundle; identical `(config, seed)` pairs give identical bundles.
pub fn generate_synthetic(config: &DataConfig, seed: u64) -> Result<DatasetBundle> {
    config.validate()?;
    let means = config.class_means();
    let c = config.classes;
    let mut rng = rng_for(seed, &[0xda7a]);
    let mut next_id = 0u64;
    let mut take_id = || {
        let id = next_id;
        next_id += 1;
        id
    };

    let mut labeled = Vec::with_capacity(c * config.per_class_labeled);
    for label in 0..c {
        for _ in 0..config.per_class_labeled {
            labeled.push(LabeledExample {
                id: take_id(),
                features: gaussian_point(&mut rng, &means[label], config.cluster_std),
                label,
            });
        }
    }

    let n = config.unlabeled_count;
    let hard_count = (config.hard_fraction * n as f64).round() as usize;
    let mut hard = vec![false; n];
    hard[..hard_count].iter_mut().for_each(|h| *h = true);
    hard.shuffle(&mut rng);

    let mut unlabeled = Vec::with_capacity(n);
    let mut gold = HashMap::with_capacity(n);
    for (i, &is_hard) in hard.iter().enumerate() {
        let label = i % c;
        let center = if is_hard {
            let mut other = rng.random_range(0..c - 1);
            if other >= label {
                other += 1;
            }
            means[label]
                .iter()
                .zip(&means[other])
                .map(|(&a, &b)| a + config.overlap * (b - a))
                .collect()
        } else {
            means[label].clone()
        };
        let id = take_id();
        unlabeled.push(UnlabeledExample {
            id,
            features: gaussian_point(&mut rng, &center, config.cluster_std),
        });
        gold.insert(id, label);
    }

    let mut test = Vec::with_capacity(config.test_count);
    for i in 0..config.test_count {
        let label = i % c;
        test.push(LabeledExample {
            id: take_id(),
            features: gaussian_point(&mut rng, &means[label], config.cluster_std),
            label,
        });
    }

    Ok(DatasetBundle {
        classes: c,
        feature_dim: config.feature_dim,
        seed,
        labeled,
        threshold_samples: Vec::new(),
        unlabeled,
        test,
        hidden: HiddenLabels::new(gold),
    })
}

/// How many unlabeled examples become threshold samples.
pub fn threshold_sample_count(pool: usize, fraction: f64, min_count: usize) -> usize {
    min_count.max((fraction * pool as f64).round() as usize)
}

/// Moves `max(min_count, round(fraction * |U|))` unlabeled examples into the
/// virtual class.
pub fn assign_threshold_samples(
    mut bundle: DatasetBundle,
    fraction: f64,
    min_count: usize,
    seed: u64,
) -> Result<DatasetBundle> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!(
            "threshold fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if bundle.unlabeled.is_empty() {
        return Err(Error::config("no unlabeled examples to draw threshold samples from"));
    }
    let count = threshold_sample_count(bundle.unlabeled.len(), fraction, min_count);
    if count > bundle.unlabeled.len() {
        return Err(Error::config(format!(
            "{count} threshold samples requested but only {} unlabeled examples",
            bundle.unlabeled.len()
        )));
    }
    let mut rng = rng_for(seed, &[0x7e5]);
    let mut order: Vec<usize> = (0..bundle.unlabeled.len()).collect();
    order.shuffle(&mut rng);
    let mut chosen: Vec<usize> = order[..count].to_vec();
    chosen.sort_unstable();
    let chosen_set: HashSet<usize> = chosen.iter().copied().collect();

    let pool = std::mem::take(&mut bundle.unlabeled);
    for (i, ex) in pool.into_iter().enumerate() {
        if chosen_set.contains(&i) {
            bundle.hidden.remove(ex.id);
            bundle.threshold_samples.push(ex);
        } else {
            bundle.unlabeled.push(ex);
        }
    }
    Ok(bundle)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSpec {
    pub weak_sigma: f64,
    pub strong_sigma: f64,
    pub strong_mask_rate: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            weak_sigma: 0.1,
            strong_sigma: 0.5,
            strong_mask_rate: 0.0,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.weak_sigma >= 0.0 && self.strong_sigma.is_finite()) {
            return Err(Error::config("augmentation sigmas must be finite and nonnegative"));
        }
        if self.weak_sigma > self.strong_sigma {
            return Err(Error::config(format!(
                "weak_sigma {} exceeds strong_sigma {}",
                self.weak_sigma, self.strong_sigma
            )));
        }
        if !(0.0..1.0).contains(&self.strong_mask_rate) {
            return Err(Error::config(format!(
                "strong_mask_rate must lie in [0, 1), got {}",
                self.strong_mask_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AugmentKind {
    Weak,
    Strong,
}

impl AugmentKind {
    pub fn tag(self) -> u64 {
        match self {
            AugmentKind::Weak => 0x3ea4,
            AugmentKind::Strong => 0x5770,
        }
    }
}

/// Weak: additive Gaussian noise. Strong: larger noise, then each feature
/// zeroed independently with probability `strong_mask_rate`.
pub fn augment<R: Rng + ?Sized>(
    features: &[f64],
    spec: &AugmentationSpec,
    kind: AugmentKind,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(features.len());
    augment_into(features, spec, kind, rng, &mut out);
    out
}

pub fn augment_into<R: Rng + ?Sized>(
    features: &[f64],
    spec: &AugmentationSpec,
    kind: AugmentKind,
    rng: &mut R,
    out: &mut Vec<f64>,
) {
    out.clear();
    match kind {
        AugmentKind::Weak => {
            out.extend(features.iter().map(|&x| {
                if spec.weak_sigma == 0.0 {
                    x
                } else {
                    x + spec.weak_sigma * rng.sample::<f64, _>(StandardNormal)
                }
            }));
        }
        AugmentKind::Strong => {
            out.extend(features.iter().map(|&x| {
                let noisy = if spec.strong_sigma == 0.0 {
                    x
                } else {
                    x + spec.strong_sigma * rng.sample::<f64, _>(StandardNormal)
                };
                if spec.strong_mask_rate > 0.0 && rng.random::<f64>() < spec.strong_mask_rate {
                    0.0
                } else {
                    noisy
                }
            }));
        }
    }
}

const MANIFEST_FORMAT: &str = "marginmatch-dataset";
const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub classes: usize,
    pub feature_dim: usize,
    pub seed: u64,
    pub labeled: usize,
    pub threshold_samples: usize,
    pub unlabeled: usize,
    pub test: usize,
    pub config_hash: String,
}

fn write_rows(
    path: &Path,
    dim: usize,
    with_label: bool,
    rows: impl Iterator<Item = (u64, Option<usize>, Vec<f64>)>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    if with_label {
        header.push("label".into());
    }
    header.extend((0..dim).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for (id, label, feats) in rows {
        let mut rec = vec![id.to_string()];
        if let Some(l) = label {
            rec.push(l.to_string());
        }
        rec.extend(feats.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

type Row = (u64, Option<usize>, Vec<f64>);

fn read_rows(path: &Path, dim: usize, with_label: bool) -> Result<Vec<Row>> {
    let mut r = csv::Reader::from_path(path)?;
    let expected = 1 + usize::from(with_label) + dim;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Format {
            offset: line as u64 + 2,
            message: format!("{}: {what}", path.display()),
        };
        if rec.len() != expected {
            return Err(bad(&format!("expected {expected} columns, got {}", rec.len())));
        }
        let id: u64 = rec[0].parse().map_err(|_| bad("bad id"))?;
        let mut col = 1;
        let label = if with_label {
            col += 1;
            Some(rec[1].parse().map_err(|_| bad("bad label"))?)
        } else {
            None
        };
        let feats = (col..expected)
            .map(|i| rec[i].parse::<f64>().map_err(|_| bad("bad feature")))
            .collect::<Result<Vec<_>>>()?;
        out.push((id, label, feats));
    }
    Ok(out)
}

impl DatasetBundle {
    /// Writes one CSV per split plus `manifest.json`.
    pub fn save(&self, dir: &Path, config_text: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let d = self.feature_dim;
        write_rows(
            &dir.join("labeled.csv"),
            d,
            true,
            self.labeled.iter().map(|e| (e.id, Some(e.label), e.features.clone())),
        )?;
        write_rows(
            &dir.join("threshold.csv"),
            d,
            false,
            self.threshold_samples.iter().map(|e| (e.id, None, e.features.clone())),
        )?;
        write_rows(
            &dir.join("unlabeled.csv"),
            d,
            false,
            self.unlabeled.iter().map(|e| (e.id, None, e.features.clone())),
        )?;
        write_rows(
            &dir.join("test.csv"),
            d,
            true,
            self.test.iter().map(|e| (e.id, Some(e.label), e.features.clone())),
        )?;
        let mut w = csv::Writer::from_path(dir.join("hidden_labels.csv"))?;
        w.write_record(["id", "label"])?;
        for (id, label) in self.hidden.sorted_entries() {
            w.write_record([id.to_string(), label.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;

        let manifest = DatasetManifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            classes: self.classes,
            feature_dim: d,
            seed: self.seed,
            labeled: self.labeled.len(),
            threshold_samples: self.threshold_samples.len(),
            unlabeled: self.unlabeled.len(),
            test: self.test.len(),
            config_hash: content_hash(config_text),
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    /// Loads a bundle written by [`DatasetBundle::save`], checking the
    /// manifest against the files.
    pub fn load(dir: &Path) -> Result<(Self, DatasetManifest)> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::Format {
                offset: 0,
                message: format!("unsupported dataset format {} v{}", m.format, m.version),
            });
        }
        let d = m.feature_dim;
        let labeled = read_rows(&dir.join("labeled.csv"), d, true)?;
        let thresh = read_rows(&dir.join("threshold.csv"), d, false)?;
        let unl = read_rows(&dir.join("unlabeled.csv"), d, false)?;
        let test = read_rows(&dir.join("test.csv"), d, true)?;
        let mut gold = HashMap::new();
        let mut r = csv::Reader::from_path(dir.join("hidden_labels.csv"))?;
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| {
                s.parse::<u64>().map_err(|_| Error::Format {
                    offset: 0,
                    message: "bad hidden label row".into(),
                })
            };
            gold.insert(parse(&rec[0])?, parse(&rec[1])? as usize);
        }
        let counts = [
            ("labeled", m.labeled, labeled.len()),
            ("threshold_samples", m.threshold_samples, thresh.len()),
            ("unlabeled", m.unlabeled, unl.len()),
            ("test", m.test, test.len()),
            ("hidden labels", m.unlabeled, gold.len()),
        ];
        for (name, want, got) in counts {
            if want != got {
                return Err(Error::Format {
                    offset: 0,
                    message: format!("manifest says {want} {name}, files hold {got}"),
                });
            }
        }
        let to_labeled = |rows: Vec<Row>| {
            rows.into_iter()
                .map(|(id, l, features)| LabeledExample {
                    id,
                    features,
                    label: l.unwrap_or(0),
                })
                .collect()
        };
        let to_unlabeled = |rows: Vec<Row>| {
            rows.into_iter()
                .map(|(id, _, features)| UnlabeledExample { id, features })
                .collect()
        };
        Ok((
            Self {
                classes: m.classes,
                feature_dim: d,
                seed: m.seed,
                labeled: to_labeled(labeled),
                threshold_samples: to_unlabeled(thresh),
                unlabeled: to_unlabeled(unl),
                test: to_labeled(test),
                hidden: HiddenLabels::new(gold),
            },
            m,
        ))
    }
}
