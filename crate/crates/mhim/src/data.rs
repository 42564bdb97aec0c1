//! Synthetic MIL datasets, the on-disk bag format, and split construction.
//!
//! A dataset directory holds `manifest.csv` (bag_id,label,n_instances,
//! feature_path) plus one text feature file per bag: a "N D" header line and
//! N whitespace-separated rows of decimal values.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng;
use crate::tensor::Mat;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io failure on {path}: {source}")]
    IoFailure {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: malformed header")]
    MalformedHeader { path: String },
    #[error("{path}: header declares {expected} rows, found {found}")]
    RowCountMismatch {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}: non-numeric value at line {line}")]
    NonNumericValue { path: String, line: usize },
    #[error("{path}: malformed manifest at line {line}")]
    MalformedManifest { path: String, line: usize },
    #[error("too few bags: a split would lack a class")]
    TooFewBags,
    #[error("split ratios must sum to 1, got {0}")]
    BadRatios(f64),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_bags: usize,
    pub instances_min: usize,
    pub instances_max: usize,
    pub d_in: usize,
    /// Fraction of positive instances inside a positive bag, (0, 1].
    pub positive_instance_ratio: f64,
    /// Distance between negative and positive instance means, in sigma units.
    pub separation: f64,
    /// Fraction of positive instances placed at separation/4 (near-boundary).
    pub hard_fraction: f64,
    /// Fraction of bags that are positive.
    pub label_balance: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn easy(seed: u64) -> Self {
        SynthConfig {
            n_bags: 200,
            instances_min: 50,
            instances_max: 100,
            d_in: 64,
            positive_instance_ratio: 0.3,
            separation: 3.0,
            hard_fraction: 0.0,
            label_balance: 0.5,
            seed,
        }
    }

    /// Low-signal regime: few positive instances, half of them near the
    /// decision boundary.
    pub fn hard(seed: u64) -> Self {
        SynthConfig {
            n_bags: 200,
            instances_min: 50,
            instances_max: 100,
            d_in: 64,
            positive_instance_ratio: 0.05,
            separation: 1.0,
            hard_fraction: 0.5,
            label_balance: 0.5,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagRecord {
    pub bag_id: String,
    pub label: u8,
    pub n_instances: usize,
    pub feature_path: String,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub records: Vec<BagRecord>,
}

/// One bag held in memory.
#[derive(Debug, Clone)]
pub struct Bag {
    pub id: String,
    pub label: u8,
    pub features: Mat,
}

/// Train/val/test bag-id lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitScheme {
    Holdout { train: f64, val: f64, test: f64 },
    KFold { k: usize, repeats: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::IoFailure {
        path: path.display().to_string(),
        source,
    }
}

/// Sample one bag plus its ground-truth positive-instance count.
/// Instance order is shuffled so position carries no label information.
fn synth_bag(cfg: &SynthConfig, direction: &[f64], bag_idx: usize, label: u8) -> (Mat, usize) {
    let mut r = rng::stream(cfg.seed, &["bag", &bag_idx.to_string()]);
    let n = r.gen_range(cfg.instances_min..=cfg.instances_max);
    let n_pos = if label == 1 {
        ((cfg.positive_instance_ratio * n as f64).ceil() as usize).max(1)
    } else {
        0
    };
    let n_hard = (cfg.hard_fraction * n_pos as f64).floor() as usize;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let scale = if i < n_pos {
            if i < n_hard {
                cfg.separation / 4.0
            } else {
                cfg.separation
            }
        } else {
            0.0
        };
        let row: Vec<f64> = direction
            .iter()
            .map(|&u| scale * u + r.sample::<f64, _>(StandardNormal))
            .collect();
        rows.push(row);
    }
    rows.shuffle(&mut r);
    (Mat::from_rows(&rows), n_pos)
}

/// All bags of a dataset, with ground-truth positive-instance counts.
/// Fully determined by the config (including its seed).
pub fn generate_bags(cfg: &SynthConfig) -> Vec<(Bag, usize)> {
    let mut dir_rng = rng::stream(cfg.seed, &["direction"]);
    let raw: Vec<f64> = (0..cfg.d_in).map(|_| dir_rng.sample(StandardNormal)).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let direction: Vec<f64> = raw.iter().map(|v| v / norm).collect();

    let n_pos_bags = (cfg.label_balance * cfg.n_bags as f64).round() as usize;
    let mut labels: Vec<u8> = (0..cfg.n_bags).map(|i| u8::from(i < n_pos_bags)).collect();
    labels.shuffle(&mut rng::stream(cfg.seed, &["labels"]));

    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let (features, n_pos) = synth_bag(cfg, &direction, i, label);
            let bag = Bag {
                id: format!("bag{:04}", i),
                label,
                features,
            };
            (bag, n_pos)
        })
        .collect()
}

fn format_bag(m: &Mat) -> String {
    let mut out = format!("{} {}\n", m.rows, m.cols);
    for r in 0..m.rows {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{}", v)).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Generate the dataset on disk: manifest.csv plus bags/*.txt.
pub fn generate_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    let bags_dir = out_dir.join("bags");
    std::fs::create_dir_all(&bags_dir).map_err(io_err(&bags_dir))?;
    let mut manifest = Manifest::default();
    let mut manifest_text = String::from("bag_id,label,n_instances,feature_path\n");
    for (bag, _n_pos) in generate_bags(cfg) {
        let rel = format!("bags/{}.txt", bag.id);
        let path = out_dir.join(&rel);
        std::fs::write(&path, format_bag(&bag.features)).map_err(io_err(&path))?;
        manifest_text.push_str(&format!(
            "{},{},{},{}\n",
            bag.id, bag.label, bag.features.rows, rel
        ));
        manifest.records.push(BagRecord {
            bag_id: bag.id,
            label: bag.label,
            n_instances: bag.features.rows,
            feature_path: rel,
        });
    }
    let mpath = out_dir.join("manifest.csv");
    std::fs::write(&mpath, manifest_text).map_err(io_err(&mpath))?;
    Ok(manifest)
}

/// Parse one feature file ("N D" header then N rows of D values).
pub fn load_bag(path: &Path) -> Result<Mat> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let pstr = path.display().to_string();
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| DataError::MalformedHeader {
        path: pstr.clone(),
    })?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let (rows, cols) = match parts.as_slice() {
        [r, c] => match (r.parse::<usize>(), c.parse::<usize>()) {
            (Ok(r), Ok(c)) => (r, c),
            _ => {
                return Err(DataError::MalformedHeader { path: pstr });
            }
        },
        _ => return Err(DataError::MalformedHeader { path: pstr }),
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut found = 0;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| DataError::NonNumericValue {
                path: pstr.clone(),
                line: i + 2,
            })?;
        if values.len() != cols {
            return Err(DataError::RowCountMismatch {
                path: pstr.clone(),
                expected: cols,
                found: values.len(),
            });
        }
        data.extend(values);
        found += 1;
    }
    if found != rows {
        return Err(DataError::RowCountMismatch {
            path: pstr,
            expected: rows,
            found,
        });
    }
    Ok(Mat::new(rows, cols, data))
}

/// Serialize a bag matrix back to its on-disk text form.
pub fn write_bag(path: &Path, m: &Mat) -> Result<()> {
    std::fs::write(path, format_bag(m)).map_err(io_err(path))
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.csv");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let pstr = path.display().to_string();
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || DataError::MalformedManifest {
            path: pstr.clone(),
            line: i + 1,
        };
        if fields.len() != 4 {
            return Err(bad());
        }
        records.push(BagRecord {
            bag_id: fields[0].to_string(),
            label: fields[1].parse().map_err(|_| bad())?,
            n_instances: fields[2].parse().map_err(|_| bad())?,
            feature_path: fields[3].to_string(),
        });
    }
    Ok(Manifest { records })
}

/// Load every bag referenced by the manifest in manifest order.
pub fn load_dataset(dir: &Path) -> Result<Vec<Bag>> {
    let manifest = load_manifest(dir)?;
    let mut bags = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let features = load_bag(&dir.join(&rec.feature_path))?;
        bags.push(Bag {
            id: rec.bag_id.clone(),
            label: rec.label,
            features,
        });
    }
    Ok(bags)
}

fn stratified_ids(manifest: &Manifest, rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<String>) {
    let mut pos: Vec<String> = manifest
        .records
        .iter()
        .filter(|r| r.label == 1)
        .map(|r| r.bag_id.clone())
        .collect();
    let mut neg: Vec<String> = manifest
        .records
        .iter()
        .filter(|r| r.label == 0)
        .map(|r| r.bag_id.clone())
        .collect();
    pos.shuffle(rng);
    neg.shuffle(rng);
    (pos, neg)
}

/// Label-stratified splits, deterministic under the RNG stream. Holdout
/// yields one split; k-fold yields k x repeats splits, the validation part
/// carved from the training folds (15%, stratified).
pub fn make_splits(
    manifest: &Manifest,
    scheme: SplitScheme,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Split>> {
    match scheme {
        SplitScheme::Holdout { train, val, test } => {
            let total = train + val + test;
            if (total - 1.0).abs() > 1e-9 {
                return Err(DataError::BadRatios(total));
            }
            let (pos, neg) = stratified_ids(manifest, rng);
            let mut split = Split {
                train: vec![],
                val: vec![],
                test: vec![],
            };
            for class in [&pos, &neg] {
                let n = class.len();
                let n_train = (train * n as f64).round() as usize;
                let n_val = (val * n as f64).round() as usize;
                if n_train == 0 || n_val == 0 || n_train + n_val >= n {
                    return Err(DataError::TooFewBags);
                }
                split.train.extend_from_slice(&class[..n_train]);
                split.val.extend_from_slice(&class[n_train..n_train + n_val]);
                split.test.extend_from_slice(&class[n_train + n_val..]);
            }
            Ok(vec![split])
        }
        SplitScheme::KFold { k, repeats } => {
            assert!(k >= 2, "k-fold needs k >= 2");
            let mut splits = Vec::with_capacity(k * repeats);
            for _rep in 0..repeats {
                let (pos, neg) = stratified_ids(manifest, rng);
                // Round-robin fold assignment per class keeps folds stratified.
                let mut folds: Vec<Vec<String>> = vec![Vec::new(); k];
                for (i, id) in pos.iter().chain(neg.iter()).enumerate() {
                    folds[i % k].push(id.clone());
                }
                for fold in &folds {
                    let n_pos = fold.iter().filter(|id| pos.contains(id)).count();
                    if n_pos == 0 || n_pos == fold.len() {
                        return Err(DataError::TooFewBags);
                    }
                }
                for f in 0..k {
                    let test = folds[f].clone();
                    let rest: Vec<String> = (0..k)
                        .filter(|&i| i != f)
                        .flat_map(|i| folds[i].iter().cloned())
                        .collect();
                    // Stratified 15% validation carve-out from the non-test bags.
                    let rest_pos: Vec<String> =
                        rest.iter().filter(|id| pos.contains(id)).cloned().collect();
                    let rest_neg: Vec<String> =
                        rest.iter().filter(|id| !pos.contains(id)).cloned().collect();
                    let mut val = Vec::new();
                    let mut train = Vec::new();
                    for class in [rest_pos, rest_neg] {
                        let n_val = ((0.15 * class.len() as f64).round() as usize).max(1);
                        if n_val >= class.len() {
                            return Err(DataError::TooFewBags);
                        }
                        val.extend_from_slice(&class[..n_val]);
                        train.extend_from_slice(&class[n_val..]);
                    }
                    splits.push(Split { train, val, test });
                }
            }
            Ok(splits)
        }
    }
}

/// Resolve split id lists against loaded bags (indices into `bags`).
pub fn resolve_ids<'a>(bags: &'a [Bag], ids: &[String]) -> Vec<&'a Bag> {
    let by_id: std::collections::BTreeMap<&str, &Bag> =
        bags.iter().map(|b| (b.id.as_str(), b)).collect();
    ids.iter().map(|id| by_id[id.as_str()]).collect()
}

pub fn min_bag_size(manifest: &Manifest) -> usize {
    manifest
        .records
        .iter()
        .map(|r| r.n_instances)
        .min()
        .unwrap_or(0)
}
