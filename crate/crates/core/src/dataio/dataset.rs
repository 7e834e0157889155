use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, load_cloud, make_pair, sample_surface, write_xyz, CloudFormat, PairSpec};
use super::{RegistrationPair, Shape, ShapeKind};
use crate::geometry::{add_gaussian_noise, apply_action, Action, Normalization};
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.csv";
const MANIFEST_HEADER: [&str; 12] = [
    "split", "index", "shape", "seed", "source", "target", "e1", "e2", "e3", "t1", "t2", "t3",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub points: usize,
    /// Pair `i` uses `shapes[i % shapes.len()]`.
    pub shapes: Vec<ShapeKind>,
    pub pair: PairSpec,
    /// Sample the target from the surface again instead of moving the source points.
    pub resample: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_pairs: 64,
            test_pairs: 16,
            points: 784,
            shapes: vec![ShapeKind::Box, ShapeKind::Wedge, ShapeKind::Torus],
            pair: PairSpec::default(),
            resample: false,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub index: usize,
    pub shape: ShapeKind,
    pub seed: u64,
    pub pair: RegistrationPair,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: Vec<DatasetEntry>,
    pub test: Vec<DatasetEntry>,
}

impl Dataset {
    pub fn generate(config: &SynthConfig) -> Result<Self> {
        if config.shapes.is_empty() && config.train_pairs + config.test_pairs > 0 {
            return Err(Error::InvalidArgument("no shape families selected".into()));
        }
        let split = |stream: u64, count: usize| -> Result<Vec<DatasetEntry>> {
            (0..count)
                .map(|i| generate_entry(config, derive_seed(config.seed, stream, i as u64), i))
                .collect()
        };
        Ok(Self {
            train: split(0, config.train_pairs)?,
            test: split(1, config.test_pairs)?,
        })
    }

    pub fn pairs(entries: &[DatasetEntry]) -> Vec<RegistrationPair> {
        entries.iter().map(|e| e.pair.clone()).collect()
    }
}

fn generate_entry(config: &SynthConfig, seed: u64, index: usize) -> Result<DatasetEntry> {
    let kind = config.shapes[index % config.shapes.len()];
    let shape = Shape::random(kind, &mut ChaCha8Rng::seed_from_u64(seed));
    let raw = sample_surface(&shape, config.points, derive_seed(seed, 1, 0))?;
    let norm = Normalization::of(&raw)?;
    let source = norm.apply(&raw);
    let pair_seed = derive_seed(seed, 2, 0);
    let pair = if config.resample {
        let (gt, noise_seed) = super::draw_ground_truth(&config.pair, pair_seed)?;
        let second = norm.apply(&sample_surface(
            &shape,
            config.points,
            derive_seed(seed, 3, 0),
        )?);
        let mut target = apply_action(&second, &gt);
        if let Some(n) = config.pair.noise {
            target = add_gaussian_noise(&target, n.std, n.clip, noise_seed)?;
        }
        RegistrationPair {
            source,
            target,
            ground_truth: Some(gt),
        }
    } else {
        make_pair(&source, &config.pair, pair_seed)?
    };
    Ok(DatasetEntry {
        index,
        shape: kind,
        seed,
        pair,
    })
}

fn cloud_file(split: &str, index: usize, role: &str) -> String {
    format!("{split}/{index:05}.{role}.xyz")
}

/// Writes `manifest.csv`, one xyz file per cloud, and `config.txt` holding
/// `config_echo`. The directory is assembled next to `dir` and renamed into
/// place; an existing `dir` is replaced.
pub fn write_dataset(dir: &Path, dataset: &Dataset, config_echo: &str) -> Result<()> {
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".dataset-")
        .tempdir_in(&parent)
        .map_err(|e| Error::io(&parent, e))?;
    let root = staging.path();

    let manifest_path = root.join(MANIFEST);
    let mut manifest = csv::Writer::from_path(&manifest_path)?;
    manifest.write_record(MANIFEST_HEADER)?;
    for (split, entries) in [("train", &dataset.train), ("test", &dataset.test)] {
        fs::create_dir_all(root.join(split)).map_err(|e| Error::io(root.join(split), e))?;
        for e in entries {
            let src = cloud_file(split, e.index, "src");
            let tgt = cloud_file(split, e.index, "tgt");
            write_xyz(&root.join(&src), &e.pair.source, &[])?;
            write_xyz(&root.join(&tgt), &e.pair.target, &[])?;
            let gt = e.pair.ground_truth.map(|a| a.to_array());
            let mut row = vec![
                split.to_string(),
                e.index.to_string(),
                e.shape.to_string(),
                e.seed.to_string(),
                src,
                tgt,
            ];
            for k in 0..6 {
                row.push(gt.map(|g| g[k].to_string()).unwrap_or_default());
            }
            manifest.write_record(&row)?;
        }
    }
    manifest.flush().map_err(|e| Error::io(&manifest_path, e))?;
    drop(manifest);
    fs::write(root.join("config.txt"), config_echo)
        .map_err(|e| Error::io(root.join("config.txt"), e))?;

    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let staged = staging.keep();
    fs::rename(&staged, dir).map_err(|e| {
        let _ = fs::remove_dir_all(&staged);
        Error::io(dir, e)
    })?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(Error::InvalidArgument(format!(
            "{} is not a dataset directory (no {MANIFEST})",
            dir.display()
        )));
    }
    let mut reader = csv::Reader::from_path(&manifest_path)?;
    let mut dataset = Dataset::default();
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        let line = row_no + 2;
        let bad = |msg: String| Error::Format {
            path: manifest_path.clone(),
            line,
            message: msg,
        };
        if record.len() != MANIFEST_HEADER.len() {
            return Err(bad(format!(
                "expected {} fields, found {}",
                MANIFEST_HEADER.len(),
                record.len()
            )));
        }
        let parse_num = |i: usize| -> Result<f64> {
            record[i].parse::<f64>().map_err(|_| {
                bad(format!(
                    "invalid {} value {:?}",
                    MANIFEST_HEADER[i], &record[i]
                ))
            })
        };
        let ground_truth = if record[6].is_empty() {
            None
        } else {
            let mut a = [0.0; 6];
            for (k, slot) in a.iter_mut().enumerate() {
                *slot = parse_num(6 + k)?;
            }
            Some(Action::from_array(a)?)
        };
        let entry = DatasetEntry {
            index: record[1]
                .parse()
                .map_err(|_| bad(format!("invalid index {:?}", &record[1])))?,
            shape: record[2].parse()?,
            seed: record[3]
                .parse()
                .map_err(|_| bad(format!("invalid seed {:?}", &record[3])))?,
            pair: RegistrationPair {
                source: load_cloud(&dir.join(&record[4]), CloudFormat::XyzText)?,
                target: load_cloud(&dir.join(&record[5]), CloudFormat::XyzText)?,
                ground_truth,
            },
        };
        match &record[0] {
            "train" => dataset.train.push(entry),
            "test" => dataset.test.push(entry),
            other => return Err(bad(format!("unknown split {other:?}"))),
        }
    }
    Ok(dataset)
}
