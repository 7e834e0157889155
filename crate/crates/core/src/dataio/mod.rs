//! Point-cloud files, synthetic shapes, registration pairs, dataset
//! directories and model checkpoints.

mod checkpoint;
mod dataset;
mod formats;
mod shapes;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{add_gaussian_noise, apply_action, Action, PointCloud};
use crate::{Error, Result};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    TrainingMetadata, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use dataset::{read_dataset, write_dataset, Dataset, DatasetEntry, SynthConfig};
pub use formats::{load_cloud, write_xyz, CloudFormat};
pub use shapes::{sample_surface, Shape, ShapeKind};

/// Source/target clouds with the action that maps source onto target, when known.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationPair {
    pub source: PointCloud,
    pub target: PointCloud,
    pub ground_truth: Option<Action>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub std: f64,
    pub clip: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            std: 0.01,
            clip: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSpec {
    /// Each Euler angle is drawn uniformly from `[0, max_rot_deg]` degrees.
    pub max_rot_deg: f64,
    /// Each translation component is drawn uniformly from `[-max_trans, max_trans]`.
    pub max_trans: f64,
    /// Noise added to the target after transforming.
    pub noise: Option<NoiseSpec>,
}

impl Default for PairSpec {
    fn default() -> Self {
        Self {
            max_rot_deg: 45.0,
            max_trans: 0.5,
            noise: None,
        }
    }
}

/// Draws a ground-truth action and returns `target = apply_action(source, gt)`
/// (plus optional noise on the target).
pub fn make_pair(source: &PointCloud, spec: &PairSpec, seed: u64) -> Result<RegistrationPair> {
    let (ground_truth, noise_seed) = draw_ground_truth(spec, seed)?;
    let mut target = apply_action(source, &ground_truth);
    if let Some(noise) = spec.noise {
        target = add_gaussian_noise(&target, noise.std, noise.clip, noise_seed)?;
    }
    Ok(RegistrationPair {
        source: source.clone(),
        target,
        ground_truth: Some(ground_truth),
    })
}

/// The ground-truth action [`make_pair`] uses for `seed`, and the seed it
/// passes on to the noise generator.
pub fn draw_ground_truth(spec: &PairSpec, seed: u64) -> Result<(Action, u64)> {
    if !(spec.max_rot_deg >= 0.0 && spec.max_trans >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "transform ranges must be non-negative: {} deg, {}",
            spec.max_rot_deg, spec.max_trans
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_rot = spec.max_rot_deg.to_radians();
    let euler: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>() * max_rot);
    let translation: [f64; 3] =
        std::array::from_fn(|_| (2.0 * rng.random::<f64>() - 1.0) * spec.max_trans);
    Ok((Action::new(euler, translation)?, rng.random()))
}

/// Stream-independent seed for item `index` of stream `stream` (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so a failed write leaves nothing behind.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
