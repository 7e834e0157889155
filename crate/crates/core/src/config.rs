//! Flat, namespaced run configuration.
//!
//! Files hold one `key = value` per line; `#` starts a comment. Every key has
//! a default, unknown keys are rejected, and [`RunConfig::echo`] renders the
//! effective configuration for embedding into output artifacts.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::baseline::IcpConfig;
use crate::dataio::{NoiseSpec, PairSpec, ShapeKind, SynthConfig};
use crate::harness::Method;
use crate::latentmodel::{GradientFlow, ModelConfig, TrainConfig};
use crate::nnet::AdamConfig;
use crate::planner::CemConfig;
use crate::{Action, Error, Exec, Result};

/// Every key with its default value and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("data.seed", "1", "base seed of dataset generation"),
    ("data.pairs", "64", "training pairs"),
    ("data.test_pairs", "16", "held-out pairs"),
    ("data.points", "784", "points sampled per cloud"),
    (
        "data.shapes",
        "box,wedge,torus",
        "shape families (sphere, torus, box, wedge)",
    ),
    (
        "data.max_rot_deg",
        "45",
        "ground-truth Euler angles drawn from [0, max] degrees",
    ),
    (
        "data.max_trans",
        "0.5",
        "ground-truth translations drawn from [-max, max]",
    ),
    (
        "data.noise_std",
        "0",
        "Gaussian noise on targets; 0 disables noise",
    ),
    ("data.noise_clip", "0.05", "noise clipping bound"),
    (
        "data.resample",
        "false",
        "sample the target surface independently of the source",
    ),
    ("model.latent_dim", "128", "latent state dimension"),
    (
        "model.hidden",
        "256",
        "hidden width of the transformation and evaluation networks",
    ),
    ("model.decoder_hidden", "256", "hidden width of the decoder"),
    ("train.epochs", "30", "training epochs"),
    ("train.batch", "16", "minibatch size"),
    ("train.lr", "0.0001", "Adam learning rate"),
    ("train.weight_decay", "0.0005", "L2 weight decay"),
    ("train.sigma", "1", "std of sampled training actions"),
    (
        "train.seed",
        "7",
        "seed of initialization, action sampling and shuffling",
    ),
    (
        "train.actions_per_pair",
        "8",
        "sampled actions per training pair",
    ),
    (
        "train.joint_gradients",
        "false",
        "let every loss term update the encoder",
    ),
    (
        "train.standardize_eval",
        "true",
        "scale the evaluation output by the training-target spread and start it at their mean",
    ),
    ("cem.iterations", "10", "CEM iterations T"),
    ("cem.candidates", "1000", "candidates per iteration N"),
    ("cem.elites", "25", "elites per iteration K"),
    ("cem.mu0", "0,0,0,0,0,0", "initial mean"),
    (
        "cem.sigma0",
        "0.8,0.8,0.8,0.5,0.5,0.5",
        "initial standard deviations",
    ),
    ("cem.var_floor", "1e-8", "variance floor"),
    ("cem.seed", "0", "planning seed"),
    (
        "cem.oracle",
        "latent",
        "reward oracle for register (latent or chamfer)",
    ),
    (
        "cem.inject_mean",
        "true",
        "evaluate the current mean as candidate 0",
    ),
    (
        "cem.return_best",
        "false",
        "return the best candidate instead of the final mean",
    ),
    ("icp.max_iterations", "100", "ICP iteration cap"),
    (
        "icp.rotation_tol",
        "0.0001",
        "ICP rotation convergence threshold (radians)",
    ),
    (
        "icp.translation_tol",
        "0.000001",
        "ICP translation convergence threshold",
    ),
    (
        "icp.max_correspondence",
        "0",
        "ICP correspondence distance cap; 0 disables",
    ),
    (
        "bench.method",
        "chamfer-cem",
        "latent-cem, chamfer-cem, icp or random",
    ),
    (
        "bench.split",
        "test",
        "dataset split to evaluate (train or test)",
    ),
    (
        "bench.max_pairs",
        "0",
        "evaluate at most this many pairs; 0 means all",
    ),
    (
        "bench.sweep_t",
        "",
        "comma-separated CEM iteration counts to sweep",
    ),
    (
        "bench.sweep_n",
        "",
        "comma-separated CEM candidate counts to sweep",
    ),
    (
        "bench.timing",
        "false",
        "record wall-clock times in reports",
    ),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|&(k, v, _)| (k, v.to_string())).collect(),
        }
    }
}

fn canonical_key(key: &str) -> Option<&'static str> {
    KEYS.iter().map(|k| k.0).find(|k| *k == key)
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse list element {s:?}")))
        })
        .collect()
}

impl RunConfig {
    /// Sets one key. Values are checked by [`RunConfig::validate`], once all
    /// sources have been applied, so that related keys can change in any order.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = canonical_key(key).ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        self.values.insert(k, value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Applies `key = value` lines.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{origin}:{}: expected `key = value`, got {raw:?}",
                    i + 1
                ))
            })?;
            self.set(key.trim(), value).map_err(|e| {
                Error::Config(format!(
                    "{origin}:{}: {}",
                    i + 1,
                    e.to_string().trim_start_matches("config error: ")
                ))
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::default();
        config.apply_text(&text, &path.display().to_string())?;
        Ok(config)
    }

    /// The effective configuration, one `key = value` per line in key order.
    pub fn echo(&self) -> String {
        KEYS.iter()
            .map(|&(k, _, _)| format!("{k} = {}\n", self.values[k]))
            .collect()
    }

    /// Like [`RunConfig::echo`] but restricted to keys under `prefixes`.
    pub fn echo_sections(&self, prefixes: &[&str]) -> String {
        KEYS.iter()
            .filter(|(k, _, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|&(k, _, _)| format!("{k} = {}\n", self.values[k]))
            .collect()
    }

    fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .expect("every key has a value")
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
    }

    fn positive_f64(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parse(key)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("{key} must be positive, got {v}")));
        }
        Ok(v)
    }

    fn non_negative_f64(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parse(key)?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Config(format!(
                "{key} must be non-negative, got {v}"
            )));
        }
        Ok(v)
    }

    fn vec6(&self, key: &str) -> Result<[f64; 6]> {
        let v: Vec<f64> = parse_list(key, self.raw(key))?;
        let arr: [f64; 6] = v.try_into().map_err(|v: Vec<f64>| {
            Error::Config(format!("{key} needs 6 values, got {}", v.len()))
        })?;
        if arr.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config(format!("{key} must be finite")));
        }
        Ok(arr)
    }

    /// Checks every key.
    pub fn validate(&self) -> Result<()> {
        self.synth()?;
        self.model(784)?;
        self.train(Exec::Serial)?;
        self.cem()?;
        self.oracle()?;
        self.icp()?;
        self.bench()?;
        Ok(())
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        let shapes: Vec<ShapeKind> = parse_list("data.shapes", self.raw("data.shapes"))?;
        if shapes.is_empty() {
            return Err(Error::Config(
                "data.shapes must name at least one shape".into(),
            ));
        }
        let points: usize = self.parse("data.points")?;
        if points < 4 {
            return Err(Error::Config(format!(
                "data.points must be at least 4, got {points}"
            )));
        }
        let noise_std = self.non_negative_f64("data.noise_std")?;
        let noise_clip = self.non_negative_f64("data.noise_clip")?;
        Ok(SynthConfig {
            train_pairs: self.parse("data.pairs")?,
            test_pairs: self.parse("data.test_pairs")?,
            points,
            shapes,
            pair: PairSpec {
                max_rot_deg: self.non_negative_f64("data.max_rot_deg")?,
                max_trans: self.non_negative_f64("data.max_trans")?,
                noise: (noise_std > 0.0).then_some(NoiseSpec {
                    std: noise_std,
                    clip: noise_clip,
                }),
            },
            resample: self.parse("data.resample")?,
            seed: self.parse("data.seed")?,
        })
    }

    /// Model architecture for clouds of `num_points` points.
    pub fn model(&self, num_points: usize) -> Result<ModelConfig> {
        let positive = |key: &str| -> Result<usize> {
            let v: usize = self.parse(key)?;
            if v == 0 {
                return Err(Error::Config(format!("{key} must be positive")));
            }
            Ok(v)
        };
        Ok(ModelConfig {
            latent_dim: positive("model.latent_dim")?,
            hidden: positive("model.hidden")?,
            decoder_hidden: positive("model.decoder_hidden")?,
            num_points,
            ..ModelConfig::default()
        })
    }

    pub fn train(&self, exec: Exec) -> Result<TrainConfig> {
        let batch: usize = self.parse("train.batch")?;
        if batch == 0 {
            return Err(Error::Config("train.batch must be positive".into()));
        }
        self.positive_f64("train.sigma")?;
        self.parse::<usize>("train.actions_per_pair")?;
        Ok(TrainConfig {
            epochs: self.parse("train.epochs")?,
            batch_size: batch,
            adam: AdamConfig {
                learning_rate: self.positive_f64("train.lr")?,
                weight_decay: self.non_negative_f64("train.weight_decay")?,
                ..AdamConfig::default()
            },
            seed: self.parse("train.seed")?,
            flow: if self.parse("train.joint_gradients")? {
                GradientFlow::Joint
            } else {
                GradientFlow::Detached
            },
            standardize_eval: self.parse("train.standardize_eval")?,
            exec,
        })
    }

    pub fn train_sigma(&self) -> Result<f64> {
        self.positive_f64("train.sigma")
    }

    pub fn actions_per_pair(&self) -> Result<usize> {
        self.parse("train.actions_per_pair")
    }

    pub fn cem(&self) -> Result<CemConfig> {
        let sigma0 = self.vec6("cem.sigma0")?;
        if sigma0.iter().any(|&s| s < 0.0) {
            return Err(Error::Config("cem.sigma0 must be non-negative".into()));
        }
        let config = CemConfig {
            iterations: self.parse("cem.iterations")?,
            candidates: self.parse("cem.candidates")?,
            elites: self.parse("cem.elites")?,
            mu0: self.vec6("cem.mu0")?,
            sigma0,
            variance_floor: self.positive_f64("cem.var_floor")?,
            seed: self.parse("cem.seed")?,
            inject_mean: self.parse("cem.inject_mean")?,
            return_best: self.parse("cem.return_best")?,
        };
        config.validate()?;
        Ok(config)
    }

    /// Planning method used by `register`.
    pub fn oracle(&self) -> Result<Method> {
        match self.raw("cem.oracle") {
            "latent" => Ok(Method::LatentCem),
            "chamfer" => Ok(Method::ChamferCem),
            other => Err(Error::Config(format!(
                "cem.oracle must be latent or chamfer, got {other:?}"
            ))),
        }
    }

    pub fn icp(&self) -> Result<IcpConfig> {
        let cap = self.non_negative_f64("icp.max_correspondence")?;
        let config = IcpConfig {
            max_iterations: self.parse("icp.max_iterations")?,
            rotation_tol: self.positive_f64("icp.rotation_tol")?,
            translation_tol: self.positive_f64("icp.translation_tol")?,
            max_correspondence: (cap > 0.0).then_some(cap),
            initial: Action::ZERO,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn bench(&self) -> Result<BenchSettings> {
        let split = self.raw("bench.split");
        if split != "train" && split != "test" {
            return Err(Error::Config(format!(
                "bench.split must be train or test, got {split:?}"
            )));
        }
        let sweep_t: Vec<usize> = parse_list("bench.sweep_t", self.raw("bench.sweep_t"))?;
        let sweep_n: Vec<usize> = parse_list("bench.sweep_n", self.raw("bench.sweep_n"))?;
        if sweep_t.is_empty() != sweep_n.is_empty() {
            return Err(Error::Config(
                "bench.sweep_t and bench.sweep_n must be set together".into(),
            ));
        }
        if sweep_t.iter().chain(&sweep_n).any(|&v| v == 0) {
            return Err(Error::Config("sweep values must be positive".into()));
        }
        Ok(BenchSettings {
            method: self.raw("bench.method").parse().map_err(|e: Error| {
                Error::Config(format!(
                    "bench.method: {}",
                    e.to_string().trim_start_matches("config error: ")
                ))
            })?,
            test_split: split == "test",
            max_pairs: self.parse("bench.max_pairs")?,
            sweep_t,
            sweep_n,
            timing: self.parse("bench.timing")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    pub method: Method,
    pub test_split: bool,
    pub max_pairs: usize,
    pub sweep_t: Vec<usize>,
    pub sweep_n: Vec<usize>,
    pub timing: bool,
}
