//! Training loop, checkpoint serialization, and mask evaluation.
//!
//! Each training example is one simulated growth step: the corrupted inlier
//! set and its neighborhood, resampled to the network's set size, augmented,
//! scored, and pushed through the dual binary cross-entropy loss. Gradients
//! accumulate over `batch_size` examples before each Adam update. Every
//! example owns an rng stream derived from its (epoch, index) pair, so runs
//! are bit-reproducible regardless of how generation is scheduled.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::FeatureCloud;
use crate::error::{Error, Result};
use crate::index::SpatialIndex;
use crate::infer::MaskModel;
use crate::net::{aggregate_masks, resample_set, NetworkConfig, RegionNetwork};
use crate::nn::{bce_dual_loss, Adam, AdamConfig, Parameterized, Scalar, Tensor2};
use crate::sim::{anneal_theta, simulate_growth_example, Augmentation, TrainingExample};

const CHECKPOINT_MAGIC: &[u8; 8] = b"RGNTCKPT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub examples_per_epoch: usize,
    /// Examples per Adam update (gradient accumulation).
    pub batch_size: usize,
    pub lr: f64,
    pub theta_max: f64,
    pub r_grow: f64,
    /// Growth rounds per simulated example are drawn uniformly from
    /// `0..=max_growth_steps`.
    pub max_growth_steps: usize,
    pub seed: u64,
    /// Save an intermediate checkpoint every this many epochs; 0 saves only
    /// the final one.
    pub checkpoint_every: usize,
    /// Run the arithmetic in 32-bit floats for speed; checkpoints are
    /// always stored in 64-bit.
    pub float32: bool,
    pub network: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 90,
            examples_per_epoch: 100,
            batch_size: 4,
            lr: 1e-3,
            theta_max: crate::sim::DEFAULT_THETA_MAX,
            r_grow: crate::sim::DEFAULT_R_GROW,
            max_growth_steps: 20,
            seed: 0,
            checkpoint_every: 0,
            float32: false,
            network: NetworkConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.examples_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs, examples_per_epoch and batch_size must be positive".into(),
            ));
        }
        if self.lr <= 0.0 {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(0.0..=0.5).contains(&self.theta_max) {
            return Err(Error::InvalidArgument("theta_max must be in [0, 0.5]".into()));
        }
        if self.r_grow <= 0.0 {
            return Err(Error::InvalidArgument("growth radius must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub final_loss: f64,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

/// Trains a region network on growth examples simulated from `scenes`.
///
/// Per epoch the mistake probability is annealed down from `theta_max` and
/// every example is regenerated at the current noise level. With `resume`
/// the model parameters and epoch counter continue from a saved checkpoint
/// (optimizer moments restart).
pub fn train(
    config: &TrainConfig,
    scenes: &[FeatureCloud],
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainReport> {
    if config.float32 {
        train_typed::<f32>(config, scenes, out_dir, resume)
    } else {
        train_typed::<f64>(config, scenes, out_dir, resume)
    }
}

fn to_tensor<T: Scalar>(t: &Tensor2<f64>) -> Tensor2<T> {
    Tensor2::from_vec(
        t.rows,
        t.cols,
        t.data.iter().map(|&v| T::from_f64(v)).collect(),
    )
}

/// Per-row ground truth for a resampled set, looked up through the back-map.
fn row_truth(backmap: &[u32], ids: &[u32], truth: &[u8]) -> Vec<u8> {
    backmap
        .iter()
        .map(|id| truth[ids.binary_search(id).expect("backmap id missing")])
        .collect()
}

fn train_typed<T: Scalar>(
    config: &TrainConfig,
    scenes: &[FeatureCloud],
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainReport> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("no training scenes".into()));
    }
    for scene in scenes {
        if scene.labels().is_none() {
            return Err(Error::InvalidArgument("training scenes must be labeled".into()));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let indexes: Vec<SpatialIndex> = scenes
        .iter()
        .map(|s| SpatialIndex::build(&s.raw.positions))
        .collect();

    let (mut model, start_epoch) = match resume {
        Some(path) => {
            let (model, epoch) = load_checkpoint::<T>(path, &config.network)?;
            (model, epoch as usize)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            (RegionNetwork::<T>::new(config.network.clone(), &mut rng), 0)
        }
    };
    let mut adam: Adam<T> = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });

    let log_path = out_dir.join("train_log.csv");
    let mut log = if start_epoch > 0 && log_path.exists() {
        std::fs::OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?
    } else {
        let mut f = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        writeln!(f, "epoch,loss,add_acc,remove_acc,theta").map_err(|e| Error::io(&log_path, e))?;
        f
    };

    let s = config.network.set_size;
    let mut batch_id: u64 = 0;
    let mut pending = 0usize;
    let mut final_loss = f64::NAN;
    model.zero_grads();
    for epoch in start_epoch..config.epochs {
        let theta = anneal_theta(epoch, config.epochs, config.theta_max);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        let (mut add_ok, mut add_total) = (0usize, 0usize);
        let (mut rem_ok, mut rem_total) = (0usize, 0usize);
        for i in 0..config.examples_per_epoch {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(1 + (epoch * config.examples_per_epoch + i) as u64);
            let scene_idx = i % scenes.len();
            let scene = &scenes[scene_idx];
            let seed_pt = rng.gen_range(0..scene.len()) as u32;
            let step = rng.gen_range(0..=config.max_growth_steps);
            let ex = simulate_growth_example(
                scene,
                &indexes[scene_idx],
                seed_pt,
                step,
                theta,
                config.r_grow,
                &mut rng,
            );
            if ex.neighbor_ids.is_empty() {
                continue;
            }
            let (mut in_feats, in_map) = resample_set(&ex.inlier_ids, scene, s, &mut rng);
            let (mut nb_feats, nb_map) = resample_set(&ex.neighbor_ids, scene, s, &mut rng);
            let aug = Augmentation::sample(&mut rng);
            aug.apply(&mut in_feats);
            aug.apply(&mut nb_feats);
            let add_truth = row_truth(&nb_map, &ex.neighbor_ids, &ex.add_truth);
            let rem_truth = row_truth(&in_map, &ex.inlier_ids, &ex.remove_truth);

            let (add_pred, rem_pred) =
                model.forward(&to_tensor::<T>(&in_feats), &to_tensor::<T>(&nb_feats));
            let r = bce_dual_loss(&add_pred, &add_truth, &rem_pred, &rem_truth);
            let loss = Scalar::to_f64(r.loss);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    batch: batch_id as usize,
                });
            }
            model.backward(&r.grad_add, &r.grad_remove);
            loss_sum += loss;
            loss_count += 1;
            for (p, &t) in add_pred.iter().zip(&add_truth) {
                add_ok += usize::from((Scalar::to_f64(*p) > 0.5) == (t == 1));
                add_total += 1;
            }
            for (p, &t) in rem_pred.iter().zip(&rem_truth) {
                rem_ok += usize::from((Scalar::to_f64(*p) > 0.5) == (t == 1));
                rem_total += 1;
            }

            pending += 1;
            if pending == config.batch_size {
                adam.step(&mut model);
                model.zero_grads();
                pending = 0;
                batch_id += 1;
            }
        }
        if pending > 0 {
            adam.step(&mut model);
            model.zero_grads();
            pending = 0;
            batch_id += 1;
        }
        let loss_mean = loss_sum / loss_count.max(1) as f64;
        final_loss = loss_mean;
        writeln!(
            log,
            "{},{},{},{},{}",
            epoch,
            loss_mean,
            add_ok as f64 / add_total.max(1) as f64,
            rem_ok as f64 / rem_total.max(1) as f64,
            theta
        )
        .map_err(|e| Error::io(&log_path, e))?;
        if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
            let path = out_dir.join(format!("ckpt-{:04}.bin", epoch + 1));
            save_checkpoint(&mut model, (epoch + 1) as u32, &path)?;
        }
    }

    let checkpoint_path = out_dir.join("model.ckpt");
    save_checkpoint(&mut model, config.epochs as u32, &checkpoint_path)?;
    Ok(TrainReport {
        epochs_run: config.epochs - start_epoch,
        final_loss,
        checkpoint_path,
        log_path,
    })
}

/// Writes a versioned binary checkpoint: magic, format version, epoch
/// counter, architecture fingerprint, then every parameter tensor by name
/// in 64-bit little-endian.
pub fn save_checkpoint<T: Scalar>(
    model: &mut RegionNetwork<T>,
    epoch: u32,
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);

    w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION).map_err(io_err)?;
    w.write_u32::<LittleEndian>(epoch).map_err(io_err)?;
    let fingerprint = model.config.fingerprint();
    w.write_u32::<LittleEndian>(fingerprint.len() as u32).map_err(io_err)?;
    w.write_all(fingerprint.as_bytes()).map_err(io_err)?;

    let mut entries: Vec<(String, Vec<f64>, usize, usize)> = Vec::new();
    model.visit_params(&mut |name, p, _| {
        entries.push((
            name.to_string(),
            p.data.iter().map(|&v| Scalar::to_f64(v)).collect(),
            p.rows,
            p.cols,
        ));
    });
    w.write_u32::<LittleEndian>(entries.len() as u32).map_err(io_err)?;
    for (name, data, rows, cols) in entries {
        w.write_u32::<LittleEndian>(name.len() as u32).map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
        w.write_u32::<LittleEndian>(rows as u32).map_err(io_err)?;
        w.write_u32::<LittleEndian>(cols as u32).map_err(io_err)?;
        for v in data {
            w.write_f64::<LittleEndian>(v).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Loads a checkpoint into a freshly built network with `config`; the
/// stored fingerprint must match the config exactly.
pub fn load_checkpoint<T: Scalar>(
    path: &Path,
    config: &NetworkConfig,
) -> Result<(RegionNetwork<T>, u32)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let epoch = r.read_u32::<LittleEndian>().map_err(io_err)?;
    let fp_len = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let mut fp = vec![0u8; fp_len];
    r.read_exact(&mut fp).map_err(io_err)?;
    let found = String::from_utf8(fp).map_err(|_| Error::Checkpoint("bad fingerprint".into()))?;
    let expected = config.fingerprint();
    if found != expected {
        return Err(Error::FingerprintMismatch { expected, found });
    }

    let count = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
    let mut entries: Vec<(String, usize, usize, Vec<f64>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io_err)?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Checkpoint("bad tensor name".into()))?;
        let rows = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
        let cols = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
        let mut data = vec![0.0f64; rows * cols];
        r.read_f64_into::<LittleEndian>(&mut data).map_err(io_err)?;
        entries.push((name, rows, cols, data));
    }

    let mut model = RegionNetwork::<T>::new(config.clone(), &mut ChaCha8Rng::seed_from_u64(0));
    let mut idx = 0;
    let mut mismatch: Option<String> = None;
    model.visit_params(&mut |name, p, _| {
        if mismatch.is_some() {
            return;
        }
        let Some((stored_name, rows, cols, data)) = entries.get(idx) else {
            mismatch = Some("checkpoint has too few tensors".into());
            return;
        };
        if stored_name != name || *rows != p.rows || *cols != p.cols {
            mismatch = Some(format!(
                "tensor {idx}: expected {name} {}x{}, found {stored_name} {rows}x{cols}",
                p.rows, p.cols
            ));
            return;
        }
        for (dst, &src) in p.data.iter_mut().zip(data) {
            *dst = T::from_f64(src);
        }
        idx += 1;
    });
    if let Some(msg) = mismatch {
        return Err(Error::Checkpoint(msg));
    }
    if idx != entries.len() {
        return Err(Error::Checkpoint("checkpoint has extra tensors".into()));
    }
    Ok((model, epoch))
}

/// Confusion counts at threshold one half (ties count as negative).
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    fn record(&mut self, predicted: bool, truth: bool) {
        match (predicted, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.tp + self.fp + self.tn + self.fn_;
        if total == 0 {
            1.0
        } else {
            (self.tp + self.tn) as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MaskEval {
    pub add: Confusion,
    pub remove: Confusion,
}

/// Scores a model's masks against ground truth on fixed examples.
///
/// Each example is resampled once per call with a deterministic rng; mask
/// entries are averaged over duplicate rows before thresholding, so each
/// distinct point counts once.
pub fn eval_masks(
    model: &mut dyn MaskModel,
    cloud: &FeatureCloud,
    examples: &[TrainingExample],
    rng_seed: u64,
) -> MaskEval {
    let s = model.set_size();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut add = Confusion::default();
    let mut remove = Confusion::default();
    for ex in examples {
        if ex.neighbor_ids.is_empty() {
            continue;
        }
        model.begin_region(ex.seed_id);
        let (in_feats, in_map) = resample_set(&ex.inlier_ids, cloud, s, &mut rng);
        let (nb_feats, nb_map) = resample_set(&ex.neighbor_ids, cloud, s, &mut rng);
        let (add_mask, rem_mask) = model.predict(&in_feats, &in_map, &nb_feats, &nb_map);
        for (id, p) in aggregate_masks(&nb_map, &add_mask) {
            let pos = ex.neighbor_ids.binary_search(&id).unwrap();
            add.record(p > 0.5, ex.add_truth[pos] == 1);
        }
        for (id, p) in aggregate_masks(&in_map, &rem_mask) {
            let pos = ex.inlier_ids.binary_search(&id).unwrap();
            remove.record(p > 0.5, ex.remove_truth[pos] == 1);
        }
    }
    MaskEval { add, remove }
}
