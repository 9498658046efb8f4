use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sequence::{SequenceSample, Traversal};
use crate::binio::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::tensor::{join, mse_loss, tanh, weights, AdamConfig, AdamState, Dense, HasParams, Lstm, LstmState, Param, Real, Tanh, Tensor};
use crate::xae::EarlyStopping;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub hidden: usize,
    pub embedding_dim: usize,
    /// Whether `(x/W, y/H)` is appended to every input. Required.
    pub positional: bool,
    pub traversal: Traversal,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            hidden: 512,
            embedding_dim: 256,
            positional: true,
            traversal: Traversal::Row,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.positional {
            return Err(Error::Config(
                "the generator needs positional inputs; positional = false is not supported".into(),
            ));
        }
        if self.hidden == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("hidden and embedding_dim must be positive".into()));
        }
        Ok(())
    }
}

/// One LSTM layer followed by a dense tanh head back to embedding space.
#[derive(Debug, Clone)]
pub struct Generator<T> {
    config: GeneratorConfig,
    lstm: Lstm<T>,
    head: Dense<T>,
    head_act: Tanh<T>,
}

impl<T: Real> Generator<T> {
    pub fn new(config: &GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.embedding_dim;
        Ok(Generator {
            config: config.clone(),
            lstm: Lstm::new(d + 2, config.hidden, &mut rng),
            head: Dense::new(config.hidden, d, &mut rng),
            head_act: Tanh::new(),
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// `[N, T, D+2]` inputs to `[N, T, D]` predictions, cached for backward.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, t, _] = *x.shape() else {
            return Err(Error::Geometry(format!("generator expects [N,T,D+2], got {:?}", x.shape())));
        };
        let h = self.lstm.forward_sequence(x)?;
        let h = h.reshape(&[n * t, self.config.hidden])?;
        let y = self.head_act.forward(&self.head.forward(&h)?);
        y.reshape(&[n, t, self.config.embedding_dim])
    }

    pub fn backward(&mut self, d_out: &Tensor<T>) -> Result<()> {
        let [n, t, d] = *d_out.shape() else {
            return Err(Error::Geometry(format!("generator gradient must be [N,T,D], got {:?}", d_out.shape())));
        };
        let g = self.head_act.backward(&d_out.clone().reshape(&[n * t, d])?)?;
        let dh = self.head.backward(&g)?;
        self.lstm.backward_sequence(&dh.reshape(&[n, t, self.config.hidden])?)?;
        Ok(())
    }

    /// Teacher-forced MSE and its gradient for one batch.
    pub fn train_step(&mut self, inputs: &Tensor<T>, targets: &Tensor<T>) -> Result<f64> {
        self.zero_grad();
        let y = self.forward(inputs)?;
        let loss = mse_loss(&y, targets)?;
        self.backward(&loss.grad)?;
        Ok(loss.value)
    }

    pub fn initial_state(&self, batch: usize) -> LstmState<T> {
        LstmState::zeros(batch, self.config.hidden)
    }

    /// One inference step: `[N, D+2]` input to the next state and `[N, D]`
    /// prediction.
    pub fn step(&self, x: &Tensor<T>, state: &LstmState<T>) -> Result<(LstmState<T>, Tensor<T>)> {
        let next = self.lstm.step(x, state)?;
        let y = tanh(&self.head.apply(&next.h)?);
        Ok((next, y))
    }

    /// Inference over whole sequences `[N, T, D+2]`, without caching.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, t, w] = *x.shape() else {
            return Err(Error::Geometry(format!("generator expects [N,T,D+2], got {:?}", x.shape())));
        };
        let d = self.config.embedding_dim;
        let mut state = self.initial_state(n);
        let mut out = vec![T::zero(); n * t * d];
        for s in 0..t {
            let mut xt = Vec::with_capacity(n * w);
            for b in 0..n {
                let off = (b * t + s) * w;
                xt.extend_from_slice(&x.data()[off..off + w]);
            }
            let (next, y) = self.step(&Tensor::from_vec(&[n, w], xt)?, &state)?;
            state = next;
            for b in 0..n {
                let off = (b * t + s) * d;
                out[off..off + d].copy_from_slice(&y.data()[b * d..(b + 1) * d]);
            }
        }
        Tensor::from_vec(&[n, t, d], out)
    }
}

impl<T: Real> HasParams<T> for Generator<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.lstm.visit(&join(prefix, "lstm"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.lstm.visit_mut(&join(prefix, "lstm"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenTrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    pub patience: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub restore_best: bool,
}

impl Default for GenTrainConfig {
    fn default() -> Self {
        GenTrainConfig {
            batch_size: 8,
            max_epochs: 100,
            validation_fraction: 0.2,
            patience: 10,
            adam: AdamConfig::default(),
            seed: 0,
            restore_best: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenTrainReport {
    /// Mean teacher-forced MSE per epoch over training windows.
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub train_windows: Vec<usize>,
    /// Empty when there were too few windows to hold any out; validation
    /// then reuses the training windows.
    pub validation_windows: Vec<usize>,
}

/// Stacks equal-length sequences into `[N, T, D+2]` inputs and `[N, T, D]`
/// targets.
pub fn stack(seqs: &[&SequenceSample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = seqs.first().ok_or_else(|| Error::Training("empty batch".into()))?;
    let (t, d) = (first.steps, first.dim);
    if seqs.iter().any(|s| s.steps != t || s.dim != d) {
        return Err(Error::Geometry("sequences in a batch must share length and width".into()));
    }
    let inputs = seqs.iter().flat_map(|s| s.inputs.iter().copied()).collect();
    let targets = seqs.iter().flat_map(|s| s.targets.iter().copied()).collect();
    Ok((
        Tensor::from_vec(&[seqs.len(), t, d + 2], inputs)?,
        Tensor::from_vec(&[seqs.len(), t, d], targets)?,
    ))
}

/// Batches of equal-length sequences; ids are grouped by length, shuffled
/// within each group, then chunked.
fn length_batches(seqs: &[SequenceSample], ids: &[usize], size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &i in ids {
        groups.entry(seqs[i].steps).or_default().push(i);
    }
    let mut out = Vec::new();
    for (_, mut g) in groups {
        g.shuffle(rng);
        out.extend(g.chunks(size.max(1)).map(<[usize]>::to_vec));
    }
    out.shuffle(rng);
    out
}

/// Mean squared error over a set of windows, weighted by element count.
pub fn sequence_mse(model: &Generator<f32>, seqs: &[SequenceSample], ids: &[usize]) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut sum, mut count) = (0.0, 0usize);
    for batch in length_batches(seqs, ids, 16, &mut rng) {
        let refs: Vec<&SequenceSample> = batch.iter().map(|&i| &seqs[i]).collect();
        let (x, y) = stack(&refs)?;
        let p = model.predict(&x)?;
        sum += mse_loss(&p, &y)?.value * y.len() as f64;
        count += y.len();
    }
    Ok(sum / count.max(1) as f64)
}

pub fn train_generator(
    sequences: &[SequenceSample],
    config: &GeneratorConfig,
    train_config: &GenTrainConfig,
) -> Result<(Generator<f32>, GenTrainReport)> {
    if sequences.is_empty() {
        return Err(Error::Training("no training sequences".into()));
    }
    if let Some(bad) = sequences.iter().find(|s| s.dim != config.embedding_dim) {
        return Err(Error::Geometry(format!(
            "sequence width {} does not match embedding_dim {}",
            bad.dim, config.embedding_dim
        )));
    }
    if train_config.patience == 0 || train_config.max_epochs == 0 || train_config.batch_size == 0 {
        return Err(Error::Config("patience, max_epochs and batch_size must be ≥ 1".into()));
    }
    let mut model = Generator::<f32>::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut ids: Vec<usize> = (0..sequences.len()).collect();
    ids.shuffle(&mut rng);
    let n_val = ((train_config.validation_fraction * ids.len() as f64).round() as usize).min(ids.len() - 1);
    let (val_ids, train_ids) = ids.split_at(n_val);
    let (mut val_ids, mut train_ids) = (val_ids.to_vec(), train_ids.to_vec());
    val_ids.sort_unstable();
    train_ids.sort_unstable();
    let eval_ids = if val_ids.is_empty() { train_ids.clone() } else { val_ids.clone() };

    let mut adam = AdamState::new(train_config.adam);
    let mut stopper = EarlyStopping::new(train_config.patience);
    let mut best = model.clone();
    let mut report = GenTrainReport {
        train: Vec::new(),
        validation: Vec::new(),
        stopped_epoch: 0,
        best_epoch: 0,
        train_windows: train_ids.clone(),
        validation_windows: val_ids,
    };
    for epoch in 1..=train_config.max_epochs {
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in length_batches(sequences, &train_ids, train_config.batch_size, &mut rng) {
            let refs: Vec<&SequenceSample> = batch.iter().map(|&i| &sequences[i]).collect();
            let (x, y) = stack(&refs)?;
            let loss = model.train_step(&x, &y)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite generator loss at epoch {epoch}")));
            }
            adam.update(&mut model)?;
            sum += loss * y.len() as f64;
            count += y.len();
        }
        let v = sequence_mse(&model, sequences, &eval_ids)?;
        debug!("generator epoch {epoch}: train {:.6} validation {v:.6}", sum / count as f64);
        report.train.push(sum / count as f64);
        report.validation.push(v);
        report.stopped_epoch = epoch;
        let (improved, stop) = stopper.observe(v);
        if improved && train_config.restore_best {
            best.clone_from(&model);
        }
        if stop {
            break;
        }
    }
    report.best_epoch = stopper.best_epoch();
    info!(
        "generator trained {} epochs, best validation mse {:.6} at epoch {}",
        report.stopped_epoch,
        report.validation[report.best_epoch - 1],
        report.best_epoch
    );
    Ok((if train_config.restore_best { best } else { model }, report))
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Writes a `TCWT` parameter file and a JSON sidecar with the config.
pub fn save_generator(path: &Path, model: &Generator<f32>) -> Result<()> {
    weights::save(path, &model.named_tensors())?;
    write_atomic(&sidecar_path(path), &serde_json::to_vec_pretty(model.config())?)
}

pub fn load_generator(path: &Path) -> Result<Generator<f32>> {
    let config: GeneratorConfig = serde_json::from_slice(&read_file(&sidecar_path(path))?)?;
    let mut model = Generator::new(&config)?;
    model.load_named(&weights::load(path)?)?;
    Ok(model)
}
