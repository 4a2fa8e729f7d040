//! Stateful-stream training: Adam, global norm clipping, dropout, and a
//! resumable epoch loop.

mod adam;
mod dropout;

use std::marker::PhantomData;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{clip_global_norm, global_norm, AdamState, BETA1, BETA2, EPSILON};
pub use dropout::{apply_dropout, Dropout};

use crate::corpus::{Sentence, StreamBatch, SENT_START};
use crate::error::{Error, Result};
use crate::model::{LanguageModel, LmState};
use crate::numkernel::{Graph, Real, Var};

/// Stream selector of the dropout generator, kept apart from shuffling
/// (epoch-indexed streams) and initialization.
pub const DROPOUT_STREAM: u64 = 1 << 33;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub dropout: f64,
    pub batch_size: usize,
    /// Time steps per gradient update.
    pub bptt_window: usize,
    pub epochs: u64,
    pub seed: u64,
    pub precision: Precision,
    pub deterministic: bool,
    /// Log line cadence in updates.
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            clip_norm: 2.0,
            dropout: 0.5,
            batch_size: 150,
            bptt_window: 1,
            epochs: 10,
            seed: 1,
            precision: Precision::F32,
            deterministic: false,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip norm must be positive, got {}", self.clip_norm));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.bptt_window == 0 {
            return bad("bptt window must be positive".into());
        }
        if self.log_every == 0 {
            return bad("log interval must be positive".into());
        }
        Ok(())
    }
}

/// Where training stands inside the epoch sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Progress<T> {
    pub epoch: u64,
    /// Next stream position within the epoch.
    pub position: usize,
    /// Updates applied so far, over all epochs.
    pub step: u64,
    /// Carried recurrent state; `None` at an epoch boundary.
    pub state: Option<LmState<T>>,
}

impl<T> Default for Progress<T> {
    fn default() -> Self {
        Progress {
            epoch: 0,
            position: 0,
            step: 0,
            state: None,
        }
    }
}

/// Result of one update window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: u64,
    /// Global update count after this step.
    pub step: u64,
    /// Mean loss per predicted unit.
    pub loss: f64,
    pub nll_sum: f64,
    pub units: usize,
    /// Non-marker target words.
    pub words: usize,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
    pub words_per_sec: f64,
}

impl StepRecord {
    /// `epoch step loss words_per_sec`
    pub fn log_line(&self) -> String {
        format!("{} {} {:.6} {:.1}", self.epoch, self.step, self.loss, self.words_per_sec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: u64,
    /// Mean loss per predicted unit over the epoch.
    pub mean_loss: f64,
    pub nll_sum: f64,
    pub units: usize,
    pub words: usize,
    pub updates: u64,
    pub seconds: f64,
    pub words_per_sec: f64,
    /// False if the epoch stopped early at an update budget.
    pub complete: bool,
}

impl EpochMetrics {
    /// Training perplexity per predicted unit (with dropout active).
    pub fn unit_perplexity(&self) -> f64 {
        (self.nll_sum / self.units.max(1) as f64).exp()
    }
}

/// Owns a model and its optimizer state and drives it over a corpus.
pub struct Trainer<T: Real, M: LanguageModel<T>> {
    pub model: M,
    pub cfg: TrainConfig,
    pub adam: AdamState<T>,
    pub progress: Progress<T>,
    drop_rng: ChaCha8Rng,
    _real: PhantomData<T>,
}

impl<T: Real, M: LanguageModel<T>> Trainer<T, M> {
    pub fn new(model: M, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamState::new(model.params());
        let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        drop_rng.set_stream(DROPOUT_STREAM);
        Ok(Trainer {
            model,
            cfg,
            adam,
            progress: Progress::default(),
            drop_rng,
            _real: PhantomData,
        })
    }

    /// Rebuilds a trainer from saved pieces.
    pub fn restore(model: M, cfg: TrainConfig, adam: AdamState<T>, progress: Progress<T>, rng_word_pos: u128) -> Result<Self> {
        let mut t = Self::new(model, cfg)?;
        if adam.m.len() != t.model.params().len() {
            return Err(Error::Checkpoint("optimizer state does not match the parameter set".into()));
        }
        t.adam = adam;
        t.progress = progress;
        t.drop_rng.set_word_pos(rng_word_pos);
        Ok(t)
    }

    /// Position of the dropout generator, for checkpoints.
    pub fn rng_word_pos(&self) -> u128 {
        self.drop_rng.get_word_pos()
    }

    pub fn streams(&self, sentences: &[Sentence]) -> Result<StreamBatch> {
        StreamBatch::new(sentences, self.cfg.batch_size, self.cfg.seed, self.progress.epoch)
    }

    /// Runs one update window starting at the current position. Returns
    /// `None` once the epoch's streams are exhausted.
    pub fn train_step(&mut self, streams: &StreamBatch) -> Result<Option<StepRecord>> {
        let start = self.progress.position;
        let end = (start + self.cfg.bptt_window).min(streams.steps());
        if start >= end {
            return Ok(None);
        }
        let state = match self.progress.state.take() {
            Some(s) => s,
            None => self.model.zero_state(streams.batch_size()),
        };

        let mut g = Graph::with_params(self.model.params());
        let mut vars = state.to_graph(&mut g);
        let mut dropout = if self.cfg.dropout > 0.0 {
            Some(Dropout::new(self.cfg.dropout, &mut self.drop_rng)?)
        } else {
            None
        };
        let mut total: Option<Var> = None;
        let (mut units, mut words) = (0, 0);
        for t in start..end {
            let step = streams.step_at(t);
            let inputs: Vec<Option<&str>> = step.pairs.iter().map(|p| p.map(|(i, _)| i)).collect();
            // The sentence opener always follows a sentence end; it is fed but never predicted.
            let targets: Vec<Option<&str>> = step
                .pairs
                .iter()
                .map(|p| p.and_then(|(_, w)| (w != SENT_START).then_some(w)))
                .collect();
            let (next, ctx) = self.model.advance(&mut g, vars, &inputs, dropout.as_mut())?;
            vars = next;
            let (nll, n) = self.model.target_nll(&mut g, ctx, &targets, dropout.as_mut())?;
            units += n;
            words += step.target_words();
            let s = g.sum(nll);
            total = Some(match total {
                Some(acc) => g.add(acc, s)?,
                None => s,
            });
        }
        dropout.take();

        let mut record = StepRecord {
            epoch: self.progress.epoch,
            step: self.progress.step,
            loss: 0.0,
            nll_sum: 0.0,
            units,
            words,
            grad_norm: 0.0,
            words_per_sec: 0.0,
        };
        let mut grads = None;
        if let (Some(total), true) = (total, units > 0) {
            let loss = g.scale(total, 1.0 / units as f64);
            let value = g.value(loss).item().as_f64();
            if !value.is_finite() {
                let at = g.first_non_finite().unwrap_or_else(|| "loss".into());
                return Err(Error::NonFinite(format!(
                    "{at} (epoch {}, step {})",
                    self.progress.epoch, self.progress.step
                )));
            }
            g.backward(loss)?;
            let gr = g.take_param_grads()?;
            if let Some((i, _)) = gr.iter().enumerate().find(|(_, t)| !t.is_finite()) {
                let name = self.model.params().name(crate::numkernel::ParamId(i)).to_owned();
                return Err(Error::NonFinite(format!(
                    "gradient of {name} (epoch {}, step {})",
                    self.progress.epoch, self.progress.step
                )));
            }
            record.loss = value;
            record.nll_sum = value * units as f64;
            grads = Some(gr);
        }
        let carried = LmState::detach(&g, vars);
        drop(g);

        if let Some(mut gr) = grads {
            record.grad_norm = clip_global_norm(&mut gr, self.cfg.clip_norm);
            self.adam.update(self.model.params_mut(), &gr, self.cfg.learning_rate)?;
            self.progress.step += 1;
            record.step = self.progress.step;
        }
        self.progress.position = end;
        self.progress.state = Some(carried);
        Ok(Some(record))
    }

    /// Trains until the current epoch ends or `budget` updates have been
    /// applied. Calls `on_step` after every window.
    pub fn run_epoch(
        &mut self,
        sentences: &[Sentence],
        budget: Option<u64>,
        on_step: &mut dyn FnMut(&StepRecord),
    ) -> Result<EpochMetrics> {
        let streams = self.streams(sentences)?;
        let started = Instant::now();
        let mut m = EpochMetrics {
            epoch: self.progress.epoch,
            mean_loss: 0.0,
            nll_sum: 0.0,
            units: 0,
            words: 0,
            updates: 0,
            seconds: 0.0,
            words_per_sec: 0.0,
            complete: false,
        };
        loop {
            if budget.is_some_and(|b| m.updates >= b) {
                break;
            }
            let Some(mut rec) = self.train_step(&streams)? else {
                m.complete = true;
                break;
            };
            m.nll_sum += rec.nll_sum;
            m.units += rec.units;
            m.words += rec.words;
            if rec.units > 0 {
                m.updates += 1;
            }
            let secs = started.elapsed().as_secs_f64();
            rec.words_per_sec = m.words as f64 / secs.max(1e-9);
            on_step(&rec);
        }
        m.seconds = started.elapsed().as_secs_f64();
        m.words_per_sec = m.words as f64 / m.seconds.max(1e-9);
        m.mean_loss = m.nll_sum / m.units.max(1) as f64;
        if m.complete {
            self.progress.epoch += 1;
            self.progress.position = 0;
            self.progress.state = None;
        }
        Ok(m)
    }

    /// Runs epochs until `cfg.epochs` is reached or `max_steps` total
    /// updates have been applied. Returns the metrics of every epoch touched.
    pub fn train(
        &mut self,
        sentences: &[Sentence],
        max_steps: Option<u64>,
        on_step: &mut dyn FnMut(&StepRecord),
        on_epoch: &mut dyn FnMut(&EpochMetrics),
    ) -> Result<Vec<EpochMetrics>> {
        let mut out = Vec::new();
        while self.progress.epoch < self.cfg.epochs {
            let budget = match max_steps {
                Some(limit) if self.progress.step >= limit => break,
                Some(limit) => Some(limit - self.progress.step),
                None => None,
            };
            let m = self.run_epoch(sentences, budget, on_step)?;
            on_epoch(&m);
            out.push(m);
            if !m.complete {
                break;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_sentences, CharVocab};
    use crate::model::{C2w2cModel, ModelDims};

    fn toy() -> (Vec<Sentence>, C2w2cModel<f64>) {
        let s = parse_sentences("the cat sat\na dog ran far\n", false);
        let vocab = CharVocab::build(&s).unwrap();
        let mut dims = ModelDims::uniform(6);
        dims.max_word_len = 8;
        (s.clone(), C2w2cModel::new(dims, vocab, 5).unwrap())
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 1,
            learning_rate: 1e-2,
            dropout: 0.0,
            epochs: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        let bad = TrainConfig {
            dropout: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn epoch_counts_every_word() {
        let (s, model) = toy();
        let mut t = Trainer::new(model, cfg()).unwrap();
        let m = t.run_epoch(&s, None, &mut |_| {}).unwrap();
        assert!(m.complete);
        assert_eq!(m.words, 7);
        assert_eq!(t.progress.epoch, 1);
        assert!(t.progress.state.is_none());
    }

    #[test]
    fn single_sentence_loss_decreases() {
        let s = parse_sentences("hello there world\n", false);
        let vocab = CharVocab::build(&s).unwrap();
        let model = C2w2cModel::<f64>::new(ModelDims::uniform(6), vocab, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            ..cfg()
        };
        let mut t = Trainer::new(model, cfg).unwrap();
        let epochs = t.train(&s, None, &mut |_| {}, &mut |_| {}).unwrap();
        let losses: Vec<f64> = epochs.iter().map(|m| m.mean_loss).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn budget_interrupts_mid_epoch() {
        let (s, model) = toy();
        let mut t = Trainer::new(model, cfg()).unwrap();
        let ms = t.train(&s, Some(2), &mut |_| {}, &mut |_| {}).unwrap();
        assert_eq!(ms.len(), 1);
        assert!(!ms[0].complete);
        assert_eq!(t.progress.step, 2);
        assert!(t.progress.state.is_some());
    }
}
