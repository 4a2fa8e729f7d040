//! Command-line front end: `build-vocab`, `train`, `params`, `score`,
//! `eval` and `sample`.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{write_manifest, Paths, RunConfig, RunMeta, SampleSettings};

use crate::checkpoint::{Checkpoint, FORMAT_VERSION};
use crate::corpus::{load_sentences, CharVocab, CorpusStats, Sentence, WordVocab};
use crate::error::{Error, Result};
use crate::inference::{
    corpus_perplexity, format_samples, sample_beam, sample_stochastic, score_sentences, SampleConfig, ScoreOptions,
};
use crate::model::{count_c2w2c, count_wordlstm, AnyModel, C2w2cModel, LanguageModel, ModelKind, WordLstmModel};
use crate::numkernel::kernels::set_parallel;
use crate::numkernel::Real;
use crate::training::{EpochMetrics, Precision, StepRecord};

#[derive(Parser, Debug)]
#[command(name = "c2w2c", version, about = "Character-to-word-to-character language model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a vocabulary file and print corpus statistics.
    BuildVocab(BuildVocabArgs),
    /// Train a model, writing a checkpoint and a run manifest.
    Train(TrainArgs),
    /// Print parameter counts per sub-model.
    Params(ParamsArgs),
    /// Score sentences, one per line.
    Score(ScoreArgs),
    /// Word perplexity of a test file.
    Eval(EvalArgs),
    /// Generate text from seed words.
    Sample(SampleArgs),
}

/// Settings shared by every command; unset flags fall back to the config
/// file, then to the defaults.
#[derive(Args, Debug, Default, Clone)]
pub struct Common {
    /// TOML file with settings (a run manifest works too).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Lowercase all input text.
    #[arg(long)]
    pub lowercase: bool,
    #[arg(long)]
    pub max_word_len: Option<usize>,
    #[arg(long)]
    pub d_c: Option<usize>,
    #[arg(long)]
    pub d_wi: Option<usize>,
    #[arg(long)]
    pub d_w: Option<usize>,
    #[arg(long)]
    pub d_l: Option<usize>,
    #[arg(long)]
    pub decoder_hidden: Option<usize>,
    #[arg(long)]
    pub bottleneck: Option<usize>,
    /// Single-threaded kernels.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Args, Debug)]
pub struct BuildVocabArgs {
    #[command(flatten)]
    pub common: Common,
    /// Keep at most this many words (baseline vocabulary only).
    #[arg(long)]
    pub max_vocab: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Held-out file for per-epoch validation perplexity.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Training log (`epoch step loss words_per_sec`); standard error if unset.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub bptt_window: Option<usize>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub log_every: Option<u64>,
    #[arg(long)]
    pub max_vocab: Option<usize>,
    /// Stop after this many updates in total (the checkpoint stays resumable).
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Continue from the checkpoint at `--checkpoint`.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 100)]
    pub char_vocab_size: usize,
    #[arg(long, default_value_t = 88_000)]
    pub word_vocab_size: usize,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub common: Common,
    /// Sentences to score, one per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Also score the sentence end marker.
    #[arg(long)]
    pub include_end: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Greedy,
    Beam,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    /// Seed words, space separated.
    #[arg(long, default_value = "")]
    pub context: String,
    #[arg(long, value_enum, default_value_t = Strategy::Greedy)]
    pub strategy: Strategy,
    #[arg(long)]
    pub word_k: Option<usize>,
    #[arg(long)]
    pub sentence_k: Option<usize>,
    #[arg(long)]
    pub max_words: Option<usize>,
    /// Rank inner-beam words by log-probability per character.
    #[arg(long)]
    pub length_norm: bool,
}

impl Common {
    /// Defaults, then `--config`, then the flags set here.
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        set(&mut c.model, self.model);
        c.lowercase |= self.lowercase;
        c.train.deterministic |= self.deterministic;
        for (slot, v) in [
            (&mut c.paths.corpus, &self.corpus),
            (&mut c.paths.vocab, &self.vocab),
            (&mut c.paths.checkpoint, &self.checkpoint),
        ] {
            if v.is_some() {
                slot.clone_from(v);
            }
        }
        let d = &mut c.dims;
        for (slot, v) in [
            (&mut d.max_word_len, self.max_word_len),
            (&mut d.d_c, self.d_c),
            (&mut d.d_wi, self.d_wi),
            (&mut d.d_w, self.d_w),
            (&mut d.d_l, self.d_l),
            (&mut d.decoder_hidden, self.decoder_hidden),
            (&mut d.bottleneck, self.bottleneck),
        ] {
            set(slot, v);
        }
        Ok(c)
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

/// Runs a parsed command line, writing results to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::BuildVocab(a) => build_vocab(a, out),
        Command::Train(a) => train(a, out),
        Command::Params(a) => params(a, out),
        Command::Score(a) => score(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Sample(a) => sample(a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<output>", e))
}

fn build_vocab(a: BuildVocabArgs, out: &mut dyn Write) -> Result<()> {
    let mut c = a.common.resolve()?;
    set(&mut c.max_vocab, a.max_vocab.map(Some));
    c.validate()?;
    let corpus = need(&c.paths.corpus, "corpus")?;
    let target = need(&c.paths.vocab, "vocab")?;
    let sentences = load_sentences(corpus, c.lowercase)?;
    let stats = CorpusStats::compute(&sentences)?;
    let text = match c.model {
        ModelKind::C2w2c => CharVocab::build(&sentences)?.to_file_string(),
        ModelKind::WordLstm => WordVocab::build(&sentences, c.max_vocab)?.to_file_string(),
    };
    fs::write(target, text).map_err(|e| Error::io(target, e))?;
    emit(out, &stats.to_string())
}

fn params(a: ParamsArgs, out: &mut dyn Write) -> Result<()> {
    let c = a.common.resolve()?;
    c.dims.validate()?;
    if a.char_vocab_size == 0 || a.word_vocab_size == 0 {
        return Err(Error::Config("vocabulary sizes must be positive".into()));
    }
    let c2 = count_c2w2c(&c.dims, a.char_vocab_size);
    let w = count_wordlstm(&c.dims, a.word_vocab_size);
    let text = format!(
        "model\tinput\tlm\toutput\ttotal\n\
         c2w2c\t{}\t{}\t{}\t{}\n\
         wordlstm\t{}\t{}\t{}\t{}\n",
        c2.input,
        c2.lm,
        c2.output,
        c2.total(),
        w.input,
        w.lm,
        w.output,
        w.total()
    );
    emit(out, &text)
}

fn load_vocab_model<T: Real>(c: &RunConfig, sentences: &[Sentence]) -> Result<AnyModel<T>> {
    let dims = c.dims;
    let seed = c.train.seed;
    Ok(match c.model {
        ModelKind::C2w2c => {
            let vocab = match &c.paths.vocab {
                Some(p) => CharVocab::from_file_string(&read(p)?)?,
                None => CharVocab::build(sentences)?,
            };
            AnyModel::C2w2c(C2w2cModel::new(dims, vocab, seed)?)
        }
        ModelKind::WordLstm => {
            let words = match &c.paths.vocab {
                Some(p) => WordVocab::from_file_string(&read(p)?)?,
                None => WordVocab::build(sentences, c.max_vocab)?,
            };
            AnyModel::WordLstm(WordLstmModel::new(dims, words, seed)?)
        }
    })
}

fn read(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| Error::io(p, e))
}

fn vocab_hash_of_file(kind: ModelKind, p: &Path) -> Result<String> {
    let text = read(p)?;
    Ok(match kind {
        ModelKind::C2w2c => CharVocab::from_file_string(&text)?.hash(),
        ModelKind::WordLstm => WordVocab::from_file_string(&text)?.hash(),
    })
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut c = a.common.resolve()?;
    let t = &mut c.train;
    set(&mut t.learning_rate, a.lr);
    set(&mut t.clip_norm, a.clip_norm);
    set(&mut t.dropout, a.dropout);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.bptt_window, a.bptt_window);
    set(&mut t.epochs, a.epochs);
    set(&mut t.seed, a.seed);
    set(&mut t.precision, a.precision);
    set(&mut t.log_every, a.log_every);
    set(&mut c.max_vocab, a.max_vocab.map(Some));
    if a.valid.is_some() {
        c.paths.valid.clone_from(&a.valid);
    }
    if a.log.is_some() {
        c.paths.log.clone_from(&a.log);
    }
    c.validate()?;
    need(&c.paths.corpus, "corpus")?;
    need(&c.paths.checkpoint, "checkpoint")?;
    set_parallel(!c.train.deterministic);

    let precision = if a.resume {
        checkpoint_precision(need(&c.paths.checkpoint, "checkpoint")?)?
    } else {
        c.train.precision
    };
    match precision {
        Precision::F32 => train_as::<f32>(&mut c, &a, out),
        Precision::F64 => train_as::<f64>(&mut c, &a, out),
    }
}

fn checkpoint_precision(path: &Path) -> Result<Precision> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let head = String::from_utf8_lossy(&bytes[..bytes.len().min(256)]).into_owned();
    match head.lines().nth(3) {
        Some("precision f32") => Ok(Precision::F32),
        Some("precision f64") => Ok(Precision::F64),
        _ => Err(Error::Checkpoint(format!("{}: not a c2w2c checkpoint", path.display()))),
    }
}

fn train_as<T: Real>(c: &mut RunConfig, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let corpus = need(&c.paths.corpus, "corpus")?.to_owned();
    let ck_path = need(&c.paths.checkpoint, "checkpoint")?.to_owned();
    let sentences = load_sentences(&corpus, c.lowercase)?;
    let valid = match &c.paths.valid {
        Some(p) => Some(load_sentences(p, c.lowercase)?),
        None => None,
    };

    let mut trainer = if a.resume {
        let ck = match &c.paths.vocab {
            Some(v) => Checkpoint::<T>::load_expecting(&ck_path, &vocab_hash_of_file(c.model, v)?)?,
            None => Checkpoint::<T>::load(&ck_path)?,
        };
        let mut cfg = ck.config.clone();
        set(&mut cfg.epochs, a.epochs);
        c.train = cfg.clone();
        c.model = ck.model.kind();
        c.dims = *ck.model.dims();
        let mut t = ck.into_trainer()?;
        t.cfg = cfg;
        t
    } else {
        let model = load_vocab_model::<T>(c, &sentences)?;
        crate::training::Trainer::new(model, c.train.clone())?
    };

    let meta = RunMeta {
        command: "train".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        checkpoint_format: FORMAT_VERSION,
        seed: c.train.seed,
        vocab_hash: trainer.model.vocab_hash(),
    };
    let mut manifest_path = ck_path.clone().into_os_string();
    manifest_path.push(".run.toml");
    write_manifest(Path::new(&manifest_path), c, &meta)?;
    eprintln!("{}", c.to_toml()?);

    let mut log: Box<dyn Write> = match &c.paths.log {
        Some(p) => {
            let f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Error::io(p, e))?;
            Box::new(f)
        }
        None => Box::new(std::io::stderr()),
    };
    let every = c.train.log_every;
    let mut log_err = None;
    let mut on_step = |r: &StepRecord| {
        if r.units > 0 && r.step % every == 0 {
            if let Err(e) = writeln!(log, "{}", r.log_line()) {
                log_err.get_or_insert(e);
            }
        }
    };
    while trainer.progress.epoch < trainer.cfg.epochs {
        let budget = match a.max_steps {
            Some(limit) if trainer.progress.step >= limit => break,
            Some(limit) => Some(limit - trainer.progress.step),
            None => None,
        };
        let m = trainer.run_epoch(&sentences, budget, &mut on_step)?;
        Checkpoint::from_trainer(&trainer).save(&ck_path)?;
        if !m.complete {
            break;
        }
        emit(out, &format!("{}\n", epoch_line(&m, &trainer.model, valid.as_deref())?))?;
    }
    if let Some(e) = log_err {
        return Err(Error::io("<log>", e));
    }
    Ok(())
}

fn epoch_line<T: Real>(m: &EpochMetrics, model: &AnyModel<T>, valid: Option<&[Sentence]>) -> Result<String> {
    let mut line = format!(
        "epoch {}\tloss {:.6}\tunit_ppl {:.4}\twords/s {:.1}",
        m.epoch,
        m.mean_loss,
        m.unit_perplexity(),
        m.words_per_sec
    );
    if let Some(v) = valid {
        line.push_str(&format!("\tvalid_ppl {:.4}", corpus_perplexity(model, v)?.perplexity));
    }
    Ok(line)
}

fn load_any(c: &RunConfig) -> Result<AnyModel<f64>> {
    let path = need(&c.paths.checkpoint, "checkpoint")?;
    let ck = match &c.paths.vocab {
        Some(v) => {
            let kind = Checkpoint::<f64>::load(path)?.model.kind();
            Checkpoint::<f64>::load_expecting(path, &vocab_hash_of_file(kind, v)?)?
        }
        None => Checkpoint::<f64>::load(path)?,
    };
    Ok(ck.model)
}

fn score(a: ScoreArgs, out: &mut dyn Write) -> Result<()> {
    let c = a.common.resolve()?;
    set_parallel(!c.train.deterministic);
    let model = load_any(&c)?;
    let sentences = load_sentences(&a.input, c.lowercase)?;
    let opts = ScoreOptions {
        include_end: a.include_end,
    };
    let reports = score_sentences(&model, &sentences, opts)?;
    let mut text = String::new();
    for r in reports {
        text.push_str(&r.to_string());
        text.push('\n');
    }
    emit(out, &text)
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let c = a.common.resolve()?;
    set_parallel(!c.train.deterministic);
    let model = load_any(&c)?;
    let sentences = load_sentences(&a.input, c.lowercase)?;
    if sentences.is_empty() {
        return Err(Error::Corpus(format!("{}: no sentences to evaluate", a.input.display())));
    }
    let r = corpus_perplexity(&model, &sentences)?;
    emit(
        out,
        &format!(
            "perplexity\t{:.6}\nunit_perplexity\t{:.6}\nwords\t{}\nunits\t{}\nnll\t{:.6}\n",
            r.perplexity, r.unit_perplexity, r.words, r.units, r.nll_sum
        ),
    )
}

fn sample(a: SampleArgs, out: &mut dyn Write) -> Result<()> {
    let mut c = a.common.resolve()?;
    set(&mut c.sample.word_k, a.word_k);
    set(&mut c.sample.sentence_k, a.sentence_k);
    set(&mut c.sample.max_words, a.max_words);
    c.sample.length_norm |= a.length_norm;
    c.validate()?;
    set_parallel(!c.train.deterministic);
    let model = load_any(&c)?;
    let AnyModel::C2w2c(model) = model else {
        return Err(Error::Config("sampling needs a c2w2c checkpoint".into()));
    };
    let context: Vec<String> = a.context.split_whitespace().map(|w| {
        if c.lowercase { w.to_lowercase() } else { w.to_owned() }
    }).collect();
    for w in &context {
        model.check_scorable(w)?;
    }
    let hyps = match a.strategy {
        Strategy::Greedy => vec![sample_stochastic(&model, &context, c.sample.max_words)?],
        Strategy::Beam => sample_beam(
            &model,
            &context,
            SampleConfig {
                word_k: c.sample.word_k,
                sentence_k: c.sample.sentence_k,
                max_words: c.sample.max_words,
                length_norm: c.sample.length_norm,
            },
        )?,
    };
    emit(out, &format_samples(&hyps))
}
