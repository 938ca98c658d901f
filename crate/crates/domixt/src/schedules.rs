//! Declarative training schedules: every system row of the results tables is
//! a named schedule (stage list + vocabulary policy), run with early
//! stopping, checkpointing, and stage chaining.

use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{
    build_vocabulary, filter_by_length, inject_tags, mix, oversample, CorpusError,
    ParallelCorpus, Side, VocabPolicy, Vocabulary,
};
use crate::eval::bleu4;
use crate::nncore::Real;
use crate::seq2seq::{
    greedy_decode, Checkpoint, CheckpointError, CheckpointTag, HyperParams, Seq2Seq,
    Seq2SeqError,
};

pub const SCHEDULE_NAMES: [&str; 9] = [
    "in-only",
    "out-only",
    "fine-tuning",
    "multi-domain",
    "multi-domain-no-tags",
    "multi-domain+ft",
    "mixed-ft",
    "mixed-ft-no-tags",
    "mixed-ft+ft",
];

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("unknown schedule: {0}")]
    UnknownSchedule(String),
    #[error("missing corpus: {0}")]
    MissingCorpus(String),
    #[error("non-finite loss in stage {stage} epoch {epoch}")]
    DivergenceDetected { stage: String, epoch: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] Seq2SeqError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("eval error: {0}")]
    Eval(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScheduleError + '_ {
    move |source| ScheduleError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Early-stopping rule on dev BLEU.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StopRule {
    /// Epochs without dev-BLEU improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            patience: 5,
            max_epochs: 30,
        }
    }
}

/// One training stage: a fully assembled train corpus and its dev set.
/// Stage 1 starts fresh; every later stage initializes from the prior
/// stage's best-dev-BLEU checkpoint.
#[derive(Debug, Clone)]
pub struct Stage {
    pub name: String,
    pub train: ParallelCorpus,
    pub dev: ParallelCorpus,
}

#[derive(Debug, Clone)]
pub struct Schedule {
    pub name: String,
    pub stages: Vec<Stage>,
    pub vocab_policy: VocabPolicy,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
}

impl Schedule {
    /// The configured hyperparameters with the vocabulary dimensions clamped
    /// to the actual vocabulary sizes (the config values are caps).
    pub fn hyperparams(&self, base: HyperParams) -> HyperParams {
        let mut hp = base;
        hp.src_vocab = self.src_vocab.len();
        hp.tgt_vocab = self.tgt_vocab.len();
        hp
    }
}

/// The corpora a schedule draws from, already tokenized (and already in
/// subword space when BPE is in use).
#[derive(Debug, Clone)]
pub struct CorpusRegistry {
    pub out_train: ParallelCorpus,
    pub in_train: ParallelCorpus,
    pub out_dev: ParallelCorpus,
    pub in_dev: ParallelCorpus,
}

/// Everything make_schedule needs beyond the corpora.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleConfig {
    pub hp: HyperParams,
    pub stop: StopRule,
    /// Seed for the one-off data assembly (oversampling remainder, mixture
    /// shuffle). Kept separate from the training seed so the mixture is a
    /// property of the schedule, not of the run.
    pub data_seed: u64,
}

fn tagged(c: &ParallelCorpus, tags: bool) -> Result<ParallelCorpus, ScheduleError> {
    Ok(if tags { inject_tags(c)? } else { c.clone() })
}

/// Build the stage list and vocabulary for a named schedule.
///
/// fine-tuning = [out, in] with the out-of-domain-only vocabulary;
/// multi-domain = [mixed] with the mixed vocabulary; mixed-ft = [out, mixed]
/// with the mixed vocabulary. "no-tags" variants drop tag injection
/// everywhere, "+ft" variants append an in-domain stage. Oversampling grows
/// the in-domain corpus to the out-of-domain size before mixing.
pub fn make_schedule(
    name: &str,
    reg: &CorpusRegistry,
    cfg: &ScheduleConfig,
) -> Result<Schedule, ScheduleError> {
    for (label, c) in [
        ("out-of-domain train", &reg.out_train),
        ("in-domain train", &reg.in_train),
        ("out-of-domain dev", &reg.out_dev),
        ("in-domain dev", &reg.in_dev),
    ] {
        if c.pairs.is_empty() {
            return Err(ScheduleError::MissingCorpus(label.to_string()));
        }
    }
    let out = filter_by_length(&reg.out_train, cfg.hp.max_len);
    let inn = filter_by_length(&reg.in_train, cfg.hp.max_len);
    let tags = !name.ends_with("-no-tags");

    let stage = |n: &str, train: ParallelCorpus, dev: ParallelCorpus| Stage {
        name: n.to_string(),
        train,
        dev,
    };
    let mixed = |tags: bool| -> Result<ParallelCorpus, ScheduleError> {
        let out_t = tagged(&out, tags)?;
        let in_t = tagged(&inn, tags)?;
        let in_up = oversample(&in_t, out_t.pairs.len(), cfg.data_seed)?;
        Ok(mix(&out_t, &in_up, cfg.data_seed))
    };

    let (stages, vocab_corpora, policy): (Vec<Stage>, Vec<ParallelCorpus>, VocabPolicy) =
        match name {
            "in-only" => {
                let t = inn.clone();
                (
                    vec![stage("in", t.clone(), reg.in_dev.clone())],
                    vec![t],
                    VocabPolicy::Mixed,
                )
            }
            "out-only" => {
                let t = out.clone();
                (
                    vec![stage("out", t.clone(), reg.out_dev.clone())],
                    vec![t],
                    VocabPolicy::Mixed,
                )
            }
            "fine-tuning" => (
                vec![
                    stage("out", out.clone(), reg.out_dev.clone()),
                    stage("in", inn.clone(), reg.in_dev.clone()),
                ],
                vec![out.clone()],
                VocabPolicy::OutOfDomainOnly,
            ),
            "multi-domain" | "multi-domain-no-tags" => {
                let m = mixed(tags)?;
                (
                    vec![stage("mixed", m, tagged(&reg.in_dev, tags)?)],
                    vec![tagged(&out, tags)?, tagged(&inn, tags)?],
                    VocabPolicy::Mixed,
                )
            }
            "multi-domain+ft" => {
                let m = mixed(tags)?;
                (
                    vec![
                        stage("mixed", m, tagged(&reg.in_dev, tags)?),
                        stage("in", tagged(&inn, tags)?, tagged(&reg.in_dev, tags)?),
                    ],
                    vec![tagged(&out, tags)?, tagged(&inn, tags)?],
                    VocabPolicy::Mixed,
                )
            }
            "mixed-ft" | "mixed-ft-no-tags" => {
                let m = mixed(tags)?;
                (
                    vec![
                        stage("out", tagged(&out, tags)?, tagged(&reg.out_dev, tags)?),
                        stage("mixed", m, tagged(&reg.in_dev, tags)?),
                    ],
                    vec![tagged(&out, tags)?, tagged(&inn, tags)?],
                    VocabPolicy::Mixed,
                )
            }
            "mixed-ft+ft" => {
                let m = mixed(tags)?;
                (
                    vec![
                        stage("out", tagged(&out, tags)?, tagged(&reg.out_dev, tags)?),
                        stage("mixed", m, tagged(&reg.in_dev, tags)?),
                        stage("in", tagged(&inn, tags)?, tagged(&reg.in_dev, tags)?),
                    ],
                    vec![tagged(&out, tags)?, tagged(&inn, tags)?],
                    VocabPolicy::Mixed,
                )
            }
            other => return Err(ScheduleError::UnknownSchedule(other.to_string())),
        };

    let refs: Vec<&ParallelCorpus> = vocab_corpora.iter().collect();
    let src_vocab = build_vocabulary(&refs, Side::Source, cfg.hp.src_vocab, policy)?;
    let tgt_vocab = build_vocabulary(&refs, Side::Target, cfg.hp.tgt_vocab, policy)?;
    Ok(Schedule {
        name: name.to_string(),
        stages,
        vocab_policy: policy,
        src_vocab,
        tgt_vocab,
    })
}

/// One row of history.tsv.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_bleu: f64,
}

/// Outcome of one stage: the checkpoint triple plus the metric history.
#[derive(Debug, Clone)]
pub struct StageResult<R: Real> {
    pub best_dev_loss: Checkpoint<R>,
    pub best_dev_bleu: Checkpoint<R>,
    pub final_ckpt: Checkpoint<R>,
    pub history: Vec<EpochRecord>,
}

pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<(), ScheduleError> {
    let mut s = String::from("epoch\ttrain_loss\tdev_loss\tdev_bleu\n");
    for r in history {
        s.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.4}\n",
            r.epoch, r.train_loss, r.dev_loss, r.dev_bleu
        ));
    }
    std::fs::write(path, s).map_err(io_err(path))
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>, ScheduleError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(ScheduleError::Eval(format!("bad history line: {line}")));
        }
        out.push(EpochRecord {
            epoch: cols[0].parse().map_err(|_| ScheduleError::Eval(line.into()))?,
            train_loss: cols[1].parse().map_err(|_| ScheduleError::Eval(line.into()))?,
            dev_loss: cols[2].parse().map_err(|_| ScheduleError::Eval(line.into()))?,
            dev_bleu: cols[3].parse().map_err(|_| ScheduleError::Eval(line.into()))?,
        });
    }
    Ok(out)
}

fn encode_pairs(
    c: &ParallelCorpus,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    c.pairs
        .iter()
        .map(|p| (src_vocab.encode(&p.source), tgt_vocab.encode(&p.target)))
        .collect()
}

fn mean_loss<R: Real>(
    model: &Seq2Seq<R>,
    data: &[(Vec<usize>, Vec<usize>)],
    batch_size: usize,
) -> Result<f64, ScheduleError> {
    let mut weighted = 0.0;
    let mut tokens = 0.0;
    for chunk in data.chunks(batch_size) {
        let n: f64 = chunk.iter().map(|(_, t)| (t.len() + 1) as f64).sum();
        weighted += model.batch_loss(chunk)?.to_f64() * n;
        tokens += n;
    }
    Ok(weighted / tokens)
}

fn dev_bleu<R: Real>(
    model: &Seq2Seq<R>,
    dev: &ParallelCorpus,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Result<f64, ScheduleError> {
    let mut hyps = Vec::with_capacity(dev.pairs.len());
    let mut refs = Vec::with_capacity(dev.pairs.len());
    for p in &dev.pairs {
        let hyp = greedy_decode(model, &src_vocab.encode(&p.source))?;
        hyps.push(tgt_vocab.decode(hyp.surface()));
        refs.push(p.target.clone());
    }
    Ok(bleu4(&hyps, &refs)
        .map_err(|e| ScheduleError::Eval(e.to_string()))?
        .bleu)
}

/// Train one stage: seeded-shuffled minibatches, per-epoch dev loss and
/// greedy dev BLEU, checkpoint triple, patience stopping on dev BLEU
/// (ties broken by dev loss).
pub fn run_stage<R: Real>(
    mut model: Seq2Seq<R>,
    stage: &Stage,
    schedule: &Schedule,
    cfg: &ScheduleConfig,
    seed: u64,
    stage_dir: &Path,
) -> Result<StageResult<R>, ScheduleError> {
    std::fs::create_dir_all(stage_dir).map_err(io_err(stage_dir))?;
    let train = encode_pairs(&stage.train, &schedule.src_vocab, &schedule.tgt_vocab);
    let dev = encode_pairs(&stage.dev, &schedule.src_vocab, &schedule.tgt_vocab);
    let batch = cfg.hp.batch_size;
    let mut adam = crate::nncore::AdamState::<R>::new(cfg.hp.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let snapshot = |model: &Seq2Seq<R>, tag, epoch, dev_loss, dev_bleu| Checkpoint {
        model: model.clone(),
        tag,
        epoch,
        dev_loss,
        dev_bleu,
    };

    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best_loss: Option<Checkpoint<R>> = None;
    let mut best_bleu: Option<Checkpoint<R>> = None;
    let mut best_bleu_epoch = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut epoch = 0usize;
    loop {
        epoch += 1;
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        let mut tokens = 0.0;
        for idx_chunk in order.chunks(batch) {
            let chunk: Vec<(Vec<usize>, Vec<usize>)> =
                idx_chunk.iter().map(|&i| train[i].clone()).collect();
            let dropout_seed = rng.gen::<u64>();
            let (loss, grads) = model.loss_and_grads(&chunk, dropout_seed)?;
            let loss = loss.to_f64();
            if !loss.is_finite() {
                return Err(ScheduleError::DivergenceDetected {
                    stage: stage.name.clone(),
                    epoch,
                });
            }
            adam.step(&mut model.params.tensors, &grads);
            let n: f64 = chunk.iter().map(|(_, t)| (t.len() + 1) as f64).sum();
            weighted += loss * n;
            tokens += n;
        }
        let train_loss = weighted / tokens;
        let dev_loss = mean_loss(&model, &dev, batch)?;
        if !dev_loss.is_finite() {
            return Err(ScheduleError::DivergenceDetected {
                stage: stage.name.clone(),
                epoch,
            });
        }
        let bleu = dev_bleu(&model, &stage.dev, &schedule.src_vocab, &schedule.tgt_vocab)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            dev_loss,
            dev_bleu: bleu,
        });
        // Rewritten every epoch so long stages stay observable and a partial
        // trace survives interruption.
        write_history(&history, &stage_dir.join("history.tsv"))?;

        if best_loss.as_ref().map_or(true, |c| dev_loss < c.dev_loss) {
            best_loss = Some(snapshot(&model, CheckpointTag::BestDevLoss, epoch, dev_loss, bleu));
        }
        // Dev-BLEU ties break on dev loss. Corpus BLEU-4 is exactly zero for
        // many warm-up epochs at small scale; without the tie-break patience
        // would fire while the model is still demonstrably learning, and the
        // best-dev-BLEU checkpoint (used for stage chaining) would freeze at
        // the untrained epoch-1 model.
        let improved = best_bleu
            .as_ref()
            .map_or(true, |c| bleu > c.dev_bleu || (bleu == c.dev_bleu && dev_loss < c.dev_loss));
        if improved {
            best_bleu = Some(snapshot(&model, CheckpointTag::BestDevBleu, epoch, dev_loss, bleu));
            best_bleu_epoch = epoch;
        }
        if epoch >= cfg.stop.max_epochs || epoch - best_bleu_epoch >= cfg.stop.patience {
            break;
        }
    }

    let last = *history.last().expect("at least one epoch ran");
    let result = StageResult {
        best_dev_loss: best_loss.expect("recorded"),
        best_dev_bleu: best_bleu.expect("recorded"),
        final_ckpt: snapshot(
            &model,
            CheckpointTag::Final,
            last.epoch,
            last.dev_loss,
            last.dev_bleu,
        ),
        history,
    };
    for ckpt in [&result.best_dev_loss, &result.best_dev_bleu, &result.final_ckpt] {
        ckpt.save(&stage_dir.join(format!("{}.ckpt", ckpt.tag)))?;
    }
    Ok(result)
}

fn corpus_sha256(c: &ParallelCorpus) -> String {
    let mut h = Sha256::new();
    for p in &c.pairs {
        h.update(p.source.join(" ").as_bytes());
        h.update(b"\t");
        h.update(p.target.join(" ").as_bytes());
        h.update(b"\n");
    }
    format!("{:x}", h.finalize())
}

/// Provenance and completion record for one schedule run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schedule: String,
    pub seed: u64,
    pub hyperparams: HyperParams,
    pub stop: StopRule,
    pub vocab_policy: VocabPolicy,
    /// stage name -> (train corpus hash, dev corpus hash)
    pub corpora_hashes: IndexMap<String, (String, String)>,
    pub stages_completed: usize,
    pub complete: bool,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<(), ScheduleError> {
        let mut f = std::fs::File::create(path).map_err(io_err(path))?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        f.write_all(text.as_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, ScheduleError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| ScheduleError::Eval(e.to_string()))
    }
}

/// Directory of one schedule x seed run: `<out_dir>/runs/<schedule>/<seed>`.
pub fn run_dir(out_dir: &Path, schedule: &str, seed: u64) -> PathBuf {
    out_dir.join("runs").join(schedule).join(seed.to_string())
}

/// Run every stage of a schedule, chaining from the best-dev-BLEU checkpoint
/// and resetting the optimizer at each stage boundary. Writes
/// `stage<k>/{*.ckpt, history.tsv}`, the vocabulary files, and a provenance
/// manifest under `run_dir(out_dir, schedule, seed)`.
pub fn run_schedule<R: Real>(
    schedule: &Schedule,
    cfg: &ScheduleConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<StageResult<R>>, ScheduleError> {
    let dir = run_dir(out_dir, &schedule.name, seed);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    schedule.src_vocab.save(&dir.join("vocab.src"))?;
    schedule.tgt_vocab.save(&dir.join("vocab.tgt"))?;

    let hp = schedule.hyperparams(cfg.hp);
    let mut manifest = RunManifest {
        schedule: schedule.name.clone(),
        seed,
        hyperparams: hp,
        stop: cfg.stop,
        vocab_policy: schedule.vocab_policy,
        corpora_hashes: schedule
            .stages
            .iter()
            .map(|s| {
                (
                    s.name.clone(),
                    (corpus_sha256(&s.train), corpus_sha256(&s.dev)),
                )
            })
            .collect(),
        stages_completed: 0,
        complete: false,
    };

    let mut model = Seq2Seq::<R>::new(hp, seed);
    let mut results = Vec::new();
    for (k, stage) in schedule.stages.iter().enumerate() {
        let stage_dir = dir.join(format!("stage{}", k + 1));
        // each stage draws fresh shuffle/dropout streams and a fresh optimizer
        let stage_seed = seed.wrapping_add(k as u64);
        let result = run_stage(model, stage, schedule, cfg, stage_seed, &stage_dir)?;
        model = result.best_dev_bleu.model.clone();
        results.push(result);
        manifest.stages_completed = k + 1;
        manifest.save(&dir.join("manifest.json"))?;
    }
    manifest.complete = true;
    manifest.save(&dir.join("manifest.json"))?;
    Ok(results)
}

/// Epochs from stage start to the dev-BLEU peak, from a history.
pub fn epochs_to_peak(history: &[EpochRecord]) -> usize {
    // First epoch attaining the maximum, matching the strict-improvement rule
    // used for the best-dev-BLEU checkpoint.
    let mut best: Option<&EpochRecord> = None;
    for r in history {
        if best.map_or(true, |b| r.dev_bleu > b.dev_bleu) {
            best = Some(r);
        }
    }
    best.map(|r| r.epoch).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SentencePair;

    fn mini_corpus(n: usize, domain: &str, flip: bool) -> ParallelCorpus {
        // 4-token sentences so corpus BLEU-4 has nonzero 4-gram counts
        let pairs = (0..n)
            .map(|i| {
                let ws = [i % 7, (i + 3) % 7, (i + 5) % 7, (i + 1) % 7];
                let src: Vec<String> = ws.iter().map(|w| format!("w{w}")).collect();
                let tgt: Vec<String> = if flip {
                    ws.iter().rev().map(|w| format!("B{w}")).collect()
                } else {
                    ws.iter().map(|w| format!("A{w}")).collect()
                };
                SentencePair::new(&src.join(" "), &tgt.join(" "), domain)
            })
            .collect();
        ParallelCorpus {
            pairs,
            name: domain.to_string(),
        }
    }

    fn registry() -> CorpusRegistry {
        CorpusRegistry {
            out_train: mini_corpus(40, "out", false),
            in_train: mini_corpus(10, "in", true),
            out_dev: mini_corpus(8, "out", false),
            in_dev: mini_corpus(8, "in", true),
        }
    }

    fn tiny_cfg() -> ScheduleConfig {
        let mut hp = HyperParams::desk();
        hp.src_vocab = 64;
        hp.tgt_vocab = 64;
        hp.embed_dim = 8;
        hp.hidden_dim = 8;
        hp.attn_dim = 8;
        hp.maxout_units = 8;
        hp.batch_size = 8;
        ScheduleConfig {
            hp,
            stop: StopRule {
                patience: 1,
                max_epochs: 2,
            },
            data_seed: 0,
        }
    }

    #[test]
    fn schedule_shapes_match_contract() {
        let reg = registry();
        let cfg = tiny_cfg();
        let cases: [(&str, usize, bool); 9] = [
            ("in-only", 1, false),
            ("out-only", 1, false),
            ("fine-tuning", 2, false),
            ("multi-domain", 1, true),
            ("multi-domain-no-tags", 1, false),
            ("multi-domain+ft", 2, true),
            ("mixed-ft", 2, true),
            ("mixed-ft-no-tags", 2, false),
            ("mixed-ft+ft", 3, true),
        ];
        for (name, n_stages, has_tags) in cases {
            let s = make_schedule(name, &reg, &cfg).unwrap();
            assert_eq!(s.stages.len(), n_stages, "{name}");
            let first_tok = &s.stages.last().unwrap().train.pairs[0].source[0];
            assert_eq!(
                crate::corpus::is_domain_tag(first_tok),
                has_tags,
                "{name}: first source token {first_tok}"
            );
        }
        assert!(matches!(
            make_schedule("nope", &reg, &cfg),
            Err(ScheduleError::UnknownSchedule(_))
        ));
    }

    #[test]
    fn fine_tuning_uses_out_of_domain_vocab() {
        let reg = registry();
        let s = make_schedule("fine-tuning", &reg, &tiny_cfg()).unwrap();
        assert_eq!(s.vocab_policy, VocabPolicy::OutOfDomainOnly);
        // in-domain-only target tokens are unknown under this vocabulary
        assert_eq!(s.tgt_vocab.id("B1"), crate::corpus::UNK);
        assert_ne!(s.tgt_vocab.id("A1"), crate::corpus::UNK);
        let m = make_schedule("mixed-ft", &reg, &tiny_cfg()).unwrap();
        assert_ne!(m.tgt_vocab.id("B1"), crate::corpus::UNK);
    }

    #[test]
    fn mixed_stage_has_equal_domain_counts() {
        let reg = registry();
        let s = make_schedule("mixed-ft", &reg, &tiny_cfg()).unwrap();
        let mixed = &s.stages[1].train;
        let n_in = mixed.pairs.iter().filter(|p| p.domain == "in").count();
        let n_out = mixed.pairs.iter().filter(|p| p.domain == "out").count();
        assert_eq!(n_in, n_out);
        assert_eq!(n_out, reg.out_train.pairs.len());
    }

    #[test]
    fn run_stage_records_history_and_checkpoint_triple() {
        let reg = registry();
        let cfg = tiny_cfg();
        let s = make_schedule("in-only", &reg, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let model = Seq2Seq::<f32>::new(s.hyperparams(cfg.hp), 1);
        let r = run_stage(model, &s.stages[0], &s, &cfg, 1, dir.path()).unwrap();
        assert!(!r.history.is_empty());
        assert!(r.history.len() <= cfg.stop.max_epochs);
        assert!(r.best_dev_loss.dev_loss <= r.final_ckpt.dev_loss);
        assert!(r.best_dev_bleu.dev_bleu >= r.final_ckpt.dev_bleu);
        assert!(dir.path().join("history.tsv").exists());
        for tag in CheckpointTag::ALL {
            assert!(dir.path().join(format!("{tag}.ckpt")).exists());
        }
        let reread = read_history(&dir.path().join("history.tsv")).unwrap();
        assert_eq!(reread.len(), r.history.len());
        assert_eq!(reread[0].epoch, 1);
    }

    #[test]
    fn same_seed_reproduces_history_bytes() {
        let reg = registry();
        let cfg = tiny_cfg();
        let s = make_schedule("in-only", &reg, &cfg).unwrap();
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_schedule::<f32>(&s, &cfg, 7, d1.path()).unwrap();
        run_schedule::<f32>(&s, &cfg, 7, d2.path()).unwrap();
        let h1 = std::fs::read(run_dir(d1.path(), "in-only", 7).join("stage1/history.tsv")).unwrap();
        let h2 = std::fs::read(run_dir(d2.path(), "in-only", 7).join("stage1/history.tsv")).unwrap();
        assert!(!h1.is_empty());
        assert_eq!(h1, h2);
    }

    #[test]
    fn run_schedule_chains_stages_and_writes_manifest() {
        let reg = registry();
        let cfg = tiny_cfg();
        let s = make_schedule("fine-tuning", &reg, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let results = run_schedule::<f32>(&s, &cfg, 3, dir.path()).unwrap();
        assert_eq!(results.len(), 2);
        let rd = run_dir(dir.path(), "fine-tuning", 3);
        let manifest = RunManifest::load(&rd.join("manifest.json")).unwrap();
        assert!(manifest.complete);
        assert_eq!(manifest.stages_completed, 2);
        assert_eq!(manifest.corpora_hashes.len(), 2);
        assert!(rd.join("stage2/history.tsv").exists());
        assert!(rd.join("vocab.src").exists());
    }

    #[test]
    fn memorizable_stage_reaches_high_dev_bleu() {
        // dev = train on a memorizable corpus (7 distinct sentences repeated):
        // greedy dev BLEU should reach 100
        let c = mini_corpus(200, "in", false);
        let reg = CorpusRegistry {
            out_train: c.clone(),
            in_train: c.clone(),
            out_dev: c.clone(),
            in_dev: c.clone(),
        };
        let mut cfg = tiny_cfg();
        cfg.hp.embed_dim = 32;
        cfg.hp.hidden_dim = 32;
        cfg.hp.attn_dim = 32;
        cfg.hp.maxout_units = 32;
        cfg.hp.dropout_rate = 0.0;
        // BLEU stays at 0 for the first ~20 epochs, so patience must outlast
        // that warm-up
        cfg.stop = StopRule {
            patience: 30,
            max_epochs: 40,
        };
        let s = make_schedule("in-only", &reg, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let model = Seq2Seq::<f32>::new(s.hyperparams(cfg.hp), 5);
        let r = run_stage(model, &s.stages[0], &s, &cfg, 5, dir.path()).unwrap();
        assert!(
            r.best_dev_bleu.dev_bleu >= 99.9,
            "best dev BLEU {}",
            r.best_dev_bleu.dev_bleu
        );
    }

    #[test]
    fn epochs_to_peak_reads_the_max() {
        let h = [
            EpochRecord { epoch: 1, train_loss: 1.0, dev_loss: 1.0, dev_bleu: 10.0 },
            EpochRecord { epoch: 2, train_loss: 0.8, dev_loss: 0.9, dev_bleu: 30.0 },
            EpochRecord { epoch: 3, train_loss: 0.7, dev_loss: 1.1, dev_bleu: 20.0 },
        ];
        assert_eq!(epochs_to_peak(&h), 2);
    }
}
