//! Command-line entry point: the full pipeline (synth, prepare, BPE, vocab,
//! train, translate, evaluate, significance) plus the experiment matrix and
//! report generation.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{Config, ConfigError};
use crate::corpus::{
    self, domain_tag, load_corpus, save_corpus, ParallelCorpus, Side, Vocabulary,
};
use crate::eval::{bleu4, bootstrap_significance, render_report, EvalReport};
use crate::schedules::{
    epochs_to_peak, make_schedule, run_dir, run_schedule, CorpusRegistry, Schedule,
    ScheduleConfig, ScheduleError,
};
use crate::seq2seq::{ensemble_decode, Checkpoint, CheckpointTag, Seq2Seq};
use crate::subword::{learn_bpe, profile, undo_bpe, BpeModel};
use crate::synthgen::{self, ambiguous_accuracy, generate, Lexicon, IN_DOMAIN, OUT_DOMAIN};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_TRAINING: i32 = 4;
pub const EXIT_USAGE: i32 = 64;

/// Top-level error with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError {
        code: EXIT_CONFIG,
        message: format!("config error: {e}"),
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError {
        code: EXIT_DATA,
        message: format!("data error: {e}"),
    }
}

fn training_err(e: impl std::fmt::Display) -> CliError {
    CliError {
        code: EXIT_TRAINING,
        message: format!("training error: {e}"),
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        config_err(e)
    }
}

impl From<ScheduleError> for CliError {
    fn from(e: ScheduleError) -> Self {
        match e {
            ScheduleError::UnknownSchedule(_) | ScheduleError::MissingCorpus(_) => config_err(e),
            ScheduleError::Corpus(c) => data_err(c),
            other => training_err(other),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "domixt",
    version,
    about = "Domain-adaptation workbench: corpora, BPE, NMT training schedules, \
             beam decoding, BLEU and significance testing",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonOpts {
    /// Configuration file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root directory for data and run artifacts.
    #[arg(long, default_value = "work")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic two-domain corpora and ground-truth lexicon.
    Synth {
        #[command(flatten)]
        common: CommonOpts,
        /// Override the generation seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Corpus preparation: length filter, tag injection, oversampling, mixing.
    Prepare {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        /// Domain label of the corpus (used by tag injection).
        #[arg(long)]
        domain: String,
        #[arg(long)]
        filter_max_len: Option<usize>,
        /// Prepend the "<2domain>" tag to every source sentence.
        #[arg(long)]
        tag: bool,
        /// Oversample to exactly this many pairs.
        #[arg(long)]
        oversample_to: Option<usize>,
        /// Mix with a second corpus (source file; --mix-tgt and --mix-domain required).
        #[arg(long, requires_all = ["mix_tgt", "mix_domain"])]
        mix_src: Option<PathBuf>,
        #[arg(long)]
        mix_tgt: Option<PathBuf>,
        #[arg(long)]
        mix_domain: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_src: PathBuf,
        #[arg(long)]
        out_tgt: PathBuf,
    },
    /// Learn a BPE model from one or more token files (joint over all inputs).
    LearnBpe {
        /// Input text files (whitespace-tokenized).
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = 200)]
        merges: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Apply a BPE model to a token file.
    ApplyBpe {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build a frequency-ranked vocabulary over one side of corpora.
    BuildVocab {
        /// Source-side files (pair with --tgt in order).
        #[arg(long, required = true, num_args = 1..)]
        src: Vec<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        tgt: Vec<PathBuf>,
        /// Which side to build the vocabulary over.
        #[arg(long, value_parser = ["source", "target"])]
        side: String,
        #[arg(long, default_value_t = 2000)]
        cap: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train one named schedule on the generated corpora.
    Train {
        /// Schedule name (e.g. fine-tuning, multi-domain, mixed-ft).
        schedule: String,
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Translate a source file with a trained model.
    Translate {
        /// Run directory (contains vocab files and stage<k> checkpoints).
        #[arg(long)]
        run_dir: PathBuf,
        /// Stage to decode with; defaults to the last stage.
        #[arg(long)]
        stage: Option<usize>,
        /// Comma-separated checkpoint tags to self-ensemble
        /// (best-loss,best-bleu,final); defaults to final only.
        #[arg(long)]
        ensemble: Option<String>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Beam size; defaults to the checkpoint's configured beam.
        #[arg(long)]
        beam: Option<usize>,
        /// Apply this BPE model to the input and undo it on the output.
        #[arg(long)]
        bpe_model: Option<PathBuf>,
    },
    /// Score a hypothesis file against a reference file with corpus BLEU-4.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Paired bootstrap significance test between two systems.
    Significance {
        #[arg(long)]
        sys_a: PathBuf,
        #[arg(long)]
        sys_b: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the full schedule x seed matrix and emit the bold-tie report.
    Experiment {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated seed list overriding the config.
        #[arg(long)]
        seeds: Option<String>,
        /// Parallel worker processes.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Redo completed cells instead of skipping them.
        #[arg(long)]
        force: bool,
    },
    /// Regenerate report.md from completed runs.
    Report {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Internal worker: one experiment cell (train + translate + evaluate).
    #[command(hide = true)]
    RunCell {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        schedule: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        force: bool,
    },
}

/// Parse arguments and dispatch; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("domixt: {}", e.message);
            e.code
        }
    }
}

fn load_config(common: &CommonOpts) -> CliResult<Config> {
    match &common.config {
        Some(path) => Ok(Config::load(path)?),
        None => Ok(Config::default()),
    }
}

fn dispatch(cmd: Cmd) -> CliResult {
    match cmd {
        Cmd::Synth { common, seed } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = seed {
                cfg.synth.seed = s;
            }
            synth_data(&cfg, &common.out_dir)
        }
        Cmd::Prepare {
            src,
            tgt,
            domain,
            filter_max_len,
            tag,
            oversample_to,
            mix_src,
            mix_tgt,
            mix_domain,
            seed,
            out_src,
            out_tgt,
        } => {
            let mut c = load_corpus(&src, &tgt, &domain).map_err(data_err)?;
            if let Some(n) = filter_max_len {
                c = corpus::filter_by_length(&c, n);
            }
            if tag {
                c = corpus::inject_tags(&c).map_err(data_err)?;
            }
            if let Some(n) = oversample_to {
                c = corpus::oversample(&c, n, seed).map_err(data_err)?;
            }
            if let Some(ms) = mix_src {
                let other = load_corpus(
                    &ms,
                    mix_tgt.as_ref().expect("required by clap"),
                    mix_domain.as_ref().expect("required by clap"),
                )
                .map_err(data_err)?;
                let other = if tag {
                    corpus::inject_tags(&other).map_err(data_err)?
                } else {
                    other
                };
                c = corpus::mix(&c, &other, seed);
            }
            save_corpus(&c, &out_src, &out_tgt).map_err(data_err)
        }
        Cmd::LearnBpe {
            input,
            merges,
            output,
        } => {
            let mut combined = crate::subword::Profile::new();
            for path in &input {
                let text = std::fs::read_to_string(path).map_err(data_err)?;
                for tok in text.split_whitespace() {
                    if !corpus::is_domain_tag(tok) {
                        *combined.entry(tok.to_string()).or_insert(0) += 1;
                    }
                }
            }
            let model = learn_bpe(&[&combined], merges, crate::subword::BpeMode::Joint)
                .map_err(data_err)?;
            model.save(&output).map_err(data_err)
        }
        Cmd::ApplyBpe {
            model,
            input,
            output,
        } => {
            let model = BpeModel::load(&model).map_err(data_err)?;
            let text = std::fs::read_to_string(&input).map_err(data_err)?;
            let mut out = String::new();
            for line in text.lines() {
                let toks: Vec<String> = line.split_whitespace().map(String::from).collect();
                out.push_str(&model.apply(&toks).join(" "));
                out.push('\n');
            }
            std::fs::write(&output, out).map_err(data_err)
        }
        Cmd::BuildVocab {
            src,
            tgt,
            side,
            cap,
            output,
        } => {
            if src.len() != tgt.len() {
                return Err(config_err("--src and --tgt must pair up"));
            }
            let mut corpora = Vec::new();
            for (s, t) in src.iter().zip(&tgt) {
                corpora.push(load_corpus(s, t, "unknown").map_err(data_err)?);
            }
            let refs: Vec<&ParallelCorpus> = corpora.iter().collect();
            let side = if side == "source" { Side::Source } else { Side::Target };
            let vocab =
                corpus::build_vocabulary(&refs, side, cap, corpus::VocabPolicy::Mixed)
                    .map_err(data_err)?;
            vocab.save(&output).map_err(data_err)
        }
        Cmd::Train {
            schedule,
            common,
            seed,
        } => {
            let cfg = load_config(&common)?;
            let (sched, sched_cfg) = build_schedule(&cfg, &schedule, &common.out_dir)?;
            run_schedule::<f32>(&sched, &sched_cfg, seed, &common.out_dir)?;
            println!(
                "trained {schedule} seed {seed}: artifacts in {}",
                run_dir(&common.out_dir, &schedule, seed).display()
            );
            Ok(())
        }
        Cmd::Translate {
            run_dir,
            stage,
            ensemble,
            input,
            output,
            beam,
            bpe_model,
        } => translate(
            &run_dir, stage, ensemble.as_deref(), &input, &output, beam,
            bpe_model.as_deref(),
        ),
        Cmd::Evaluate { hyp, reference } => {
            let hyps = read_token_lines(&hyp)?;
            let refs = read_token_lines(&reference)?;
            let score = bleu4(&hyps, &refs).map_err(data_err)?;
            println!("{score}");
            Ok(())
        }
        Cmd::Significance {
            sys_a,
            sys_b,
            reference,
            resamples,
            seed,
        } => {
            let a = read_token_lines(&sys_a)?;
            let b = read_token_lines(&sys_b)?;
            let r = read_token_lines(&reference)?;
            let res = bootstrap_significance(&a, &b, &r, resamples, seed).map_err(data_err)?;
            println!(
                "A = {:.2}, B = {:.2}, p = {:.4} over {} resamples: {}",
                res.observed.0,
                res.observed.1,
                res.p_value,
                res.resamples,
                if res.significant {
                    "significant at p < 0.05"
                } else {
                    "not significant"
                }
            );
            Ok(())
        }
        Cmd::Experiment {
            common,
            seeds,
            jobs,
            force,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(list) = seeds {
                cfg.experiment.seeds = parse_seed_list(&list)?;
            }
            experiment(&cfg, &common.out_dir, common.config.as_deref(), jobs, force)
        }
        Cmd::Report { common } => {
            let cfg = load_config(&common)?;
            let report = write_report(&cfg, &common.out_dir)?;
            println!("{report}");
            Ok(())
        }
        Cmd::RunCell {
            common,
            schedule,
            seed,
            force,
        } => {
            let cfg = load_config(&common)?;
            run_cell(&cfg, &schedule, seed, &common.out_dir, force)?;
            Ok(())
        }
    }
}

fn parse_seed_list(list: &str) -> CliResult<Vec<u64>> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| config_err(format!("bad seed: {s}")))
        })
        .collect()
}

fn read_token_lines(path: &Path) -> CliResult<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect())
}

fn write_lines(path: &Path, lines: &[Vec<String>]) -> CliResult {
    let mut out = String::new();
    for l in lines {
        out.push_str(&l.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

/// Generate and persist the synthetic corpora (idempotent unless missing).
pub fn synth_data(cfg: &Config, out_dir: &Path) -> CliResult {
    let data_dir = Config::data_dir(out_dir);
    let corpora = generate(&cfg.synth).map_err(data_err)?;
    synthgen::write_all(&corpora, &data_dir).map_err(data_err)?;
    println!("wrote synthetic corpora to {}", data_dir.display());
    Ok(())
}

/// Load the six generated corpora plus the lexicon from `out_dir/data`.
pub fn load_data(out_dir: &Path) -> CliResult<(CorpusRegistry, ParallelCorpus, ParallelCorpus, Lexicon)> {
    let d = Config::data_dir(out_dir);
    let load = |name: &str, domain: &str| {
        load_corpus(
            &d.join(format!("{name}.src")),
            &d.join(format!("{name}.tgt")),
            domain,
        )
        .map_err(|e| data_err(format!("{name}: {e} (run `domixt synth` first?)")))
    };
    let reg = CorpusRegistry {
        out_train: load("out-train", OUT_DOMAIN)?,
        in_train: load("in-train", IN_DOMAIN)?,
        out_dev: load("out-dev", OUT_DOMAIN)?,
        in_dev: load("in-dev", IN_DOMAIN)?,
    };
    let out_test = load("out-test", OUT_DOMAIN)?;
    let in_test = load("in-test", IN_DOMAIN)?;
    let lexicon = Lexicon::load(&d.join("lexicon.tsv")).map_err(data_err)?;
    Ok((reg, out_test, in_test, lexicon))
}

/// Learn (or reload) the experiment's BPE model over both training corpora.
fn obtain_bpe(cfg: &Config, out_dir: &Path, reg: &CorpusRegistry) -> CliResult<Option<BpeModel>> {
    if !cfg.bpe.enabled {
        return Ok(None);
    }
    let path = out_dir.join("bpe.model");
    if path.exists() {
        return Ok(Some(BpeModel::load(&path).map_err(data_err)?));
    }
    let profiles = [
        profile(&reg.out_train, Side::Source),
        profile(&reg.out_train, Side::Target),
        profile(&reg.in_train, Side::Source),
        profile(&reg.in_train, Side::Target),
    ];
    let refs: Vec<&crate::subword::Profile> = profiles.iter().collect();
    let model = learn_bpe(&refs, cfg.bpe.merges, crate::subword::BpeMode::Joint)
        .map_err(data_err)?;
    model.save(&path).map_err(data_err)?;
    Ok(Some(model))
}

/// Build a named schedule over the generated data, applying BPE when enabled.
pub fn build_schedule(
    cfg: &Config,
    name: &str,
    out_dir: &Path,
) -> CliResult<(Schedule, ScheduleConfig)> {
    let (mut reg, _, _, _) = load_data(out_dir)?;
    if let Some(model) = obtain_bpe(cfg, out_dir, &reg)? {
        reg = CorpusRegistry {
            out_train: model.apply_corpus(&reg.out_train),
            in_train: model.apply_corpus(&reg.in_train),
            out_dev: model.apply_corpus(&reg.out_dev),
            in_dev: model.apply_corpus(&reg.in_dev),
        };
    }
    let sched_cfg = ScheduleConfig {
        hp: cfg.model.hyperparams()?,
        stop: cfg.training.stop_rule(),
        data_seed: cfg.training.data_seed,
    };
    let sched = make_schedule(name, &reg, &sched_cfg)?;
    Ok((sched, sched_cfg))
}

/// Whether a schedule's models expect domain tags on test sources.
pub fn schedule_uses_tags(name: &str) -> bool {
    matches!(
        name,
        "multi-domain" | "multi-domain+ft" | "mixed-ft" | "mixed-ft+ft"
    )
}

fn parse_tags(list: &str) -> CliResult<Vec<CheckpointTag>> {
    list.split(',')
        .map(|t| match t.trim() {
            "best-loss" | "best-dev-loss" => Ok(CheckpointTag::BestDevLoss),
            "best-bleu" | "best-dev-bleu" => Ok(CheckpointTag::BestDevBleu),
            "final" => Ok(CheckpointTag::Final),
            other => Err(config_err(format!("unknown checkpoint tag: {other}"))),
        })
        .collect()
}

fn last_stage(dir: &Path) -> CliResult<usize> {
    let mut k = 0;
    while dir.join(format!("stage{}", k + 1)).is_dir() {
        k += 1;
    }
    if k == 0 {
        return Err(data_err(format!("no stage directories under {}", dir.display())));
    }
    Ok(k)
}

fn load_members(stage_dir: &Path, tags: &[CheckpointTag]) -> CliResult<Vec<Seq2Seq<f32>>> {
    tags.iter()
        .map(|t| {
            Checkpoint::<f32>::load(&stage_dir.join(format!("{t}.ckpt")))
                .map(|c| c.model)
                .map_err(data_err)
        })
        .collect()
}

/// Decode every source line with the (possibly ensembled) model.
pub fn decode_corpus(
    members: &[Seq2Seq<f32>],
    sources: &[Vec<String>],
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    beam: usize,
    bpe: Option<&BpeModel>,
) -> CliResult<Vec<Vec<String>>> {
    let refs: Vec<&Seq2Seq<f32>> = members.iter().collect();
    let mut out = Vec::with_capacity(sources.len());
    for src in sources {
        let toks = match bpe {
            Some(m) => m.apply(src),
            None => src.clone(),
        };
        let hyp = ensemble_decode(&refs, &src_vocab.encode(&toks), beam, None)
            .map_err(training_err)?;
        let mut words = tgt_vocab.decode(hyp.surface());
        if let Some(m) = bpe {
            words = undo_bpe(&words, &m.joiner);
        }
        out.push(words);
    }
    Ok(out)
}

fn translate(
    run_dir: &Path,
    stage: Option<usize>,
    ensemble: Option<&str>,
    input: &Path,
    output: &Path,
    beam: Option<usize>,
    bpe_model: Option<&Path>,
) -> CliResult {
    let stage = match stage {
        Some(k) => k,
        None => last_stage(run_dir)?,
    };
    let tags = match ensemble {
        Some(list) => parse_tags(list)?,
        None => vec![CheckpointTag::Final],
    };
    let members = load_members(&run_dir.join(format!("stage{stage}")), &tags)?;
    let src_vocab = Vocabulary::load(&run_dir.join("vocab.src")).map_err(data_err)?;
    let tgt_vocab = Vocabulary::load(&run_dir.join("vocab.tgt")).map_err(data_err)?;
    let bpe = match bpe_model {
        Some(p) => Some(BpeModel::load(p).map_err(data_err)?),
        None => None,
    };
    let beam = beam.unwrap_or(members[0].hp.beam_size);
    let sources = read_token_lines(input)?;
    let hyps = decode_corpus(&members, &sources, &src_vocab, &tgt_vocab, beam, bpe.as_ref())?;
    write_lines(output, &hyps)
}

/// Per-cell evaluation record persisted as eval.json in the run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellEval {
    pub schedule: String,
    pub seed: u64,
    pub in_bleu: f64,
    pub out_bleu: f64,
    /// Ambiguous-token accuracy on the in-domain test set.
    pub ambiguous_accuracy: f64,
    /// Epochs to the dev-BLEU peak in the final stage.
    pub epochs_to_peak: usize,
}

/// Train one schedule x seed cell, decode both test sets with the
/// self-ensembled final-stage checkpoints, and write eval.json plus the
/// hypothesis files. Skips completed cells unless `force`.
pub fn run_cell(
    cfg: &Config,
    schedule_name: &str,
    seed: u64,
    out_dir: &Path,
    force: bool,
) -> CliResult<CellEval> {
    let dir = run_dir(out_dir, schedule_name, seed);
    let eval_path = dir.join("eval.json");
    if !force && eval_path.exists() {
        let text = std::fs::read_to_string(&eval_path).map_err(data_err)?;
        return serde_json::from_str(&text).map_err(data_err);
    }
    if force && dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(data_err)?;
    }

    let (reg, out_test, in_test, lexicon) = load_data(out_dir)?;
    let bpe = obtain_bpe(cfg, out_dir, &reg)?;
    let (sched, sched_cfg) = build_schedule(cfg, schedule_name, out_dir)?;
    let results = run_schedule::<f32>(&sched, &sched_cfg, seed, out_dir)?;
    let final_stage = results.len();
    let stage_dir = dir.join(format!("stage{final_stage}"));
    let members = load_members(&stage_dir, &CheckpointTag::ALL)?;

    let tagged = schedule_uses_tags(schedule_name);
    let test_sources = |c: &ParallelCorpus| -> Vec<Vec<String>> {
        c.pairs
            .iter()
            .map(|p| {
                let mut s = Vec::with_capacity(p.source.len() + 1);
                if tagged {
                    s.push(domain_tag(&p.domain));
                }
                s.extend(p.source.iter().cloned());
                s
            })
            .collect()
    };
    let beam = sched_cfg.hp.beam_size;
    let decode = |c: &ParallelCorpus| {
        decode_corpus(
            &members,
            &test_sources(c),
            &sched.src_vocab,
            &sched.tgt_vocab,
            beam,
            bpe.as_ref(),
        )
    };
    let in_hyps = decode(&in_test)?;
    let out_hyps = decode(&out_test)?;
    let in_refs: Vec<Vec<String>> = in_test.pairs.iter().map(|p| p.target.clone()).collect();
    let out_refs: Vec<Vec<String>> = out_test.pairs.iter().map(|p| p.target.clone()).collect();
    let in_bleu = bleu4(&in_hyps, &in_refs).map_err(data_err)?.bleu;
    let out_bleu = bleu4(&out_hyps, &out_refs).map_err(data_err)?.bleu;
    let in_sources: Vec<Vec<String>> = in_test.pairs.iter().map(|p| p.source.clone()).collect();
    let amb = ambiguous_accuracy(&lexicon, IN_DOMAIN, &in_sources, &in_hyps).map_err(data_err)?;

    let eval = CellEval {
        schedule: schedule_name.to_string(),
        seed,
        in_bleu,
        out_bleu,
        ambiguous_accuracy: amb,
        epochs_to_peak: epochs_to_peak(&results[final_stage - 1].history),
    };
    write_lines(&dir.join("hyp.in.txt"), &in_hyps)?;
    write_lines(&dir.join("hyp.out.txt"), &out_hyps)?;
    std::fs::write(&eval_path, serde_json::to_string_pretty(&eval).unwrap())
        .map_err(data_err)?;
    println!(
        "{schedule_name} seed {seed}: in-test BLEU {in_bleu:.2}, out-test BLEU {out_bleu:.2}, \
         ambiguous accuracy {amb:.3}"
    );
    Ok(eval)
}

/// Run the full schedule x seed matrix (optionally with worker processes)
/// then write the report.
pub fn experiment(
    cfg: &Config,
    out_dir: &Path,
    config_path: Option<&Path>,
    jobs: usize,
    force: bool,
) -> CliResult {
    let data_dir = Config::data_dir(out_dir);
    if !data_dir.join("lexicon.tsv").exists() {
        synth_data(cfg, out_dir)?;
    }
    let cells: Vec<(String, u64)> = cfg
        .experiment
        .schedules
        .iter()
        .flat_map(|s| cfg.experiment.seeds.iter().map(move |&seed| (s.clone(), seed)))
        .collect();

    if jobs <= 1 {
        for (schedule, seed) in &cells {
            run_cell(cfg, schedule, *seed, out_dir, force)?;
        }
    } else {
        run_cells_parallel(&cells, out_dir, config_path, jobs, force)?;
    }
    let report = write_report(cfg, out_dir)?;
    println!("{report}");
    Ok(())
}

fn run_cells_parallel(
    cells: &[(String, u64)],
    out_dir: &Path,
    config_path: Option<&Path>,
    jobs: usize,
    force: bool,
) -> CliResult {
    let exe = std::env::current_exe().map_err(|e| training_err(format!("current_exe: {e}")))?;
    let mut pending: std::collections::VecDeque<&(String, u64)> = cells.iter().collect();
    let mut running: Vec<(std::process::Child, String, u64)> = Vec::new();
    loop {
        while running.len() < jobs {
            let Some((schedule, seed)) = pending.pop_front() else { break };
            let mut c = std::process::Command::new(&exe);
            c.arg("run-cell")
                .arg("--out-dir")
                .arg(out_dir)
                .arg("--schedule")
                .arg(schedule)
                .arg("--seed")
                .arg(seed.to_string());
            if let Some(p) = config_path {
                c.arg("--config").arg(p);
            }
            if force {
                c.arg("--force");
            }
            let child = c
                .spawn()
                .map_err(|e| training_err(format!("spawn worker: {e}")))?;
            running.push((child, schedule.clone(), *seed));
        }
        if running.is_empty() {
            return Ok(());
        }
        std::thread::sleep(std::time::Duration::from_millis(100));
        let mut i = 0;
        while i < running.len() {
            match running[i].0.try_wait() {
                Ok(Some(status)) if !status.success() => {
                    let (_, s, seed) = &running[i];
                    return Err(training_err(format!(
                        "worker for {s} seed {seed} failed with {status}"
                    )));
                }
                Ok(Some(_)) => {
                    running.swap_remove(i);
                }
                Ok(None) => i += 1,
                Err(e) => return Err(training_err(format!("wait worker: {e}"))),
            }
        }
    }
}

/// Reduce completed eval.json records into report.md: one bold-tie table per
/// seed plus a seed-mean table. Returns the rendered markdown.
pub fn write_report(cfg: &Config, out_dir: &Path) -> CliResult<String> {
    let schedules = &cfg.experiment.schedules;
    let seeds = &cfg.experiment.seeds;
    let (_, out_test, in_test, _) = load_data(out_dir)?;
    let in_refs: Vec<Vec<String>> = in_test.pairs.iter().map(|p| p.target.clone()).collect();
    let out_refs: Vec<Vec<String>> = out_test.pairs.iter().map(|p| p.target.clone()).collect();
    let test_sets = vec!["in-test".to_string(), "out-test".to_string()];

    let mut md = String::from("# Domain adaptation results (BLEU-4)\n");
    let mut evals: Vec<Vec<CellEval>> = Vec::new(); // [schedule][seed]
    for s in schedules {
        let mut row = Vec::new();
        for &seed in seeds {
            let path = run_dir(out_dir, s, seed).join("eval.json");
            let text = std::fs::read_to_string(&path).map_err(|e| {
                data_err(format!("{}: {e} (cell not completed?)", path.display()))
            })?;
            row.push(serde_json::from_str::<CellEval>(&text).map_err(data_err)?);
        }
        evals.push(row);
    }

    for (si, &seed) in seeds.iter().enumerate() {
        let mut outputs: Vec<Vec<Vec<Vec<String>>>> = Vec::new();
        for s in schedules {
            let dir = run_dir(out_dir, s, seed);
            outputs.push(vec![
                read_token_lines(&dir.join("hyp.in.txt"))?,
                read_token_lines(&dir.join("hyp.out.txt"))?,
            ]);
        }
        let refs = vec![in_refs.clone(), out_refs.clone()];
        let report = EvalReport::from_outputs(schedules, &test_sets, &outputs, &refs, 1000, seed)
            .map_err(data_err)?;
        md.push_str(&format!("\n## Seed {seed}\n\n"));
        md.push_str(&render_report(&report));
        let _ = si;
    }

    md.push_str("\n## Mean over seeds\n\n");
    md.push_str("| System | in-test | out-test | ambiguous acc. | epochs to peak |\n");
    md.push_str("|---|---|---|---|---|\n");
    let n = seeds.len() as f64;
    for (i, s) in schedules.iter().enumerate() {
        let mean = |f: &dyn Fn(&CellEval) -> f64| evals[i].iter().map(|e| f(e)).sum::<f64>() / n;
        md.push_str(&format!(
            "| {s} | {:.2} | {:.2} | {:.3} | {:.1} |\n",
            mean(&|e| e.in_bleu),
            mean(&|e| e.out_bleu),
            mean(&|e| e.ambiguous_accuracy),
            mean(&|e| e.epochs_to_peak as f64),
        ));
    }
    std::fs::write(out_dir.join("report.md"), &md).map_err(data_err)?;
    Ok(md)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_list_parsing() {
        assert_eq!(parse_seed_list("1,2, 3").unwrap(), vec![1, 2, 3]);
        assert!(parse_seed_list("1,x").is_err());
    }

    #[test]
    fn checkpoint_tag_parsing_accepts_both_spellings() {
        let tags = parse_tags("best-loss,best-bleu,final").unwrap();
        assert_eq!(
            tags,
            vec![
                CheckpointTag::BestDevLoss,
                CheckpointTag::BestDevBleu,
                CheckpointTag::Final
            ]
        );
        assert!(parse_tags("best-dev-loss").is_ok());
        assert!(parse_tags("bogus").is_err());
    }

    #[test]
    fn tag_policy_per_schedule() {
        assert!(schedule_uses_tags("mixed-ft"));
        assert!(schedule_uses_tags("multi-domain+ft"));
        assert!(!schedule_uses_tags("mixed-ft-no-tags"));
        assert!(!schedule_uses_tags("fine-tuning"));
        assert!(!schedule_uses_tags("out-only"));
    }

    #[test]
    fn cli_parses_spec_examples() {
        use clap::Parser;
        Cli::try_parse_from([
            "domixt", "experiment", "--config", "desk.toml", "--seeds", "1,2,3",
        ])
        .unwrap();
        Cli::try_parse_from([
            "domixt", "translate", "--run-dir", "runs/mixed-ft/1",
            "--ensemble", "best-loss,best-bleu,final",
            "--input", "a.txt", "--output", "b.txt",
        ])
        .unwrap();
        Cli::try_parse_from(["domixt", "evaluate", "--hyp", "h.txt", "--ref", "r.txt"]).unwrap();
        assert!(Cli::try_parse_from(["domixt", "bogus"]).is_err());
    }
}
