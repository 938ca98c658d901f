//! A miniature version of the full experiment matrix: synthesize data, run
//! several schedules, decode the test sets with self-ensembling, and render
//! the bold-tie report. Uses small sizes, but still trains five stages to a
//! usable dev BLEU; expect a coffee-break runtime on one CPU core.

use domixt::cli::{run_cell, synth_data, write_report};
use domixt::config::Config;

fn main() {
    let mut cfg = Config::default();
    cfg.synth.shared_vocab = 10;
    cfg.synth.ambiguous_vocab = 5;
    cfg.synth.domain_exclusive_vocab = 3;
    cfg.synth.out_size = 1000;
    cfg.synth.in_size = 125;
    cfg.synth.dev_size = 40;
    cfg.synth.test_size = 40;
    cfg.model.embed_dim = Some(32);
    cfg.model.hidden_dim = Some(64);
    cfg.model.attn_dim = Some(48);
    cfg.model.maxout_units = Some(32);
    cfg.model.batch_size = Some(16);
    cfg.model.beam_size = Some(4);
    // dev BLEU stays at zero for tens of warm-up epochs at this miniature
    // scale, so the patience window must cover the whole budget
    cfg.training.patience = 60;
    cfg.training.max_epochs = 60;
    cfg.experiment.schedules = vec![
        "out-only".to_string(),
        "fine-tuning".to_string(),
        "mixed-ft".to_string(),
    ];
    cfg.experiment.seeds = vec![1];
    cfg.validate().unwrap();

    let out_dir = std::env::temp_dir().join("domixt-full-experiment-example");
    let _ = std::fs::remove_dir_all(&out_dir);
    synth_data(&cfg, &out_dir).unwrap();
    for schedule in cfg.experiment.schedules.clone() {
        let eval = run_cell(&cfg, &schedule, 1, &out_dir, false).unwrap();
        println!(
            "-> {}: in-test {:.2}, out-test {:.2}, ambiguous accuracy {:.3}",
            eval.schedule, eval.in_bleu, eval.out_bleu, eval.ambiguous_accuracy
        );
    }
    let report = write_report(&cfg, &out_dir).unwrap();
    println!("\n{report}");
}
