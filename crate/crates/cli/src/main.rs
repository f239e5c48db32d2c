//! `snids` command-line frontend. Each subcommand is one pipeline stage;
//! chaining them reproduces the full capture-to-report flow. Logs go to
//! stderr, data to files or stdout.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use snids_core::augment::{build_augbase, read_augbase, write_augbase, AugBase};
use snids_core::dataset::{read_label_rules, write_label_rules, LabelTable, NUM_CLASSES};
use snids_core::eval::{percentage_error_f1, EvaluationReport};
use snids_core::evasion::slow_down;
use snids_core::features::{read_flow_csv, write_flow_csv};
use snids_core::flow::FlowConfig;
use snids_core::model::{BiAlstm, Checkpoint, ModelConfig, TrainConfig, CHECKPOINT_VERSION};
use snids_core::packet::{read_packet_csv, write_packet_csv, PacketRecord};
use snids_core::pipeline::{
    build_report, calibrated_threshold, extract_labeled_flows, run_inference, sequences_of,
    train_on_sequences,
};
use snids_core::rng::substream;
use snids_core::sequence::{read_sequences, write_sequences, SequenceConfig};
use snids_core::synth::{generate, DomainPreset, ScenarioSpec};

const CLASS_NAMES: [&str; NUM_CLASSES] =
    ["benign", "dos", "portscan", "bruteforce_fuzz", "other_malicious"];

#[derive(Parser)]
#[command(name = "snids", about = "Flow-sequence intrusion detection pipeline", version)]
struct Cli {
    /// Optional TOML config file; command-line flags win over config values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a capture (pcap/pcapng or packet CSV) into a labeled flow CSV.
    Extract {
        #[arg(long)]
        input: PathBuf,
        /// Label rules JSON; omitted means every flow is labeled benign.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Flow idle timeout in seconds.
        #[arg(long)]
        timeout: Option<f64>,
    },
    /// Group a flow CSV into fixed-length sequences.
    Sequence {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Sequence length (rows per sequence).
        #[arg(long)]
        alpha: Option<usize>,
        /// Sequence flush timeout in seconds.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Replace payload features of eligible DoS rows from a generated base.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Reuse a previously written base instead of generating one.
        #[arg(long)]
        augbase: Option<PathBuf>,
        /// Also write the generated base to this path.
        #[arg(long)]
        save_augbase: Option<PathBuf>,
    },
    /// Train a model on a sequence file and write a checkpoint.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        l2: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a sequence file.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Anomaly-score threshold; when omitted it is calibrated from this
        /// file's benign scores at the FPR target.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        fpr_target: Option<f64>,
        /// Write the full report as JSON here (text always goes to stdout).
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Evaluate one checkpoint on a matched and a shifted corpus.
    CrossEval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        matched: PathBuf,
        #[arg(long)]
        shifted: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        fpr_target: Option<f64>,
    },
    /// Slow malicious flows down by an integer multiplier.
    Evade {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        multiplier: u32,
        #[arg(long)]
        timeout: Option<f64>,
    },
    /// Generate a synthetic labeled corpus (packet CSV + label rules).
    Synth {
        /// Corpus preset: desk, small, or cross-domain.
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        packets: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Merge evaluation report JSON files into one comparison table.
    Report {
        /// name=path pairs, one per report.
        inputs: Vec<String>,
    },
}

/// Config-file schema. Every field is optional; flags override with a log
/// line so a run's effective settings are always visible on stderr.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    timeout: Option<f64>,
    alpha: Option<usize>,
    tau: Option<f64>,
    seed: Option<u64>,
    l2: Option<f64>,
    lr: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    threshold: Option<f64>,
    fpr_target: Option<f64>,
}

fn load_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// Resolution order: flag, then config file, then built-in default.
fn resolve<T: Copy + std::fmt::Debug>(
    name: &str,
    flag: Option<T>,
    file: Option<T>,
    default: T,
) -> T {
    match (flag, file) {
        (Some(f), Some(c)) => {
            eprintln!("config: flag --{name} {f:?} overrides config value {c:?}");
            f
        }
        (Some(f), None) => f,
        (None, Some(c)) => c,
        (None, None) => default,
    }
}

fn flow_config(timeout_flag: Option<f64>, file: &FileConfig) -> FlowConfig {
    let timeout = resolve("timeout", timeout_flag, file.timeout, 30.0);
    FlowConfig { flow_timeout_us: (timeout * 1e6) as i64, ..FlowConfig::default() }
}

fn read_packets(path: &Path) -> Result<Vec<PacketRecord>> {
    let is_capture = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("pcap") | Some("pcapng") | Some("cap")
    );
    if is_capture {
        let (packets, stats) = snids_core::capture::parse_capture(path)?;
        eprintln!(
            "capture: {} packets kept, {} skipped (non-TCP/UDP or truncated)",
            packets.len(),
            stats.skipped
        );
        Ok(packets)
    } else {
        Ok(read_packet_csv(path)?)
    }
}

fn load_model(path: &Path) -> Result<(BiAlstm, Checkpoint)> {
    let cp = Checkpoint::load(path)?;
    let model = BiAlstm::with_params(cp.config.clone(), cp.params.clone())?;
    Ok((model, cp))
}

fn evaluate_file(
    model: &BiAlstm,
    cp: &Checkpoint,
    input: &Path,
    threshold: Option<f64>,
    fpr_target: f64,
) -> Result<EvaluationReport> {
    let seqs = read_sequences(input)?;
    let outcome = run_inference(model, &cp.normalization, &cp.label_table, &seqs)?;
    let threshold = match threshold {
        Some(t) => t,
        None => {
            let t = calibrated_threshold(
                model,
                &cp.normalization,
                &cp.label_table,
                &seqs,
                fpr_target,
            )?;
            eprintln!("evaluate: calibrated threshold {t:.4} at FPR target {fpr_target}");
            t
        }
    };
    Ok(build_report(&outcome, &cp.config, threshold, fpr_target)?)
}

fn run(cli: Cli) -> Result<()> {
    let file = load_config(&cli.config)?;
    match cli.command {
        Command::Extract { input, labels, output, timeout } => {
            let packets = read_packets(&input)?;
            let rules = match labels {
                Some(p) => read_label_rules(&p)?,
                None => Vec::new(),
            };
            let config = flow_config(timeout, &file);
            let flows = extract_labeled_flows(&packets, &rules, config)?;
            write_flow_csv(&output, &flows)?;
            eprintln!("extract: {} packets -> {} flows -> {}", packets.len(), flows.len(), output.display());
        }
        Command::Sequence { input, output, alpha, tau } => {
            let alpha = resolve("alpha", alpha, file.alpha, 10);
            let tau = resolve("tau", tau, file.tau, 30.0);
            if alpha == 0 {
                bail!("--alpha must be at least 1");
            }
            let flows = read_flow_csv(&input)?;
            let n = flows.len();
            let seqs = sequences_of(flows, SequenceConfig { alpha, tau_us: (tau * 1e6) as i64 });
            write_sequences(&output, &seqs)?;
            eprintln!("sequence: {} flows -> {} sequences -> {}", n, seqs.len(), output.display());
        }
        Command::Augment { input, output, seed, augbase, save_augbase } => {
            let seed = resolve("seed", seed, file.seed, 0);
            let base: AugBase = match augbase {
                Some(p) => read_augbase(&p)?,
                None => build_augbase(seed),
            };
            if let Some(p) = save_augbase {
                write_augbase(&p, &base)?;
            }
            let table = LabelTable::default();
            let mut rng = substream(seed, "augment-noise");
            let seqs = read_sequences(&input)?;
            let n = seqs.len();
            let seqs = snids_core::pipeline::maybe_augment(seqs, true, &base, &table, &mut rng)?;
            write_sequences(&output, &seqs)?;
            eprintln!("augment: {} sequences rewritten with seed {seed} -> {}", n, output.display());
        }
        Command::Train { input, output, l2, lr, epochs, batch_size, seed } => {
            let tc = TrainConfig {
                l2_penalty: resolve("l2", l2, file.l2, 0.5),
                learning_rate: resolve("lr", lr, file.lr, 0.001),
                epochs: resolve("epochs", epochs, file.epochs, 10),
                batch_size: resolve("batch-size", batch_size, file.batch_size, 32),
                seed: resolve("seed", seed, file.seed, 0),
            };
            let seqs = read_sequences(&input)?;
            if seqs.is_empty() {
                bail!("no sequences in {}", input.display());
            }
            let table = LabelTable::default();
            let (model, normalization, losses) =
                train_on_sequences(&seqs, &table, ModelConfig::paper(), &tc)?;
            for (e, l) in losses.iter().enumerate() {
                eprintln!("train: epoch {} mean loss {l:.4}", e + 1);
            }
            Checkpoint {
                version: CHECKPOINT_VERSION,
                config: model.config.clone(),
                params: model.params.clone(),
                normalization,
                label_table: table,
                train_config: tc,
            }
            .save(&output)?;
            eprintln!("train: checkpoint -> {}", output.display());
        }
        Command::Evaluate { model, input, threshold, fpr_target, json } => {
            let threshold = threshold.or(file.threshold);
            let fpr_target = resolve("fpr-target", fpr_target, file.fpr_target, 0.015);
            let (m, cp) = load_model(&model)?;
            let report = evaluate_file(&m, &cp, &input, threshold, fpr_target)?;
            print!("{}", report.to_text(&CLASS_NAMES));
            if let Some(p) = json {
                std::fs::write(&p, serde_json::to_string_pretty(&report)?)?;
                eprintln!("evaluate: JSON report -> {}", p.display());
            }
        }
        Command::CrossEval { model, matched, shifted, threshold, fpr_target } => {
            let threshold = threshold.or(file.threshold);
            let fpr_target = resolve("fpr-target", fpr_target, file.fpr_target, 0.015);
            let (m, cp) = load_model(&model)?;
            let a = evaluate_file(&m, &cp, &matched, threshold, fpr_target)?;
            let b = evaluate_file(&m, &cp, &shifted, threshold, fpr_target)?;
            println!("== matched corpus ==");
            print!("{}", a.to_text(&CLASS_NAMES));
            println!("\n== shifted corpus ==");
            print!("{}", b.to_text(&CLASS_NAMES));
            let pe = percentage_error_f1(b.binary.f1, a.binary.f1)?;
            println!("\nF1 percentage error (shifted vs matched): {pe:+.2}%");
        }
        Command::Evade { input, labels, output, multiplier, timeout } => {
            if !matches!(multiplier, 1 | 2 | 4 | 8) {
                bail!("--multiplier must be one of 1, 2, 4, 8");
            }
            let packets = read_packets(&input)?;
            let rules = read_label_rules(&labels)?;
            let config = flow_config(timeout, &file);
            let out = slow_down(&packets, &rules, config, multiplier)?;
            write_packet_csv(&output, &out)?;
            eprintln!("evade: malicious flows slowed {multiplier}x -> {}", output.display());
        }
        Command::Synth { preset, seed, packets, labels } => {
            let seed = resolve("seed", seed, file.seed, 0);
            let spec = match preset.as_str() {
                "desk" => ScenarioSpec::desk(seed),
                "small" => ScenarioSpec::small(seed, DomainPreset::Base),
                "cross-domain" => ScenarioSpec::cross_domain(seed),
                other => bail!("unknown preset '{other}' (expected desk, small, or cross-domain)"),
            };
            let corpus = generate(&spec)?;
            write_packet_csv(&packets, &corpus.packets)?;
            write_label_rules(&labels, &corpus.rules)?;
            eprintln!(
                "synth: preset {preset} seed {seed}: {} packets -> {}, rules -> {}",
                corpus.packets.len(),
                packets.display(),
                labels.display()
            );
        }
        Command::Report { inputs } => {
            if inputs.is_empty() {
                bail!("report needs at least one name=path argument");
            }
            println!(
                "{:<24} {:>10} {:>10} {:>10} {:>10} {:>10}",
                "run", "threshold", "precision", "recall", "f1", "auc"
            );
            for item in &inputs {
                let (name, path) = item
                    .split_once('=')
                    .with_context(|| format!("'{item}' is not a name=path pair"))?;
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading report {path}"))?;
                let r: EvaluationReport = serde_json::from_str(&text)
                    .with_context(|| format!("parsing report {path}"))?;
                let auc = r.roc.auc.map_or("n/a".to_string(), |a| format!("{a:.4}"));
                println!(
                    "{:<24} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10}",
                    name, r.threshold, r.binary.precision, r.binary.recall, r.binary.f1, auc
                );
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
