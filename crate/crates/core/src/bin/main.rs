use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use glaucoma_report::ablation::{dataset_vocabulary, run_sweep, Sweep};
use glaucoma_report::autodiff::OpKind;
use glaucoma_report::config::{RunConfig, SeedStream};
use glaucoma_report::data::{generate_dataset, load_jsonl, parse_jsonl, save_jsonl, GlaucomaSample, Risk};
use glaucoma_report::diagnostics::{gradient_suite, GRADCHECK_TOLERANCE};
use glaucoma_report::label::LabelVocabulary;
use glaucoma_report::metrics::{evaluate_lines, MetricReport};
use glaucoma_report::model::ReportModel;
use glaucoma_report::train::{checkpoint, evaluate_loss, EpochRecord, Trainer};
use glaucoma_report::{Error, Result};

#[derive(Parser)]
#[command(name = "glaucoma-report", version, about = "Train and run a glaucoma fundus report generator")]
struct Cli {
    /// Seed for every random stream; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-sample work (0 = all cores); overrides the config file.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as JSON lines.
    GenData {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Fraction of high-risk records.
        #[arg(long, default_value_t = 0.5)]
        high_fraction: f64,
    },
    /// Train on the configured dataset and write a checkpoint and a loss log.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print one generated report per input record.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON-lines file, or a single JSON record.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam_width: usize,
        #[arg(long, default_value_t = 80)]
        max_len: usize,
    },
    /// Score candidate reports against references, one per line.
    Evaluate {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: PathBuf,
    },
    /// Train and score one model per sweep point.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// alpha, modality or weight-mode
        #[arg(long)]
        sweep: String,
    },
    /// Finite-difference gradient check of every model block.
    Gradcheck {
        /// Corrupt the backward rule of this op (negative control).
        #[arg(long, hide = true)]
        corrupt_op: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData {
            count,
            out,
            high_fraction,
        } => gen_data(count, cli.seed.unwrap_or(0), &out, high_fraction),
        Command::Train { config } => train(&load_config(&config, cli.seed, cli.jobs)?),
        Command::Generate {
            checkpoint,
            input,
            beam_width,
            max_len,
        } => generate(&checkpoint, &input, beam_width, max_len, cli.jobs.unwrap_or(1)),
        Command::Evaluate { candidates, references } => evaluate(&candidates, &references),
        Command::Ablate { config, sweep } => {
            let sweep: Sweep = sweep.parse()?;
            ablate(&load_config(&config, cli.seed, cli.jobs)?, sweep)
        }
        Command::Gradcheck { corrupt_op } => gradcheck(corrupt_op.as_deref()),
    }
}

fn load_config(path: &Path, seed: Option<u64>, jobs: Option<usize>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(j) = jobs {
        cfg.train.jobs = j;
    }
    Ok(cfg)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn gen_data(count: usize, seed: u64, out: &Path, high_fraction: f64) -> Result<ExitCode> {
    if !(0.0..=1.0).contains(&high_fraction) {
        return Err(Error::Validation(format!("high_fraction {high_fraction} outside [0, 1]")));
    }
    let data = generate_dataset(count, seed, high_fraction);
    save_jsonl(out, &data)?;
    let high = data.iter().filter(|s| s.glaucoma_risk_assessment == Risk::High).count();
    println!("wrote {count} records to {}", out.display());
    println!("high risk: {high}, low risk: {}", count - high);
    println!(
        "fields: optic_disc_size cup_to_disc_ratio isnt_rule_followed rim_pallor rim_color bayoneting sharp_edge \
         laminar_dot_sign notching rim_thinning additional_observations neuroretinal_rim glaucoma_risk_assessment \
         confidence_level report"
    );
    Ok(ExitCode::SUCCESS)
}

fn append_log(file: &mut fs::File, path: &Path, r: &EpochRecord) -> Result<()> {
    let line = serde_json::to_string(r).map_err(|e| Error::Validation(e.to_string()))?;
    writeln!(file, "{line}").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn train(cfg: &RunConfig) -> Result<ExitCode> {
    let data = load_jsonl(&cfg.data.dataset)?;
    if data.is_empty() {
        return Err(Error::Validation(format!("{} holds no records", cfg.data.dataset.display())));
    }
    let vocab = dataset_vocabulary(&data);
    let mut model = ReportModel::new(cfg.model.clone(), vocab, LabelVocabulary::default(), cfg.seed_for(SeedStream::Init))?;
    let examples = data.iter().map(|s| model.example(s)).collect::<Result<Vec<_>>>()?;
    let tc = cfg.train_config();
    let mut trainer = Trainer::new(tc.clone(), &model)?;
    let log_path = &cfg.data.log;
    let mut log = fs::File::create(log_path).map_err(|e| Error::Io {
        path: log_path.clone(),
        source: e,
    })?;
    let init = evaluate_loss(&model, &examples, &tc.loss, tc.threads())?;
    let r0 = EpochRecord {
        epoch: 0,
        loss1: init.loss1,
        loss2: init.loss2,
        loss_t: init.loss_t,
        total: init.total,
        wall_time: 0.0,
    };
    append_log(&mut log, log_path, &r0)?;
    println!(
        "{} records, vocabulary {}, {} parameters",
        data.len(),
        model.vocab.len(),
        model.store.num_scalars()
    );
    println!("epoch 0: total {:.4}", init.total);
    let ckpt = &cfg.data.checkpoint;
    let every = tc.checkpoint_every;
    trainer.fit(&mut model, &examples, |r, m| {
        println!(
            "epoch {}: loss1 {:.4} loss2 {:.4} loss_t {:.4} total {:.4} ({:.1}s)",
            r.epoch, r.loss1, r.loss2, r.loss_t, r.total, r.wall_time
        );
        append_log(&mut log, log_path, r)?;
        if every > 0 && r.epoch % every == 0 {
            checkpoint::save(m, ckpt)?;
        }
        Ok(())
    })?;
    checkpoint::save(&model, ckpt)?;
    println!("checkpoint written to {}", ckpt.display());
    Ok(ExitCode::SUCCESS)
}

fn read_samples(path: &Path) -> Result<Vec<GlaucomaSample>> {
    let text = read(path)?;
    match parse_jsonl(&text) {
        Ok(v) => Ok(v),
        Err(first) => {
            // A single pretty-printed record is accepted too.
            let s: GlaucomaSample = serde_json::from_str(&text).map_err(|_| first)?;
            s.validate()?;
            Ok(vec![s])
        }
    }
}

fn generate(ckpt: &Path, input: &Path, beam_width: usize, max_len: usize, jobs: usize) -> Result<ExitCode> {
    if beam_width == 0 || max_len == 0 {
        return Err(Error::Validation("beam_width and max_len must be positive".into()));
    }
    let model = checkpoint::load(ckpt)?;
    let samples = read_samples(input)?;
    let examples = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            model.inference_example(s).map_err(|e| match e {
                Error::Validation(m) => Error::Validation(format!("record {}: {m}", i + 1)),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for out in model.generate_all(&examples, beam_width, max_len, jobs)? {
        println!("{}", model.vocab.decode(&out));
    }
    Ok(ExitCode::SUCCESS)
}

fn evaluate(candidates: &Path, references: &Path) -> Result<ExitCode> {
    let c = read(candidates)?;
    let r = read(references)?;
    let report = evaluate_lines(&lines(&c), &lines(&r))?;
    println!("{}", MetricReport::HEADER.join(" "));
    println!("{}", report.percent_row());
    Ok(ExitCode::SUCCESS)
}

fn ablate(cfg: &RunConfig, sweep: Sweep) -> Result<ExitCode> {
    let data = load_jsonl(&cfg.data.dataset)?;
    let table = run_sweep(cfg, &data, sweep, |line| eprintln!("{line}"))?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(corrupt: Option<&str>) -> Result<ExitCode> {
    let fault = match corrupt {
        None => None,
        Some(name) => Some(OpKind::parse(name).ok_or_else(|| Error::Validation(format!("unknown op {name:?}")))?),
    };
    let checks = gradient_suite(fault)?;
    let mut ok = true;
    for c in &checks {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        ok &= c.passed();
        println!(
            "{:<32} params {:>5}  max rel error {:.3e}  {:>6.2}s  {verdict}",
            c.name, c.params, c.max_error, c.seconds
        );
    }
    if ok {
        println!("all blocks below {GRADCHECK_TOLERANCE:e}");
        Ok(ExitCode::SUCCESS)
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
        eprintln!("gradient check failed: {}", failed.join(", "));
        Ok(ExitCode::from(2))
    }
}

fn lines(text: &str) -> Vec<String> {
    text.lines().map(str::to_string).collect()
}
