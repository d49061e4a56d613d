use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use fewshot_dml::encoder::tokenize;
use fewshot_dml::eval::{macro_f1, predict, InferenceConfig};
use fewshot_dml::gradcheck::{run_suite, GradCheckSpec};
use fewshot_dml::harness::{
    default_epochs, emit_report, load_dataset, load_report, make_fold_plan, render_table, run_experiment,
    synth_dataset, Dataset, ExperimentConfig, FoldPlan, GridSpec, ShotSize, SynthSpec,
};
use fewshot_dml::losses::{LossConfig, LossKind};
use fewshot_dml::trainer::{train, Objective, TrainConfig, TrainedModel, TrainingSet};
use fewshot_dml::{Error, Result};

#[derive(Parser)]
#[command(name = "fewshot-dml", version, about = "Metric-learning losses for few-shot text classification")]
struct Cli {
    /// JSON file with default values for any flag; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare analytic and finite-difference gradients of every loss.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic TSV dataset.
    Synth {
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the fold plan of a dataset as JSON.
    Folds {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        knobs: Knobs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model on a dataset, or on one fold's few-shot sample.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, requires = "fold")]
        plan: Option<PathBuf>,
        #[arg(long)]
        fold: Option<usize>,
        #[command(flatten)]
        knobs: Knobs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model on a dataset, or on one fold's test split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, requires = "fold")]
        plan: Option<PathBuf>,
        #[arg(long)]
        fold: Option<usize>,
        #[command(flatten)]
        knobs: Knobs,
    },
    /// Cross-validated grid search of every selected loss against the cross-entropy baseline.
    Grid {
        #[arg(long, required_unless_present = "count_only")]
        data: Option<PathBuf>,
        #[command(flatten)]
        knobs: Knobs,
        /// Print the number of grid points per loss and exit.
        #[arg(long)]
        count_only: bool,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Render one or more JSON reports as a table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Re-emit JSON, text and CSV for each input into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Deserialize, Default, Clone)]
#[serde(default, deny_unknown_fields)]
struct SynthArgs {
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d_signal: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long = "synth-seed")]
    synth_seed: Option<u64>,
}

/// Flags shared by the experiment commands. Every field may also come from the config file.
#[derive(Args, Deserialize, Default, Clone)]
#[serde(default)]
struct Knobs {
    #[arg(long)]
    seed: Option<u64>,
    /// 20, 100, 1000 or full.
    #[arg(long)]
    shots: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    /// One loss, or a comma-separated list for `grid` (default: every metric-learning loss).
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    softmax_scale: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    beta_inf: Option<f64>,
    #[arg(long)]
    blended: bool,
    #[arg(long)]
    max_over_k: bool,
    #[arg(long)]
    full_grid: bool,
    /// Search the original small learning rates instead of the desk-scale ones.
    #[arg(long)]
    small_lr: bool,
    #[arg(long)]
    dml_only: bool,
    /// Allow shot sizes smaller than the number of classes.
    #[arg(long)]
    no_strict: bool,
}

impl Knobs {
    fn or(self, file: Knobs) -> Knobs {
        Knobs {
            seed: self.seed.or(file.seed),
            shots: self.shots.or(file.shots),
            folds: self.folds.or(file.folds),
            loss: self.loss.or(file.loss),
            beta: self.beta.or(file.beta),
            margin: self.margin.or(file.margin),
            temperature: self.temperature.or(file.temperature),
            softmax_scale: self.softmax_scale.or(file.softmax_scale),
            k: self.k.or(file.k),
            gamma: self.gamma.or(file.gamma),
            lambda: self.lambda.or(file.lambda),
            delta: self.delta.or(file.delta),
            alpha: self.alpha.or(file.alpha),
            lr: self.lr.or(file.lr),
            epochs: self.epochs.or(file.epochs),
            batch_size: self.batch_size.or(file.batch_size),
            workers: self.workers.or(file.workers),
            beta_inf: self.beta_inf.or(file.beta_inf),
            blended: self.blended || file.blended,
            max_over_k: self.max_over_k || file.max_over_k,
            full_grid: self.full_grid || file.full_grid,
            small_lr: self.small_lr || file.small_lr,
            dml_only: self.dml_only || file.dml_only,
            no_strict: self.no_strict || file.no_strict,
        }
    }

    fn shot(&self) -> Result<ShotSize> {
        self.shots.as_deref().unwrap_or("20").parse()
    }

    fn losses(&self) -> Result<Vec<LossKind>> {
        match self.loss.as_deref() {
            None | Some("all") => Ok(LossKind::DML.to_vec()),
            Some(s) => s.split(',').map(|p| p.trim().parse()).collect(),
        }
    }

    fn loss_config(&self, kind: LossKind) -> LossConfig {
        let mut l = LossConfig::new(kind);
        l.beta = self.beta.unwrap_or(l.beta);
        l.margin = self.margin.unwrap_or(l.margin);
        l.temperature = self.temperature.unwrap_or(l.temperature);
        l.softmax_scale = self.softmax_scale.unwrap_or(l.softmax_scale);
        l.proxies_per_class = self.k.unwrap_or(l.proxies_per_class);
        l.st_gamma = self.gamma.unwrap_or(l.st_gamma);
        l.st_lambda = self.lambda.unwrap_or(l.st_lambda);
        if let Some(d) = self.delta {
            if kind == LossKind::SoftTriple {
                l.st_delta = d;
            } else {
                l.pa_delta = d;
            }
        }
        l.pa_alpha = self.alpha.unwrap_or(l.pa_alpha);
        l
    }

    fn train_config(&self, kind: LossKind) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let epochs = match self.epochs {
            Some(e) => e,
            None => default_epochs(self.shot()?),
        };
        Ok(TrainConfig {
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            epochs,
            seed: self.seed.unwrap_or(0),
            loss: self.loss_config(kind),
            objective: if self.dml_only { Objective::DmlOnly } else { Objective::Combined },
            ..d
        })
    }

    fn inference(&self) -> InferenceConfig {
        if self.blended {
            InferenceConfig {
                max_over_k: self.max_over_k,
                ..InferenceConfig::blended(self.beta_inf.unwrap_or(0.5))
            }
        } else {
            InferenceConfig::dense()
        }
    }
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct FileConfig {
    #[serde(flatten)]
    knobs: Knobs,
    synth: SynthArgs,
}

fn read_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => Ok(FileConfig::default()),
    }
}

fn read_plan(path: &Path) -> Result<FoldPlan> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn fold_indices(plan: &FoldPlan, fold: usize, dataset: &Dataset, few: bool) -> Result<Vec<usize>> {
    let f = plan
        .folds
        .get(fold)
        .ok_or_else(|| Error::Config(format!("fold {fold} not in a plan of {}", plan.folds.len())))?;
    let idx = if few { f.fewshot.clone() } else { f.test.clone() };
    if idx.iter().any(|&i| i >= dataset.len()) {
        return Err(Error::Config("fold plan does not match the dataset".into()));
    }
    Ok(idx)
}

fn select(dataset: &Dataset, plan: Option<&Path>, fold: Option<usize>, few: bool) -> Result<Vec<usize>> {
    match (plan, fold) {
        (Some(p), Some(f)) => fold_indices(&read_plan(p)?, f, dataset, few),
        _ => Ok((0..dataset.len()).collect()),
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => Ok(std::fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let file = read_file_config(cli.config.as_deref())?;
    match cli.command {
        Command::Gradcheck { instances, json } => {
            let spec = GradCheckSpec {
                instances,
                ..GradCheckSpec::default()
            };
            let start = std::time::Instant::now();
            let report = run_suite(&spec)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                for l in &report.losses {
                    println!(
                        "{:<12} {} instances  worst rel err {:.3e}  {}",
                        l.loss.display_name(),
                        l.instances.len(),
                        l.worst_rel_err(),
                        if l.passed() { "PASS" } else { "FAIL" }
                    );
                }
                println!("elapsed {:.2}s", start.elapsed().as_secs_f64());
            }
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Synth { synth, out } => {
            let f = file.synth;
            let d = SynthSpec::default();
            let spec = SynthSpec {
                classes: synth.classes.or(f.classes).unwrap_or(d.classes),
                n: synth.n.or(f.n).unwrap_or(d.n),
                d_signal: synth.d_signal.or(f.d_signal).unwrap_or(d.d_signal),
                noise: synth.noise.or(f.noise).unwrap_or(d.noise),
                seed: synth.synth_seed.or(f.synth_seed).unwrap_or(d.seed),
                ..d
            };
            let data = synth_dataset(&spec)?;
            data.write_tsv(std::io::BufWriter::new(std::fs::File::create(&out)?))?;
            eprintln!("wrote {} examples over {} classes to {}", data.len(), data.classes, out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Folds { data, knobs, out } => {
            let k = knobs.or(file.knobs);
            let d = load_dataset(&data)?;
            let plan = make_fold_plan(&d, k.seed.unwrap_or(0), k.folds.unwrap_or(40), k.shot()?, !k.no_strict)?;
            write_or_print(out.as_deref(), &(plan.to_json()? + "\n"))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Train {
            data,
            plan,
            fold,
            knobs,
            out,
        } => {
            let k = knobs.or(file.knobs);
            let d = load_dataset(&data)?;
            let kind: LossKind = k.loss.as_deref().unwrap_or("cce").parse()?;
            let cfg = k.train_config(kind)?;
            let idx = select(&d, plan.as_deref(), fold, true)?;
            let texts: Vec<&str> = idx.iter().map(|&i| d.examples[i].text.as_str()).collect();
            let labels = idx.iter().map(|&i| d.examples[i].label).collect();
            let set = TrainingSet::from_texts(&texts, labels, d.classes, cfg.encoder.vocab_buckets)?;
            let model = train(&set, &cfg)?;
            model.save(&out)?;
            eprintln!(
                "trained {} on {} examples for {} steps, final loss {:.6}",
                kind,
                set.len(),
                model.log.steps.len(),
                model.final_loss().unwrap_or(f64::NAN)
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            model,
            data,
            plan,
            fold,
            knobs,
        } => {
            let k = knobs.or(file.knobs);
            let m = TrainedModel::load(&model)?;
            let d = load_dataset(&data)?;
            let idx = select(&d, plan.as_deref(), fold, false)?;
            let buckets = m.encoder_params.dims().vocab_buckets;
            let texts: Vec<_> = idx.iter().map(|&i| tokenize(&d.examples[i].text, buckets)).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| d.examples[i].label).collect();
            let preds = predict(&m, &texts, &k.inference())?;
            let result = macro_f1(&preds, &labels, d.classes)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Grid {
            data,
            knobs,
            count_only,
            out,
        } => {
            let k = knobs.or(file.knobs);
            let losses = k.losses()?;
            let base = k.train_config(LossKind::Cce)?;
            let cfg = ExperimentConfig {
                base,
                losses: losses.clone(),
                full_grid: k.full_grid,
                small_learning_rates: k.small_lr,
                beta_inf: k.beta_inf.unwrap_or(0.5),
                max_over_k: k.max_over_k,
                workers: k.workers.unwrap_or(0),
            };
            if count_only {
                println!("{:<12} {}", "CCE", cfg.baseline_grid().len());
                for l in losses {
                    let g: GridSpec = cfg.loss_grid(l, &cfg.base);
                    println!("{:<12} {}", l.display_name(), g.len());
                }
                return Ok(ExitCode::SUCCESS);
            }
            let data = data.expect("required by clap");
            let d = load_dataset(&data)?;
            let plan = make_fold_plan(&d, k.seed.unwrap_or(0), k.folds.unwrap_or(40), k.shot()?, !k.no_strict)?;
            let report = run_experiment(&d, &plan, &cfg)?;
            let stem = format!("{}-{}", d.name, plan.shot_size);
            let paths = emit_report(&report, &out, &stem)?;
            print!("{}", render_table(std::slice::from_ref(&report)));
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { inputs, out } => {
            let reports = inputs.iter().map(|p| load_report(p)).collect::<Result<Vec<_>>>()?;
            print!("{}", render_table(&reports));
            if let Some(dir) = out {
                for (r, p) in reports.iter().zip(&inputs) {
                    let stem = p.file_stem().map_or("report".into(), |s| s.to_string_lossy().into_owned());
                    emit_report(r, &dir, &stem)?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
