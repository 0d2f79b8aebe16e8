use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use polattack::envs::Task;
use polattack::harness::{self, ExperimentManifest, GradcheckOptions, ResultTable};

#[derive(Parser)]
#[command(name = "polattack", version, about = "Observation attacks on Gaussian RL policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment manifest (JSON); defaults apply when omitted.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Overrides the manifest's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides episodes per seed.
    #[arg(long)]
    episodes: Option<usize>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restricts the run to these tasks.
    #[arg(long = "task")]
    tasks: Vec<Task>,
}

impl Common {
    fn manifest(&self) -> anyhow::Result<ExperimentManifest> {
        let mut m = match &self.manifest {
            Some(p) => ExperimentManifest::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentManifest::default(),
        };
        if let Some(s) = self.seed {
            m.master_seed = s;
        }
        if let Some(e) = self.episodes {
            m.episodes_per_seed = e;
        }
        if let Some(o) = &self.out {
            m.output_dir = o.clone();
        }
        if !self.tasks.is_empty() {
            m.tasks = self.tasks.clone();
        }
        m.validate()?;
        Ok(m)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

#[derive(Subcommand)]
enum Command {
    /// Train benign policies for the manifest's tasks.
    Train(Common),
    /// Adversarially fine-tune the benign policies with PGD.
    Defend(Common),
    /// Evaluate every method against every task (attack matrix).
    AttackEval {
        #[command(flatten)]
        common: Common,
        /// Attack the defended policies (post-defense matrix).
        #[arg(long)]
        defended: bool,
    },
    /// DAPGD divergence ablation on the ablation task.
    Ablate(Common),
    /// Finite-difference and quadrature checks of the losses and gradients.
    Gradcheck {
        #[arg(long, default_value_t = 200)]
        pairs: usize,
        #[arg(long, default_value_t = 100)]
        nets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-render a result CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "markdown")]
        format: Format,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_metadata(m: &ExperimentManifest) -> anyhow::Result<()> {
    std::fs::create_dir_all(&m.output_dir)?;
    std::fs::write(
        m.output_dir.join("metadata.json"),
        serde_json::to_string_pretty(&m.metadata())?,
    )?;
    Ok(())
}

fn emit(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(c) => {
            let m = c.manifest()?;
            for &task in &m.tasks {
                let out = harness::train_task(&m, task)?;
                let b = &out.baseline;
                println!(
                    "{task}: policy {:.3} vs random {:.3}±{:.3}{}",
                    b.policy_mean,
                    b.random_mean,
                    b.random_std,
                    if b.beats_random { "" } else { " (does not beat random baseline by 3 std)" }
                );
            }
        }
        Command::Defend(c) => {
            let m = c.manifest()?;
            for &task in &m.tasks {
                let out = harness::defend_task(&m, task)?;
                println!("{task}: defended policy {:.3}", out.baseline.policy_mean);
            }
        }
        Command::AttackEval { common, defended } => {
            let m = common.manifest()?;
            let policies = harness::load_policies(&m, &m.tasks, defended)?;
            let run = harness::run_matrix(&m, &policies, defended.then_some(m.defense.iters))?;
            let name = if defended { "post_defense_matrix" } else { "attack_matrix" };
            harness::write_run(&m.output_dir, name, &run)?;
            write_metadata(&m)?;
            print!("{}", run.table.to_markdown());
        }
        Command::Ablate(c) => {
            let m = c.manifest()?;
            let policies = harness::load_policies(&m, &[m.ablation.task], false)?;
            let run = harness::run_ablation(&m, &policies)?;
            harness::write_run(&m.output_dir, "ablation", &run)?;
            write_metadata(&m)?;
            print!("{}", run.table.to_markdown());
        }
        Command::Gradcheck { pairs, nets, seed } => {
            let summary = harness::gradcheck(&GradcheckOptions {
                pairs,
                nets,
                seed,
                ..GradcheckOptions::default()
            });
            print!("{}", summary.render());
            if !summary.all_passed() {
                bail!("{} of {} checks failed", summary.total() - summary.passed(), summary.total());
            }
        }
        Command::Report { input, format, out } => {
            let table = ResultTable::load_csv(&input).with_context(|| format!("reading {}", input.display()))?;
            let text = match format {
                Format::Csv => table.to_csv_string()?,
                Format::Markdown => table.to_markdown(),
            };
            emit(out.as_deref(), &text)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
