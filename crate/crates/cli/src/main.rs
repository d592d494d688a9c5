use anyhow::Result;
use clap::{Parser, Subcommand};
use mim_robust_cli::commands::{self, parse_activation, parse_mode, parse_norm};
use mim_robust_cli::experiment::{env_salt, Metric};
use mim_robust_cli::io::write_json;
use mim_robust_core::adversary::AttackConfig;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "mim-robust", version, about = "Adversarially robust learning of multi-index models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct AttackArgs {
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value = "l2")]
    norm: String,
    #[arg(long, default_value_t = 20)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    step_size: f64,
    /// PGD step rule: normalized (l2 steepest ascent) or signed.
    #[arg(long, default_value = "normalized")]
    mode: String,
}

impl AttackArgs {
    fn config(&self) -> Result<AttackConfig> {
        Ok(AttackConfig::new(self.eps, self.steps, self.step_size)
            .with_norm(parse_norm(&self.norm)?)
            .with_mode(parse_mode(&self.mode)?))
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a data set from a task.
    Datagen {
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo adversarial risk of a saved network.
    AttackEval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        task: PathBuf,
        #[command(flatten)]
        attack: AttackArgs,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a first-layer feature learner.
    FeatureLearn {
        #[arg(long, value_parser = ["alg2", "alg3"])]
        alg: String,
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure oracle coverage of first-layer weights.
    OracleCheck {
        #[arg(long = "W")]
        w: PathBuf,
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        zeta: f64,
        /// Use the subset (SFL) checker instead of the deterministic one.
        #[arg(long)]
        sfl: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the second layer robustly on fixed first-layer weights.
    RobustTrain {
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        phase2: PathBuf,
        #[arg(long = "W")]
        w: PathBuf,
        #[arg(long, default_value = "relu")]
        act: String,
        #[arg(long, default_value_t = 2000)]
        test_n: usize,
        #[arg(long, default_value_t = 20)]
        test_steps: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Check an approximation construction on a grid.
    ApproxVerify {
        #[arg(long, value_parser = ["relu-dual", "poly-dual", "monomial", "riemann"])]
        case: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test AR(projected predictor) <= AR(predictor) by Monte Carlo.
    Theorem1Check {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        task: PathBuf,
        #[command(flatten)]
        attack: AttackArgs,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 200)]
        m_proj: usize,
        #[arg(long, default_value_t = mim_robust_core::verify::DEFAULT_SLACK)]
        slack: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the method comparison described by a spec file.
    Experiment {
        #[arg(long, required_unless_present = "manifest")]
        spec: Option<PathBuf>,
        /// Re-run from a manifest.json written by an earlier run.
        #[arg(long, conflicts_with = "spec")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Aggregate results.csv over seeds.
    PlotData {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "robust")]
        metric: Metric,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let salt = env_salt()?;
    match cli.cmd {
        Cmd::Datagen { task, n, seed, out } => commands::datagen(&task, n, seed, salt, &out),
        Cmd::AttackEval { model, task, attack, n, seed, out } => {
            let r = commands::attack_eval(&model, &task, attack.config()?, n, seed, salt, &out)?;
            println!("adversarial risk {:.6} +- {:.6}", r.mean, r.std_err);
            Ok(())
        }
        Cmd::FeatureLearn { alg, task, config, out } => {
            commands::feature_learn(&alg, &task, &config, salt, &out).map(|_| ())
        }
        Cmd::OracleCheck { w, task, zeta, sfl, seed, out } => {
            let a = commands::oracle_check(&w, &task, zeta, sfl, seed, salt, &out)?;
            println!("alpha_hat {a:.6}");
            Ok(())
        }
        Cmd::RobustTrain { task, phase2, w, act, test_n, test_steps, out, trace } => {
            let act = parse_activation(&act)?;
            commands::robust_train(&task, &phase2, &w, act, test_n, test_steps, salt, &out, trace.as_deref())
                .map(|_| ())
        }
        Cmd::ApproxVerify { case, config, out } => {
            let r = commands::approx_verify(&case, &config, salt)?;
            write_json(&out, &r)?;
            println!("max error {:.3e}", r.max_error);
            Ok(())
        }
        Cmd::Theorem1Check { model, task, attack, n, m_proj, slack, seed, out } => {
            let r = commands::theorem1(&model, &task, attack.config()?, n, m_proj, slack, seed, salt, &out)?;
            println!("{}", if r.pass { "pass" } else { "FAIL" });
            Ok(())
        }
        Cmd::Experiment { spec, manifest, out, threads } => {
            commands::experiment(spec.as_deref(), manifest.as_deref(), &out, threads, salt)
        }
        Cmd::PlotData { input, out, metric } => commands::plot_data(&input, &out, metric),
    }
}
