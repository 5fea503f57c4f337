use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shepard_dp::config::RunConfig;
use shepard_dp::experiment::{
    run_compare_interpolation, run_convergence_study, run_residual_map, run_simulate, run_solve,
};
use shepard_dp::Result;

/// Meshfree dynamic programming with Shepard approximation.
#[derive(Parser, Debug)]
#[command(name = "shepard-dp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration
    #[arg(short, long)]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set problem.u_count=9`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides `output_dir`)
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for the value function; writes values.csv and residuals.csv
    Solve(Common),
    /// Solve and run the closed loop; writes trajectory.csv and decay.json
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Initial state, comma separated
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Option<Vec<f64>>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Solve and write the Bellman residual over the nodes to residual.csv
    ResidualMap(Common),
    /// Errors against a reference over `study.k_list`; writes convergence.csv
    ConvergenceStudy(Common),
    /// Run the interpolation-based iteration next to the Shepard one
    CompareInterpolation(Common),
}

fn load(common: &Common, extra: Vec<String>) -> Result<RunConfig> {
    let mut overrides = common.set.clone();
    overrides.extend(extra);
    let mut cfg = RunConfig::load(&common.config, &overrides)?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve(common) => {
            let cfg = load(&common, vec![])?;
            let solved = run_solve(&cfg)?;
            println!("{}", solved.summary);
            println!("output       {}", cfg.output_dir.display());
        }
        Command::Simulate { common, x0, steps } => {
            let mut extra = vec![];
            if let Some(x0) = x0 {
                extra.push(format!("feedback.x0={}", serde_json::to_string(&x0)?));
            }
            if let Some(steps) = steps {
                extra.push(format!("feedback.steps={steps}"));
            }
            let cfg = load(&common, extra)?;
            let o = run_simulate(&cfg)?;
            println!("{}", o.solved.summary);
            let t = &o.run.trajectory;
            println!("steps        {} ({})", t.steps(), o.run.reason.as_str());
            println!("total cost   {:.6}", t.total_cost());
            println!("in R_eta     {} of {} states", o.decay.in_region, t.states.len());
            match o.decay.region_exit {
                Some(l) => println!("leaves R_eta at step {l}"),
                None => println!("never leaves R_eta"),
            }
            println!("decay        {}", if o.decay.holds { "holds" } else { "violated" });
            println!("output       {}", cfg.output_dir.display());
        }
        Command::ResidualMap(common) => {
            let cfg = load(&common, vec![])?;
            let o = run_residual_map(&cfg)?;
            println!("{}", o.solved.summary);
            let outside = o.field.region_mask().iter().filter(|&&r| !r).count();
            println!("outside R    {outside} of {} nodes (eta = {})", o.solved.setup.nodes.len(), o.field.eta);
            println!("output       {}", cfg.output_dir.display());
        }
        Command::ConvergenceStudy(common) => {
            let cfg = load(&common, vec![])?;
            let o = run_convergence_study(&cfg)?;
            println!("metric {:?}, reference {}", o.metric, if o.reference_cached { "cached" } else { "computed" });
            println!("{:>6} {:>12} {:>12} {:>12} {:>6}", "k", "h", "1/k", "error", "iters");
            for r in &o.rows {
                println!(
                    "{:>6} {:>12.6e} {:>12.6e} {:>12.6e} {:>6}{}",
                    r.k,
                    r.h,
                    1.0 / r.k as f64,
                    r.error,
                    r.iterations,
                    if r.converged { "" } else { " (not converged)" }
                );
            }
            println!("output       {}", cfg.output_dir.display());
        }
        Command::CompareInterpolation(common) => {
            let cfg = load(&common, vec![])?;
            let o = run_compare_interpolation(&cfg)?;
            let i = &o.interpolation;
            println!("{}", o.shepard.summary);
            let verdict = if i.diverged {
                "diverged"
            } else if i.converged {
                "converged"
            } else {
                "stopped at max_iter"
            };
            println!("interpolation {verdict} after {} iterations", i.iterations);
            println!("condition    {:.3e}", i.condition);
            println!("max |diff|   {:.3e}", o.max_difference);
            println!("output       {}", cfg.output_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
