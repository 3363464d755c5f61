use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use tabletop_icl::harness::{
    ablate_loop_mode, ablate_noise, ablate_prompts, ablate_sampling, ablate_shots, emit_csv,
    make_completer, render_csv, run_eval, DemoPolicy, Harness, KeyframeMode, LoopMode,
    NoiseConfig, RunConfig, DEFAULT_INTERVALS, DEFAULT_NOISE_SCALES, DEFAULT_SHOTS,
};
use tabletop_icl::model::save_episodes;
use tabletop_icl::{EvalReport, Provider, Result, TaskId};

#[derive(Parser)]
#[command(name = "ticl", version, about = "In-context imitation of tabletop manipulation demos")]
struct Cli {
    /// TOML run config; flags given on the command line override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record scripted expert demonstrations to a JSONL file.
    GenerateDemos {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the prompt for one evaluation episode.
    BuildPrompt {
        #[command(flatten)]
        run: RunArgs,
        /// Evaluation episode index.
        #[arg(long, default_value_t = 0)]
        episode: usize,
    },
    /// Run one evaluation and report its success rate.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Sweep one factor and report every arm.
    Ablate {
        factor: Factor,
        #[command(flatten)]
        run: RunArgs,
        /// Arm values: intervals, shot counts or noise scales.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the resolved run config as TOML.
    ShowConfig {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Factor {
    Sampling,
    Shots,
    Noise,
    Prompts,
    Loop,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Remote,
    MockNearest,
    MockCompositional,
}

#[derive(Clone, Copy, ValueEnum)]
enum LoopArg {
    Open,
    Closed,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Disjoint,
    ReuseDemoSeeds,
    SameLayout,
}

#[derive(Args, Default)]
struct RunArgs {
    #[arg(long)]
    task: Option<TaskId>,
    #[arg(long, value_enum)]
    provider: Option<ProviderArg>,
    #[arg(long)]
    n_demos: Option<usize>,
    #[arg(long)]
    n_eval: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Keyframe velocity threshold.
    #[arg(long)]
    delta: Option<f64>,
    /// Sample every k-th frame instead of keyframes.
    #[arg(long)]
    uniform: Option<usize>,
    #[arg(long, value_enum)]
    loop_mode: Option<LoopArg>,
    #[arg(long, value_enum)]
    demo_policy: Option<PolicyArg>,
    /// Index of the built-in system prompt.
    #[arg(long)]
    system_prompt: Option<usize>,
    /// Scale of the observation noise; 0 disables it.
    #[arg(long)]
    noise_k: Option<f64>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Evaluate episodes one at a time.
    #[arg(long)]
    serial: bool,
}

impl RunArgs {
    fn apply(&self, mut c: RunConfig) -> RunConfig {
        if let Some(t) = self.task {
            c.task = t;
        }
        if let Some(p) = self.provider {
            c.provider = match p {
                ProviderArg::Remote => Provider::Remote,
                ProviderArg::MockNearest => Provider::MockNearest,
                ProviderArg::MockCompositional => Provider::MockCompositional,
            };
        }
        if let Some(n) = self.n_demos {
            c.n_demos = n;
        }
        if let Some(n) = self.n_eval {
            c.n_eval = n;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(d) = self.delta {
            c.delta = d;
        }
        if let Some(k) = self.uniform {
            c.keyframe_mode = KeyframeMode::Uniform(k);
        }
        if let Some(m) = self.loop_mode {
            c.loop_mode = match m {
                LoopArg::Open => LoopMode::Open,
                LoopArg::Closed => LoopMode::Closed,
            };
        }
        if let Some(p) = self.demo_policy {
            c.demo_policy = match p {
                PolicyArg::Disjoint => DemoPolicy::Disjoint,
                PolicyArg::ReuseDemoSeeds => DemoPolicy::ReuseDemoSeeds,
                PolicyArg::SameLayout => DemoPolicy::SameLayout,
            };
        }
        if let Some(i) = self.system_prompt {
            c.system_prompt = i;
        }
        if let Some(k) = self.noise_k {
            c.noise = (k > 0.0).then(|| NoiseConfig {
                k,
                ..c.noise.unwrap_or_default()
            });
        }
        if let Some(e) = &self.endpoint {
            c.remote.endpoint = e.clone();
        }
        if let Some(m) = &self.model {
            c.remote.model = m.clone();
        }
        if self.serial {
            c.parallel = false;
        }
        c
    }
}

fn resolve(config: Option<&PathBuf>, run: &RunArgs) -> Result<RunConfig> {
    let base = match config {
        Some(path) => RunConfig::from_toml_file(path)?,
        None => RunConfig::default(),
    };
    let c = run.apply(base);
    c.validate()?;
    Ok(c)
}

fn whole(values: &[f64], what: &str) -> Result<Vec<usize>> {
    values
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && v >= 1.0 {
                Ok(v as usize)
            } else {
                Err(tabletop_icl::Error::Argument(format!("{what} {v} must be a positive integer")))
            }
        })
        .collect()
}

fn report(reports: &[EvalReport], csv: Option<&PathBuf>) -> Result<()> {
    for r in reports {
        println!("{r}");
    }
    match csv {
        Some(path) => {
            emit_csv(reports, path)?;
            info!("wrote {}", path.display());
        }
        None => print!("{}", render_csv(reports)?),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config_path = cli.config.as_ref();
    match cli.command {
        Command::GenerateDemos { run, out } => {
            let config = resolve(config_path, &run)?;
            let demos = Harness::new(config)?.demo_pool()?;
            let episodes: Vec<_> = demos.into_iter().map(|d| d.episode).collect();
            save_episodes(&episodes, &out)?;
            println!("wrote {} episodes to {}", episodes.len(), out.display());
        }
        Command::BuildPrompt { run, episode } => {
            let config = resolve(config_path, &run)?;
            let prompt = Harness::new(config)?.build_prompt(episode)?;
            println!("{}\n\n{}", prompt.system, prompt.body);
        }
        Command::Eval { run, csv } => {
            let config = resolve(config_path, &run)?;
            report(&[run_eval(&config)?], csv.as_ref())?;
        }
        Command::Ablate { factor, run, values, csv } => {
            let config = resolve(config_path, &run)?;
            let completer = make_completer(&config)?;
            let c = completer.as_ref();
            let reports = match factor {
                Factor::Sampling => {
                    let k = if values.is_empty() { DEFAULT_INTERVALS.to_vec() } else { whole(&values, "interval")? };
                    ablate_sampling(&config, &k, c)?
                }
                Factor::Shots => {
                    let n = if values.is_empty() { DEFAULT_SHOTS.to_vec() } else { whole(&values, "shot count")? };
                    ablate_shots(&config, &n, c)?
                }
                Factor::Noise => {
                    let k = if values.is_empty() { DEFAULT_NOISE_SCALES.to_vec() } else { values };
                    ablate_noise(&config, &k, c)?
                }
                Factor::Prompts => ablate_prompts(&config, c)?,
                Factor::Loop => ablate_loop_mode(&config, c)?,
            };
            report(&reports, csv.as_ref())?;
        }
        Command::ShowConfig { run } => {
            print!("{}", resolve(config_path, &run)?.to_toml());
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
            ExitCode::FAILURE
        }
    }
}
