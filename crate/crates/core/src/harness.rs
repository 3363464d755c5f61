//! End-to-end evaluation: demonstrations → prompt → completion → parse →
//! execution → success predicate, plus the ablation sweeps and CSV output.

use std::fmt;
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::dediscretize_action;
use crate::error::{Error, Result};
use crate::keyframe::{extract_keyframes, sample_uniform, KeyframeIndices};
use crate::llm::{
    Completer, LlmError, MockCompositional, MockDemo, MockNearest, Provider, Query, RemoteClient,
    RemoteConfig,
};
use crate::model::{Episode, ObjectObservation, WorkspaceBounds};
use crate::prompt::{
    assemble_prompt, build_closed_loop_example, build_icl_example, default_system_prompts,
    format_input, observation_bins, parse_response, IclExample, PromptBundle,
};
use crate::sim::{
    add_pose_noise, ResetOutcome, SimConfig, Simulator, TaskId, Variation,
    BASE_SIGMA_ROTATION_DEG, BASE_SIGMA_TRANSLATION,
};

/// Demo reset seeds start this far above the run seed, keeping them clear of
/// the evaluation seeds `seed .. seed + n_eval`.
pub const DEMO_SEED_OFFSET: u64 = 1_000_000_000;

pub const DEFAULT_INTERVALS: [usize; 5] = [5, 10, 20, 40, 80];
pub const DEFAULT_SHOTS: [usize; 4] = [1, 2, 5, 10];
pub const DEFAULT_NOISE_SCALES: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyframeMode {
    Keyframes,
    Uniform(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoopMode {
    Open,
    Closed,
}

/// Where demonstrations come from relative to the evaluation episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemoPolicy {
    /// Demos and evaluations use disjoint reset seeds.
    Disjoint,
    /// Evaluation episode `j` replays the reset of demo `j mod n_demos`.
    ReuseDemoSeeds,
    /// Each evaluation episode gets its own demos, recorded in its own object
    /// layout with variations assigned round-robin.
    SameLayout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub k: f64,
    pub sigma_translation: f64,
    pub sigma_rotation_deg: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            k: 1.0,
            sigma_translation: BASE_SIGMA_TRANSLATION,
            sigma_rotation_deg: BASE_SIGMA_ROTATION_DEG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskId,
    pub n_demos: usize,
    pub n_eval: usize,
    pub delta: f64,
    pub bounds: WorkspaceBounds,
    pub provider: Provider,
    pub remote: RemoteConfig,
    pub system_prompt: usize,
    pub keyframe_mode: KeyframeMode,
    pub loop_mode: LoopMode,
    pub noise: Option<NoiseConfig>,
    pub seed: u64,
    pub demo_policy: DemoPolicy,
    pub sim: SimConfig,
    /// Evaluate episodes on the rayon pool. Ignored for the remote provider.
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskId::StackCube,
            n_demos: 10,
            n_eval: 25,
            delta: 0.01,
            bounds: WorkspaceBounds::default(),
            provider: Provider::MockNearest,
            remote: RemoteConfig::default(),
            system_prompt: 0,
            keyframe_mode: KeyframeMode::Keyframes,
            loop_mode: LoopMode::Open,
            noise: None,
            seed: 0,
            demo_policy: DemoPolicy::Disjoint,
            sim: SimConfig::default(),
            parallel: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_demos == 0 {
            return Err(Error::Config("n_demos must be at least 1".into()));
        }
        if self.n_eval == 0 {
            return Err(Error::Config("n_eval must be at least 1".into()));
        }
        if self.n_eval as u64 >= DEMO_SEED_OFFSET {
            return Err(Error::Config(format!("n_eval must be below {DEMO_SEED_OFFSET}")));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::Config(format!("delta {} must be positive", self.delta)));
        }
        if self.system_prompt >= default_system_prompts().len() {
            return Err(Error::Config(format!(
                "system_prompt {} must be 0, 1 or 2",
                self.system_prompt
            )));
        }
        if self.keyframe_mode == KeyframeMode::Uniform(0) {
            return Err(Error::Config("uniform sampling interval must be at least 1".into()));
        }
        if let Some(n) = &self.noise {
            let ok = [n.k, n.sigma_translation, n.sigma_rotation_deg]
                .iter()
                .all(|v| v.is_finite() && *v >= 0.0);
            if !ok {
                return Err(Error::Config("noise parameters must be ≥ 0".into()));
            }
        }
        self.bounds
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Reads a TOML config; absent keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn simulator(&self) -> Result<Simulator> {
        Simulator::new(self.sim.clone(), self.bounds)
    }

    pub fn eval_seeds(&self) -> Vec<u64> {
        (0..self.n_eval as u64).map(|j| self.seed + j).collect()
    }

    pub fn demo_seeds(&self) -> Vec<u64> {
        (0..self.n_demos as u64)
            .map(|i| self.seed + DEMO_SEED_OFFSET + i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub success: bool,
    pub parse_error: bool,
    pub n_actions: usize,
    pub latency_ms: u64,
    pub prompt_chars: usize,
    /// Oracle or execution failure message, when there was one.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub task: TaskId,
    pub provider: Provider,
    pub arm: String,
    pub records: Vec<EpisodeRecord>,
    pub success_rate: f64,
    pub config: RunConfig,
}

impl EvalReport {
    pub fn successes(&self) -> usize {
        self.records.iter().filter(|r| r.success).count()
    }

    pub fn parse_errors(&self) -> usize {
        self.records.iter().filter(|r| r.parse_error).count()
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}: {}/{} succeeded ({:.1}%), {} parse errors",
            self.task,
            self.provider,
            self.arm,
            self.successes(),
            self.records.len(),
            100.0 * self.success_rate,
            self.parse_errors()
        )
    }
}

/// A demonstration episode together with the world it was recorded in.
#[derive(Debug, Clone)]
pub struct Demo {
    pub seed: u64,
    pub reset: ResetOutcome,
    pub episode: Episode,
}

/// Prepared in-context material for one test query.
#[derive(Debug, Clone)]
pub struct PreparedDemos {
    pub examples: Vec<IclExample>,
    pub mock: Vec<MockDemo>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the noise stream for one episode and observation timestep.
pub fn noise_seed(run_seed: u64, episode_seed: u64, timestep: usize) -> u64 {
    splitmix(splitmix(run_seed ^ splitmix(episode_seed)) ^ timestep as u64)
}

pub struct Harness {
    pub config: RunConfig,
    sim: Simulator,
}

impl Harness {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let sim = config.simulator()?;
        Ok(Self { config, sim })
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    fn record_demo(&self, seed: u64, variation: Variation) -> Result<Demo> {
        let task = self.config.task;
        let reset = self.sim.reset_with(task, seed, Some(variation))?;
        let episode = self
            .sim
            .scripted_expert(task, &reset.world, &reset.variation, &reset.instruction)?;
        Ok(Demo {
            seed,
            reset,
            episode,
        })
    }

    fn demo_variation(&self, i: usize) -> Variation {
        let variations = self.sim.task(self.config.task).variations();
        variations[i % variations.len()].clone()
    }

    /// The shared demo pool: reset seeds `seed + DEMO_SEED_OFFSET + i` with
    /// variations assigned round-robin. Pools are nested, so the first `n`
    /// demos of a larger pool equal the pool of size `n`.
    pub fn demo_pool(&self) -> Result<Vec<Demo>> {
        self.config
            .demo_seeds()
            .into_iter()
            .enumerate()
            .map(|(i, seed)| self.record_demo(seed, self.demo_variation(i)))
            .collect()
    }

    fn same_layout_demos(&self, seed: u64) -> Result<Vec<Demo>> {
        (0..self.config.n_demos)
            .map(|i| self.record_demo(seed, self.demo_variation(i)))
            .collect()
    }

    fn keyframes(&self, episode: &Episode) -> Result<KeyframeIndices> {
        match self.config.keyframe_mode {
            KeyframeMode::Keyframes => extract_keyframes(episode, self.config.delta),
            KeyframeMode::Uniform(k) => sample_uniform(episode.len(), k),
        }
    }

    fn noisy(&self, obs: &[ObjectObservation], episode_seed: u64, timestep: usize) -> Result<Vec<ObjectObservation>> {
        match &self.config.noise {
            None => Ok(obs.to_vec()),
            Some(n) => add_pose_noise(
                obs,
                n.k,
                n.sigma_translation,
                n.sigma_rotation_deg.to_radians(),
                noise_seed(self.config.seed, episode_seed, timestep),
            ),
        }
    }

    /// Turns demos into prompt examples and oracle demos, applying noise to
    /// their observations when configured.
    pub fn prepare(&self, demos: &[Demo]) -> Result<PreparedDemos> {
        let bounds = &self.config.bounds;
        let mut examples = Vec::with_capacity(demos.len());
        let mut mock = Vec::with_capacity(demos.len());
        for (i, demo) in demos.iter().enumerate() {
            // Demos recorded in a shared layout share a seed; keep their noise apart.
            let noise_key = demo.seed ^ ((i as u64) << 40);
            let objects = self.noisy(demo.episode.objects(), noise_key, 0)?;
            let episode = demo.episode.with_objects(objects.clone())?;
            let keyframes = self.keyframes(&episode)?;
            let example = match self.config.loop_mode {
                LoopMode::Open => build_icl_example(&episode, &keyframes, bounds)?,
                LoopMode::Closed => {
                    let along = self
                        .sim
                        .observations_along(&demo.reset.world, episode.actions())?;
                    let poses = |t: usize| -> Option<Vec<ObjectObservation>> {
                        if t == 0 {
                            return Some(objects.clone());
                        }
                        self.noisy(along.get(t)?, noise_key, t).ok()
                    };
                    build_closed_loop_example(&episode, &keyframes, bounds, poses)?
                }
            };
            mock.push(MockDemo {
                obs_bins: observation_bins(&objects, bounds)?,
                instruction: episode.instruction().to_string(),
                output: example.output.clone(),
            });
            examples.push(example);
        }
        Ok(PreparedDemos { examples, mock })
    }

    fn system_prompt(&self) -> &'static str {
        default_system_prompts()[self.config.system_prompt]
    }

    /// Reset for evaluation episode `j`, and the demos it is conditioned on
    /// when they are specific to that episode.
    fn eval_reset(&self, j: usize, pool: &[Demo]) -> Result<(u64, ResetOutcome, Option<Vec<Demo>>)> {
        let task = self.config.task;
        match self.config.demo_policy {
            DemoPolicy::Disjoint => {
                let seed = self.config.seed + j as u64;
                Ok((seed, self.sim.reset(task, seed)?, None))
            }
            DemoPolicy::ReuseDemoSeeds => {
                let demo = &pool[j % pool.len()];
                Ok((demo.seed, demo.reset.clone(), None))
            }
            DemoPolicy::SameLayout => {
                let seed = self.config.seed + j as u64;
                let reset = self.sim.reset(task, seed)?;
                let demos = self.same_layout_demos(seed)?;
                Ok((seed, reset, Some(demos)))
            }
        }
    }

    /// Test input string for a reset, with test-side noise applied.
    pub fn test_input(&self, seed: u64, reset: &ResetOutcome) -> Result<(String, Vec<u16>)> {
        let objects = self.noisy(&reset.world.observations(), seed, usize::MAX)?;
        let bounds = &self.config.bounds;
        Ok((
            format_input(&objects, &reset.instruction, bounds)?,
            observation_bins(&objects, bounds)?,
        ))
    }

    /// The prompt that evaluation episode `j` would send.
    pub fn build_prompt(&self, j: usize) -> Result<PromptBundle> {
        let pool = self.shared_pool()?;
        let (seed, reset, own) = self.eval_reset(j, &pool)?;
        let prepared = self.prepare(own.as_deref().unwrap_or(&pool))?;
        let (input, _) = self.test_input(seed, &reset)?;
        assemble_prompt(&prepared.examples, &input, self.system_prompt())
    }

    fn shared_pool(&self) -> Result<Vec<Demo>> {
        match self.config.demo_policy {
            DemoPolicy::SameLayout => Ok(Vec::new()),
            _ => self.demo_pool(),
        }
    }

    pub fn run(&self, completer: &dyn Completer, arm: &str) -> Result<EvalReport> {
        let pool = self.shared_pool()?;
        let shared = match self.config.demo_policy {
            DemoPolicy::SameLayout => None,
            _ => Some(self.prepare(&pool)?),
        };
        let run_one = |j: usize| self.run_episode(j, &pool, shared.as_ref(), completer);
        let parallel = self.config.parallel && completer.provider() != Provider::Remote;
        let mut records: Vec<EpisodeRecord> = if parallel {
            (0..self.config.n_eval)
                .into_par_iter()
                .map(run_one)
                .collect::<Result<_>>()?
        } else {
            (0..self.config.n_eval).map(run_one).collect::<Result<_>>()?
        };
        records.sort_by_key(|r| r.seed);
        let successes = records.iter().filter(|r| r.success).count();
        let report = EvalReport {
            task: self.config.task,
            provider: completer.provider(),
            arm: arm.to_string(),
            success_rate: successes as f64 / records.len() as f64,
            records,
            config: self.config.clone(),
        };
        info!("{report}");
        Ok(report)
    }

    fn run_episode(
        &self,
        j: usize,
        pool: &[Demo],
        shared: Option<&PreparedDemos>,
        completer: &dyn Completer,
    ) -> Result<EpisodeRecord> {
        let (seed, reset, own) = self.eval_reset(j, pool)?;
        let owned;
        let prepared = match (shared, own) {
            (Some(p), _) => p,
            (None, Some(demos)) => {
                owned = self.prepare(&demos)?;
                &owned
            }
            (None, None) => unreachable!("same-layout runs always carry their own demos"),
        };
        let (input, test_obs) = self.test_input(seed, &reset)?;
        let prompt = assemble_prompt(&prepared.examples, &input, self.system_prompt())?;
        let prompt_chars = prompt.system.chars().count() + prompt.body.chars().count();
        let query = Query {
            prompt: &prompt,
            demos: &prepared.mock,
            test_obs: &test_obs,
            test_instruction: &reset.instruction,
        };
        let mut record = EpisodeRecord {
            seed,
            success: false,
            parse_error: false,
            n_actions: 0,
            latency_ms: 0,
            prompt_chars,
            error: None,
        };
        let completion = match completer.complete(&query) {
            Ok(c) => c,
            Err(LlmError::Oracle(msg)) => {
                record.error = Some(msg);
                return Ok(record);
            }
            Err(e) => return Err(e.into()),
        };
        record.latency_ms = completion.latency_ms;
        let actions = match parse_response(&completion.text) {
            Ok(a) => a,
            Err(e) => {
                record.parse_error = true;
                record.error = Some(e.to_string());
                return Ok(record);
            }
        };
        record.n_actions = actions.len();
        let mut world = reset.world.clone();
        for d in &actions {
            let step = dediscretize_action(d, &self.config.bounds)
                .and_then(|a| self.sim.execute_action(&world, &a));
            match step {
                Ok(next) => world = next,
                Err(e) => {
                    record.error = Some(e.to_string());
                    break;
                }
            }
        }
        record.success = self
            .sim
            .check_success(self.config.task, &world, &reset.variation)?;
        Ok(record)
    }
}

/// Builds the configured provider. The remote credential is read from the
/// environment variable named in the config.
pub fn make_completer(config: &RunConfig) -> Result<Box<dyn Completer>> {
    Ok(match config.provider {
        Provider::MockNearest => Box::new(MockNearest),
        Provider::MockCompositional => Box::new(MockCompositional),
        Provider::Remote => Box::new(RemoteClient::from_env(config.remote.clone())?),
    })
}

fn default_arm(config: &RunConfig) -> String {
    match config.keyframe_mode {
        KeyframeMode::Keyframes => "keyframes".into(),
        KeyframeMode::Uniform(k) => format!("uniform-{k}"),
    }
}

pub fn run_eval(config: &RunConfig) -> Result<EvalReport> {
    let completer = make_completer(config)?;
    run_eval_with(config, completer.as_ref(), &default_arm(config))
}

pub fn run_eval_with(config: &RunConfig, completer: &dyn Completer, arm: &str) -> Result<EvalReport> {
    Harness::new(config.clone())?.run(completer, arm)
}

fn run_arms(arms: Vec<(String, RunConfig)>, completer: &dyn Completer) -> Result<Vec<EvalReport>> {
    arms.into_iter()
        .map(|(arm, cfg)| run_eval_with(&cfg, completer, &arm))
        .collect()
}

/// Keyframe arm followed by one uniform-sampling arm per interval.
pub fn ablate_sampling(config: &RunConfig, intervals: &[usize], completer: &dyn Completer) -> Result<Vec<EvalReport>> {
    let mut arms = vec![(
        "keyframes".to_string(),
        RunConfig {
            keyframe_mode: KeyframeMode::Keyframes,
            ..config.clone()
        },
    )];
    for &k in intervals {
        arms.push((
            format!("uniform-{k}"),
            RunConfig {
                keyframe_mode: KeyframeMode::Uniform(k),
                ..config.clone()
            },
        ));
    }
    run_arms(arms, completer)
}

pub fn ablate_shots(config: &RunConfig, shot_counts: &[usize], completer: &dyn Completer) -> Result<Vec<EvalReport>> {
    let arms = shot_counts
        .iter()
        .map(|&n| {
            (
                format!("shots-{n}"),
                RunConfig {
                    n_demos: n,
                    ..config.clone()
                },
            )
        })
        .collect();
    run_arms(arms, completer)
}

/// One arm per noise scale; noise hits demo and test observations alike.
pub fn ablate_noise(config: &RunConfig, ks: &[f64], completer: &dyn Completer) -> Result<Vec<EvalReport>> {
    let base = config.noise.unwrap_or_default();
    let arms = ks
        .iter()
        .map(|&k| {
            (
                format!("noise-{k}"),
                RunConfig {
                    noise: Some(NoiseConfig { k, ..base }),
                    ..config.clone()
                },
            )
        })
        .collect();
    run_arms(arms, completer)
}

pub fn ablate_prompts(config: &RunConfig, completer: &dyn Completer) -> Result<Vec<EvalReport>> {
    let arms = (0..default_system_prompts().len())
        .map(|i| {
            (
                format!("prompt-{i}"),
                RunConfig {
                    system_prompt: i,
                    ..config.clone()
                },
            )
        })
        .collect();
    run_arms(arms, completer)
}

pub fn ablate_loop_mode(config: &RunConfig, completer: &dyn Completer) -> Result<Vec<EvalReport>> {
    let arms = [("open", LoopMode::Open), ("closed", LoopMode::Closed)]
        .into_iter()
        .map(|(name, mode)| {
            (
                name.to_string(),
                RunConfig {
                    loop_mode: mode,
                    ..config.clone()
                },
            )
        })
        .collect();
    run_arms(arms, completer)
}

pub const CSV_HEADER: [&str; 8] = [
    "task",
    "provider",
    "arm",
    "seed",
    "success",
    "parse_error",
    "n_actions",
    "latency_ms",
];

/// CSV text: one row per episode, ordered by arm (report order) then seed.
pub fn render_csv(reports: &[EvalReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Validation(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for report in reports {
        let mut records: Vec<&EpisodeRecord> = report.records.iter().collect();
        records.sort_by_key(|r| r.seed);
        for r in records {
            w.write_record([
                report.task.as_str().to_string(),
                report.provider.as_str().to_string(),
                report.arm.clone(),
                r.seed.to_string(),
                u8::from(r.success).to_string(),
                u8::from(r.parse_error).to_string(),
                r.n_actions.to_string(),
                r.latency_ms.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Validation(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn emit_csv(reports: &[EvalReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_csv(reports)?).map_err(|e| Error::io(path, e))
}
