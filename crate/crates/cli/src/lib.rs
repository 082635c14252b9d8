//! The `subgoal` command line.
//!
//! Every command reads its settings from an optional TOML file, lets flags
//! override them, and writes newline-terminated files into the output
//! directory. Outputs depend only on the settings.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use subgoal_core::artifact::{self, ArtifactError, MODEL_FILE};
use subgoal_core::eval::{
    self, committed_seeds, compare_consecutive, compare_strata, Comparison, EvalConfig, ExperimentResult,
    UsefulnessConfig,
};
use subgoal_core::explain::ExplanationBundle;
use subgoal_core::gridworld::{parse_map, GridSpec};
use subgoal_core::importance::ImportanceProfile;
use subgoal_core::mdp::{Action, State};
use subgoal_core::pipeline::{self, Analysis, AnalysisConfig, LoadError, Trained, DEFAULT_R_NUM, DEFAULT_S_NUM};
use subgoal_core::policy::HyperParams;
use subgoal_core::world_model;
use subgoal_core::Error;
use thiserror::Error;

pub const IMPORTANCE_FILE: &str = "importance.csv";
pub const SUBGOALS_FILE: &str = "subgoals.json";
pub const EXPLANATION_FILE: &str = "explanation.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Artifact(a) => CliError::Artifact(a),
            LoadError::Core(c) => CliError::Core(c),
        }
    }
}

/// Process exit codes, one per error class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    /// Reserved by clap for usage errors.
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const MAP_FORMAT: i32 = 4;
    pub const MAP_VALIDATION: i32 = 5;
    pub const NOT_CONVERGED: i32 = 6;
    pub const ARTIFACT_NOT_FOUND: i32 = 7;
    pub const STALE_ARTIFACT: i32 = 8;
    pub const CORRUPT_ARTIFACT: i32 = 9;
    pub const IO: i32 = 10;
    pub const QUERY: i32 = 11;
    pub const EXPERIMENT: i32 = 12;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::Artifact(ArtifactError::NotFound(_)) => exit::ARTIFACT_NOT_FOUND,
            CliError::Artifact(ArtifactError::Stale { .. }) => exit::STALE_ARTIFACT,
            CliError::Artifact(ArtifactError::Corrupt { .. }) => exit::CORRUPT_ARTIFACT,
            CliError::Artifact(ArtifactError::Io { .. }) => exit::IO,
            CliError::Core(e) => match e {
                Error::Format(_) => exit::MAP_FORMAT,
                Error::Validation(_) | Error::Bounds(_) => exit::MAP_VALIDATION,
                Error::TrainingNotConverged { .. } | Error::PathNotFound { .. } | Error::EmptyExperience => {
                    exit::NOT_CONVERGED
                }
                Error::InvalidQuery(_)
                | Error::Unsupported(_)
                | Error::UnmodeledTransition { .. }
                | Error::InsufficientPath(_) => exit::QUERY,
                Error::BudgetExceeded { .. } | Error::NoValidAddition => exit::EXPERIMENT,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "subgoal", version, about = "Subgoal extraction and minimal explanations for a key-door gridworld")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML settings file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Map file.
    #[arg(long, global = true)]
    pub map: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Artifact and output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Random actions per importance trial.
    #[arg(long = "r-num", global = true)]
    pub r_num: Option<usize>,
    /// Importance trials per state.
    #[arg(long = "s-num", global = true)]
    pub s_num: Option<usize>,
    /// Subgoal threshold; defaults to the mean importance.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the policy and world model and write the Q-table, model and path artifacts.
    Train,
    /// Train and write only the world model artifact.
    LearnModel,
    /// Write the importance profile of the optimal path as CSV.
    Importance,
    /// Write the subgoal set as JSON.
    Subgoals,
    /// Answer a hypothesised route with keypoints and an explanation.
    Explain {
        /// JSON file with `actions` and an optional `start` state.
        #[arg(long)]
        actions: PathBuf,
    },
    /// Run a shaping experiment on fresh learners.
    Eval {
        #[arg(value_enum)]
        kind: EvalKind,
        /// Runs per condition.
        #[arg(long)]
        runs: Option<usize>,
        /// Largest subgoal count for the count experiment.
        #[arg(long = "k-max")]
        k_max: Option<usize>,
        /// Episodes before a run is censored.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Serve the JSON API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalKind {
    Usefulness,
    Count,
}

impl EvalKind {
    fn name(self) -> &'static str {
        match self {
            EvalKind::Usefulness => "usefulness",
            EvalKind::Count => "count",
        }
    }
}

/// Settings file contents; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub map: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub r_num: Option<usize>,
    pub s_num: Option<usize>,
    pub epsilon: Option<f64>,
    pub learner: Option<HyperParams>,
    pub eval: Option<EvalSettings>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub runs: usize,
    pub k_max: usize,
    pub random_sets: usize,
    pub sample_seed: u64,
    pub sub_reward_max: f64,
    pub config: EvalConfig,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            runs: 10,
            k_max: 4,
            random_sets: UsefulnessConfig::default().random_sets,
            sample_seed: 0,
            sub_reward_max: 0.5,
            config: EvalConfig::default(),
        }
    }
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub map: PathBuf,
    pub spec: GridSpec,
    pub seed: u64,
    pub out: PathBuf,
    pub analysis: AnalysisConfig,
    pub eval: EvalSettings,
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    debug_assert!(contents.ends_with('\n'));
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs) -> CliResult<RunConfig> {
        let file = match &args.config {
            Some(p) => toml::from_str::<FileConfig>(&read_file(p)?)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => FileConfig::default(),
        };
        let map = args
            .map
            .clone()
            .or(file.map)
            .ok_or_else(|| CliError::Config("a map is required (--map or `map` in the config file)".into()))?;
        let seed = args
            .seed
            .or(file.seed)
            .ok_or_else(|| CliError::Config("a seed is required (--seed or `seed` in the config file)".into()))?;
        let spec = parse_map(&read_file(&map)?)?;
        let analysis = AnalysisConfig {
            learner: file.learner.unwrap_or_default(),
            seed,
            r_num: args.r_num.or(file.r_num).unwrap_or(DEFAULT_R_NUM),
            s_num: args.s_num.or(file.s_num).unwrap_or(DEFAULT_S_NUM),
            epsilon: args.epsilon.or(file.epsilon),
        };
        analysis.learner.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if analysis.r_num == 0 || analysis.s_num == 0 {
            return Err(CliError::Config("--r-num and --s-num must be at least 1".into()));
        }
        Ok(RunConfig {
            map,
            spec,
            seed,
            out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            analysis,
            eval: file.eval.unwrap_or_default(),
        })
    }

    fn ensure_out(&self) -> CliResult<()> {
        fs::create_dir_all(&self.out).map_err(|source| CliError::Io {
            path: self.out.clone(),
            source,
        })
    }

    pub fn load_trained(&self) -> CliResult<Trained> {
        Ok(Trained::read(&self.out, &self.spec)?)
    }

    pub fn load_analysis(&self) -> CliResult<Analysis> {
        Ok(Analysis::new(self.load_trained()?, &self.analysis)?)
    }
}

/// `step,x,y,dir,has_key,door_open,action,importance` rows after an
/// `# epsilon=<value>` line; the goal row has an empty action.
pub fn importance_csv(profile: &ImportanceProfile) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(["step", "x", "y", "dir", "has_key", "door_open", "action", "importance"])
        .expect("in-memory write");
    let states = profile.path.states();
    for (t, (s, v)) in states.iter().zip(&profile.values).enumerate() {
        let action = profile.path.pairs.get(t).map_or("", |p| p.action.name());
        w.write_record([
            t.to_string(),
            s.x.to_string(),
            s.y.to_string(),
            s.dir.symbol().to_string(),
            u8::from(s.has_key).to_string(),
            u8::from(s.door_open).to_string(),
            action.to_string(),
            v.to_string(),
        ])
        .expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv");
    format!("# epsilon={}\n{body}", profile.epsilon)
}

/// One row per run: `condition,seed,episodes,censored`.
pub fn runs_csv(results: &[ExperimentResult]) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(["condition", "seed", "episodes", "censored"]).expect("in-memory write");
    for r in results {
        for ((seed, n), c) in r.seeds.iter().zip(&r.episodes_to_optimal).zip(&r.censored) {
            w.write_record([r.label.clone(), seed.to_string(), n.to_string(), c.to_string()])
                .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

/// One row per condition with its subgoal steps and episode statistics.
pub fn conditions_csv(results: &[ExperimentResult]) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(["condition", "subgoal_steps", "runs", "censored", "mean", "variance"])
        .expect("in-memory write");
    for r in results {
        let steps: Vec<String> = r.subgoal_steps.iter().map(|s| s.to_string()).collect();
        w.write_record([
            r.label.clone(),
            steps.join(" "),
            r.episodes_to_optimal.len().to_string(),
            r.censored.iter().filter(|c| **c).count().to_string(),
            r.mean.to_string(),
            r.variance.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

/// Welch test rows: `a,b,mean_a,mean_b,t,df,p,significant`.
pub fn tests_csv(comparisons: &[Comparison]) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(["a", "b", "mean_a", "mean_b", "t", "df", "p", "significant"])
        .expect("in-memory write");
    for c in comparisons {
        w.write_record([
            c.a.clone(),
            c.b.clone(),
            c.mean_a.to_string(),
            c.mean_b.to_string(),
            c.test.t.to_string(),
            c.test.df.to_string(),
            c.test.p.to_string(),
            c.test.significant_at_05.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
}

/// A query file: the questioner's actions and an optional start state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFile {
    pub actions: Vec<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<State>,
}

pub fn read_query(path: &Path) -> CliResult<QueryFile> {
    serde_json::from_str(&read_file(path)?)
        .map_err(|e| CliError::Core(Error::InvalidQuery(format!("{}: {e}", path.display()))))
}

pub fn explain(analysis: &Analysis, q: &QueryFile) -> CliResult<ExplanationBundle> {
    let spec = analysis.spec();
    if q.actions.len() > 4 * spec.max_steps {
        return Err(Error::InvalidQuery(format!("{} actions exceed the limit of {}", q.actions.len(), 4 * spec.max_steps)).into());
    }
    if let Some(s) = q.start {
        if !spec.in_bounds(s.pos()) || !analysis.model().knows_state(&s) {
            return Err(Error::InvalidQuery(format!("start {s} is not a modeled state")).into());
        }
    }
    Ok(analysis.explain(q.start, &q.actions))
}

/// Files written by an eval command, relative to the output directory.
pub fn eval_files(kind: EvalKind) -> [String; 3] {
    let k = kind.name();
    [format!("{k}_runs.csv"), format!("{k}_conditions.csv"), format!("{k}_tests.csv")]
}

pub fn run_eval(
    cfg: &RunConfig,
    analysis: &Analysis,
    kind: EvalKind,
    settings: &EvalSettings,
) -> CliResult<(Vec<ExperimentResult>, Vec<Comparison>)> {
    let seeds = committed_seeds(settings.runs);
    let spec = analysis.spec();
    let conds = match kind {
        EvalKind::Usefulness => eval::usefulness_conditions(
            spec,
            &analysis.subgoals,
            &UsefulnessConfig {
                n_runs: settings.runs,
                random_sets: settings.random_sets,
                sample_seed: settings.sample_seed,
            },
        )?,
        EvalKind::Count => {
            eval::count_conditions(spec, &analysis.subgoals, settings.k_max, settings.config.learner.gamma)?
        }
    };
    let results = eval::run_conditions(&cfg.spec, &conds, &seeds, &settings.config, settings.sub_reward_max)?;
    let tests = match kind {
        EvalKind::Usefulness => {
            let mut t = compare_strata(&results)?;
            t.extend(eval::compare_against_first(&results)?);
            t
        }
        EvalKind::Count => compare_consecutive(&results)?,
    };
    Ok((results, tests))
}

fn json_file<T: Serialize>(value: &T) -> String {
    artifact::to_json_string(value)
}

/// Runs one command; returns a one-line summary for the terminal.
pub fn run(cli: &Cli) -> CliResult<String> {
    let cfg = RunConfig::resolve(&cli.common)?;
    match &cli.command {
        Command::Train => {
            let t = pipeline::train(&cfg.spec, &cfg.analysis.learner, cfg.seed)?;
            cfg.ensure_out()?;
            t.write(&cfg.out)?;
            Ok(format!(
                "trained: optimal path of {} steps, artifacts in {}",
                t.path.len(),
                cfg.out.display()
            ))
        }
        Command::LearnModel => {
            let learned = world_model::learn(&cfg.spec, &cfg.analysis.learner, cfg.seed)?;
            cfg.ensure_out()?;
            artifact::write(&cfg.out.join(MODEL_FILE), "model", &cfg.spec, &learned.model)?;
            Ok(format!(
                "world model covers {} state-action pairs",
                learned.model.coverage_len()
            ))
        }
        Command::Importance => {
            let a = cfg.load_analysis()?;
            write_file(&cfg.out.join(IMPORTANCE_FILE), &importance_csv(&a.profile))?;
            Ok(format!("epsilon {}", a.profile.epsilon))
        }
        Command::Subgoals => {
            let a = cfg.load_analysis()?;
            write_file(&cfg.out.join(SUBGOALS_FILE), &json_file(&a.subgoals))?;
            Ok(format!("{} subgoals at steps {:?}", a.subgoals.len(), a.subgoals.steps()))
        }
        Command::Explain { actions } => {
            let q = read_query(actions)?;
            let a = cfg.load_analysis()?;
            let bundle = explain(&a, &q)?;
            write_file(&cfg.out.join(EXPLANATION_FILE), &json_file(&bundle))?;
            Ok(match bundle.explanation {
                Some(p) => format!("explanation: {p}"),
                None => "nothing to explain".to_string(),
            })
        }
        Command::Eval {
            kind,
            runs,
            k_max,
            budget,
        } => {
            let mut settings = cfg.eval;
            settings.runs = runs.unwrap_or(settings.runs);
            settings.k_max = k_max.unwrap_or(settings.k_max);
            settings.config.episode_budget = budget.unwrap_or(settings.config.episode_budget);
            let a = cfg.load_analysis()?;
            let (results, tests) = run_eval(&cfg, &a, *kind, &settings)?;
            let [runs_f, conds_f, tests_f] = eval_files(*kind);
            write_file(&cfg.out.join(runs_f), &runs_csv(&results))?;
            write_file(&cfg.out.join(conds_f), &conditions_csv(&results))?;
            write_file(&cfg.out.join(&tests_f), &tests_csv(&tests))?;
            Ok(format!("{} conditions, tests in {}", results.len(), cfg.out.join(tests_f).display()))
        }
        Command::Serve { port, host } => serve(&cfg, host, *port),
    }
}

fn serve(cfg: &RunConfig, host: &str, port: u16) -> CliResult<String> {
    // fail fast on missing or stale artifacts; scoring happens in the background
    let trained = cfg.load_trained()?;
    let analysis_cfg = cfg.analysis;
    let addr = format!("{host}:{port}");
    let io = |source: std::io::Error| CliError::Io {
        path: PathBuf::from(&addr),
        source,
    };
    let rt = tokio::runtime::Runtime::new().map_err(io)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(io)?;
        eprintln!("listening on http://{}", listener.local_addr().map_err(io)?);
        subgoal_service::serve_while_loading(
            listener,
            move || Analysis::new(trained, &analysis_cfg).map_err(|e| e.to_string()),
            async {
                let _ = tokio::signal::ctrl_c().await;
            },
        )
        .await
        .map_err(io)
    })?;
    Ok("server stopped".into())
}
