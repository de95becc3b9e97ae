use std::fs;
use std::io::Write;
use std::panic;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use lago::cost::CostFunction;
use lago::data::read_stage_csv;
use lago::diagnostics::{dominance_design, dominance_threshold, verify_assumption7, Assumption7Config};
use lago::model::{Bounds, FittedModel, Link, StageRecord};
use lago::optimizer::{plan_stage1, recommend, GoalSpec};
use lago::power::{
    conditional_power, final_test, unconditional_lambda, Approach, ArmSummary, PlannedStage, TestKind,
};
use lago::sim::{bundled_scenario, run_scenario, BetterBirthFixture, ScenarioSpec};
use lago::trial::{analyze, final_optimal, ingest_stage, next_recommendation, OutcomeKind, TrialConfig, TrialState};
use lago::LagoError;

#[derive(Parser)]
#[command(name = "lago", version, about = "Adaptive multi-stage trial design: recommendations, power and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Recommend the next-stage package.
    Recommend(RecommendArgs),
    /// Monte Carlo operating characteristics of a scenario.
    Simulate(SimulateArgs),
    /// Projected unconditional and conditional power at a package.
    Power(PowerArgs),
    /// Stage-1 package from pre-trial coefficients.
    PlanStage1(ConfigArg),
    /// Smallest outcome goal that alone guarantees the power goal.
    DominanceThreshold(DominanceArgs),
    /// Check that the cost-minimal package moves continuously with the coefficients.
    VerifyAssumption7(VerifyArgs),
    /// Final test on pooled all-stage data from CSV.
    FinalTest(FinalTestArgs),
    /// Persistent multi-stage trial state.
    #[command(subcommand)]
    Trial(TrialCommand),
}

#[derive(Args)]
struct ConfigArg {
    /// JSON problem file.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct RecommendArgs {
    /// JSON problem file (model or data, goals, cost, bounds).
    #[arg(long, conflicts_with = "betterbirth")]
    config: Option<PathBuf>,
    /// Use the bundled BetterBirth fixture.
    #[arg(long)]
    betterbirth: bool,
    /// Outcome goal (BetterBirth only).
    #[arg(long)]
    goal: Option<f64>,
    #[arg(long)]
    power_goal: Option<f64>,
    #[arg(long, value_enum, default_value_t = ApproachArg::Unconditional)]
    approach: ApproachArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ApproachArg {
    Unconditional,
    Conditional,
}

impl From<ApproachArg> for Approach {
    fn from(a: ApproachArg) -> Self {
        match a {
            ApproachArg::Unconditional => Approach::Unconditional,
            ApproachArg::Conditional => Approach::Conditional,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct SimulateArgs {
    /// Bundled scenario: 1a, 1b, 2a or 2b.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    scenario: Option<String>,
    /// Scenario JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Participants per center in both stages.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    power_goal: Option<f64>,
    #[arg(long, value_enum)]
    approach: Option<ApproachArg>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: u64,
    /// Repeat the stage-1 design in stage 2.
    #[arg(long)]
    baseline: bool,
    /// Print the resolved scenario JSON and exit.
    #[arg(long)]
    emit_config: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PowerArgs {
    #[arg(long)]
    config: PathBuf,
    /// Candidate package, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    x: Vec<f64>,
}

#[derive(Args)]
struct DominanceArgs {
    /// Participants per center.
    #[arg(long, default_value_t = 40)]
    n: usize,
    #[arg(long)]
    power_goal: f64,
    #[arg(long, value_enum, default_value_t = ApproachArg::Unconditional)]
    approach: ApproachArg,
    /// True coefficients, intercept first.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.15")]
    beta: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 1e-2)]
    eta: f64,
    /// Also check centers spread inside the 95% confidence intervals.
    #[arg(long)]
    extended: bool,
    #[arg(long, default_value_t = 10)]
    grid_points: usize,
    #[arg(long)]
    seed: u64,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestArg {
    ZUnpooled,
    ZPooled,
    TUnpooled,
    TPooled,
    WaldBinary,
    WaldContinuous,
}

impl From<TestArg> for TestKind {
    fn from(t: TestArg) -> Self {
        match t {
            TestArg::ZUnpooled => TestKind::ZUnpooled,
            TestArg::ZPooled => TestKind::ZPooled,
            TestArg::TUnpooled => TestKind::TUnpooled,
            TestArg::TPooled => TestKind::TPooled,
            TestArg::WaldBinary => TestKind::WaldBinary,
            TestArg::WaldContinuous => TestKind::WaldContinuous,
        }
    }
}

#[derive(Args)]
struct FinalTestArgs {
    /// Participant-level CSV: stage, center, arm, x_1..x_P, y.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = TestArg::ZUnpooled)]
    test: TestArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Continuous outcome with identity link.
    #[arg(long)]
    continuous: bool,
}

#[derive(Subcommand)]
enum TrialCommand {
    /// Create a trial state from a configuration.
    Init {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        state: PathBuf,
    },
    /// Add the next stage's participant-level CSV to the state.
    Ingest {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Recommend the next stage's package and record it in the state.
    Next {
        #[arg(long)]
        state: PathBuf,
    },
    /// Final test and optimal package of a complete trial.
    Analyze {
        #[arg(long)]
        state: PathBuf,
    },
}

fn logit() -> Link {
    Link::Logit
}

/// Coefficients supplied directly rather than fitted.
#[derive(Deserialize)]
struct ModelInput {
    beta: Vec<f64>,
    #[serde(default = "logit")]
    link: Link,
    #[serde(default)]
    covariance: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    n_used: f64,
}

impl ModelInput {
    fn into_model(self) -> FittedModel {
        let mut m = FittedModel::from_beta(self.beta, self.link);
        if let Some(c) = self.covariance {
            m.covariance = c;
        }
        m.n_used = self.n_used;
        m
    }
}

/// Problem file shared by recommend, power, plan-stage1 and verify-assumption7.
/// Without `model` the coefficients are fitted on `observed`.
#[derive(Deserialize)]
struct Problem {
    #[serde(default)]
    model: Option<ModelInput>,
    #[serde(default)]
    outcome: Option<OutcomeKind>,
    #[serde(default)]
    observed: Vec<StageRecord>,
    #[serde(default)]
    planned: Vec<PlannedStage>,
    goals: GoalSpec,
    cost: CostFunction,
    bounds: Bounds,
    #[serde(default)]
    stage1_x: Option<Vec<f64>>,
}

impl Problem {
    fn load(path: &Path) -> Result<Self, LagoError> {
        serde_json::from_str(&read(path)?).map_err(|e| LagoError::Invalid(format!("{}: {e}", path.display())))
    }

    fn model(&mut self) -> Result<FittedModel, LagoError> {
        match self.model.take() {
            Some(m) => Ok(m.into_model()),
            None if self.observed.is_empty() => Err(LagoError::Invalid("problem needs a model or observed data".into())),
            None => self.outcome.clone().unwrap_or(OutcomeKind::Binary).fit(&self.observed),
        }
    }

    fn summary(&self) -> ArmSummary {
        ArmSummary::new(self.observed.clone(), self.planned.clone())
    }

    fn stage1_x(&self) -> Vec<f64> {
        self.stage1_x.clone().unwrap_or_else(|| self.bounds.lower().to_vec())
    }
}

#[derive(Serialize)]
struct PowerReport {
    x: Vec<f64>,
    predicted_outcome: f64,
    lambda: f64,
    df: usize,
    unconditional_power: f64,
    conditional_power: Option<f64>,
}

fn read(path: &Path) -> Result<String, LagoError> {
    fs::read_to_string(path).map_err(|e| LagoError::Invalid(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), LagoError> {
    fs::write(path, text).map_err(|e| LagoError::Invalid(format!("{}: {e}", path.display())))
}

fn json<T: Serialize>(v: &T) -> Result<String, LagoError> {
    serde_json::to_string_pretty(v).map_err(|e| LagoError::Invalid(e.to_string()))
}

fn read_csv(path: &Path, binary: bool) -> Result<Vec<StageRecord>, LagoError> {
    let f = fs::File::open(path).map_err(|e| LagoError::Invalid(format!("{}: {e}", path.display())))?;
    read_stage_csv(f, binary)
}

fn load_state(path: &Path) -> Result<TrialState, LagoError> {
    TrialState::from_json(&read(path)?)
}

fn run(cli: Cli) -> Result<String, LagoError> {
    match cli.command {
        Command::Recommend(a) => {
            if a.betterbirth {
                let goal = a.goal.ok_or_else(|| LagoError::Invalid("--betterbirth needs --goal".into()))?;
                let fx = BetterBirthFixture::bundled();
                let power = a.power_goal.map(|pi| (pi, a.approach.into()));
                return json(&fx.recommend(&fx.goals(goal, power))?);
            }
            let path = a.config.ok_or_else(|| LagoError::Invalid("recommend needs --config or --betterbirth".into()))?;
            let mut p = Problem::load(&path)?;
            if let Some(pi) = a.power_goal {
                p.goals = p.goals.with_power(pi, a.approach.into());
            }
            let model = p.model()?;
            json(&recommend(&model, &p.summary(), &p.goals, &p.cost, &p.bounds, &p.stage1_x())?)
        }
        Command::Simulate(a) => {
            let mut spec: ScenarioSpec = match (&a.scenario, &a.config) {
                (Some(name), _) => bundled_scenario(name)?,
                (None, Some(path)) => serde_json::from_str(&read(path)?)
                    .map_err(|e| LagoError::Invalid(format!("{}: {e}", path.display())))?,
                (None, None) => return Err(LagoError::Invalid("simulate needs --scenario or --config".into())),
            };
            if let Some(n) = a.n {
                spec = spec.with_n(n);
            }
            if a.power_goal.is_some() || a.approach.is_some() {
                let approach = a.approach.map(Approach::from).unwrap_or(spec.goals.approach);
                let pi = a.power_goal.or(spec.goals.power_goal);
                spec = spec.with_power(pi, approach);
            }
            let reps = a.reps.unwrap_or(spec.replicates);
            spec = spec.with_replicates(reps, a.seed);
            spec.baseline |= a.baseline;
            spec.validate()?;
            if a.emit_config {
                return json(&spec);
            }
            let report = run_scenario(&spec)?;
            let text = match a.format {
                Format::Json => json(&report)?,
                Format::Csv => report.to_csv()?,
            };
            match a.out {
                Some(path) => {
                    write(&path, &text)?;
                    Ok(String::new())
                }
                None => Ok(text),
            }
        }
        Command::Power(a) => {
            let mut p = Problem::load(&a.config)?;
            let model = p.model()?;
            let summary = p.summary();
            let g = &p.goals;
            if a.x.len() != p.bounds.dim() {
                return Err(LagoError::Invalid(format!("--x needs {} components", p.bounds.dim())));
            }
            let u = unconditional_lambda(&a.x, &model, &summary, g.test)?;
            let cond = if g.test.is_wald() || summary.observed.is_empty() {
                None
            } else {
                Some(conditional_power(&a.x, &model, &summary, g.test, g.alpha, g.direction, g.variance_form)?)
            };
            json(&PowerReport {
                predicted_outcome: lago::model::predict(&model, &a.x),
                lambda: u.lambda,
                df: u.df,
                unconditional_power: u.power(g.alpha),
                conditional_power: cond,
                x: a.x,
            })
        }
        Command::PlanStage1(a) => {
            let mut p = Problem::load(&a.config)?;
            let prior = p.model()?;
            json(&plan_stage1(&prior, &p.goals, &p.cost, &p.bounds, &p.planned)?)
        }
        Command::DominanceThreshold(a) => {
            let d = dominance_threshold(&dominance_design(a.n), &a.beta, a.alpha, a.power_goal, a.approach.into())?;
            json(&d)
        }
        Command::VerifyAssumption7(a) => {
            let mut p = Problem::load(&a.config)?;
            let model = p.model()?;
            let goal = p
                .goals
                .outcome_goal
                .ok_or_else(|| LagoError::Invalid("verify-assumption7 needs an outcome goal".into()))?;
            let cfg = Assumption7Config {
                epsilon: a.epsilon,
                samples: a.samples,
                eta: a.eta,
                extended: a.extended,
                grid_points: a.grid_points,
                seed: a.seed,
                direction: p.goals.direction,
            };
            let report = verify_assumption7(&model, &p.cost, &p.bounds, goal, &cfg)?;
            if a.json {
                json(&report)
            } else {
                Ok(report.to_text())
            }
        }
        Command::FinalTest(a) => {
            let data = read_csv(&a.data, !a.continuous)?;
            let link = if a.continuous { Link::Identity } else { Link::Logit };
            json(&final_test(&data, a.test.into(), a.alpha, &link)?)
        }
        Command::Trial(t) => match t {
            TrialCommand::Init { config, state } => {
                let cfg: TrialConfig = serde_json::from_str(&read(&config)?)
                    .map_err(|e| LagoError::Invalid(format!("{}: {e}", config.display())))?;
                let s = TrialState::new(cfg)?;
                write(&state, &s.to_json()?)?;
                json(&s.status)
            }
            TrialCommand::Ingest { state, data } => {
                let s = load_state(&state)?;
                let binary = matches!(s.config.outcome, OutcomeKind::Binary);
                let mut stages = read_csv(&data, binary)?;
                if stages.len() != 1 {
                    return Err(LagoError::Invalid(format!("expected one stage in {}, found {}", data.display(), stages.len())));
                }
                let next = ingest_stage(&s, stages.remove(0))?;
                write(&state, &next.to_json()?)?;
                for w in &next.warnings[s.warnings.len()..] {
                    eprintln!("warning: {w}");
                }
                json(&next.status)
            }
            TrialCommand::Next { state } => {
                let s = load_state(&state)?;
                let rec = next_recommendation(&s)?;
                write(&state, &s.push_recommendation(rec.clone()).to_json()?)?;
                json(&rec)
            }
            TrialCommand::Analyze { state } => {
                let s = load_state(&state)?;
                #[derive(Serialize)]
                struct Analysis {
                    test: lago::power::FinalTest,
                    optimal: Option<lago::optimizer::Recommendation>,
                }
                let optimal = match s.config.goals.outcome_goal {
                    Some(_) => Some(final_optimal(&s)?),
                    None => None,
                };
                json(&Analysis { test: analyze(&s)?, optimal })
            }
        },
    }
}

fn exit_code(e: &LagoError) -> u8 {
    if e.is_validation() {
        2
    } else {
        3
    }
}

fn configure_threads() -> Result<(), LagoError> {
    if let Ok(v) = std::env::var("LAGO_THREADS") {
        let n: usize = v.parse().map_err(|_| LagoError::Invalid(format!("LAGO_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| LagoError::Invalid(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = panic::catch_unwind(|| configure_threads().and_then(|_| run(cli)));
    match outcome {
        Ok(Ok(text)) => {
            if !text.is_empty() {
                let mut out = std::io::stdout().lock();
                let _ = writeln!(out, "{}", text.trim_end());
            }
            ExitCode::SUCCESS
        }
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => {
            eprintln!("error: internal failure");
            ExitCode::from(3)
        }
    }
}
