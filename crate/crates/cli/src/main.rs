use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use pssmp::entrance::{self, CheckContext, EntranceSampler};
use pssmp::exp_functional::{samples_to_csv, ExpSampler, SampleControl};
use pssmp::extensions::{self, BivariateSubSpec, MultiSpec, PotentialSource, ProductFunction};
use pssmp::lamperti::{lamperti_forward_with, ClockRule};
use pssmp::stats::{self, TestReport, REPORT_HEADER};
use pssmp::test_fn::TestFunction;
use pssmp::{excursion, runner, JumpLaw, LevyTriplet, Streams};

#[derive(Parser)]
#[command(name = "pssmp", version, about = "Self-similar Markov processes through the Lamperti transform")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a TOML experiment config.
    Run {
        config: PathBuf,
        /// Output directory, overriding the config and $PSSMP_OUT_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid path of the Lévy process as `t,xi`.
    SimulateLevy {
        #[command(flatten)]
        triplet: TripletArgs,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Lamperti image of one Lévy path as `t,X`.
    SimulatePssmp {
        #[command(flatten)]
        triplet: TripletArgs,
        #[arg(long, default_value_t = 1.0)]
        x: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Lévy-time horizon.
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long)]
        linear_clock: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Draws of the exponential functional.
    #[command(name = "sample-I")]
    SampleI {
        #[command(flatten)]
        triplet: TripletArgs,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Weighted atoms of the entrance law at time s, as `x,w`.
    EntranceLaw {
        #[command(flatten)]
        triplet: TripletArgs,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Identity checks on entrance laws.
    Check {
        #[command(subcommand)]
        which: CheckCmd,
    },
    /// Sign probability of the excursion embedding.
    Rho {
        #[command(subcommand)]
        which: RhoCmd,
    },
    Excursion {
        #[command(subcommand)]
        which: ExcursionCmd,
    },
    /// Bivariate and multi-self-similar extensions.
    Ext {
        #[command(subcommand)]
        which: ExtCmd,
    },
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    /// Write output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn ctx(&self) -> CheckContext {
        CheckContext {
            ctl: SampleControl::with_step(self.step),
            ..CheckContext::new(self.seed)
        }
    }
}

#[derive(Args, Clone)]
struct TripletArgs {
    #[arg(long, default_value_t = 0.0)]
    q: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    b: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 0.0)]
    jump_rate: f64,
    /// Jump law as a TOML inline table, e.g.
    /// `{ name = "gaussian", params = { mean = 0.0, sd = 1.0 } }`.
    #[arg(long)]
    jump_law: Option<String>,
}

impl TripletArgs {
    fn build(&self) -> Result<LevyTriplet, String> {
        let mut t = LevyTriplet::new(self.q, self.b, self.sigma2);
        if let Some(s) = &self.jump_law {
            t = t.with_jumps(self.jump_rate, inline::<JumpLaw>(s)?);
        } else if self.jump_rate != 0.0 {
            return Err("--jump-rate needs --jump-law".into());
        }
        t.validate().map_err(|e| e.to_string())?;
        Ok(t)
    }
}

#[derive(Args, Clone)]
struct Functions {
    /// Test function as a TOML inline table, e.g. `{ kind = "power_exp", p = 1.0 }`.
    /// Repeatable.
    #[arg(long = "f")]
    fs: Vec<String>,
}

impl Functions {
    fn parse(&self) -> Result<Vec<TestFunction>, String> {
        if self.fs.is_empty() {
            return Ok(vec![
                TestFunction::PowerExp { p: 1.0 },
                TestFunction::StretchedExp { lambda: 1.0, alpha: 2.0 },
                TestFunction::Bump { center: 1.0, width: 0.75 },
            ]);
        }
        self.fs.iter().map(|s| inline::<TestFunction>(s)).collect()
    }
}

#[derive(Subcommand)]
enum CheckCmd {
    Semigroup {
        #[command(flatten)]
        triplet: TripletArgs,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        #[arg(long, default_value_t = 0.5)]
        t: f64,
        #[command(flatten)]
        fs: Functions,
        #[command(flatten)]
        common: Common,
    },
    Scaling {
        #[command(flatten)]
        triplet: TripletArgs,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        #[arg(long, default_value_t = 2.0)]
        c: f64,
        #[command(flatten)]
        fs: Functions,
        #[command(flatten)]
        common: Common,
    },
    Pareto {
        #[command(flatten)]
        triplet: TripletArgs,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[command(flatten)]
        common: Common,
    },
    BetaEmbed {
        #[command(flatten)]
        triplet: TripletArgs,
        #[arg(long)]
        beta_lo: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        #[command(flatten)]
        common: Common,
    },
    Jumpin {
        #[command(flatten)]
        triplet: TripletArgs,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0])]
        times: Vec<f64>,
        #[arg(long, default_value_t = 0.01)]
        x_lo: f64,
        #[arg(long, default_value_t = 50.0)]
        x_hi: f64,
        #[command(flatten)]
        fs: Functions,
        #[command(flatten)]
        common: Common,
    },
    QuasiStationary {
        #[command(flatten)]
        triplet: TripletArgs,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[command(flatten)]
        common: Common,
    },
    Qpotential {
        #[command(flatten)]
        triplet: TripletArgs,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Laplace variable.
        #[arg(long, default_value_t = 1.0)]
        q_lap: f64,
        #[command(flatten)]
        fs: Functions,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum RhoCmd {
    Formula {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        q: f64,
    },
    Empirical {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        q: f64,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum ExcursionCmd {
    /// Skeleton of excursion lengths and marks; with --q, the survivors of
    /// the deletion time change.
    Sample {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        cutoff: f64,
        /// Local-time horizon.
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Hill indices of surviving and all excursion lengths.
    Embed {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        q: f64,
        #[arg(long, default_value_t = 1e-4)]
        cutoff: f64,
        #[arg(long, default_value_t = 16.0)]
        horizon: f64,
        #[arg(long, default_value_t = 2000)]
        replicas: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Hill estimate from the first column of a CSV file.
    Hill {
        input: PathBuf,
        /// Number of upper order statistics; defaults to a tenth.
        #[arg(long)]
        k: Option<usize>,
    },
}

#[derive(Subcommand)]
enum ExtCmd {
    /// Integral condition for convergence of the bivariate functional.
    LmCheck {
        /// TOML file holding a bivariate subordinator spec.
        spec: PathBuf,
        #[arg(long, default_value_t = 64.0)]
        log_x_max: f64,
    },
    /// Path of (R, H) as `t,R,H`.
    Rh {
        spec: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        a: f64,
        #[arg(long, default_value_t = 1.0)]
        x: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1_000_000)]
        max_events: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Multi-self-similar path from a TOML multi spec.
    Mssmp {
        spec: PathBuf,
        #[arg(long, value_delimiter = ',')]
        x: Vec<f64>,
        /// Lévy-time horizon.
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long)]
        linear_clock: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Resolvent identity for either extension.
    Resolvent {
        #[command(subcommand)]
        source: ResolventCmd,
    },
}

#[derive(Subcommand)]
enum ResolventCmd {
    Tilde {
        spec: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 2.0)]
        kappa: f64,
        #[command(flatten)]
        fs: Functions,
        #[command(flatten)]
        common: Common,
    },
    Multi {
        spec: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 2.0)]
        kappa: f64,
        #[command(flatten)]
        fs: Functions,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Inline<T> {
    v: T,
}

fn inline<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    toml::from_str::<Inline<T>>(&format!("v = {s}"))
        .map(|w| w.v)
        .map_err(|e| format!("cannot parse `{s}`: {e}"))
}

fn spec_file<T: DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    msg: String,
}

impl From<String> for Failure {
    fn from(msg: String) -> Self {
        Failure { code: 2, msg }
    }
}

impl From<pssmp::Error> for Failure {
    fn from(e: pssmp::Error) -> Self {
        let code = match e {
            pssmp::Error::InvalidParameter(_) | pssmp::Error::Config(_) => 2,
            _ => 1,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 1,
            msg: e.to_string(),
        }
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text)?,
        // A closed pipe (`| head`) is a normal way to stop reading.
        None => {
            if let Err(e) = io::stdout().lock().write_all(text.as_bytes()) {
                if e.kind() != io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

/// Prints rows and reports whether all passed.
fn emit_reports(out: &Option<PathBuf>, rows: &[TestReport]) -> Result<u8, Failure> {
    let mut text = format!("{REPORT_HEADER}\n");
    for r in rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    emit(out, &text)?;
    Ok(if rows.iter().all(|r| r.pass) { 0 } else { 1 })
}

fn rule(linear: bool) -> ClockRule {
    if linear {
        ClockRule::ExactLinear
    } else {
        ClockRule::LeftPoint
    }
}

fn check(cmd: CheckCmd) -> Result<u8, Failure> {
    match cmd {
        CheckCmd::Semigroup {
            triplet,
            gamma,
            alpha,
            s,
            t,
            fs,
            common,
        } => {
            let rows = entrance::semigroup_check(&common.ctx(), &triplet.build()?, gamma, alpha, s, t, &fs.parse()?, common.n)?;
            emit_reports(&common.out, &rows)
        }
        CheckCmd::Scaling {
            triplet,
            gamma,
            alpha,
            s,
            c,
            fs,
            common,
        } => {
            let ctx = common.ctx();
            let sample = EntranceSampler::new(&triplet.build()?, gamma, alpha, ctx.ctl)?.draw(common.n, ctx.streams)?;
            let rows: Vec<TestReport> = fs.parse()?.iter().map(|f| entrance::scaling_check(&ctx, &sample, s, c, f)).collect();
            emit_reports(&common.out, &rows)
        }
        CheckCmd::Pareto {
            triplet,
            gamma,
            alpha,
            common,
        } => {
            let r = entrance::pareto_check(&common.ctx(), &triplet.build()?, gamma, alpha, common.n)?;
            emit_reports(&common.out, &[r])
        }
        CheckCmd::BetaEmbed {
            triplet,
            beta_lo,
            beta,
            alpha,
            s,
            common,
        } => {
            let r = entrance::beta_embedding_check(&common.ctx(), &triplet.build()?, beta_lo, beta, alpha, s, common.n)?;
            emit_reports(&common.out, &[r])
        }
        CheckCmd::Jumpin {
            triplet,
            gamma,
            alpha,
            times,
            x_lo,
            x_hi,
            fs,
            common,
        } => {
            let j = entrance::jumpin_check(&common.ctx(), &triplet.build()?, gamma, alpha, &times, &fs.parse()?, (x_lo, x_hi), common.n)?;
            for row in &j.rows {
                eprintln!("{} s={} ratio={:.6}", row.f.label(), row.s, row.ratio());
            }
            emit_reports(&common.out, &[j.report])
        }
        CheckCmd::QuasiStationary {
            triplet,
            gamma,
            alpha,
            common,
        } => {
            let (r, _) = entrance::quasi_stationary_check(&common.ctx(), &triplet.build()?, gamma, alpha, common.n)?;
            emit_reports(&common.out, &[r])
        }
        CheckCmd::Qpotential {
            triplet,
            gamma,
            alpha,
            q_lap,
            fs,
            common,
        } => {
            let ctx = common.ctx();
            let t = triplet.build()?;
            let rows = fs
                .parse()?
                .iter()
                .map(|f| entrance::qpotential_check(&ctx, &t, gamma, alpha, q_lap, f, common.n))
                .collect::<pssmp::Result<Vec<_>>>()?;
            emit_reports(&common.out, &rows)
        }
    }
}

fn excursion_cmd(cmd: ExcursionCmd) -> Result<u8, Failure> {
    match cmd {
        ExcursionCmd::Sample {
            alpha,
            beta,
            q,
            cutoff,
            horizon,
            common,
        } => {
            let spec = excursion::StableSubSpec::unit(beta / alpha)?;
            let mut rng = Streams::new(common.seed).replica(0);
            let sk = excursion::sample_skeleton(alpha, beta, horizon, cutoff, spec.scale, &mut rng)?;
            let deletion = q.map(|q| excursion::deletion_time_change(&sk, q, alpha, beta)).transpose()?;
            emit(&common.out, &sk.to_csv(deletion.as_ref()))?;
            Ok(0)
        }
        ExcursionCmd::Embed {
            alpha,
            beta,
            q,
            cutoff,
            horizon,
            replicas,
            common,
        } => {
            let sample = excursion::embedding_sample(alpha, beta, q, cutoff, horizon, replicas, Streams::new(common.seed))?;
            let rows = excursion::embedding_check(common.seed, alpha, beta, q, &sample)?;
            emit_reports(&common.out, &rows)
        }
        ExcursionCmd::Hill { input, k } => {
            let text = fs::read_to_string(&input)?;
            let data: Vec<f64> = text
                .lines()
                .filter_map(|l| l.split(',').next()?.trim().parse().ok())
                .collect();
            let k = k.unwrap_or(data.len() / 10);
            let h = stats::hill_estimator(&data, k)?;
            println!("index,k,n");
            println!("{},{k},{}", h.index, data.len());
            Ok(0)
        }
    }
}

fn ext(cmd: ExtCmd) -> Result<u8, Failure> {
    match cmd {
        ExtCmd::LmCheck { spec, log_x_max } => {
            let spec: BivariateSubSpec = spec_file(&spec)?;
            let lm = extensions::lindner_maller_check(&spec, log_x_max)?;
            println!("verdict,integral,tail,ratio");
            println!("{:?},{:.12e},{:.12e},{:.6}", lm.verdict, lm.integral, lm.tail, lm.ratio);
            eprintln!("{}", lm.rationale);
            Ok(0)
        }
        ExtCmd::Rh {
            spec,
            a,
            x,
            alpha,
            horizon,
            max_events,
            common,
        } => {
            let spec: BivariateSubSpec = spec_file(&spec)?;
            let mut rng = Streams::new(common.seed).replica(0);
            let path = extensions::simulate_rh(&spec, a, x, alpha, horizon, common.step, max_events, &mut rng)?;
            emit(&common.out, &path.to_csv())?;
            Ok(0)
        }
        ExtCmd::Mssmp {
            spec,
            x,
            horizon,
            linear_clock,
            common,
        } => {
            let spec: MultiSpec = spec_file(&spec)?;
            let x = if x.is_empty() { vec![1.0; spec.dim()] } else { x };
            let mut rng = Streams::new(common.seed).replica(0);
            let paths = spec.sample_paths(horizon, common.step, &mut rng)?;
            let p = extensions::mssmp_transform(&paths, &x, &spec.alpha, rule(linear_clock))?;
            emit(&common.out, &p.to_csv())?;
            Ok(0)
        }
        ExtCmd::Resolvent { source } => {
            let (r, out) = match source {
                ResolventCmd::Tilde {
                    spec,
                    alpha,
                    lambda,
                    kappa,
                    fs,
                    common,
                } => {
                    let spec: BivariateSubSpec = spec_file(&spec)?;
                    let f = ProductFunction::new(product_factors(fs, 2)?);
                    let src = PotentialSource::Tilde { spec: &spec, alpha };
                    (extensions::resolvent_identity_check(&common.ctx(), src, lambda, kappa, &f, common.n)?, common.out)
                }
                ResolventCmd::Multi {
                    spec,
                    lambda,
                    kappa,
                    fs,
                    common,
                } => {
                    let spec: MultiSpec = spec_file(&spec)?;
                    let f = ProductFunction::new(product_factors(fs, spec.dim())?);
                    let src = PotentialSource::Multi { spec: &spec };
                    (extensions::resolvent_identity_check(&common.ctx(), src, lambda, kappa, &f, common.n)?, common.out)
                }
            };
            emit_reports(&out, &[r.report])
        }
    }
}

/// Factors of a product test function; defaults to `x² e^{-x}` in every
/// coordinate.
fn product_factors(fs: Functions, dim: usize) -> Result<Vec<TestFunction>, String> {
    if fs.fs.is_empty() {
        Ok(vec![TestFunction::PowerExp { p: 2.0 }; dim])
    } else {
        fs.parse()
    }
}

fn dispatch(cmd: Command) -> Result<u8, Failure> {
    match cmd {
        Command::Run { config, out } => Ok(runner::run(&config, out.as_deref()) as u8),
        Command::SimulateLevy { triplet, horizon, common } => {
            let mut rng = Streams::new(common.seed).replica(0);
            let path = triplet.build()?.sample_path(horizon, common.step, &mut rng)?;
            emit(&common.out, &path.to_csv())?;
            Ok(0)
        }
        Command::SimulatePssmp {
            triplet,
            x,
            alpha,
            horizon,
            linear_clock,
            common,
        } => {
            let mut rng = Streams::new(common.seed).replica(0);
            let path = triplet.build()?.sample_path(horizon, common.step, &mut rng)?;
            let p = lamperti_forward_with(&path, x, alpha, rule(linear_clock))?;
            emit(&common.out, &p.to_csv())?;
            Ok(0)
        }
        Command::SampleI { triplet, alpha, common } => {
            let sampler = ExpSampler::new(&triplet.build()?, alpha, SampleControl::with_step(common.step))?;
            let samples = sampler.sample_batch(Streams::new(common.seed), common.n)?;
            emit(&common.out, &samples_to_csv(&samples))?;
            Ok(0)
        }
        Command::EntranceLaw {
            triplet,
            gamma,
            alpha,
            s,
            common,
        } => {
            let mu = entrance::ssel_estimate(
                &triplet.build()?,
                gamma,
                alpha,
                s,
                common.n,
                Streams::new(common.seed),
                SampleControl::with_step(common.step),
            )?;
            emit(&common.out, &mu.to_csv())?;
            Ok(0)
        }
        Command::Check { which } => check(which),
        Command::Rho { which } => match which {
            RhoCmd::Formula { alpha, beta, q } => {
                println!("{}", excursion::rho_formula(alpha, beta, q)?);
                Ok(0)
            }
            RhoCmd::Empirical { alpha, beta, q, common } => {
                let est = excursion::rho_empirical(beta / alpha, q, common.n, Streams::new(common.seed))?;
                println!("rho,se,n");
                println!("{},{},{}", est.rho, est.se, est.n);
                Ok(0)
            }
        },
        Command::Excursion { which } => excursion_cmd(which),
        Command::Ext { which } => ext(which),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
