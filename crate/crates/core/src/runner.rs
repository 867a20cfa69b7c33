//! Config-driven experiment runner.
//!
//! A TOML file names the processes under study and lists checks to run in
//! order. Each check writes rows to `report.csv` and a dump of its own data;
//! the exit status is 0 when every row passes, 1 when some row fails and 2
//! when the config is unusable.
//!
//! ```toml
//! seed = 7
//! workers = 2
//!
//! [triplets.drift]
//! b = 1.0
//!
//! [[checks]]
//! check = "semigroup"
//! triplet = "drift"
//! gamma = 0.0
//! alpha = 1.0
//! s = 1.0
//! t = 0.5
//! fs = [{ kind = "power_exp", p = 1.0 }]
//! n = 1000
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::calibration;
use crate::entrance::{self, CheckContext, Thresholds};
use crate::error::{Error, Result};
use crate::excursion;
use crate::exp_functional::SampleControl;
use crate::extensions::{self, BivariateSubSpec, LmVerdict, MultiSpec, PotentialSource, ProductFunction};
use crate::levy::LevyTriplet;
use crate::stats::{TestReport, REPORT_HEADER};
use crate::test_fn::TestFunction;

/// Environment variable consulted when the config names no output directory.
pub const OUT_DIR_ENV: &str = "PSSMP_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "pssmp-out";

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Size of the worker pool; 0 lets the pool pick.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub control: SampleControl,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub triplets: BTreeMap<String, LevyTriplet>,
    #[serde(default)]
    pub bivariate: BTreeMap<String, BivariateSubSpec>,
    #[serde(default)]
    pub multi: BTreeMap<String, MultiSpec>,
    #[serde(default)]
    pub checks: Vec<CheckEntry>,
}

/// One item of the check list: the check and an optional replacement of the
/// run-wide sampling control.
#[derive(Clone, Debug, Deserialize)]
pub struct CheckEntry {
    #[serde(default)]
    pub control: Option<SampleControl>,
    #[serde(flatten)]
    pub check: Check,
}

fn one() -> usize {
    1
}

fn exact_tol() -> f64 {
    1e-9
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum Check {
    Roundtrip {
        paths: usize,
        horizon: f64,
        #[serde(default = "exact_tol")]
        tol: f64,
    },
    DriftFlow {
        b: f64,
        x: f64,
        alpha: f64,
        horizon: f64,
        #[serde(default = "exact_tol")]
        tol: f64,
    },
    DiscreteFunctional {
        b: f64,
        alpha: f64,
        steps: Vec<f64>,
        ratio_tol: f64,
    },
    BrownianFunctional {
        mu: f64,
        sigma2: f64,
        alpha: f64,
        n: usize,
        tol: f64,
    },
    Rho {
        alpha: f64,
        beta: f64,
        q: f64,
        n: usize,
    },
    Embedding {
        alpha: f64,
        beta: f64,
        q: f64,
        cutoff: f64,
        horizon: f64,
        replicas: usize,
    },
    Scaling {
        triplet: String,
        gamma: f64,
        alpha: f64,
        f: TestFunction,
        #[serde(default = "one")]
        pairs: usize,
        n: usize,
    },
    Semigroup {
        triplet: String,
        gamma: f64,
        alpha: f64,
        s: f64,
        t: f64,
        fs: Vec<TestFunction>,
        n: usize,
    },
    Mass {
        triplet: String,
        alpha: f64,
        n: usize,
    },
    Uniqueness {
        triplet: String,
        gamma: f64,
        alpha: f64,
        n: usize,
    },
    Pareto {
        triplet: String,
        gamma: f64,
        alpha: f64,
        n: usize,
    },
    BetaEmbed {
        triplet: String,
        beta_lo: f64,
        beta: f64,
        alpha: f64,
        s: f64,
        n: usize,
    },
    Jumpin {
        triplet: String,
        gamma: f64,
        alpha: f64,
        times: Vec<f64>,
        fs: Vec<TestFunction>,
        x_range: [f64; 2],
        n: usize,
    },
    QuasiStationary {
        triplet: String,
        gamma: f64,
        alpha: f64,
        n: usize,
    },
    Qpotential {
        triplet: String,
        gamma: f64,
        alpha: f64,
        q: f64,
        f: TestFunction,
        n: usize,
    },
    Nonexistence {
        triplet: String,
        gamma: f64,
        alpha: f64,
    },
    MultiScaling {
        multi: String,
        x: Vec<f64>,
        horizon: f64,
        vectors: usize,
        #[serde(default = "exact_tol")]
        tol: f64,
    },
    LindnerMaller {
        bivariate: String,
        log_x_max: f64,
        expect: LmVerdict,
    },
    ResolventTilde {
        bivariate: String,
        alpha: f64,
        lambda: f64,
        kappa: f64,
        f: Vec<TestFunction>,
        n: usize,
    },
    ResolventMulti {
        multi: String,
        lambda: f64,
        kappa: f64,
        f: Vec<TestFunction>,
        n: usize,
    },
}

impl Check {
    pub fn name(&self) -> &'static str {
        match self {
            Check::Roundtrip { .. } => "roundtrip",
            Check::DriftFlow { .. } => "drift_flow",
            Check::DiscreteFunctional { .. } => "discrete_functional",
            Check::BrownianFunctional { .. } => "brownian_functional",
            Check::Rho { .. } => "rho",
            Check::Embedding { .. } => "embedding",
            Check::Scaling { .. } => "scaling",
            Check::Semigroup { .. } => "semigroup",
            Check::Mass { .. } => "mass",
            Check::Uniqueness { .. } => "uniqueness",
            Check::Pareto { .. } => "pareto",
            Check::BetaEmbed { .. } => "beta_embed",
            Check::Jumpin { .. } => "jumpin",
            Check::QuasiStationary { .. } => "quasi_stationary",
            Check::Qpotential { .. } => "qpotential",
            Check::Nonexistence { .. } => "nonexistence",
            Check::MultiScaling { .. } => "multi_scaling",
            Check::LindnerMaller { .. } => "lindner_maller",
            Check::ResolventTilde { .. } => "resolvent_tilde",
            Check::ResolventMulti { .. } => "resolvent_multi",
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks everything that can be checked without simulating: names
    /// resolve, processes and test functions are well formed.
    pub fn validate(&self) -> Result<()> {
        let wrap = |key: String, r: Result<()>| r.map_err(|e| config_err(format!("{key}: {e}")));
        let cfg_ctl = |key: &str, c: &SampleControl| wrap(key.to_string(), c.validate());
        cfg_ctl("control", &self.control)?;
        for (name, t) in &self.triplets {
            wrap(format!("triplets.{name}"), t.validate())?;
        }
        for (name, b) in &self.bivariate {
            wrap(format!("bivariate.{name}"), b.validate())?;
        }
        for (name, m) in &self.multi {
            wrap(format!("multi.{name}"), m.validate())?;
        }
        for (i, entry) in self.checks.iter().enumerate() {
            let key = format!("checks[{i}]");
            if let Some(c) = &entry.control {
                cfg_ctl(&format!("{key}.control"), c)?;
            }
            let fns: Vec<&TestFunction> = match &entry.check {
                Check::Scaling { f, .. } | Check::Qpotential { f, .. } => vec![f],
                Check::Semigroup { fs, .. } | Check::Jumpin { fs, .. } => fs.iter().collect(),
                Check::ResolventTilde { f, .. } | Check::ResolventMulti { f, .. } => f.iter().collect(),
                _ => Vec::new(),
            };
            for f in fns {
                wrap(format!("{key}.f"), f.validate())?;
            }
            match &entry.check {
                Check::Scaling { triplet, .. }
                | Check::Semigroup { triplet, .. }
                | Check::Mass { triplet, .. }
                | Check::Uniqueness { triplet, .. }
                | Check::Pareto { triplet, .. }
                | Check::BetaEmbed { triplet, .. }
                | Check::Jumpin { triplet, .. }
                | Check::QuasiStationary { triplet, .. }
                | Check::Qpotential { triplet, .. }
                | Check::Nonexistence { triplet, .. } => {
                    self.triplet(triplet).map_err(|e| config_err(format!("{key}.triplet: {e}")))?;
                }
                Check::LindnerMaller { bivariate, .. } | Check::ResolventTilde { bivariate, .. } => {
                    self.bivariate(bivariate).map_err(|e| config_err(format!("{key}.bivariate: {e}")))?;
                }
                Check::MultiScaling { multi, x, .. } => {
                    let m = self.multi(multi).map_err(|e| config_err(format!("{key}.multi: {e}")))?;
                    if x.len() != m.dim() {
                        return Err(config_err(format!("{key}.x: start has {} coordinates, process has {}", x.len(), m.dim())));
                    }
                }
                Check::ResolventMulti { multi, f, .. } => {
                    let m = self.multi(multi).map_err(|e| config_err(format!("{key}.multi: {e}")))?;
                    wrap(format!("{key}.f"), ProductFunction::new(f.clone()).validate(m.dim()))?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn triplet(&self, name: &str) -> Result<&LevyTriplet> {
        self.triplets.get(name).ok_or_else(|| config_err(format!("no triplet named `{name}`")))
    }

    fn bivariate(&self, name: &str) -> Result<&BivariateSubSpec> {
        self.bivariate.get(name).ok_or_else(|| config_err(format!("no bivariate spec named `{name}`")))
    }

    fn multi(&self, name: &str) -> Result<&MultiSpec> {
        self.multi.get(name).ok_or_else(|| config_err(format!("no multi spec named `{name}`")))
    }

    /// Output directory: the config's, else `$PSSMP_OUT_DIR`, else
    /// `pssmp-out`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }
}

/// Rows and dump produced by one check.
#[derive(Clone, Debug, Default)]
pub struct CheckOutput {
    pub rows: Vec<TestReport>,
    pub dump: String,
}

fn rows_dump(rows: &[TestReport]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

fn from_rows(rows: Vec<TestReport>) -> CheckOutput {
    CheckOutput {
        dump: rows_dump(&rows),
        rows,
    }
}

fn column(header: &str, values: &[f64]) -> String {
    let mut s = format!("{header}\n");
    for v in values {
        let _ = writeln!(s, "{v:.12e}");
    }
    s
}

/// Runs one check under `ctx`.
pub fn run_check(cfg: &ExperimentConfig, check: &Check, ctx: &CheckContext) -> Result<CheckOutput> {
    Ok(match check {
        Check::Roundtrip { paths, horizon, tol } => from_rows(vec![calibration::roundtrip_check(ctx, *paths, *horizon, *tol)?]),
        Check::DriftFlow { b, x, alpha, horizon, tol } => {
            from_rows(vec![calibration::drift_flow_check(ctx, *b, *x, *alpha, *horizon, *tol)?])
        }
        Check::DiscreteFunctional { b, alpha, steps, ratio_tol } => {
            from_rows(calibration::discrete_functional_check(ctx, *b, *alpha, steps, *ratio_tol)?)
        }
        Check::BrownianFunctional { mu, sigma2, alpha, n, tol } => {
            let (r, draws) = calibration::brownian_functional_check(ctx, *mu, *sigma2, *alpha, *n, *tol)?;
            CheckOutput {
                rows: vec![r],
                dump: column("I", &draws),
            }
        }
        Check::Rho { alpha, beta, q, n } => {
            from_rows(vec![excursion::rho_check(ctx.seed, *alpha, *beta, *q, *n, ctx.streams)?])
        }
        Check::Embedding {
            alpha,
            beta,
            q,
            cutoff,
            horizon,
            replicas,
        } => {
            let sample = excursion::embedding_sample(*alpha, *beta, *q, *cutoff, *horizon, *replicas, ctx.streams)?;
            let rows = excursion::embedding_check(ctx.seed, *alpha, *beta, *q, &sample)?.to_vec();
            CheckOutput {
                rows,
                dump: column("survivor_length", &sample.survivors),
            }
        }
        Check::Scaling {
            triplet,
            gamma,
            alpha,
            f,
            pairs,
            n,
        } => from_rows(calibration::random_scaling_checks(ctx, cfg.triplet(triplet)?, *gamma, *alpha, f, *pairs, *n)?),
        Check::Semigroup {
            triplet,
            gamma,
            alpha,
            s,
            t,
            fs,
            n,
        } => from_rows(entrance::semigroup_check(ctx, cfg.triplet(triplet)?, *gamma, *alpha, *s, *t, fs, *n)?),
        Check::Mass { triplet, alpha, n } => from_rows(vec![entrance::mass_check(ctx, cfg.triplet(triplet)?, *alpha, *n)?]),
        Check::Uniqueness { triplet, gamma, alpha, n } => {
            from_rows(vec![entrance::uniqueness_check(ctx, cfg.triplet(triplet)?, *gamma, *alpha, *n)?])
        }
        Check::Pareto { triplet, gamma, alpha, n } => {
            from_rows(vec![entrance::pareto_check(ctx, cfg.triplet(triplet)?, *gamma, *alpha, *n)?])
        }
        Check::BetaEmbed {
            triplet,
            beta_lo,
            beta,
            alpha,
            s,
            n,
        } => from_rows(vec![entrance::beta_embedding_check(
            ctx,
            cfg.triplet(triplet)?,
            *beta_lo,
            *beta,
            *alpha,
            *s,
            *n,
        )?]),
        Check::Jumpin {
            triplet,
            gamma,
            alpha,
            times,
            fs,
            x_range,
            n,
        } => {
            let j = entrance::jumpin_check(ctx, cfg.triplet(triplet)?, *gamma, *alpha, times, fs, (x_range[0], x_range[1]), *n)?;
            let mut dump = String::from("f,s,a,b,ratio\n");
            for row in &j.rows {
                let _ = writeln!(dump, "{},{},{:.12e},{:.12e},{:.12e}", row.f.label(), row.s, row.a, row.b, row.ratio());
            }
            CheckOutput {
                rows: vec![j.report.param("truncation", format!("{:.3e}", j.truncation))],
                dump,
            }
        }
        Check::QuasiStationary { triplet, gamma, alpha, n } => {
            let (r, fit) = entrance::quasi_stationary_check(ctx, cfg.triplet(triplet)?, *gamma, *alpha, *n)?;
            let mut dump = String::from("u,survival\n");
            for (u, s) in fit.grid.iter().zip(&fit.survival) {
                let _ = writeln!(dump, "{u:.12e},{s:.12e}");
            }
            CheckOutput { rows: vec![r], dump }
        }
        Check::Qpotential {
            triplet,
            gamma,
            alpha,
            q,
            f,
            n,
        } => from_rows(vec![entrance::qpotential_check(ctx, cfg.triplet(triplet)?, *gamma, *alpha, *q, f, *n)?]),
        Check::Nonexistence { triplet, gamma, alpha } => {
            from_rows(vec![calibration::nonexistence_check(ctx, cfg.triplet(triplet)?, *gamma, *alpha)?])
        }
        Check::MultiScaling {
            multi,
            x,
            horizon,
            vectors,
            tol,
        } => from_rows(vec![calibration::multi_scaling_check(ctx, cfg.multi(multi)?, x, *horizon, *vectors, *tol)?]),
        Check::LindnerMaller {
            bivariate,
            log_x_max,
            expect,
        } => {
            let lm = extensions::lindner_maller_check(cfg.bivariate(bivariate)?, *log_x_max)?;
            let stat = if lm.verdict == *expect { 0.0 } else { 1.0 };
            let r = TestReport::new("lindner_maller", lm.integral, lm.ratio, stat, 0.5, 0, ctx.seed)
                .param("verdict", format!("{:?}", lm.verdict))
                .param("expect", format!("{expect:?}"));
            CheckOutput {
                dump: format!("{}{}\n", rows_dump(std::slice::from_ref(&r)), lm.rationale),
                rows: vec![r],
            }
        }
        Check::ResolventTilde {
            bivariate,
            alpha,
            lambda,
            kappa,
            f,
            n,
        } => {
            let source = PotentialSource::Tilde {
                spec: cfg.bivariate(bivariate)?,
                alpha: *alpha,
            };
            resolvent_output(ctx, source, *lambda, *kappa, f, *n)?
        }
        Check::ResolventMulti {
            multi,
            lambda,
            kappa,
            f,
            n,
        } => resolvent_output(ctx, PotentialSource::Multi { spec: cfg.multi(multi)? }, *lambda, *kappa, f, *n)?,
    })
}

fn resolvent_output(
    ctx: &CheckContext,
    source: PotentialSource<'_>,
    lam: f64,
    kappa: f64,
    f: &[TestFunction],
    n: usize,
) -> Result<CheckOutput> {
    let r = extensions::resolvent_identity_check(ctx, source, lam, kappa, &ProductFunction::new(f.to_vec()), n)?;
    let mut dump = String::from("side,value,se\n");
    let _ = writeln!(dump, "lhs,{:.12e},{:.12e}", r.lhs.value, r.lhs.se);
    let _ = writeln!(dump, "rhs,{:.12e},{:.12e}", r.rhs.value, r.rhs.se);
    Ok(CheckOutput {
        rows: vec![r.report],
        dump,
    })
}

/// Outcome of a run that got past config validation.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub rows: Vec<TestReport>,
    /// Checks that stopped with an error, as `(index, message)`.
    pub errors: Vec<(usize, String)>,
    pub report_path: PathBuf,
}

impl RunSummary {
    pub fn all_pass(&self) -> bool {
        self.errors.is_empty() && self.rows.iter().all(|r| r.pass)
    }
}

/// Runs every check in order inside a pool of `cfg.workers` threads and
/// writes `report.csv` and one dump per check under `out_dir`.
pub fn run_config(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| config_err(format!("workers: {e}")))?;
    let base = CheckContext {
        ctl: cfg.control,
        thresholds: cfg.thresholds,
        ..CheckContext::new(cfg.seed)
    };
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (i, entry) in cfg.checks.iter().enumerate() {
        let name = entry.check.name();
        let mut ctx = base.scoped(&format!("{i}:{name}"));
        if let Some(c) = entry.control {
            ctx.ctl = c;
        }
        let out = pool.install(|| run_check(cfg, &entry.check, &ctx));
        let dump_path = out_dir.join(format!("{i:02}_{name}.csv"));
        match out {
            Ok(out) => {
                fs::write(&dump_path, &out.dump)?;
                rows.extend(out.rows);
            }
            Err(e @ (Error::InvalidParameter(_) | Error::Config(_))) => {
                return Err(config_err(format!("checks[{i}] ({name}): {e}")));
            }
            Err(e) => {
                fs::write(&dump_path, format!("error\n{e}\n"))?;
                errors.push((i, e.to_string()));
                rows.push(TestReport::new(name, f64::NAN, f64::NAN, f64::INFINITY, 0.0, 0, cfg.seed).param("error", i));
            }
        }
    }
    let report_path = out_dir.join("report.csv");
    fs::write(&report_path, rows_dump(&rows))?;
    Ok(RunSummary {
        rows,
        errors,
        report_path,
    })
}

/// Loads, runs and reports; returns the process exit code. `out_dir`
/// overrides the config's output directory.
pub fn run(path: &Path, out_dir: Option<&Path>) -> i32 {
    let cfg = match ExperimentConfig::load(path) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.resolved_output_dir());
    match run_config(&cfg, &dir) {
        Ok(summary) => {
            for (i, msg) in &summary.errors {
                eprintln!("checks[{i}] failed to run: {msg}");
            }
            let failed = summary.rows.iter().filter(|r| !r.pass).count();
            eprintln!(
                "{} rows, {failed} failed, report at {}",
                summary.rows.len(),
                summary.report_path.display()
            );
            if summary.all_pass() {
                0
            } else {
                1
            }
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("{e}");
            2
        }
        Err(e) => {
            eprintln!("{e}");
            1
        }
    }
}
