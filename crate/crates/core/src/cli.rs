//! The `subfins` command line. Exit codes: 0 success, 1 computational
//! failure, 2 configuration or parse error; errors go to stderr as JSON.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::dynamics::{self, ExtremalState, FlowOptions, Trajectory};
use crate::error::{Error, Result};
use crate::geometry;
use crate::io::{self, Config, MetricSpec, SystemSpec};
use crate::laplacian::{self, ScalarField};
use crate::metric;
use crate::nonholonomic;
use crate::solve;
use crate::systems::{self, System};

#[derive(Parser, Debug)]
#[command(name = "subfins", version, about = "Sub-Finsler geodesics, connections and diagnostics")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Built-in system name (see `systems list`).
    #[arg(long, global = true)]
    pub system: Option<String>,
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Metric override: quadratic, curvature_weighted[=alpha] or a JSON block.
    #[arg(long, global = true)]
    pub metric: Option<String>,
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Directory for CSV, JSON and gnuplot outputs.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check the metric axioms on random samples.
    Validate {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Bracket ranks and step at a point.
    Brackets {
        #[arg(long, allow_hyphen_values = true)]
        at: String,
        #[arg(long, default_value_t = 4)]
        depth: usize,
    },
    /// Integrate the sub-Hamiltonian flow.
    Flow {
        #[arg(long, allow_hyphen_values = true)]
        from: String,
        #[arg(long, allow_hyphen_values = true)]
        p0: String,
        #[arg(long, default_value_t = 1.0)]
        time: f64,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        adaptive: bool,
    },
    /// Solve the two-point problem by shooting; prints a JSON summary.
    Shoot(Endpoints),
    /// Print the distance between two points.
    Distance(Endpoints),
    /// First-variation residual of a horizontal curve.
    Variation {
        #[command(flatten)]
        curve: CurveSource,
        #[arg(long, default_value_t = 8)]
        variations: usize,
    },
    /// Search for an abnormal certificate along a curve.
    Classify {
        #[command(flatten)]
        curve: CurveSource,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Solve the Vakonomic covector equation along a curve.
    Vakonomic {
        #[command(flatten)]
        curve: CurveSource,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Evaluate the sub-Laplacian of a field, or scan test fields.
    Laplacian {
        /// Field expression over the chart coordinates.
        #[arg(long)]
        field: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        at: Option<String>,
        /// Scan test fields over the sampling box instead.
        #[arg(long)]
        scan: bool,
        /// `linear`, `default` or `;`-separated expressions.
        #[arg(long, default_value = "default")]
        fields: String,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Track horizontality along a Barthel geodesic of the extended metric.
    Invariance {
        #[arg(long, allow_hyphen_values = true)]
        from: String,
        #[arg(long, allow_hyphen_values = true)]
        v0: String,
        #[arg(long, default_value_t = 5.0)]
        time: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
    },
    /// List built-in systems.
    Systems {
        #[arg(default_value = "list")]
        action: String,
    },
}

#[derive(Args, Debug, Clone)]
pub struct Endpoints {
    #[arg(long, allow_hyphen_values = true)]
    pub from: String,
    #[arg(long, allow_hyphen_values = true)]
    pub to: String,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct CurveSource {
    /// Trajectory CSV to analyse.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Shoot a geodesic from here instead.
    #[arg(long, allow_hyphen_values = true)]
    pub from: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub to: Option<String>,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Syntax { .. }
        | Error::UnknownVariable(_)
        | Error::UnknownSystem(_)
        | Error::InvalidRegion(_)
        | Error::Invalid(_)
        | Error::Config(_)
        | Error::Io(_) => 2,
        _ => 1,
    }
}

fn error_json(kind: &str, message: &str) -> String {
    json!({"error": kind, "message": message}).to_string()
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let _ = writeln!(err, "{}", error_json("UsageError", &e.to_string()));
            return 2;
        }
    };
    let mut buf: Vec<u8> = Vec::new();
    let result = if cli.common.threads > 0 {
        match rayon::ThreadPoolBuilder::new().num_threads(cli.common.threads).build() {
            Ok(pool) => pool.install(|| dispatch(&cli, &mut buf)),
            Err(e) => Err(Error::invalid(e.to_string())),
        }
    } else {
        dispatch(&cli, &mut buf)
    };
    let _ = out.write_all(&buf);
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "{}", error_json(e.kind(), &e.to_string()));
            exit_code(&e)
        }
    }
}

struct Context {
    config: Config,
    system: System,
    seed: u64,
    threads: usize,
    out_dir: Option<PathBuf>,
    prefix: String,
}

impl Context {
    fn new(common: &Common) -> Result<Context> {
        let mut config = match &common.config {
            Some(p) => Config::load(p)?,
            None => Config {
                system: SystemSpec::Named(common.system.clone().unwrap_or_else(|| "heisenberg".into())),
                metric: None,
                solver: Default::default(),
                output: Default::default(),
            },
        };
        if common.config.is_some() {
            if let Some(name) = &common.system {
                config.system = SystemSpec::Named(name.clone());
            }
        }
        if let Some(flag) = &common.metric {
            config.metric = Some(MetricSpec::from_flag(flag)?);
        }
        let system = config.system()?;
        let seed = common.seed.unwrap_or(config.solver.rng_seed);
        let out_dir = common.out.clone().or_else(|| config.output.dir.as_ref().map(PathBuf::from));
        let prefix = config.output.prefix.clone().unwrap_or_default();
        Ok(Context {
            config,
            system,
            seed,
            threads: common.threads,
            out_dir,
            prefix,
        })
    }

    fn point(&self, s: &str) -> Result<Vec<f64>> {
        let v = parse_vector(s)?;
        if v.len() != self.system.n() {
            return Err(Error::invalid(format!("expected {} coordinates, got {}", self.system.n(), v.len())));
        }
        Ok(v)
    }

    fn shooting(&self) -> solve::ShootingOptions {
        let mut o = self.config.solver.shooting(self.threads);
        o.rng_seed = self.seed;
        o
    }

    fn path(&self, name: &str) -> Result<Option<PathBuf>> {
        match &self.out_dir {
            None => Ok(None),
            Some(d) => {
                std::fs::create_dir_all(d)?;
                Ok(Some(d.join(format!("{}{name}", self.prefix))))
            }
        }
    }

    fn write_trajectory(&self, stem: &str, traj: &Trajectory) -> Result<Option<PathBuf>> {
        let Some(csv) = self.path(&format!("{stem}.csv"))? else {
            return Ok(None);
        };
        io::write_trajectory_csv(std::fs::File::create(&csv)?, traj)?;
        let name = csv.file_name().and_then(|n| n.to_str()).unwrap_or("trajectory.csv").to_string();
        std::fs::write(self.path(&format!("{stem}.gp"))?.expect("dir set"), io::trajectory_gnuplot(&name, &self.system))?;
        Ok(Some(csv))
    }

    fn write_json<T: Serialize>(&self, stem: &str, value: &T) -> Result<()> {
        if let Some(p) = self.path(&format!("{stem}.json"))? {
            std::fs::write(p, io::to_json(value) + "\n")?;
        }
        Ok(())
    }

    fn curve(&self, src: &CurveSource) -> Result<Trajectory> {
        match (&src.trajectory, &src.from, &src.to) {
            (Some(p), None, None) => read_trajectory(p, &self.system),
            (None, Some(a), Some(b)) => {
                let r = solve::shoot(&self.system, &self.point(a)?, &self.point(b)?, &self.shooting())?;
                if !r.converged {
                    return Err(Error::NoConvergence {
                        reason: "shooting did not reach the endpoint".into(),
                        best_residual: r.endpoint_error,
                    });
                }
                Ok(r.trajectory)
            }
            _ => Err(Error::invalid("give either --trajectory or both --from and --to")),
        }
    }
}

fn read_trajectory(path: &Path, system: &System) -> Result<Trajectory> {
    let t = io::read_trajectory_csv(std::fs::File::open(path)?)?;
    if t.xs[0].len() != system.n() || t.us[0].len() != system.k() {
        return Err(Error::Config(format!(
            "trajectory has n={}, k={} but the system has n={}, k={}",
            t.xs[0].len(),
            t.us[0].len(),
            system.n(),
            system.k()
        )));
    }
    Ok(t)
}

pub fn parse_vector(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number `{c}` in `{s}`")))
        })
        .collect()
}

fn print_json<T: Serialize>(out: &mut dyn Write, v: &T) -> Result<()> {
    writeln!(out, "{}", io::to_json(v))?;
    Ok(())
}

fn dispatch(cli: &Cli, out: &mut Vec<u8>) -> Result<i32> {
    if let Command::Systems { action } = &cli.command {
        if action != "list" {
            return Err(Error::invalid(format!("unknown systems action `{action}`")));
        }
        for e in systems::catalog() {
            let dims = if e.dim == 0 { "n=k=any".to_string() } else { format!("n={} k={}", e.dim, e.rank) };
            writeln!(out, "{:<18} {dims:<9} metrics: {:<40} {}", e.name, e.metrics.join(", "), e.description)?;
        }
        return Ok(0);
    }
    let ctx = Context::new(&cli.common)?;
    let sys = &ctx.system;
    match &cli.command {
        Command::Systems { .. } => unreachable!("handled above"),
        Command::Validate { samples } => {
            let report = metric::validate(sys, *samples, ctx.seed);
            print_json(out, &report)?;
            ctx.write_json("validate", &report)?;
            Ok(if report.passed() { 0 } else { 1 })
        }
        Command::Brackets { at, depth } => {
            let x = ctx.point(at)?;
            let ranks = geometry::bracket_ranks(sys, &x, *depth)?;
            let step = geometry::bracket_generating_step(sys, &x, *depth);
            let v = json!({
                "point": x,
                "ranks": ranks,
                "step": step.as_ref().ok(),
                "generating": step.is_ok(),
            });
            print_json(out, &v)?;
            Ok(0)
        }
        Command::Flow { from, p0, time, dt, adaptive } => {
            let x0 = ctx.point(from)?;
            let p = ctx.point(p0)?;
            let opts = FlowOptions {
                dt: dt.unwrap_or(ctx.config.solver.dt),
                adaptive: *adaptive,
                ..Default::default()
            };
            let traj = dynamics::flow(sys, &ExtremalState::new(&x0, &p), *time, &opts)?;
            if ctx.write_trajectory("flow", &traj)?.is_none() {
                io::write_trajectory_csv(&mut *out, &traj)?;
            } else {
                print_json(
                    out,
                    &json!({
                        "samples": traj.len(),
                        "final_x": traj.final_x(),
                        "eta_drift": traj.eta_drift(),
                        "max_horiz_residual": traj.max_horizontality_residual(),
                    }),
                )?;
            }
            Ok(0)
        }
        Command::Shoot(e) | Command::Distance(e) => {
            let mut opts = ctx.shooting();
            if let Some(r) = e.restarts {
                opts.restarts = r;
            }
            let (d, r) = solve::distance(sys, &ctx.point(&e.from)?, &ctx.point(&e.to)?, &opts)?;
            let summary = io::GeodesicSummary::from(&r);
            ctx.write_json("summary", &summary)?;
            ctx.write_trajectory("geodesic", &r.trajectory)?;
            if matches!(cli.command, Command::Distance(_)) {
                writeln!(out, "{d:.6}")?;
            } else {
                print_json(out, &summary)?;
            }
            Ok(if r.converged { 0 } else { 1 })
        }
        Command::Variation { curve, variations } => {
            let traj = ctx.curve(curve)?;
            let r = solve::first_variation_residual(sys, &traj, *variations, ctx.seed)?;
            let v = json!({"first_variation_residual": r, "variations": variations});
            print_json(out, &v)?;
            ctx.write_json("variation", &v)?;
            Ok(0)
        }
        Command::Classify { curve, tol } => {
            let traj = ctx.curve(curve)?;
            let cert = nonholonomic::abnormal_check(sys, &traj, *tol)?;
            if let (Some(c), Some(p)) = (&cert, ctx.path("certificate.csv")?) {
                io::write_certificate_csv(std::fs::File::create(p)?, "abnormal", c, Some(json!({"tol": tol})))?;
            }
            let v = match &cert {
                Some(c) => json!({"abnormal": true, "residual": c.residual, "gamma0": c.gammas[0]}),
                None => json!({"abnormal": false}),
            };
            print_json(out, &v)?;
            Ok(0)
        }
        Command::Vakonomic { curve, tol } => {
            let traj = ctx.curve(curve)?;
            let o = nonholonomic::vakonomic_comparison(sys, &traj, *tol)?;
            if let Some(p) = ctx.path("vakonomic.csv")? {
                let extra = json!({"ode_residual": o.ode_residual, "accepted": o.accepted, "tol": tol});
                io::write_certificate_csv(std::fs::File::create(p)?, "vakonomic", &o.gamma, Some(extra))?;
            }
            let v = json!({
                "accepted": o.accepted,
                "ode_residual": o.ode_residual,
                "subspace_residual": o.subspace_residual,
                "gamma0": o.gamma.gammas[0],
                "free_directions": o.free_directions,
            });
            print_json(out, &v)?;
            Ok(0)
        }
        Command::Laplacian { field, at, scan, fields, samples } => {
            if *scan {
                let tests = match fields.as_str() {
                    "default" => laplacian::default_test_fields(sys),
                    "linear" => laplacian::linear_test_fields(sys),
                    list => list
                        .split(';')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| ScalarField::parse(s, sys))
                        .collect::<Result<Vec<_>>>()?,
                };
                let report = laplacian::flatness_scan(sys, &tests, &sys.sample_box(), *samples, ctx.seed)?;
                ctx.write_json("flatness", &report)?;
                writeln!(out, "{:<24} {:>12}", "field", "max |Δ|")?;
                for (f, name) in report.fields.iter().enumerate() {
                    let m = report.values.iter().filter_map(|row| row[f]).fold(0.0f64, |a, v| a.max(v.abs()));
                    writeln!(out, "{name:<24} {m:>12.6e}")?;
                }
                writeln!(
                    out,
                    "max_abs = {:.6e}, domain failures = {}, verdict: {}",
                    report.max_abs,
                    report.domain_failures,
                    if report.flat { "flat" } else { "not flat" }
                )?;
                return Ok(0);
            }
            let (Some(f), Some(at)) = (field, at) else {
                return Err(Error::invalid("laplacian needs --field and --at, or --scan"));
            };
            let h = ScalarField::parse(f, sys)?;
            let x = ctx.point(at)?;
            let v = json!({
                "value": laplacian::sub_laplacian(sys, &h, &x)?,
                "gradient": laplacian::horizontal_gradient(sys, &h, &x)?,
            });
            print_json(out, &v)?;
            Ok(0)
        }
        Command::Invariance { from, v0, time, dt } => {
            let rep = dynamics::geodesic_invariance_check(sys, &ctx.point(from)?, &ctx.point(v0)?, *time, *dt)?;
            ctx.write_json("invariance", &rep)?;
            print_json(
                out,
                &json!({"initial_residual": rep.initial_residual, "max_residual": rep.max_residual, "samples": rep.times.len()}),
            )?;
            Ok(0)
        }
    }
}
