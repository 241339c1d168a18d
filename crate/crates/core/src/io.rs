//! Configuration files and result formats: system JSON, trajectory and
//! certificate CSV, summary JSON and gnuplot scripts.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::metric::SubFinslerMetric;
use crate::nonholonomic::AnnihilatorSection;
use crate::solve::{GeodesicResult, ShootingOptions};
use crate::systems::{self, System};

/// A matrix entry: a number or an expression over the chart coordinates.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum Entry {
    Number(f64),
    Expr(String),
}

impl Entry {
    fn source(&self) -> String {
        match self {
            Entry::Number(v) => format!("{v:?}"),
            Entry::Expr(s) => s.clone(),
        }
    }
}

fn sources(rows: &[Vec<Entry>]) -> Vec<Vec<String>> {
    rows.iter().map(|r| r.iter().map(Entry::source).collect()).collect()
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    Euclidean,
    Quadratic {
        #[serde(rename = "Q")]
        q: Vec<Vec<Entry>>,
    },
    CurvatureWeighted {
        alpha: f64,
    },
    /// Exactly one of `F2` (the squared norm) or `F`.
    Custom {
        #[serde(rename = "F2", default)]
        f2: Option<String>,
        #[serde(rename = "F", default)]
        f: Option<String>,
    },
}

impl MetricSpec {
    pub fn build(&self, system: &System) -> Result<SubFinslerMetric> {
        match self {
            MetricSpec::Euclidean => Ok(SubFinslerMetric::euclidean(system.k(), &system.coords)),
            MetricSpec::Quadratic { q } => SubFinslerMetric::quadratic(&sources(q), &system.coords),
            MetricSpec::CurvatureWeighted { alpha } => Ok(SubFinslerMetric::curvature_weighted(*alpha)),
            MetricSpec::Custom { f2: Some(s), f: None } => SubFinslerMetric::custom(s, &system.coords, system.k(), true),
            MetricSpec::Custom { f2: None, f: Some(s) } => SubFinslerMetric::custom(s, &system.coords, system.k(), false),
            MetricSpec::Custom { .. } => Err(Error::Config("custom metric needs exactly one of F2 or F".into())),
        }
    }

    /// Parses the `--metric` flag: a JSON block, `quadratic`/`euclidean`,
    /// `curvature_weighted` (α = 3) or `curvature_weighted=<alpha>`.
    pub fn from_flag(flag: &str) -> Result<MetricSpec> {
        let flag = flag.trim();
        if flag.starts_with('{') {
            return parse_json(flag);
        }
        match flag.split_once('=') {
            None if flag == "quadratic" || flag == "euclidean" => Ok(MetricSpec::Euclidean),
            None if flag == "curvature_weighted" => Ok(MetricSpec::CurvatureWeighted { alpha: 3.0 }),
            Some(("curvature_weighted", a)) => a
                .trim()
                .parse()
                .map(|alpha| MetricSpec::CurvatureWeighted { alpha })
                .map_err(|_| Error::Config(format!("bad alpha `{a}`"))),
            _ => Err(Error::Config(format!("unknown metric `{flag}`"))),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InlineSystem {
    #[serde(default)]
    pub name: Option<String>,
    pub dim: usize,
    pub coordinates: Vec<String>,
    #[serde(default)]
    pub periodic: Option<Vec<bool>>,
    /// `k` rows, one vector field per row.
    pub frame: Vec<Vec<Entry>>,
    #[serde(default)]
    pub taming: Option<Vec<Vec<Entry>>>,
    #[serde(default)]
    pub metric: Option<MetricSpec>,
    #[serde(default)]
    pub rank_tol: Option<f64>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
#[serde(untagged)]
pub enum SystemSpec {
    Named(String),
    Inline(InlineSystem),
}

impl<'de> Deserialize<'de> for SystemSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(name) => Ok(SystemSpec::Named(name)),
            v @ serde_json::Value::Object(_) => InlineSystem::deserialize(v).map(SystemSpec::Inline).map_err(D::Error::custom),
            _ => Err(D::Error::custom("`system` must be a catalog name or an inline system object")),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub restarts: usize,
    pub max_newton_iters: usize,
    pub endpoint_tol: f64,
    pub time_horizon: f64,
    pub rng_seed: u64,
    pub coarse_steps: usize,
    pub fine_steps: usize,
    /// Flow step.
    pub dt: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = ShootingOptions::default();
        SolverConfig {
            restarts: s.restarts,
            max_newton_iters: s.max_newton_iters,
            endpoint_tol: s.endpoint_tol,
            time_horizon: s.time_horizon,
            rng_seed: s.rng_seed,
            coarse_steps: s.coarse_steps,
            fine_steps: s.fine_steps,
            dt: 1e-3,
        }
    }
}

impl SolverConfig {
    pub fn shooting(&self, threads: usize) -> ShootingOptions {
        ShootingOptions {
            restarts: self.restarts,
            max_newton_iters: self.max_newton_iters,
            endpoint_tol: self.endpoint_tol,
            time_horizon: self.time_horizon,
            rng_seed: self.rng_seed,
            coarse_steps: self.coarse_steps,
            fine_steps: self.fine_steps,
            threads,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory for CSV, JSON and gnuplot files; nothing is written when
    /// absent.
    pub dir: Option<String>,
    pub prefix: Option<String>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: SystemSpec,
    /// Overrides the system's metric.
    #[serde(default)]
    pub metric: Option<MetricSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn json_error(e: serde_json::Error, text: &str) -> Error {
    if e.is_syntax() || e.is_eof() {
        let offset: usize = text
            .split_inclusive('\n')
            .take(e.line().saturating_sub(1))
            .map(str::len)
            .sum::<usize>()
            + e.column().saturating_sub(1);
        Error::Syntax {
            position: offset,
            expected: format!("valid JSON ({e})"),
        }
    } else {
        Error::Config(e.to_string())
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| json_error(e, text))
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        parse_json(text)
    }

    pub fn load(path: &std::path::Path) -> Result<Config> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    /// Builds the system with any metric override applied.
    pub fn system(&self) -> Result<System> {
        let s = build_system(&self.system)?;
        match &self.metric {
            Some(m) => {
                let metric = m.build(&s)?;
                s.with_metric(metric)
            }
            None => Ok(s),
        }
    }
}

pub fn build_system(spec: &SystemSpec) -> Result<System> {
    match spec {
        SystemSpec::Named(name) => systems::make_system(name),
        SystemSpec::Inline(def) => {
            if def.coordinates.len() != def.dim {
                return Err(Error::Config(format!(
                    "{} coordinates given for dim {}",
                    def.coordinates.len(),
                    def.dim
                )));
            }
            let coords: Vec<&str> = def.coordinates.iter().map(String::as_str).collect();
            let periodic = def.periodic.clone().unwrap_or_else(|| vec![false; def.dim]);
            let mut s = System::new(def.name.as_deref().unwrap_or("custom"), &coords, &periodic, &sources(&def.frame))?;
            if let Some(t) = &def.taming {
                s = s.with_taming(&sources(t))?;
            }
            if let Some(m) = &def.metric {
                let metric = m.build(&s)?;
                s = s.with_metric(metric)?;
            }
            if let Some(tol) = def.rank_tol {
                s.rank_tol = tol;
            }
            Ok(s)
        }
    }
}

// ---------------------------------------------------------------- CSV

pub fn trajectory_header(n: usize, k: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("x{i}")));
    h.extend((1..=n).map(|i| format!("p{i}")));
    h.extend((1..=k).map(|i| format!("u{i}")));
    h.extend(["eta", "F_speed", "horiz_residual"].map(String::from));
    h
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Writes `t, x1..xn, p1..pn, u1..uk, eta, F_speed, horiz_residual`. Numbers
/// use the shortest representation that reads back to the same value.
pub fn write_trajectory_csv<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let n = traj.xs.first().map_or(0, Vec::len);
    let k = traj.us.first().map_or(0, Vec::len);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(trajectory_header(n, k)).map_err(csv_error)?;
    for i in 0..traj.len() {
        let mut row = vec![traj.times[i]];
        row.extend(&traj.xs[i]);
        row.extend(&traj.ps[i]);
        row.extend(&traj.us[i]);
        row.extend([traj.eta[i], traj.speed[i], traj.horiz_residual[i]]);
        out.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: std::io::Read>(r: R) -> Result<Trajectory> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers().map_err(csv_error)?.iter().map(String::from).collect();
    let count = |prefix: char| {
        header
            .iter()
            .filter(|h| h.starts_with(prefix) && h[1..].parse::<usize>().is_ok())
            .count()
    };
    let (n, k) = (count('x'), count('u'));
    if header != trajectory_header(n, k) {
        return Err(Error::Config(format!("unexpected trajectory columns: {}", header.join(","))));
    }
    let mut traj = Trajectory {
        times: vec![],
        xs: vec![],
        ps: vec![],
        us: vec![],
        eta: vec![],
        speed: vec![],
        horiz_residual: vec![],
        conserved: true,
    };
    for rec in rd.records() {
        let rec = rec.map_err(csv_error)?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad number `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != header.len() {
            return Err(Error::Config("ragged trajectory row".into()));
        }
        traj.times.push(vals[0]);
        traj.xs.push(vals[1..1 + n].to_vec());
        traj.ps.push(vals[1 + n..1 + 2 * n].to_vec());
        traj.us.push(vals[1 + 2 * n..1 + 2 * n + k].to_vec());
        traj.eta.push(vals[1 + 2 * n + k]);
        traj.speed.push(vals[2 + 2 * n + k]);
        traj.horiz_residual.push(vals[3 + 2 * n + k]);
    }
    if traj.is_empty() {
        return Err(Error::Config("trajectory file has no samples".into()));
    }
    Ok(traj)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CertificateHeader {
    pub kind: String,
    pub residual: f64,
    pub annihilation_residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
}

/// First line `# {json header}`, then `t, gamma1..gamman`.
pub fn write_certificate_csv<W: Write>(mut w: W, kind: &str, section: &AnnihilatorSection, extra: Option<serde_json::Value>) -> Result<()> {
    let header = CertificateHeader {
        kind: kind.to_string(),
        residual: section.residual,
        annihilation_residual: section.annihilation_residual,
        extra,
    };
    writeln!(w, "# {}", serde_json::to_string(&header).map_err(|e| Error::Io(e.to_string()))?)?;
    let n = section.gammas.first().map_or(0, Vec::len);
    let mut out = csv::Writer::from_writer(w);
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("gamma{i}")));
    out.write_record(&cols).map_err(csv_error)?;
    for (t, g) in section.times.iter().zip(&section.gammas) {
        let mut row = vec![format!("{t:?}")];
        row.extend(g.iter().map(|v| format!("{v:?}")));
        out.write_record(&row).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_certificate_csv<R: BufRead>(mut r: R) -> Result<(CertificateHeader, AnnihilatorSection)> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let json = first
        .strip_prefix('#')
        .ok_or_else(|| Error::Config("certificate file must start with a `#` JSON header".into()))?;
    let header: CertificateHeader = parse_json(json.trim())?;
    let mut rd = csv::Reader::from_reader(r);
    let mut times = vec![];
    let mut gammas = vec![];
    for rec in rd.records() {
        let rec = rec.map_err(csv_error)?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad number `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        times.push(vals[0]);
        gammas.push(vals[1..].to_vec());
    }
    Ok((
        header.clone(),
        AnnihilatorSection {
            times,
            gammas,
            residual: header.residual,
            annihilation_residual: header.annihilation_residual,
        },
    ))
}

// --------------------------------------------------------------- JSON

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GeodesicSummary {
    pub distance: f64,
    pub p0: Vec<f64>,
    pub converged: bool,
    pub endpoint_error: f64,
    pub length: f64,
    pub restarts_used: usize,
}

impl From<&GeodesicResult> for GeodesicSummary {
    fn from(r: &GeodesicResult) -> Self {
        GeodesicSummary {
            distance: r.length,
            p0: r.p0.clone(),
            converged: r.converged,
            endpoint_error: r.endpoint_error,
            length: r.length,
            restarts_used: r.restarts_used,
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable result")
}

// ------------------------------------------------------------ gnuplot

/// A gnuplot script plotting a trajectory CSV: the first two or three
/// coordinates as a curve, plus η and the horizontality residual over time.
pub fn trajectory_gnuplot(csv_name: &str, system: &System) -> String {
    let n = system.n();
    let k = system.k();
    let col = |name: &str| trajectory_header(n, k).iter().position(|h| h == name).expect("column") + 1;
    let mut s = String::new();
    s.push_str("set datafile separator ','\nset key autotitle columnhead\n");
    s.push_str(&format!("set title '{}'\n", system.name));
    let c: Vec<&String> = system.coords.iter().take(3).collect();
    if n >= 3 {
        s.push_str(&format!("set xlabel '{}'\nset ylabel '{}'\nset zlabel '{}'\n", c[0], c[1], c[2]));
        s.push_str(&format!("splot '{csv_name}' using 2:3:4 with lines title 'curve'\n"));
    } else if n == 2 {
        s.push_str(&format!("set xlabel '{}'\nset ylabel '{}'\n", c[0], c[1]));
        s.push_str(&format!("plot '{csv_name}' using 2:3 with lines title 'curve'\n"));
    } else {
        s.push_str(&format!("plot '{csv_name}' using 1:2 with lines title '{}'\n", c[0]));
    }
    s.push_str("pause -1\n");
    s.push_str("set xlabel 't'\nunset ylabel\n");
    s.push_str(&format!(
        "plot '{csv_name}' using 1:{} with lines title 'eta', '' using 1:{} with lines title 'horiz_residual'\n",
        col("eta"),
        col("horiz_residual")
    ));
    s.push_str("pause -1\n");
    s
}
