//! Command-line front end: each command reads a config, writes its payload
//! files and a manifest into the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::averaging::{capture_prediction, theta};
use crate::config::{Experiment, ExperimentConfig, ForceSource};
use crate::ensemble::{
    accuracy_scaling, adiabatic_jump, resonance_scattering, run_capture_experiment, InitialSet, RunSummary,
};
use crate::error::{Error, Result};
use crate::geometry::{build_chart, fmt_f64, log_grid, OrbitChart};
use crate::model::{build_model, capture_fraction, exit_time_scan, model_from_forcing, write_capture_csv, ModelEnsemble};
use crate::resonance::{
    check_disjoint, enumerate_resonances, forcing_grid_size, fourier_table, melnikov_pair, q_grid, resonant_forcing,
    write_catalog_csv, write_forcing_csv, zone_geometry, zone_geometry_with, CatalogRow, Resonance,
};
use crate::systems::Domain;

pub const CHART_FILE: &str = "chart.csv";

#[derive(Debug, Parser)]
#[command(name = "sepcross", version, about = "Averaging and separatrix crossing experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = "SEPCROSS_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Tabulate period, frequency and action over the energy grid.
    Chart,
    /// Separatrix integrals and capture probabilities.
    Theta,
    /// Resonance catalog, condition B' and zone overlaps.
    Resonances,
    /// Passage and capture statistics of the resonance model.
    Model,
    /// Monte Carlo experiment on the full system.
    Ensemble,
    /// Verify manifests and collect all payloads into one bundle.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Chart => "chart",
            Command::Theta => "theta",
            Command::Resonances => "resonances",
            Command::Model => "model",
            Command::Ensemble => "ensemble",
            Command::Report => "report",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub started_unix: u64,
    pub wall_seconds: f64,
    pub files: Vec<FileEntry>,
}

pub fn manifest_name(cmd: &str) -> String {
    format!("manifest_{cmd}.json")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects the files written by one command.
struct Output {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.push(FileEntry { path: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }
    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.put(name, s.as_bytes())
    }
}

/// Parse arguments, run, and map errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = if cli.verbose { "debug" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.kind());
            e.code()
        }
    }
}

pub fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::ConfigInvalid("--threads must be positive".into()));
        }
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let cfg = load_config(cli)?;
    run_command(cli.command, &cfg, &cli.out)
}

/// Run one command with a resolved config, writing into `out`.
pub fn run_command(cmd: Command, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let start = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut o = Output::new(out)?;
    let resolved = cfg.resolved()?;
    o.put(&format!("{}.resolved.toml", cmd.name()), resolved.as_bytes())?;
    info!("running {} into {}", cmd.name(), out.display());
    match cmd {
        Command::Chart => cmd_chart(cfg, &mut o)?,
        Command::Theta => cmd_theta(cfg, &mut o)?,
        Command::Resonances => cmd_resonances(cfg, &mut o)?,
        Command::Model => cmd_model(cfg, &mut o)?,
        Command::Ensemble => cmd_ensemble(cfg, &mut o)?,
        Command::Report => cmd_report(&mut o)?,
    }
    let m = Manifest {
        command: cmd.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: sha256_hex(resolved.as_bytes()),
        seed: cfg.seed,
        started_unix,
        wall_seconds: start.elapsed().as_secs_f64(),
        files: o.files.clone(),
    };
    let mut s = serde_json::to_string_pretty(&m)?;
    s.push('\n');
    fs::write(out.join(manifest_name(cmd.name())), s)?;
    Ok(())
}

fn make_chart(cfg: &ExperimentConfig) -> Result<OrbitChart> {
    let sys = cfg.system.build();
    let c = &cfg.chart;
    build_chart(sys.hamiltonian.as_ref(), &c.domains, &log_grid(c.h_min, c.h_max, c.n_h), &cfg.z_grid())
}

fn cmd_chart(cfg: &ExperimentConfig, o: &mut Output) -> Result<()> {
    let chart = make_chart(cfg)?;
    let mut buf = Vec::new();
    chart.write_csv(&mut buf)?;
    o.put(CHART_FILE, &buf)
}

/// Chart written by an earlier `chart` run in the same directory.
fn read_chart(dir: &Path) -> Result<OrbitChart> {
    let p = dir.join(CHART_FILE);
    let f = fs::File::open(&p)
        .map_err(|_| Error::MissingDependency(format!("{} not found; run the chart command first", p.display())))?;
    OrbitChart::read_csv(std::io::BufReader::new(f))
}

fn cmd_theta(cfg: &ExperimentConfig, o: &mut Output) -> Result<()> {
    let sys = cfg.system.build();
    let eps = cfg.eps_values()[0];
    let th = theta(&sys, &cfg.system.z, eps, cfg.theta.lambda_nodes)?;
    let pred = capture_prediction(&th).ok();
    let v = json!({
        "preset": cfg.system.preset,
        "z": cfg.system.z,
        "eps": eps,
        "theta1": th.theta[0],
        "theta2": th.theta[1],
        "theta3": th.theta[2],
        "error": th.error,
        "p1": pred.map(|p| p.0),
        "p2": pred.map(|p| p.1),
    });
    o.json("theta.json", &v)
}

fn cmd_resonances(cfg: &ExperimentConfig, o: &mut Output) -> Result<()> {
    let sys = cfg.system.build();
    let chart = read_chart(&o.dir)?;
    let z = cfg.system.z.clone();
    let r = &cfg.resonances;
    let eps = cfg.eps_values()[0];
    let k = &cfg.zones;
    let list = enumerate_resonances(&chart, &z, (r.omega_min, r.omega_max), r.order)?;
    let (c_f, table) = match r.c_f {
        Some(c) => (c, None),
        None => {
            let t = fourier_table(&sys, r.h_ref, &z, k.m1, k.m2, eps)?;
            (t.c_f, Some(t))
        }
    };
    let mut rows = Vec::new();
    let mut outside = Vec::new();
    let mut melnikov = None;
    for res in &list {
        match zone_geometry(res, &chart, &z, eps, c_f, k) {
            Ok(zone) => {
                let bprime = if res.s2 <= r.bprime_max_s2 {
                    let n = forcing_grid_size(res.s2);
                    let ms = match &melnikov {
                        Some((nn, m)) if *nn == n => m,
                        _ => {
                            melnikov = Some((n, melnikov_pair(&sys, &z, n)?));
                            &melnikov.as_ref().unwrap().1
                        }
                    };
                    let ff = resonant_forcing(&ms[0], &ms[1], res.s1, res.s2)?;
                    let mut buf = Vec::new();
                    write_forcing_csv(&ff, &mut buf)?;
                    o.put(&format!("forcing_{}_{}.csv", res.s1, res.s2), &buf)?;
                    Some(ff.verdict())
                } else {
                    None
                };
                rows.push(CatalogRow { zone, bprime });
            }
            Err(Error::OutsidePi(_)) => outside.push(*res),
            Err(e) => return Err(e),
        }
    }
    let zones: Vec<_> = rows.iter().map(|r| r.zone.clone()).collect();
    let disjoint = check_disjoint(&zones, k.c_z, Some(&chart));
    let mut buf = Vec::new();
    write_catalog_csv(&rows, &mut buf)?;
    o.put("catalog.csv", &buf)?;
    let v = json!({
        "eps": eps,
        "z": z,
        "c_f": c_f,
        "fourier": table.map(|t| json!({"h": t.h, "c_f": t.c_f, "c_f1": t.c_f1, "rate_m1": t.rate_m1, "edge_ratio": t.edge_ratio})),
        "enumerated": list.len(),
        "outside_pi": outside.iter().map(|r: &Resonance| json!({"s1": r.s1, "s2": r.s2, "h_hat": r.h_hat})).collect::<Vec<_>>(),
        "zones": rows,
        "disjoint": disjoint.disjoint(),
        "overlaps": disjoint.overlaps,
    });
    o.json("resonances.json", &v)
}

fn cmd_model(cfg: &ExperimentConfig, o: &mut Output) -> Result<()> {
    let mc = &cfg.model;
    let model = match mc.source {
        ForceSource::Fixture => {
            let f: Vec<f64> = q_grid(256).iter().map(|q| mc.mean + mc.amplitude * q.sin()).collect();
            build_model(&f, 2.0 * std::f64::consts::PI, mc.eps1, 0.0, mc.drift, mc.bounds)?
        }
        ForceSource::Forcing => {
            let sys = cfg.system.build();
            let ms = melnikov_pair(&sys, &cfg.system.z, forcing_grid_size(mc.s2))?;
            let ff = resonant_forcing(&ms[0], &ms[1], mc.s1, mc.s2)?;
            model_from_forcing(&ff, mc.component - 1, mc.eps1, 0.0, mc.drift, mc.bounds)?
        }
    };
    let spec = ModelEnsemble { n: mc.n, seed: cfg.seed, window: mc.window, offset: mc.offset, w0: 0.0 };
    let rows = capture_fraction(&model, &spec, &mc.eps2)?;
    let scan = if model.maxima.is_empty() || mc.exit_scan.is_empty() {
        None
    } else {
        Some(exit_time_scan(&model, 0.0, 0.0, &mc.exit_scan)?)
    };
    let mut buf = Vec::new();
    write_capture_csv(&rows, &mut buf)?;
    o.put("model_capture.csv", &buf)?;
    let v = json!({
        "v_c": model.v_c,
        "maxima": model.maxima,
        "bprime": model.bprime,
        "c_q": model.c_q,
        "target_saddle": model.target_saddle(0.0),
        "capture": rows,
        "exit_time": scan,
    });
    o.json("model.json", &v)
}

fn runs_csv(runs: &[RunSummary]) -> Vec<u8> {
    let mut s = String::from("index,lambda0,final_domain,classified,near_saddle,lambda_end,steps,sup_dh,sup_dz,error\n");
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in runs {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.index,
            fmt_f64(r.lambda0),
            r.final_domain,
            r.classified,
            r.near_saddle,
            fmt_f64(r.lambda_end),
            r.steps,
            opt(r.sup_dh),
            opt(r.sup_dz),
            r.error.as_deref().unwrap_or("").replace(',', ";")
        ));
    }
    s.into_bytes()
}

fn cmd_ensemble(cfg: &ExperimentConfig, o: &mut Output) -> Result<()> {
    let sys = cfg.system.build();
    let chart = read_chart(&o.dir)?;
    let e = &cfg.ensemble;
    let ic = &e.initial;
    let mut set = InitialSet::at_energy(&sys, ic.h0, cfg.system.z.clone(), 0.0)?;
    set.delta_action = ic.delta_action;
    set.delta_z = ic.delta_z;
    set.delta_phase = ic.delta_phase;
    set.delta_lambda = ic.delta_lambda;
    set.lambda_half = ic.lambda_half;
    let eps = cfg.eps_values();
    let mut payload = BTreeMap::new();
    payload.insert("experiment", serde_json::to_value(e.experiment)?);
    match e.experiment {
        Experiment::Capture => {
            let mut all = Vec::new();
            for (j, &ep) in eps.iter().enumerate() {
                let mut st = run_capture_experiment(&sys, &chart, &set, ep, e.n, cfg.seed.wrapping_add(j as u64), &e.events)?;
                if e.write_runs {
                    o.put(&format!("runs_{j}.csv"), &runs_csv(&st.runs))?;
                }
                st.runs.clear();
                all.push(st);
            }
            payload.insert("capture", serde_json::to_value(all)?);
        }
        Experiment::Scaling => {
            let r = accuracy_scaling(&sys, &chart, &set, &eps, e.n, cfg.seed, &e.events)?;
            payload.insert("scaling", serde_json::to_value(r)?);
        }
        Experiment::Jump => {
            let r = adiabatic_jump(&sys, &chart, &set, &eps, e.n, cfg.seed, e.h_ref, &e.events)?;
            payload.insert("jump", serde_json::to_value(r)?);
        }
        Experiment::Scattering => {
            let z = &cfg.system.z;
            let xi = e.s2 as f64 / e.s1 as f64;
            let h_hat = chart.h_for_omega(Domain::B3, xi, z)?;
            let res = Resonance { s1: e.s1, s2: e.s2, xi, h_hat };
            let c_f = cfg.resonances.c_f.unwrap_or(1.0);
            // the zone is fixed by the smallest eps of the scan
            let eps_zone = eps.iter().cloned().fold(f64::INFINITY, f64::min);
            let zone = zone_geometry_with(&res, &chart, z, eps_zone, c_f, &cfg.zones, false)?;
            let mut stats = Vec::new();
            for (j, &ep) in eps.iter().enumerate() {
                let mut st = resonance_scattering(&sys, &chart, &zone, ep, e.n, cfg.seed.wrapping_add(j as u64), &e.events)?;
                st.jumps.clear();
                stats.push(st);
            }
            payload.insert("scattering", serde_json::to_value(stats)?);
        }
    }
    o.json("ensemble.json", &payload)
}

/// Verify every manifest in the output directory and bundle the payloads.
fn cmd_report(o: &mut Output) -> Result<()> {
    let mut names: Vec<String> = fs::read_dir(&o.dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("manifest_") && n.ends_with(".json") && n != &manifest_name("report"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::MissingDependency(format!("no manifests in {}", o.dir.display())));
    }
    let mut commands = Vec::new();
    let mut csv = String::from("command,path,sha256,bytes\n");
    for n in &names {
        let m: Manifest = serde_json::from_slice(&fs::read(o.dir.join(n))?)?;
        let mut payloads = BTreeMap::new();
        for f in &m.files {
            let bytes = fs::read(o.dir.join(&f.path))
                .map_err(|_| Error::MissingDependency(format!("{} listed in {n} is missing", f.path)))?;
            let h = sha256_hex(&bytes);
            if h != f.sha256 {
                return Err(Error::MissingDependency(format!("{} does not match the hash in {n}", f.path)));
            }
            csv.push_str(&format!("{},{},{},{}\n", m.command, f.path, f.sha256, f.bytes));
            if f.path.ends_with(".json") {
                payloads.insert(f.path.clone(), serde_json::from_slice::<Value>(&bytes)?);
            }
        }
        commands.push(json!({
            "command": m.command,
            "config_sha256": m.config_sha256,
            "seed": m.seed,
            "files": m.files,
            "payloads": payloads,
        }));
    }
    o.json("report.json", &json!({ "commands": commands }))?;
    o.put("report.csv", csv.as_bytes())
}
