//! The `kamlab` batch driver.
//!
//! Each subcommand reads its inputs, computes everything in memory and only
//! then writes artifacts, through a staging directory inside `--out`. Every
//! artifact starts with a `# kamlab <version> config=<sha256>` line; the hash
//! covers the subcommand, its parameters and the contents of every file it
//! reads (not the paths, not `--out`, not `--threads`). On failure the
//! staging directory and any artifacts of the subcommand are removed and
//! `error.json` is written instead.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{KamError, Result};
use crate::fourier_taylor::{
    integrate_flow, trajectory_csv, HamiltonianFile, HamiltonianSpec, PhaseState, RescaleDirection,
    ScalingState,
};
use crate::freq_arith::record::{profile_csv, psi_csv, FrequencyRecord};
use crate::freq_arith::{mu_nu, psi_table, FrequencyVector, Gevrey, DEFAULT_Q_CHECK};
use crate::measure_scan::{gevrey_csv, report_csv, run_scan, EpsilonGrid, ScanPlan, SpecRef};
use crate::normal_form::{
    one_step_normal_form, phi_grid_csv, verify_estimates, EstimateBounds, NormalFormRecord,
    NormalFormResult, DEFAULT_LIE_ORDER,
};
use crate::torus_solver::{
    pull_back_with, solve_torus_with, verify_by_integration_with, TargetFrequency, TorusOptions,
    CERT_FACTOR, DEFAULT_IMAGE_MARGIN, DEFAULT_VERIFY_SAMPLES,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit status for errors raised by the pipeline.
pub const EXIT_MODULE_ERROR: i32 = 1;
/// Exit status for malformed command lines.
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "kamlab",
    version,
    about = "KAM stability laboratory: small divisors, normal forms, tori, measure scans"
)]
pub struct Cli {
    /// Size of the worker pool (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Psi table and the (eps, Delta, mu, nu) profile of a frequency.
    Freq(FreqArgs),
    /// One normal-form step of a physical Hamiltonian.
    Nf(NfArgs),
    /// Newton continuation of one torus, verified by integration.
    Torus(TorusArgs),
    /// Measure sweep over an epsilon grid.
    Scan(ScanArgs),
    /// Plain trajectory with drift diagnostics.
    Probe(ProbeArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct FreqArgs {
    /// Frequency record (JSON).
    #[arg(long)]
    pub omega: PathBuf,
    #[arg(long)]
    pub qmax: u64,
    #[arg(long, default_value_t = 1e-1)]
    pub eps_from: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub eps_to: f64,
    #[arg(long, default_value_t = 11)]
    pub eps_points: usize,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Gevrey exponent; enables the `nu` column.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub c_bar: f64,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct NfArgs {
    /// Hamiltonian spec (JSON), physical or already in the second scaled form.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = DEFAULT_LIE_ORDER)]
    pub lie_order: usize,
    /// Angle points per axis in `phi_grid.csv`.
    #[arg(long, default_value_t = 16)]
    pub angle_points: usize,
    /// Action points per axis in `phi_grid.csv`.
    #[arg(long, default_value_t = 5)]
    pub action_points: usize,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TorusArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Centre action, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    pub i0: Vec<f64>,
    #[arg(long)]
    pub gamma: f64,
    #[arg(long)]
    pub tau: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Build the normal form at this epsilon first and pull the torus back.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = DEFAULT_LIE_ORDER)]
    pub lie_order: usize,
    #[arg(long, default_value_t = crate::torus_solver::DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long, default_value_t = crate::torus_solver::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Verification time (original time when `--eps` is given).
    #[arg(long, default_value_t = 10.0)]
    pub t: f64,
    /// Integration step; defaults to `1e-2 / max(1, |Omega|)`.
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_VERIFY_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = DEFAULT_IMAGE_MARGIN)]
    pub margin: f64,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ScanArgs {
    #[arg(long)]
    pub plan: PathBuf,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct ProbeArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub t: f64,
    #[arg(long)]
    pub h: f64,
    /// Initial angles, comma separated (default zero).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Vec<f64>,
    /// Initial actions, comma separated (default zero).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub i0: Vec<f64>,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Freq(_) => "freq",
            Command::Nf(_) => "nf",
            Command::Torus(_) => "torus",
            Command::Scan(_) => "scan",
            Command::Probe(_) => "probe",
        }
    }

    /// Every file the subcommand can write; cleared when a run fails.
    fn artifact_names(&self) -> &'static [&'static str] {
        match self {
            Command::Freq(_) => &["psi.csv", "profile.csv"],
            Command::Nf(_) => &["nf.json", "estimates.json", "phi_grid.csv", "h_tilde.json"],
            Command::Torus(_) => &[
                "torus.json",
                "torus_surface.csv",
                "verify.json",
                "pullback.json",
                "pulled_surface.csv",
            ],
            Command::Scan(_) => &["reports.csv", "fit.json", "gevrey.csv"],
            Command::Probe(_) => &["trajectory.csv", "summary.json"],
        }
    }

    pub fn out(&self) -> &Path {
        match self {
            Command::Freq(a) => &a.out,
            Command::Nf(a) => &a.out,
            Command::Torus(a) => &a.out,
            Command::Scan(a) => &a.out,
            Command::Probe(a) => &a.out,
        }
    }
}

/// One output file, body without the header line.
struct Artifact {
    name: &'static str,
    body: String,
}

fn csv(name: &'static str, body: String) -> Artifact {
    Artifact { name, body }
}

fn json_artifact(name: &'static str, value: &impl Serialize) -> Result<Artifact> {
    let mut body =
        serde_json::to_string_pretty(value).map_err(|e| KamError::Parse(e.to_string()))?;
    body.push('\n');
    Ok(Artifact { name, body })
}

pub fn header_line(hash: &str) -> String {
    format!("# kamlab {VERSION} config={hash}\n")
}

/// Parses a JSON artifact, skipping its header comment line(s).
pub fn read_artifact_json(text: &str) -> Result<Value> {
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n");
    serde_json::from_str(&body).map_err(|e| KamError::Parse(e.to_string()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| KamError::Parse(format!("{}: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| KamError::Parse(format!("{}: {e}", path.display())))
}

/// Inputs read by a subcommand, with their content digests for the config hash.
#[derive(Default)]
struct Inputs {
    digests: Vec<(&'static str, String)>,
}

impl Inputs {
    fn load(&mut self, role: &'static str, path: &Path) -> Result<String> {
        let text = read(path)?;
        self.digests.push((role, sha256_hex(text.as_bytes())));
        Ok(text)
    }

    fn hash(&self, command: &Command) -> String {
        let params = match command {
            Command::Freq(a) => serde_json::to_value(a),
            Command::Nf(a) => serde_json::to_value(a),
            Command::Torus(a) => serde_json::to_value(a),
            Command::Scan(a) => serde_json::to_value(a),
            Command::Probe(a) => serde_json::to_value(a),
        };
        let mut params = params.unwrap_or(Value::Null);
        // Paths are replaced by what they point to.
        if let Value::Object(m) = &mut params {
            for key in ["omega", "spec", "plan"] {
                m.remove(key);
            }
        }
        let files: serde_json::Map<String, Value> = self
            .digests
            .iter()
            .map(|(r, d)| (r.to_string(), Value::String(d.clone())))
            .collect();
        let config = json!({ "command": command.name(), "params": params, "files": files });
        sha256_hex(config.to_string().as_bytes())
    }
}

fn load_spec(inputs: &mut Inputs, path: &Path) -> Result<HamiltonianSpec> {
    let text = inputs.load("spec", path)?;
    parse_json::<HamiltonianFile>(path, &text)?.to_spec()
}

/// Brings a spec to the second scaled form at `eps`.
fn to_ham2(spec: &HamiltonianSpec, eps: f64) -> Result<HamiltonianSpec> {
    match spec.state {
        ScalingState::Physical => spec.rescale(RescaleDirection::Scale1, eps),
        ScalingState::ScaledHam2 { epsilon } if epsilon == eps => Ok(spec.clone()),
        other => Err(KamError::StateMismatch {
            direction: format!("normal_form at eps={eps:e}"),
            state: other.to_string(),
        }),
    }
}

fn normal_form(
    spec: &HamiltonianSpec,
    eps: f64,
    c: f64,
    lie_order: usize,
) -> Result<NormalFormResult> {
    let h2 = to_ham2(spec, eps)?;
    let profile = mu_nu(&h2.omega, eps, c, None)?;
    one_step_normal_form(&h2, &profile, lie_order)
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn run_freq(a: &FreqArgs, inputs: &mut Inputs) -> Result<Vec<Artifact>> {
    let text = inputs.load("omega", &a.omega)?;
    let omega: FrequencyVector = parse_json::<FrequencyRecord>(&a.omega, &text)?.to_frequency()?;
    let psi = psi_table(&omega, a.qmax)?;
    let gevrey = a.alpha.map(|alpha| Gevrey {
        alpha,
        c_bar: a.c_bar,
    });
    let grid = EpsilonGrid {
        from: a.eps_from,
        to: a.eps_to,
        points: a.eps_points,
    };
    let profile = grid
        .values()
        .into_iter()
        .map(|e| mu_nu(&omega, e, a.c, gevrey))
        .collect::<Result<Vec<_>>>()?;
    Ok(vec![
        csv("psi.csv", psi_csv(&psi)),
        csv("profile.csv", profile_csv(&profile)),
    ])
}

fn run_nf(a: &NfArgs, inputs: &mut Inputs) -> Result<Vec<Artifact>> {
    let spec = load_spec(inputs, &a.spec)?;
    let nf = normal_form(&spec, a.eps, a.c, a.lie_order)?;
    let estimates = verify_estimates(&nf, &EstimateBounds::default());
    Ok(vec![
        json_artifact("nf.json", &NormalFormRecord::from(&nf))?,
        json_artifact("estimates.json", &estimates)?,
        csv(
            "phi_grid.csv",
            phi_grid_csv(&nf, a.angle_points, a.action_points),
        ),
        json_artifact("h_tilde.json", &nf.h_tilde.to_file())?,
    ])
}

fn run_torus(a: &TorusArgs, inputs: &mut Inputs) -> Result<Vec<Artifact>> {
    let spec = load_spec(inputs, &a.spec)?;
    if a.i0.len() != spec.n() {
        return Err(KamError::InvalidParameter(format!(
            "--i0 has {} entries, spec has n = {}",
            a.i0.len(),
            spec.n()
        )));
    }
    spec.omega.check_nonresonant(DEFAULT_Q_CHECK)?;
    let opts = TorusOptions {
        grid: a.grid,
        tol: a.tol,
        max_iter: a.max_iter,
    };
    let q_max = CERT_FACTOR * a.grid as u64;
    let mut out = Vec::new();
    match a.eps {
        None => {
            let mut target = TargetFrequency::from_spec(&spec, &a.i0)?;
            target.certify(a.gamma, a.tau, q_max)?;
            let torus = solve_torus_with(&spec, &target, &opts, None)?;
            let step = a.h.unwrap_or(1e-2 / sup(&target.omega()).max(1.0));
            let report = verify_by_integration_with(&spec, &torus, a.t, step, a.samples)?;
            out.push(json_artifact("torus.json", &torus.to_record())?);
            out.push(csv("torus_surface.csv", torus.surface_csv()));
            out.push(json_artifact("verify.json", &report)?);
        }
        Some(eps) => {
            let nf = normal_form(&spec, eps, a.c, a.lie_order)?;
            let mut target = TargetFrequency::from_normal_form(&nf, &a.i0)?;
            target.certify(a.gamma, a.tau, q_max)?;
            let torus = solve_torus_with(&nf.h_tilde, &target, &opts, None)?;
            let pulled = pull_back_with(&torus, &nf, eps, a.margin)?;
            let step = a.h.unwrap_or(1e-2 / sup(&pulled.omega).max(1.0));
            let report = pulled.verify(&spec, a.t, step, a.samples)?;
            let summary = json!({
                "epsilon": eps,
                "mu": nf.mu,
                "omega": pulled.omega,
                "i0": pulled.i0,
                "scaled_defect": pulled.scaled_defect,
                "original_defect": pulled.defect_in(&spec)?,
            });
            out.push(json_artifact("torus.json", &torus.to_record())?);
            out.push(csv("torus_surface.csv", torus.surface_csv()));
            out.push(json_artifact("verify.json", &report)?);
            out.push(json_artifact("pullback.json", &summary)?);
            out.push(csv("pulled_surface.csv", pulled.surface_csv()));
        }
    }
    Ok(out)
}

fn run_scan_cmd(a: &ScanArgs, inputs: &mut Inputs) -> Result<Vec<Artifact>> {
    let text = inputs.load("plan", &a.plan)?;
    let plan: ScanPlan = parse_json(&a.plan, &text)?;
    let base = a.plan.parent();
    if let SpecRef::Path(p) = &plan.spec {
        let path = match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.clone(),
        };
        inputs.load("spec", &path)?;
    }
    let spec = plan.load_spec(base)?;
    let result = run_scan(&plan, &spec)?;
    let fit = match &result.fit {
        Ok(f) => serde_json::to_value(f).unwrap_or(Value::Null),
        Err(e) => json!({ "exponent": Value::Null, "error": e }),
    };
    let mut out = vec![
        csv("reports.csv", report_csv(&result.reports)),
        json_artifact("fit.json", &fit)?,
    ];
    if let Some(rows) = &result.gevrey {
        out.push(csv("gevrey.csv", gevrey_csv(rows)));
    }
    Ok(out)
}

fn run_probe(a: &ProbeArgs, inputs: &mut Inputs) -> Result<Vec<Artifact>> {
    let spec = load_spec(inputs, &a.spec)?;
    let n = spec.n();
    let fill = |v: &[f64], what: &str| -> Result<Vec<f64>> {
        match v.len() {
            0 => Ok(vec![0.0; n]),
            l if l == n => Ok(v.to_vec()),
            l => Err(KamError::InvalidParameter(format!(
                "--{what} has {l} entries, spec has n = {n}"
            ))),
        }
    };
    let s0 = PhaseState::new(&fill(&a.theta, "theta")?, &fill(&a.i0, "i0")?);
    let traj = integrate_flow(&spec, &s0, a.t, a.h)?;
    let drift = traj
        .actions
        .iter()
        .map(|x| {
            x.iter()
                .zip(&s0.action)
                .fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()))
        })
        .fold(0.0, f64::max);
    let summary = json!({
        "t_end": a.t,
        "step": a.h,
        "steps": traj.stats.steps,
        "max_fixed_point_iterations": traj.stats.max_iterations,
        "max_energy_error": traj.max_energy_error(),
        "max_action_drift": drift,
    });
    Ok(vec![
        csv("trajectory.csv", trajectory_csv(&traj)),
        json_artifact("summary.json", &summary)?,
    ])
}

fn compute(command: &Command, inputs: &mut Inputs) -> Result<Vec<Artifact>> {
    match command {
        Command::Freq(a) => run_freq(a, inputs),
        Command::Nf(a) => run_nf(a, inputs),
        Command::Torus(a) => run_torus(a, inputs),
        Command::Scan(a) => run_scan_cmd(a, inputs),
        Command::Probe(a) => run_probe(a, inputs),
    }
}

/// Writes all artifacts into a staging directory, then moves them into `out`.
fn commit(out: &Path, hash: &str, artifacts: &[Artifact]) -> Result<()> {
    let staging = out.join(".staging");
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    let write_all = || -> Result<()> {
        for a in artifacts {
            let mut text = header_line(hash);
            text.push_str(&a.body);
            fs::write(staging.join(a.name), text)?;
        }
        for a in artifacts {
            fs::rename(staging.join(a.name), out.join(a.name))?;
        }
        Ok(())
    };
    let res = write_all();
    let _ = fs::remove_dir_all(&staging);
    res
}

fn write_error(out: &Path, err: &KamError, hash: &str) {
    let record = json!({
        "kind": err.kind(),
        "message": err.to_string(),
        "config_hash": hash,
        "version": VERSION,
    });
    let _ = fs::create_dir_all(out);
    let _ = fs::write(
        out.join("error.json"),
        format!(
            "{}\n",
            serde_json::to_string_pretty(&record).unwrap_or_default()
        ),
    );
}

/// Runs a parsed command line; returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    let out = cli.command.out().to_path_buf();
    let mut inputs = Inputs::default();
    let go = |inputs: &mut Inputs| -> Result<String> {
        fs::create_dir_all(&out)?;
        let _ = fs::remove_file(out.join("error.json"));
        let artifacts = compute(&cli.command, inputs)?;
        let hash = inputs.hash(&cli.command);
        // Artifacts of an earlier run that this one does not produce would
        // carry a stale hash.
        for name in cli.command.artifact_names() {
            let _ = fs::remove_file(out.join(name));
        }
        commit(&out, &hash, &artifacts)?;
        Ok(hash)
    };
    let result = match cli.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| go(&mut inputs)),
            Err(e) => Err(KamError::InvalidParameter(format!("thread pool: {e}"))),
        },
        None => go(&mut inputs),
    };
    match result {
        Ok(_) => 0,
        Err(e) => {
            let hash = inputs.hash(&cli.command);
            eprintln!("kamlab: {e}");
            for name in cli.command.artifact_names() {
                let _ = fs::remove_file(out.join(name));
            }
            write_error(&out, &e, &hash);
            EXIT_MODULE_ERROR
        }
    }
}

/// Parses `args` (including the program name) and runs.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_out_and_paths() {
        let parse = |out: &str, spec: &str| {
            Cli::try_parse_from([
                "kamlab", "probe", "--spec", spec, "--t", "1", "--h", "0.1", "--out", out,
            ])
            .unwrap()
        };
        let a = parse("/tmp/a", "x.json");
        let b = parse("/tmp/b", "y.json");
        let mut ia = Inputs::default();
        ia.digests.push(("spec", sha256_hex(b"{}")));
        let mut ib = Inputs::default();
        ib.digests.push(("spec", sha256_hex(b"{}")));
        assert_eq!(ia.hash(&a.command), ib.hash(&b.command));
        let c = Cli::try_parse_from([
            "kamlab", "probe", "--spec", "x", "--t", "2", "--h", "0.1", "--out", "o",
        ])
        .unwrap();
        assert_ne!(ia.hash(&a.command), ia.hash(&c.command));
    }

    #[test]
    fn negative_actions_parse() {
        let cli = Cli::try_parse_from([
            "kamlab",
            "torus",
            "--spec",
            "s",
            "--i0",
            "-0.25,0.5",
            "--gamma",
            "1",
            "--tau",
            "1",
            "--out",
            "o",
        ])
        .unwrap();
        match cli.command {
            Command::Torus(a) => assert_eq!(a.i0, vec![-0.25, 0.5]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn artifact_json_skips_header() {
        let text = format!("{}{{\"a\": 1}}\n", header_line("00"));
        assert_eq!(read_artifact_json(&text).unwrap()["a"], 1);
    }
}
