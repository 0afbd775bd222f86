use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cbo_core::diagnostics::default_burn_in;
use cbo_core::montecarlo::grid;
use cbo_core::noise::derive_seed;
use cbo_core::spectral::{projection_residual, LaplacianHat, Projector};
use cbo_core::{
    em_as_rate_mc, fit_decay_rate, run_mc, simulate, sweep, theoretical_rates, verify_spectrum,
    Mode, NoiseSource, Params, Registry,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::ThreadPool;
use serde::Serialize;
use serde_json::json;

use crate::args::{
    parse_clip, Command, McArgs, RatesArgs, ReplayArgs, SimulateArgs, SweepArgs, VerifyArgs,
};
use crate::output::{self, fmt_f, unix_now, RunManifest};
use crate::CliError;

pub fn execute(
    cmd: Command,
    pool: &ThreadPool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, CliError> {
    match cmd {
        Command::Simulate(a) => cmd_simulate(a, out, err),
        Command::Mc(a) => cmd_mc(a, pool, out, err),
        Command::Sweep(a) => cmd_sweep(a, pool, out, err),
        Command::Rates(a) => cmd_rates(a, pool, out, err),
        Command::VerifySpectral(a) => cmd_verify_spectral(a, out),
        Command::Replay(a) => cmd_replay(a, pool, out, err),
    }
}

/// Step-size admissibility is reported, never enforced.
pub fn step_warnings(p: &Params) -> Vec<String> {
    let (lambda, sigma, dt) = (p.lambda(), p.sigma(), p.dt());
    let mut w = Vec::new();
    if lambda * dt >= 1.0 {
        w.push(format!(
            "lambda*dt = {} >= 1: the Euler contraction factor 1 - lambda*dt is not in (0, 1)",
            lambda * dt
        ));
    }
    if p.mode().is_stochastic() && lambda != 0.0 {
        let bound = (2.0 * lambda - sigma * sigma) / (lambda * lambda);
        if dt >= bound {
            w.push(format!(
                "dt = {dt} >= (2*lambda - sigma^2)/lambda^2 = {bound}: Euler-Maruyama is not mean-square stable"
            ));
        }
    }
    w
}

fn emit_warnings(err: &mut dyn Write, warnings: &[String]) {
    for w in warnings {
        let _ = writeln!(err, "warning: {w}");
    }
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out).map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn finish_manifest(
    out: &mut dyn Write,
    dir: &Path,
    mut manifest: RunManifest,
) -> Result<(), CliError> {
    let path = dir.join("manifest.json");
    manifest.outputs.push(path.clone());
    manifest.end_unix_s = unix_now();
    output::write_json(&path, &manifest)?;
    print_json(out, &manifest)
}

fn manifest(
    cmd: &Command,
    seed: u64,
    start: f64,
    warnings: Vec<String>,
) -> Result<RunManifest, CliError> {
    Ok(RunManifest {
        command: cmd.name().to_string(),
        config: serde_json::to_value(cmd)?,
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        start_unix_s: start,
        end_unix_s: start,
        outputs: Vec::new(),
        diverged: false,
        warnings,
        summary: serde_json::Value::Null,
    })
}

/// Fitted slope of `ln values`, or `None` if the series cannot be fitted.
fn fitted_rate(times: &[f64], values: &[f64], mode: Mode, steps: usize) -> Option<f64> {
    fit_decay_rate(times, values, default_burn_in(mode, steps))
        .ok()
        .map(|f| f.slope)
}

fn cmd_simulate(
    mut a: SimulateArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, CliError> {
    let start = unix_now();
    a.model.normalize()?;
    let m = &a.model;
    let p = m.params()?;
    let f = Registry::with_builtins().resolve(&m.objective, m.dim)?;
    let init = m.initial()?;
    let warnings = step_warnings(&p);
    emit_warnings(err, &warnings);

    let traj = simulate(
        &init,
        &p,
        &f,
        m.steps,
        &mut NoiseSource::new(m.seed, 0),
        a.snapshot_every,
    )?;

    let dir = a.out.out.clone();
    prepare_dir(&dir)?;
    let mut outputs = vec![dir.join("trajectory.csv")];
    output::write_trajectory(&outputs[0], &traj, m.dim)?;
    if a.snapshot_every > 0 {
        let path = dir.join("snapshots.csv");
        output::write_snapshots(&path, &traj.snapshots, m.dim)?;
        outputs.push(path);
    }

    let v = &traj.diagnostics.v_series;
    let summary = json!({
        "diverged_at_step": traj.diverged,
        "final_time": traj.final_time(),
        "final_v": v.last().copied().map(fmt_f),
        "fitted_v_rate": fitted_rate(&traj.times, v, p.mode(), m.steps),
    });
    let mut man = manifest(&Command::Simulate(a.clone()), m.seed, start, warnings)?;
    man.outputs = outputs;
    man.diverged = traj.diverged.is_some();
    man.summary = summary;
    finish_manifest(out, &dir, man)?;
    Ok(0)
}

fn cmd_mc(
    mut a: McArgs,
    pool: &ThreadPool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, CliError> {
    let start = unix_now();
    a.model.normalize()?;
    let clip = parse_clip(&a.clip)?;
    let cfg = a.model.mc_config(a.runs, clip)?;
    let warnings = step_warnings(&cfg.base);
    emit_warnings(err, &warnings);

    let res = pool.install(|| run_mc(&cfg))?;

    let dir = a.out.out.clone();
    prepare_dir(&dir)?;
    let path = dir.join("mc_mean.csv");
    output::write_mc_mean(&path, &res)?;

    let summary = json!({
        "runs": cfg.runs,
        "diverged_count": res.diverged_count,
        "clip": res.clip,
        "fitted_mean_v_rate": fitted_rate(&res.times, &res.mean_v, cfg.base.mode(), cfg.steps),
    });
    let mut man = manifest(&Command::Mc(a.clone()), cfg.seed, start, warnings)?;
    man.outputs = vec![path];
    man.diverged = res.diverged_count > 0;
    man.summary = summary;
    finish_manifest(out, &dir, man)?;
    Ok(0)
}

fn cmd_sweep(
    mut a: SweepArgs,
    pool: &ThreadPool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, CliError> {
    let start = unix_now();
    a.model.normalize()?;
    let values = grid(a.from, a.to, a.step)?;
    let clip = parse_clip(&a.clip)?;
    let cfg = a.model.mc_config(a.runs, clip)?;
    let warnings = step_warnings(&cfg.base);
    emit_warnings(err, &warnings);

    let rows = pool.install(|| sweep(&cfg, a.param, &values))?;

    let dir = a.out.out.clone();
    prepare_dir(&dir)?;
    let path = dir.join("sweep.csv");
    output::write_sweep(&path, &rows)?;

    let per_value: Vec<_> = rows
        .iter()
        .map(|(v, r)| {
            json!({
                "value": v,
                "initial_mean_v": r.mean_v[0],
                "diverged_count": r.diverged_count,
                "fitted_mean_v_rate": fitted_rate(&r.times, &r.mean_v, cfg.base.mode(), cfg.steps),
            })
        })
        .collect();
    let diverged = rows.iter().any(|(_, r)| r.diverged_count > 0);
    let mut man = manifest(&Command::Sweep(a.clone()), cfg.seed, start, warnings)?;
    man.outputs = vec![path];
    man.diverged = diverged;
    man.summary = json!({ "param": a.param, "grid": values, "per_value": per_value });
    finish_manifest(out, &dir, man)?;
    Ok(0)
}

fn cmd_rates(
    a: RatesArgs,
    pool: &ThreadPool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, CliError> {
    let sigma = match (a.sigma, a.sigma_sq) {
        (Some(s), _) => s,
        (None, Some(s2)) if s2 >= 0.0 => s2.sqrt(),
        (None, Some(s2)) => {
            return Err(CliError::Usage(format!(
                "--sigma-sq must be >= 0, got {s2}"
            )))
        }
        (None, None) => 1.0,
    };
    // α does not enter any rate.
    let p = Params::new(a.lambda, sigma, 1.0, a.dt, a.mode)?;
    emit_warnings(err, &step_warnings(&p));
    let mut report = serde_json::to_value(theoretical_rates(&p, a.dim))?;
    if let Some(k) = a.mc_samples {
        let est = pool.install(|| em_as_rate_mc(a.lambda, sigma, a.dt, k, a.seed))?;
        report["as_rate_mc"] = serde_json::to_value(est)?;
    }
    print_json(out, &report)?;
    Ok(0)
}

#[derive(Debug, Default, Serialize)]
pub struct SpectralSummary {
    pub n: usize,
    pub trials: usize,
    pub tol: f64,
    pub proj_tol: f64,
    pub broken_weights: bool,
    pub spectrum_failures: usize,
    pub projection_failures: usize,
    pub row_sum_failures: usize,
    pub worst_eigenvalue_deviation: f64,
    pub worst_imag: f64,
    pub worst_char_poly_residual: f64,
    pub worst_projection_residual: f64,
    pub worst_row_sum: f64,
    pub pass: bool,
}

/// Trial `t` draws weights from `derive_seed(seed, [t])`: normalized
/// exponentials, i.e. uniform on the simplex.
pub fn verify_spectral(a: &VerifyArgs) -> Result<SpectralSummary, CliError> {
    let mut s = SpectralSummary {
        n: a.n,
        trials: a.trials,
        tol: a.tol,
        proj_tol: a.proj_tol,
        broken_weights: a.self_test_broken,
        ..Default::default()
    };
    let proj = Projector::<f64>::new(a.n);
    for t in 0..a.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(a.seed, &[t as u64]));
        let raw: Vec<f64> = (0..a.n)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let mut w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        if a.self_test_broken {
            w[0] += 1e-3;
        }
        let l = LaplacianHat::from_raw_weights(&w);
        let report = verify_spectrum(&l, a.tol)?;
        let resid = projection_residual(&l, &proj)?;
        let row = l.max_abs_row_sum();
        s.spectrum_failures += usize::from(!report.pass);
        s.projection_failures += usize::from(!(resid <= a.proj_tol));
        s.row_sum_failures += usize::from(!(row <= a.proj_tol));
        s.worst_eigenvalue_deviation = s.worst_eigenvalue_deviation.max(report.max_deviation);
        s.worst_imag = s.worst_imag.max(report.max_imag);
        s.worst_char_poly_residual = s.worst_char_poly_residual.max(report.char_poly_residual);
        s.worst_projection_residual = s.worst_projection_residual.max(resid);
        s.worst_row_sum = s.worst_row_sum.max(row);
    }
    s.pass = s.spectrum_failures + s.projection_failures + s.row_sum_failures == 0;
    Ok(s)
}

fn cmd_verify_spectral(a: VerifyArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    if !(a.tol > 0.0) || !(a.proj_tol > 0.0) {
        return Err(CliError::Usage("tolerances must be positive".into()));
    }
    let summary = verify_spectral(&a)?;
    print_json(out, &summary)?;
    Ok(if summary.pass { 0 } else { 1 })
}

/// Reads the command echoed in a manifest.
pub fn load_manifest_command(path: &Path) -> Result<Command, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let config = value
        .get("config")
        .cloned()
        .ok_or_else(|| CliError::Usage(format!("{}: no `config` field", path.display())))?;
    serde_json::from_value(config).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn cmd_replay(
    a: ReplayArgs,
    pool: &ThreadPool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, CliError> {
    let mut cmd = load_manifest_command(&a.manifest)?;
    let redirect = |o: &mut PathBuf| {
        if let Some(dir) = &a.out {
            *o = dir.clone();
        }
    };
    match &mut cmd {
        Command::Simulate(c) => redirect(&mut c.out.out),
        Command::Mc(c) => redirect(&mut c.out.out),
        Command::Sweep(c) => redirect(&mut c.out.out),
        Command::Replay(_) => {
            return Err(CliError::Usage("a manifest cannot echo `replay`".into()))
        }
        Command::Rates(_) | Command::VerifySpectral(_) => {}
    }
    execute(cmd, pool, out, err)
}
