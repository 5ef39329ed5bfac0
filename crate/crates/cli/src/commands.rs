//! The subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use quadspin::dynamics::{coherence_decay, coherence_time, decay_time_grid, t2_extract, DecayCurve, StretchedExp};
use quadspin::endor::{peak_positions, synthesize_spectrum, EndorConfig, SpectrumSetup};
use quadspin::estimator::{fit_fq_angular, fit_gn, fit_scaling, FitResult, ShiftOrder};
use quadspin::seqlang::{self, ExperimentConfig, OutputFormat};
use quadspin::spin::{
    angular_sweep, axial_hamiltonian, build_hamiltonian, first_order_shift, second_order_shift, transition_label,
    Projection, Spin,
};
use quadspin::strain::{coupling_fq, efg_from_strain, piezo_shift_forecast};
use quadspin::{PhysicalConstants, Spectrum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::output::{finite, sha256_hex, Cell, Csv, OutputDir, RunManifest};
use crate::{CliError, Common, Format};

const K: PhysicalConstants = PhysicalConstants::CODATA;

struct Loaded {
    cfg: ExperimentConfig,
    path: Option<String>,
    hash: Option<String>,
}

fn load_config(common: &Common, required: bool) -> Result<Loaded, CliError> {
    let Some(path) = &common.config else {
        if required {
            return Err(CliError::Config("--config is required for this command".into()));
        }
        return Ok(Loaded {
            cfg: ExperimentConfig::default(),
            path: None,
            hash: None,
        });
    };
    let bytes = fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Config(format!("{}: not valid UTF-8", path.display())))?;
    match seqlang::load(&text) {
        Ok((cfg, warnings)) => {
            for w in &warnings {
                eprintln!("{}:{w}", path.display());
            }
            Ok(Loaded {
                cfg,
                path: Some(path.display().to_string()),
                hash: Some(sha256_hex(&bytes)),
            })
        }
        Err(diags) => {
            for d in &diags {
                eprintln!("{}:{d}", path.display());
            }
            let errors = diags.iter().filter(|d| d.is_error()).count();
            Err(CliError::Config(format!("{} has {errors} error(s)", path.display())))
        }
    }
}

fn open_output(common: &Common, command: &str, loaded: &Loaded) -> Result<OutputDir, CliError> {
    let manifest = RunManifest {
        command: command.to_string(),
        config: loaded.path.clone(),
        config_sha256: loaded.hash.clone(),
        seed: common.seed,
        outputs: Vec::new(),
        wall_time_s: 0.0,
        version: env!("CARGO_PKG_VERSION").to_string(),
        complete: false,
        warnings: Vec::new(),
    };
    OutputDir::create(&common.out, &loaded.cfg.output.prefix, manifest)
}

fn format_of(common: &Common, cfg: &ExperimentConfig) -> Format {
    common.format.unwrap_or(match cfg.output.format {
        OutputFormat::Csv => Format::Csv,
        OutputFormat::Json => Format::Json,
    })
}

/// `+3_2`, `-1_2`, `+1` ... for file names.
fn m_tag(m: Projection) -> String {
    let sign = if m.0 >= 0 { '+' } else { '-' };
    if m.0 % 2 == 0 {
        format!("{sign}{}", m.0.abs() / 2)
    } else {
        format!("{sign}{}_2", m.0.abs())
    }
}

pub fn spectrum(common: &Common) -> Result<(), CliError> {
    let loaded = load_config(common, true)?;
    let cfg = &loaded.cfg;
    let spin = cfg.system.spin;
    let f0 = cfg.larmor(&K);
    let coupling = cfg.coupling(&K)?;
    let theta = cfg.theta(&K)?;
    let setup = SpectrumSetup {
        spin,
        f0,
        f_q: coupling.f_q,
        theta,
    };
    // Outer lines sit 3f_Q/(4I) from f0 at most.
    let span = 1.5 * 3.0 * coupling.f_q / (4.0 * spin.value()) + 20e3 + 5.0 * cfg.broadening.spread;
    let (start, stop) = match (cfg.endor.rf_start, cfg.endor.rf_stop) {
        (Some(a), Some(b)) => (a, b),
        _ => (f0 - span, f0 + span),
    };
    let targets: Vec<Projection> = cfg.targets();
    let spectra: Vec<Spectrum> = targets
        .par_iter()
        .map(|&m| {
            let mut endor = EndorConfig::new(m, start, stop, cfg.endor.rf_duration);
            endor.ionization_efficiency = cfg.endor.efficiency;
            let mut s = synthesize_spectrum(&endor, &setup, &cfg.broadening, cfg.endor.points)?;
            s.metadata.b0 = Some(cfg.field.b0);
            s.metadata.strain = Some(cfg.strain.mode.name().to_string());
            Ok(s)
        })
        .collect::<Result<_, quadspin::Error>>()?;

    let mut out = open_output(common, "spectrum", &loaded)?;
    if cfg.endor.rf_start.is_none() {
        out.warn(format!("no rf range in [endor]; sweeping {start:.0}-{stop:.0} Hz"));
    }
    let mut summary = Vec::new();
    for (m, s) in targets.iter().zip(&spectra) {
        for w in &s.metadata.warnings {
            out.warn(format!("ionize {}: {w}", m_tag(*m)));
        }
        let mut csv = Csv::new(&["frequency_Hz", "signal"]);
        for (f, v) in s.frequency.iter().zip(&s.signal) {
            csv.row(&[Cell::Num(*f), Cell::Num(*v)])?;
        }
        let tag = m_tag(*m);
        out.write(&format!("spectrum_{tag}.csv"), &csv.into_string())?;
        out.write_json(&format!("spectrum_{tag}.json"), &s.to_json())?;
        let peaks = peak_positions(s);
        println!("ionize m_I = {tag}: {} dip(s)", peaks.len());
        for p in &peaks {
            println!("  {:.1} Hz  depth {:.3}  width {:.1} Hz{}", p.center, p.depth, p.width, if p.multiplet { "  (multiplet)" } else { "" });
        }
        summary.push(json!({ "ionize": m.value(), "peaks": peaks }));
    }
    out.write_json(
        "spectrum_peaks.json",
        &json!({ "f0_Hz": f0, "f_q_Hz": coupling.f_q, "theta_rad": theta, "targets": summary }),
    )?;
    out.finish()
}

struct SweepRow {
    value: f64,
    label: String,
    exact: f64,
    first: f64,
    second: f64,
}

fn rows_at(cfg: &ExperimentConfig, variable: &str, value: f64) -> Result<Vec<SweepRow>, CliError> {
    let spin = cfg.system.spin;
    let row = |label: String, exact: f64, f_q: f64, f0: f64, theta: f64, m_hi: Projection| SweepRow {
        value,
        label,
        exact,
        first: first_order_shift(spin, f_q, theta, m_hi),
        second: second_order_shift(spin, f_q, f0, theta, m_hi),
    };
    match variable {
        "theta" => {
            let f_q = cfg.coupling(&K)?.f_q;
            let f0 = cfg.larmor(&K);
            let table = axial_hamiltonian(spin, f0, f_q, value).transitions();
            Ok(table
                .transitions
                .iter()
                .map(|t| row(transition_label(spin, t.m_hi), t.frequency - f0, f_q, f0, value, t.m_hi))
                .collect())
        }
        "strain" => {
            let strain = cfg.forecast_geometry().strain(value)?;
            let efg = efg_from_strain(&strain, &cfg.tensor_s);
            let c = coupling_fq(&efg, &cfg.spin_system(), &K)?;
            let axis = cfg.field_axis()?;
            let theta = if c.f_q == 0.0 { 0.0 } else { c.axis.dot(&axis).abs().min(1.0).acos() };
            let f0 = cfg.larmor(&K);
            let h = build_hamiltonian(&cfg.spin_system(), f0, &efg.in_field_frame(&axis), &K)?;
            Ok(h.transitions()
                .transitions
                .iter()
                .map(|t| row(transition_label(spin, t.m_hi), t.frequency - f0, c.f_q, f0, theta, t.m_hi))
                .collect())
        }
        "B0" => {
            let mut at = cfg.clone();
            at.field.b0 = value;
            let f0 = at.larmor(&K);
            let f_q = at.coupling(&K)?.f_q;
            let theta = at.theta(&K)?;
            Ok(at
                .hamiltonian(&K)?
                .transitions()
                .transitions
                .iter()
                .map(|t| row(transition_label(spin, t.m_hi), t.frequency - f0, f_q, f0, theta, t.m_hi))
                .collect())
        }
        other => Err(CliError::Config(format!("unknown sweep variable `{other}`"))),
    }
}

pub fn sweep(common: &Common) -> Result<(), CliError> {
    let loaded = load_config(common, true)?;
    let cfg = &loaded.cfg;
    let sw = cfg.sweep.as_ref().ok_or_else(|| CliError::Config("config has no [sweep] section".into()))?;
    let step = (sw.stop - sw.start) / (sw.points - 1) as f64;
    let values: Vec<f64> = (0..sw.points).map(|k| sw.start + step * k as f64).collect();
    let rows: Vec<Vec<SweepRow>> =
        values.par_iter().map(|&v| rows_at(cfg, &sw.variable, v)).collect::<Result<_, _>>()?;

    let column = match sw.variable.as_str() {
        "theta" => "theta_rad",
        "B0" => "B0_T",
        _ => "strain",
    };
    let mut out = open_output(common, "sweep", &loaded)?;
    if sw.variable == "theta" {
        // same check the angular model itself applies
        let f_q = cfg.coupling(&K)?.f_q;
        if angular_sweep(cfg.system.spin, cfg.larmor(&K), f_q, (sw.start, sw.stop), 2)?.perturbative_warning {
            out.warn("f_Q/f0 exceeds 0.3; perturbative columns are unreliable");
        }
    }
    let header = [column, "transition", "exact_shift_Hz", "first_order_Hz", "second_order_Hz", "perturbative_shift_Hz"];
    match format_of(common, cfg) {
        Format::Csv => {
            let mut csv = Csv::new(&header);
            for r in rows.iter().flatten() {
                csv.row(&[
                    Cell::Num(r.value),
                    Cell::Text(r.label.clone()),
                    Cell::Num(r.exact),
                    Cell::Num(r.first),
                    Cell::Num(r.second),
                    Cell::Num(r.first + r.second),
                ])?;
            }
            out.write(&format!("sweep_{}.csv", sw.variable), &csv.into_string())?;
        }
        Format::Json => {
            let mut list = Vec::new();
            for r in rows.iter().flatten() {
                list.push(json!({
                    column: finite(r.value, column)?,
                    "transition": r.label,
                    "exact_shift_Hz": finite(r.exact, "exact shift")?,
                    "first_order_Hz": finite(r.first, "first-order shift")?,
                    "second_order_Hz": finite(r.second, "second-order shift")?,
                    "perturbative_shift_Hz": finite(r.first + r.second, "perturbative shift")?,
                }));
            }
            out.write_json(&format!("sweep_{}.json", sw.variable), &json!({ "variable": sw.variable, "rows": list }))?;
        }
    }
    println!("{} sweep: {} points × {} transitions", sw.variable, sw.points, rows.first().map_or(0, Vec::len));
    out.finish()
}

struct DecayRun {
    n: u32,
    curve: DecayCurve,
    t2: Option<f64>,
    stretched: Option<StretchedExp>,
}

pub fn decay(common: &Common) -> Result<(), CliError> {
    let loaded = load_config(common, true)?;
    let cfg = &loaded.cfg;
    let section = cfg.noise.as_ref().ok_or_else(|| CliError::Config("config has no [noise] section".into()))?;
    let noise = cfg.noise_model()?.expect("noise section present");
    let runs: Vec<DecayRun> = section
        .pulses
        .par_iter()
        .map(|&n| -> Result<DecayRun, quadspin::Error> {
            if noise.amplitude == 0.0 {
                // nothing decays; sample a fixed window so the flat curve is visible
                let grid: Vec<f64> =
                    (0..section.points).map(|k| 1e-6 * 1e6f64.powf(k as f64 / (section.points - 1) as f64)).collect();
                let curve = coherence_decay(&noise, n, &grid)?;
                return Ok(DecayRun { n, curve, t2: None, stretched: None });
            }
            let t2 = coherence_time(&noise, n)?;
            let mut curve = coherence_decay(&noise, n, &decay_time_grid(&noise, n, section.points)?)?;
            curve.transition = Some(section.transition.clone());
            let stretched = t2_extract(&curve).ok();
            Ok(DecayRun { n, curve, t2: Some(t2), stretched })
        })
        .collect::<Result<_, _>>()?;

    let mut out = open_output(common, "decay", &loaded)?;
    match format_of(common, cfg) {
        Format::Csv => {
            let mut csv = Csv::new(&["n", "t_s", "amplitude"]);
            for r in &runs {
                for &(t, w) in &r.curve.points {
                    csv.row(&[Cell::Int(r.n as i64), Cell::Num(t), Cell::Num(w)])?;
                }
            }
            out.write("decay.csv", &csv.into_string())?;
        }
        Format::Json => {
            let mut curves = Vec::new();
            for r in &runs {
                for &(t, w) in &r.curve.points {
                    finite(t, "time")?;
                    finite(w, "amplitude")?;
                }
                curves.push(&r.curve);
            }
            out.write_json("decay.json", &serde_json::to_value(curves).expect("curves serialize"))?;
        }
    }

    let points: Vec<(f64, f64)> = runs.iter().filter_map(|r| r.t2.map(|t| (r.n as f64, t))).collect();
    let scaling = if points.len() == runs.len() && points.len() >= 2 {
        match fit_scaling(&points) {
            Ok(fit) => Some(fit),
            Err(e) => {
                out.warn(format!("scaling fit failed: {e}"));
                None
            }
        }
    } else {
        out.warn("coherence never decays; scaling fit not attempted");
        None
    };
    let mut per_n = Vec::new();
    for r in &runs {
        let stretched = match &r.stretched {
            Some(s) => json!({
                "t2_s": finite(s.t2, "fitted T2")?,
                "beta": finite(s.beta, "beta")?,
                "t2_sigma_s": finite(s.t2_sigma, "T2 sigma")?,
                "beta_sigma": finite(s.beta_sigma, "beta sigma")?,
            }),
            None => serde_json::Value::Null,
        };
        per_n.push(json!({ "n": r.n, "t2_s": r.t2, "stretched_exponential": stretched }));
    }
    let exponent = scaling.as_ref().map(|f| (f.estimates[0], f.sigmas[0]));
    let report = json!({
        "transition": section.transition,
        "noise": { "alpha": noise.alpha, "amplitude": noise.amplitude, "omega_low": noise.omega_low, "omega_high": noise.omega_high },
        "calibration_t2_s": section.t2,
        "pulses": per_n,
        "exponent": exponent.map(|e| e.0),
        "exponent_sigma": exponent.map(|e| e.1),
        "converged": scaling.as_ref().is_some_and(|f| f.converged),
    });
    out.write_json("decay_report.json", &report)?;
    for r in &runs {
        match r.t2 {
            Some(t) => println!("n = {:>3}: T2 = {:.4e} s", r.n, t),
            None => println!("n = {:>3}: no decay", r.n),
        }
    }
    match exponent {
        Some((e, s)) => println!("T2 ∝ n^{e:.3} (± {s:.3})"),
        None => println!("scaling exponent: not converged"),
    }
    out.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitModel {
    /// Single-dip spectra at several fields → g_n.
    Gn,
    /// `theta_rad,shift_Hz` (or `theta_deg,shift_Hz`) → f_Q.
    Angular,
    /// `n,T2_s` → scaling exponent.
    Scaling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Order {
    First,
    Second,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    model: FitModel,
    /// Data file(s); spectra for `gn` may be CSV or JSON.
    #[arg(long = "data", required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Field per spectrum (T) when the spectra do not record it.
    #[arg(long, value_delimiter = ',')]
    b0: Vec<f64>,
    /// Shift order for the angular model.
    #[arg(long, value_enum, default_value_t = Order::First)]
    order: Order,
    /// Residual-bootstrap replicates for the angular and scaling models.
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
}

fn read_data(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

/// Two-column numeric table; `headers` lists accepted header pairs.
fn read_table(path: &Path, headers: &[[&str; 2]]) -> Result<(usize, Vec<(f64, f64)>), CliError> {
    let text = read_data(path)?;
    let schema = |m: String| CliError::Schema(format!("{}: {m}", path.display()));
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| schema("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let which = headers
        .iter()
        .position(|h| cols == h[..])
        .ok_or_else(|| schema(format!("header `{header}`, expected one of {headers:?}")))?;
    let mut rows = Vec::new();
    for line in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Vec<f64> = cells.iter().filter_map(|c| c.parse().ok()).collect();
        if cells.len() != 2 || parsed.len() != 2 || parsed.iter().any(|v| !v.is_finite()) {
            return Err(schema(format!("bad row `{line}`")));
        }
        rows.push((parsed[0], parsed[1]));
    }
    if rows.is_empty() {
        return Err(schema("no data rows".into()));
    }
    Ok((which, rows))
}

fn model_error(e: quadspin::Error) -> CliError {
    match e {
        quadspin::Error::InvalidProblem(m) => CliError::Schema(m),
        other => other.into(),
    }
}

/// Standard deviation of refitted estimates over residual resamplings.
fn bootstrap(
    replicates: usize,
    seed: u64,
    x: &[f64],
    y: &[f64],
    predicted: &[f64],
    refit: impl Fn(&[(f64, f64)]) -> Option<Vec<f64>>,
) -> Option<Vec<f64>> {
    if replicates < 2 {
        return None;
    }
    let residuals: Vec<f64> = y.iter().zip(predicted).map(|(a, b)| a - b).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples: Vec<Vec<f64>> = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        let data: Vec<(f64, f64)> = x
            .iter()
            .zip(predicted)
            .map(|(&x, &p)| (x, p + residuals[rng.random_range(0..residuals.len())]))
            .collect();
        if let Some(est) = refit(&data) {
            samples.push(est);
        }
    }
    if samples.len() < 2 {
        return None;
    }
    let k = samples[0].len();
    let n = samples.len() as f64;
    Some(
        (0..k)
            .map(|j| {
                let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n;
                (samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            })
            .collect(),
    )
}

fn report(result: &FitResult, extra: serde_json::Value, boot: Option<Vec<f64>>) -> Result<serde_json::Value, CliError> {
    for (name, (v, s)) in result.names.iter().zip(result.estimates.iter().zip(&result.sigmas)) {
        finite(*v, name)?;
        finite(*s, name)?;
        println!("{name} = {v} ± {s}");
    }
    let mut value = result.to_json();
    if let serde_json::Value::Object(extra) = extra {
        for (k, v) in extra {
            value[k] = v;
        }
    }
    if let Some(b) = boot {
        let map: serde_json::Map<String, serde_json::Value> =
            result.names.iter().zip(b).map(|(n, s)| (n.clone(), json!(s))).collect();
        value["bootstrap_sigmas"] = serde_json::Value::Object(map);
    }
    Ok(value)
}

pub fn fit(common: &Common, args: &FitArgs) -> Result<(), CliError> {
    let loaded = load_config(common, false)?;
    let cfg = &loaded.cfg;
    let (name, value) = match args.model {
        FitModel::Gn => {
            let mut spectra = Vec::new();
            let mut fields = Vec::new();
            for (i, path) in args.data.iter().enumerate() {
                let text = read_data(path)?;
                let schema = |m: String| CliError::Schema(format!("{}: {m}", path.display()));
                let spec = if path.extension().is_some_and(|e| e == "json") {
                    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| schema(e.to_string()))?;
                    Spectrum::from_json(&v).map_err(|e| schema(e.to_string()))?
                } else {
                    Spectrum::from_csv(&text).map_err(|e| schema(e.to_string()))?
                };
                let b0 = args
                    .b0
                    .get(i)
                    .copied()
                    .or(spec.metadata.b0)
                    .ok_or_else(|| schema("no field recorded; pass --b0".into()))?;
                spectra.push(spec);
                fields.push(b0);
            }
            let fit = fit_gn(&spectra, &fields, cfg.system.g_n_free, &K).map_err(model_error)?;
            let extra = json!({ "g_n_free": cfg.system.g_n_free, "chemical_shift": fit.chemical_shift });
            println!("chemical shift = {:.4}%", fit.chemical_shift * 100.0);
            ("gn", report(&fit.result, extra, None)?)
        }
        FitModel::Angular => {
            let mut data = Vec::new();
            for path in &args.data {
                let (which, rows) = read_table(path, &[["theta_rad", "shift_Hz"], ["theta_deg", "shift_Hz"]])?;
                data.extend(rows.into_iter().map(|(t, s)| (if which == 1 { t.to_radians() } else { t }, s)));
            }
            let spin = cfg.system.spin;
            let f0 = cfg.larmor(&K);
            let order = match args.order {
                Order::First => ShiftOrder::First,
                Order::Second => ShiftOrder::Second,
            };
            let fit = fit_fq_angular(&data, order, f0, spin).map_err(model_error)?;
            let m_hi = order.transition(spin);
            let predict = |f_q: f64, theta: f64| exact_line(spin, f0, f_q, theta, m_hi);
            let x: Vec<f64> = data.iter().map(|d| d.0).collect();
            let y: Vec<f64> = data.iter().map(|d| d.1).collect();
            let predicted: Vec<f64> = x.iter().map(|&t| predict(fit.estimates[0], t)).collect();
            let boot = bootstrap(args.bootstrap, common.seed, &x, &y, &predicted, |d| {
                fit_fq_angular(d, order, f0, spin).ok().map(|f| f.estimates)
            });
            let extra = json!({ "f0_Hz": f0, "transition": transition_label(spin, m_hi) });
            ("angular", report(&fit, extra, boot)?)
        }
        FitModel::Scaling => {
            let mut data = Vec::new();
            for path in &args.data {
                data.extend(read_table(path, &[["n", "T2_s"]])?.1);
            }
            let fit = fit_scaling(&data).map_err(model_error)?;
            let x: Vec<f64> = data.iter().map(|d| d.0).collect();
            let y: Vec<f64> = data.iter().map(|d| d.1.ln()).collect();
            let predicted: Vec<f64> = x.iter().map(|n| fit.estimates[1] + fit.estimates[0] * n.ln()).collect();
            let boot = bootstrap(args.bootstrap, common.seed, &x, &y, &predicted, |d| {
                let back: Vec<(f64, f64)> = d.iter().map(|&(n, l)| (n, l.exp())).collect();
                fit_scaling(&back).ok().map(|f| f.estimates)
            });
            ("scaling", report(&fit, json!({}), boot)?)
        }
    };
    let mut out = open_output(common, "fit", &loaded)?;
    out.write_json(&format!("fit_{name}.json"), &value)?;
    out.finish()
}

fn exact_line(spin: Spin, f0: f64, f_q: f64, theta: f64, m_hi: Projection) -> f64 {
    axial_hamiltonian(spin, f0, f_q, theta).transitions().get(m_hi).map_or(f64::NAN, |t| t.frequency - f0)
}

pub fn forecast(common: &Common, strain: f64) -> Result<(), CliError> {
    let loaded = load_config(common, true)?;
    let cfg = &loaded.cfg;
    let geometry = cfg.forecast_geometry();
    let sys = cfg.spin_system();
    let shift = piezo_shift_forecast(strain, &cfg.tensor_s, &geometry, &sys, &K)?;
    let f_q = coupling_fq(&efg_from_strain(&geometry.strain(strain)?, &cfg.tensor_s), &sys, &K)?.f_q;
    println!("strain {strain:e}: f_Q = {:.3} kHz, outer-line shift = {:.3} kHz", f_q / 1e3, shift / 1e3);
    let mut out = open_output(common, "forecast", &loaded)?;
    out.write_json(
        "forecast.json",
        &json!({
            "strain": strain,
            "geometry": geometry,
            "f_q_Hz": finite(f_q, "f_Q")?,
            "outer_shift_Hz": finite(shift, "shift")?,
        }),
    )?;
    out.finish()
}
