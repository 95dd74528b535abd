use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use sdflow::analysis::{
    ball_step_scaling, class_distance, compare_to_law, disk_mask, random_lipschitz_field, strip_equivalence,
    KernelFamily, LawComparison, RadiusLaw,
};
use sdflow::grid::GridGeometry;
use sdflow::io::{field_from_csv, field_to_csv, field_to_pgm, read_mask, trace_to_csv};
use sdflow::kernels::{validate_kernel as kernel_report, KernelSpec};
use sdflow::redistance::{redistance as apply_redistance, sd_plus, RedistanceConfig, StripWidth, Variant};
use sdflow::scheme::{run_with_kernel, EvolutionTrace, SchemeConfig, SchemeVariant};
use sdflow::Error;

use crate::manifest::{FileDigest, RunManifest};
use crate::{
    BenchmarkArgs, EvolveArgs, KernelArgs, RedistanceArgs, RedistanceChoice, RedistanceOpts, SchemeChoice, ValidateArgs,
    VerifyArgs,
};

/// Steps allowed when neither `--T` nor `--steps` is given.
const DEFAULT_STEP_CAP: usize = 100_000;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or unreadable inputs (exit 2).
    Config(String),
    /// Failure while computing or writing results (exit 3).
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidGeometry(_)
            | Error::GeometryMismatch
            | Error::BadTheta(_)
            | Error::InvalidParameter(_)
            | Error::WrongDimension { .. }
            | Error::HypothesisViolated { .. }
            | Error::Parse(_)
            | Error::Json(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn positive(name: &str, v: f64) -> CliResult<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(config(format!("--{name} must be positive, got {v}")))
    }
}

pub fn kernel_spec(k: &KernelArgs) -> CliResult<KernelSpec> {
    let tau = || k.tau.ok_or_else(|| config(format!("kernel {} needs --tau", k.kernel)));
    match k.kernel.as_str() {
        "explicit" => Ok(KernelSpec::Explicit { theta: k.theta.unwrap_or(1.0) }),
        "implicit" => Ok(KernelSpec::Implicit { tau: tau()? }),
        "heat" => Ok(KernelSpec::Heat { tau: tau()? }),
        path => {
            let text = fs::read_to_string(path).map_err(|e| config(format!("cannot read kernel spec {path}: {e}")))?;
            serde_json::from_str(&text).map_err(|e| config(format!("malformed kernel spec {path}: {e}")))
        }
    }
}

fn kernel_input(k: &KernelArgs) -> Option<FileDigest> {
    match k.kernel.as_str() {
        "explicit" | "implicit" | "heat" => None,
        path => FileDigest::of_file(Path::new(path)).ok(),
    }
}

pub fn redistance_config(o: &RedistanceOpts, eps: f64) -> CliResult<RedistanceConfig> {
    let mut cfg = RedistanceConfig::for_spacing(eps);
    cfg.variant = match o.redistance {
        RedistanceChoice::Plus => Variant::Plus,
        RedistanceChoice::Minus => Variant::Minus,
        RedistanceChoice::Avg => Variant::Average,
    };
    if let Some(m) = o.strip {
        cfg.strip = StripWidth::Width(m);
    }
    if let Some(d) = o.dbar {
        cfg.saturation = d;
    }
    if let Some(d) = o.dbar_gamma {
        cfg.nonlinear_cap = d;
    }
    cfg.validate(eps)?;
    Ok(cfg)
}

fn describe_extinction(trace: &EvolutionTrace) -> String {
    match &trace.extinction {
        Some(e) => format!("extinct at step {} (t = {})", e.step, e.time),
        None => format!("no extinction by t = {}", trace.last().time),
    }
}

pub fn evolve(a: &EvolveArgs) -> CliResult<u8> {
    let started = Instant::now();
    if !a.mask.is_file() {
        return Err(config(format!("mask file {} not found", a.mask.display())));
    }
    let eps = positive("spacing", a.spacing)?;
    let mask = read_mask(&a.mask, eps).map_err(|e| config(format!("cannot read mask {}: {e}", a.mask.display())))?;
    if let Some(t) = a.final_time {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(config(format!("--T must be a non-negative time, got {t}")));
        }
    }
    if a.snap_every == Some(0) {
        return Err(config("--snap-every must be at least 1"));
    }

    let spec = kernel_spec(&a.kernel)?;
    let mut cfg = SchemeConfig::new(spec, eps);
    cfg.redistance = redistance_config(&a.redistance, eps)?;
    cfg.variant = match a.scheme {
        SchemeChoice::Linear => SchemeVariant::Linear,
        SchemeChoice::Nonlinear => SchemeVariant::Nonlinear,
        SchemeChoice::Multiphase => SchemeVariant::Multiphase,
    };
    cfg.final_time = a.final_time;
    cfg.max_steps = match (a.steps, a.final_time) {
        (Some(n), _) => Some(n),
        (None, Some(_)) => None,
        (None, None) => Some(DEFAULT_STEP_CAP),
    };
    cfg.snapshot_every = a.snap_every;
    cfg.check_lipschitz = a.check_lipschitz;
    cfg.check_inequalities = false;

    let kernel = cfg.kernel.build(mask.geometry())?;
    let report = kernel_report(&kernel);
    if !report.passes {
        log::warn!("kernel {} fails validation; running anyway", cfg.kernel.name());
    }

    let mut manifest = RunManifest::new(
        "evolve",
        json!({ "mask": a.mask.display().to_string(), "spacing": eps, "scheme": to_json(&cfg) }),
    );
    manifest.kernel_report = Some(to_json(&report));
    manifest.inputs.push(FileDigest::of_file(&a.mask)?);
    manifest.inputs.extend(kernel_input(&a.kernel));

    let trace = run_with_kernel(&mask, &kernel, &cfg)?;

    manifest.emit(&a.out.join("trace.csv"), trace_to_csv(&trace).as_bytes())?;
    let pgm = mask.geometry().dim() == 2 && cfg.variant != SchemeVariant::Multiphase;
    for s in &trace.snapshots {
        let base = a.out.join("snapshots").join(format!("step_{:06}", s.step));
        manifest.emit(&base.with_extension("csv"), field_to_csv(&s.field).as_bytes())?;
        if pgm {
            manifest.emit(&base.with_extension("pgm"), &field_to_pgm(&s.field)?)?;
        }
    }
    manifest.emit(&a.out.join("final.csv"), field_to_csv(&trace.final_field).as_bytes())?;

    let last = trace.last();
    manifest.summary = json!({
        "h": trace.h,
        "steps": last.step,
        "final_time": last.time,
        "neg_cells": last.neg_cells,
        "extinction": trace.extinction,
        "events": trace.events,
        "all_lipschitz": if cfg.check_lipschitz { Some(trace.all_lipschitz()) } else { None },
        "terminal_error": trace.terminal_error,
    });
    manifest.timings = json!({
        "diffusion_secs": trace.timings.diffusion_secs,
        "redistance_secs": trace.timings.redistance_secs,
        "checks_secs": trace.timings.checks_secs,
        "total_secs": started.elapsed().as_secs_f64(),
    });
    let path = manifest.write(&a.out)?;

    println!(
        "evolve: {} steps with h = {}, {}; manifest {}",
        last.step,
        trace.h,
        describe_extinction(&trace),
        path.display()
    );
    if let Some(err) = &trace.terminal_error {
        eprintln!("sdflow: runtime error: {err}");
        return Ok(3);
    }
    Ok(0)
}

pub fn validate_kernel(a: &ValidateArgs) -> CliResult<u8> {
    let eps = positive("spacing", a.spacing)?;
    let geometry = GridGeometry::cube(a.n, a.dim, eps)?;
    let spec = kernel_spec(&a.kernel)?;
    let kernel = spec.build(&geometry)?;
    let report = kernel_report(&kernel);

    let mut manifest = RunManifest::new(
        "validate-kernel",
        json!({ "kernel": to_json(&spec), "dim": a.dim, "n": a.n, "spacing": eps }),
    );
    manifest.inputs.extend(kernel_input(&a.kernel));
    manifest.kernel_report = Some(to_json(&report));
    manifest.summary = json!({ "passes": report.passes, "derived_h": report.derived_h });
    let path = manifest.write(&a.out)?;

    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{text}");
    // Standard output carries the JSON report, so the summary goes to standard error.
    eprintln!(
        "validate-kernel: {} {} (derived h = {}); manifest {}",
        spec.name(),
        if report.passes { "passes" } else { "FAILS" },
        report.derived_h,
        path.display()
    );
    Ok(if report.passes { 0 } else { 1 })
}

pub fn redistance(a: &RedistanceArgs) -> CliResult<u8> {
    let started = Instant::now();
    let text = fs::read_to_string(&a.input).map_err(|e| config(format!("cannot read field {}: {e}", a.input.display())))?;
    let parsed = field_from_csv(&text, f64::MAX)?;
    let eps = parsed.geometry().spacing();
    let cfg = redistance_config(&a.redistance, eps)?;
    let field = parsed.with_saturation(cfg.saturation);
    let out = apply_redistance(&field, &cfg)?;
    if let Some(d) = out.degenerate {
        log::warn!("degenerate input ({d:?}); output is saturated");
    }

    let dir = a.out.clone().unwrap_or_else(|| a.output.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")));
    let mut manifest = RunManifest::new(
        "redistance",
        json!({ "input": a.input.display().to_string(), "redistance": to_json(&cfg) }),
    );
    manifest.inputs.push(FileDigest::of_bytes(&a.input, text.as_bytes()));
    manifest.emit(&a.output, field_to_csv(&out.field).as_bytes())?;
    let changed = field.values().iter().zip(out.field.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    manifest.summary = json!({
        "cells": field.geometry().len(),
        "max_change": changed,
        "degenerate": out.degenerate,
    });
    manifest.timings = json!({ "total_secs": started.elapsed().as_secs_f64() });
    let path = manifest.write(&dir)?;
    println!(
        "redistance: {} cells, max change {changed}{}; manifest {}",
        field.geometry().len(),
        if out.degenerate.is_some() { " (saturated)" } else { "" },
        path.display()
    );
    Ok(0)
}

fn parse_suite_kernel(s: &str) -> CliResult<KernelSpec> {
    let (name, param) = match s.split_once(':') {
        Some((n, p)) => {
            let v: f64 = p.trim().parse().map_err(|_| config(format!("bad kernel parameter in {s:?}")))?;
            (n.trim(), Some(v))
        }
        None => (s.trim(), None),
    };
    match (name, param) {
        ("explicit", p) => Ok(KernelSpec::Explicit { theta: p.unwrap_or(1.0) }),
        ("implicit", Some(tau)) => Ok(KernelSpec::Implicit { tau }),
        ("heat", Some(tau)) => Ok(KernelSpec::Heat { tau }),
        _ => Err(config(format!("unknown suite kernel {s:?}; use explicit[:θ], implicit:τ or heat:τ"))),
    }
}

#[derive(Serialize)]
struct DiskRun {
    kernel: String,
    spec: KernelSpec,
    h: f64,
    status: &'static str,
    extinction_step: Option<usize>,
    extinction_time: Option<f64>,
    terminal_error: Option<String>,
    law: LawComparison,
    trace: String,
}

pub fn benchmark_disk(a: &BenchmarkArgs) -> CliResult<u8> {
    let started = Instant::now();
    let eps = positive("spacing", a.spacing)?;
    let radius = positive("R", a.radius)?;
    if a.n < 4 {
        return Err(config(format!("--n must be at least 4, got {}", a.n)));
    }
    let half = 0.5 * a.n as f64 * eps;
    if radius >= half {
        return Err(config(format!("--R {radius} does not fit in a box of half-width {half}")));
    }
    let specs: Vec<KernelSpec> = a.kernels.iter().map(|s| parse_suite_kernel(s)).collect::<CliResult<_>>()?;
    let rcfg = redistance_config(&a.redistance, eps)?;
    let geometry = GridGeometry::cube(a.n, 2, eps)?;
    let center = vec![(a.n / 2) as f64; 2];
    let mask = disk_mask(&geometry, &center, radius / eps);
    let law = RadiusLaw::new(radius, 2)?;

    let mut manifest = RunManifest::new(
        "benchmark-disk",
        json!({ "n": a.n, "radius": radius, "spacing": eps, "kernels": a.kernels, "redistance": to_json(&rcfg), "max_steps": a.steps }),
    );
    let mut runs = Vec::new();
    let mut timings = Vec::new();
    let mut failures = 0;
    for (label, spec) in a.kernels.iter().zip(specs) {
        let kernel = spec.build(&geometry)?;
        let mut cfg = SchemeConfig::new(spec.clone(), eps);
        cfg.redistance = rcfg;
        cfg.max_steps = Some(a.steps);
        cfg.check_lipschitz = false;
        cfg.check_inequalities = false;
        let t0 = Instant::now();
        let trace = run_with_kernel(&mask, &kernel, &cfg)?;
        let cmp = compare_to_law(&trace, law);
        let status = if trace.terminal_error.is_some() {
            failures += 1;
            "failed"
        } else if cmp.within_tolerance && cmp.not_late {
            "pass"
        } else {
            "degraded"
        };
        let name = format!("disk_{}.csv", label.replace([':', '.'], "_"));
        manifest.emit(&a.out.join(&name), trace_to_csv(&trace).as_bytes())?;
        timings.push(json!({ "kernel": label, "total_secs": t0.elapsed().as_secs_f64(), "timings": trace.timings }));
        runs.push(DiskRun {
            kernel: label.clone(),
            spec,
            h: trace.h,
            status,
            extinction_step: trace.extinction.map(|e| e.step),
            extinction_time: trace.extinction.map(|e| e.time),
            terminal_error: trace.terminal_error.clone(),
            law: cmp,
            trace: name,
        });
    }
    let report = json!({ "law_extinction_time": law.extinction_time(), "runs": runs });
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    manifest.emit(&a.out.join("benchmark.json"), format!("{text}\n").as_bytes())?;
    let statuses: Vec<String> = runs.iter().map(|r| format!("{}={}", r.kernel, r.status)).collect();
    manifest.summary = json!({ "statuses": statuses });
    manifest.timings = json!({ "runs": timings, "total_secs": started.elapsed().as_secs_f64() });
    let path = manifest.write(&a.out)?;
    println!("benchmark-disk: {}; manifest {}", statuses.join(", "), path.display());
    Ok(if failures > 0 { 3 } else { 0 })
}

#[derive(Serialize)]
struct Check {
    name: String,
    passes: bool,
    detail: serde_json::Value,
}

pub fn verify(a: &VerifyArgs) -> CliResult<u8> {
    let started = Instant::now();
    let mut checks = Vec::new();

    let g = GridGeometry::cube(32, 2, 1.0)?;
    for spec in [KernelSpec::Explicit { theta: 1.0 }, KernelSpec::Implicit { tau: 5.0 }, KernelSpec::Heat { tau: 5.0 }] {
        let r = kernel_report(&spec.build(&g)?);
        checks.push(Check { name: format!("kernel {}", spec.name()), passes: r.passes, detail: to_json(&r) });
    }

    // sd⁺ stays within (4√N + 1)ε of the exact class distance.
    let g = GridGeometry::cube(24, 2, 1.0)?;
    let bound = 4.0 * 2f64.sqrt() + 1.0;
    let mut worst = 0.0f64;
    for k in 0..a.fields {
        let u = random_lipschitz_field(&g, a.seed.wrapping_add(k)).with_saturation(1e6);
        let sd = sd_plus(&u)?.field;
        let d = class_distance(&g, u.values());
        worst = sd.values().iter().zip(&d).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
    }
    checks.push(Check {
        name: "distance bound".into(),
        passes: worst <= bound,
        detail: json!({ "worst": worst, "bound": bound, "fields": a.fields }),
    });

    let mut violations = 0;
    for k in 0..a.fields {
        let u = random_lipschitz_field(&g, a.seed.wrapping_add(1000 + k));
        violations += strip_equivalence(&u, &[5.0, 10.0])?.violations();
    }
    checks.push(Check { name: "strip bounds".into(), passes: violations == 0, detail: json!({ "violations": violations }) });

    if a.scaling {
        for fam in KernelFamily::builtin() {
            let r = ball_step_scaling(&[1.0, 0.5, 0.25], &[10.0, 20.0, 50.0], fam)?;
            checks.push(Check { name: format!("ball scaling {}", fam.name()), passes: r.passes(), detail: to_json(&r) });
        }
    }

    let failed: Vec<&str> = checks.iter().filter(|c| !c.passes).map(|c| c.name.as_str()).collect();
    let mut manifest = RunManifest::new("verify", json!({ "seed": a.seed, "fields": a.fields, "scaling": a.scaling }));
    let text = serde_json::to_string_pretty(&checks).map_err(|e| CliError::Runtime(e.to_string()))?;
    manifest.emit(&a.out.join("verify.json"), format!("{text}\n").as_bytes())?;
    manifest.summary = json!({ "checks": checks.len(), "failed": failed });
    manifest.timings = json!({ "total_secs": started.elapsed().as_secs_f64() });
    let path = manifest.write(&a.out)?;
    println!(
        "verify: {}/{} checks pass{}; manifest {}",
        checks.len() - failed.len(),
        checks.len(),
        if failed.is_empty() { String::new() } else { format!(" (failed: {})", failed.join(", ")) },
        path.display()
    );
    Ok(if failed.is_empty() { 0 } else { 1 })
}
