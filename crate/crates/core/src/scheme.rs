//! Time stepping: diffuse, then redistance.
//!
//! * linear: `u^{k+1} = K ∗ sd^k`, `sd^{k+1} = sd[u^{k+1}]`
//! * nonlinear: `u^{k+1} = sd[γ⁻¹(K ∗ γ(u^k))]` with `γ = tanh`
//! * multiphase: one nonnegative distance per phase, diffused independently and
//!   re-distanced against the competing phases.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Sign};
use crate::grid::{ball_radius, lipschitz_check, seed_field, GridGeometry, LipschitzOptions, PhaseMask, ScalarField};
use crate::kernels::{Kernel, KernelSpec, PreparedKernel};
use crate::redistance::{redistance_values, ProfileField, RedistanceConfig, StripWidth};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeVariant {
    #[default]
    Linear,
    Nonlinear,
    Multiphase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub kernel: KernelSpec,
    pub redistance: RedistanceConfig,
    pub variant: SchemeVariant,
    /// Stop once `k h ≥ final_time`, i.e. after `ceil(T/h)` steps.
    pub final_time: Option<f64>,
    pub max_steps: Option<usize>,
    /// Keep a snapshot every `k` steps (and the initial state).
    pub snapshot_every: Option<usize>,
    /// Run the Lipschitz check on every recorded field.
    pub check_lipschitz: bool,
    /// Check the discrete sub/supersolution inequalities (explicit stencil only).
    pub check_inequalities: bool,
}

impl SchemeConfig {
    pub fn new(kernel: KernelSpec, eps: f64) -> Self {
        Self {
            kernel,
            redistance: RedistanceConfig::for_spacing(eps),
            variant: SchemeVariant::Linear,
            final_time: None,
            max_steps: None,
            snapshot_every: None,
            check_lipschitz: true,
            check_inequalities: cfg!(debug_assertions),
        }
    }

    /// Number of steps the stop rule allows for a step `h`, or `None` if unbounded.
    pub fn step_budget(&self, h: f64) -> Option<usize> {
        let by_time = self.final_time.map(|t| {
            let q = t / h;
            // Absorb round-off so T = k h gives exactly k steps.
            (q - 1e-9 * q.abs().max(1.0)).ceil().max(0.0) as usize
        });
        match (by_time, self.max_steps) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub neg_cells: usize,
    pub area: f64,
    pub radius: f64,
    pub lipschitz_ok: Option<bool>,
    /// Cells per phase (multiphase runs only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phase_cells: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    /// The level-set field, or the label map for multiphase runs.
    pub field: ScalarField,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtinctionKind {
    /// The named sign class became empty.
    Sign(Sign),
    /// Fewer than two phases remain.
    Phases,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extinction {
    pub step: usize,
    pub time: f64,
    pub kind: ExtinctionKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    PhaseVanished { step: usize, phase: usize },
    Extinct { step: usize, kind: ExtinctionKind },
    Failed { step: usize, message: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub diffusion_secs: f64,
    pub redistance_secs: f64,
    pub checks_secs: f64,
}

#[derive(Clone, Debug)]
pub struct EvolutionTrace {
    pub geometry: GridGeometry,
    pub h: f64,
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot>,
    pub extinction: Option<Extinction>,
    pub events: Vec<TraceEvent>,
    pub terminal_error: Option<String>,
    pub timings: Timings,
    /// State after the last completed step (the label map for multiphase runs).
    pub final_field: ScalarField,
    /// Per-phase distances after the last step (multiphase runs only).
    pub final_phases: Vec<ScalarField>,
}

impl EvolutionTrace {
    pub fn all_lipschitz(&self) -> bool {
        self.records.iter().all(|r| r.lipschitz_ok != Some(false))
    }

    pub fn last(&self) -> &StepRecord {
        self.records.last().expect("a trace always holds the initial record")
    }
}

fn sign_class_empty(values: &[f64]) -> Option<Sign> {
    if !values.iter().any(|&v| v < 0.0) {
        Some(Sign::Negative)
    } else if !values.iter().any(|&v| v >= 0.0) {
        Some(Sign::Positive)
    } else {
        None
    }
}

fn redistanced(geom: &GridGeometry, u: &[f64], rcfg: &RedistanceConfig, cap: f64) -> Vec<f64> {
    redistance_values(geom, u, rcfg.variant, rcfg.strip, cap).0
}

/// One step of the linear scheme. Fails with `Extinct` when a sign class of
/// `K ∗ sd` is empty.
pub fn step_linear(sd: &ScalarField, kernel: &PreparedKernel, rcfg: &RedistanceConfig) -> Result<ScalarField> {
    let u = kernel.apply_values(sd.values());
    if let Some(s) = sign_class_empty(&u) {
        return Err(Error::Extinct(s));
    }
    let v = redistanced(sd.geometry(), &u, rcfg, rcfg.saturation);
    Ok(sd.with_values(v).with_saturation(rcfg.saturation))
}

/// `γ⁻¹(K ∗ γ(u))`, computed on the stable two-sided profile and clamped to `±d̄_γ`.
pub fn diffuse_profile(u: &ScalarField, kernel: &PreparedKernel, cap: f64) -> Vec<f64> {
    let p = ProfileField::from_distance(u);
    let plus = kernel.apply_values(p.plus());
    let minus = kernel.apply_values(p.minus());
    ProfileField::from_parts(u.geometry().clone(), plus, minus).inverse(cap)
}

/// One step of the nonlinear scheme.
pub fn step_nonlinear(u: &ScalarField, kernel: &PreparedKernel, rcfg: &RedistanceConfig) -> Result<ScalarField> {
    let cap = rcfg.nonlinear_cap;
    let w = diffuse_profile(u, kernel, cap);
    if let Some(s) = sign_class_empty(&w) {
        return Err(Error::Extinct(s));
    }
    let v = redistanced(u.geometry(), &w, rcfg, cap);
    Ok(u.with_values(v).with_saturation(cap))
}

#[derive(Clone, Debug)]
pub struct MultiphaseStep {
    /// Surviving phases, in input order.
    pub phases: Vec<ScalarField>,
    /// Input indices of phases that vanished in this step.
    pub vanished: Vec<usize>,
}

/// One step of the multiphase scheme on nonnegative phase distances.
///
/// Each `u^ℓ` is diffused to `w^ℓ`; phase `ℓ` is then the set where
/// `v^ℓ = w^ℓ − min_{ℓ'≠ℓ} w^{ℓ'}` is negative, and the new `u^ℓ` is
/// `max(0, sd[v^ℓ])`. With two phases the competitor is unique.
pub fn step_multiphase(
    phases: &[ScalarField],
    kernel: &PreparedKernel,
    rcfg: &RedistanceConfig,
) -> Result<MultiphaseStep> {
    if phases.len() < 2 {
        return Err(Error::PhasesExhausted);
    }
    let geom = phases[0].geometry();
    let w: Vec<Vec<f64>> = phases.iter().map(|p| kernel.apply_values(p.values())).collect();
    let n = geom.len();
    // Smallest and second smallest diffused value per cell.
    let mut first = vec![f64::INFINITY; n];
    let mut first_at = vec![usize::MAX; n];
    let mut second = vec![f64::INFINITY; n];
    for (l, wl) in w.iter().enumerate() {
        for i in 0..n {
            let x = wl[i];
            if x < first[i] {
                second[i] = first[i];
                first[i] = x;
                first_at[i] = l;
            } else if x < second[i] {
                second[i] = x;
            }
        }
    }
    let mut out = Vec::new();
    let mut vanished = Vec::new();
    for (l, wl) in w.iter().enumerate() {
        let v: Vec<f64> = (0..n).map(|i| wl[i] - if first_at[i] == l { second[i] } else { first[i] }).collect();
        if !v.iter().any(|&x| x < 0.0) {
            vanished.push(l);
            continue;
        }
        let s = redistanced(geom, &v, rcfg, rcfg.saturation);
        let u: Vec<f64> = s.into_iter().map(|x| x.max(0.0)).collect();
        out.push(phases[l].with_values(u).with_saturation(rcfg.saturation));
    }
    Ok(MultiphaseStep { phases: out, vanished })
}

/// Lowest-index argmin of the phase distances, per cell.
pub fn label_map(phases: &[ScalarField]) -> Vec<usize> {
    let n = phases.first().map_or(0, |p| p.values().len());
    (0..n)
        .map(|i| {
            let mut best = 0;
            for (l, p) in phases.iter().enumerate() {
                if p.values()[i] < phases[best].values()[i] {
                    best = l;
                }
            }
            best
        })
        .collect()
}

/// Largest violation of `sd^{k+1} ≥ u^{k+1}` on `{sd^{k+1} ≥ 0}` and
/// `sd^{k+1} ≤ u^{k+1}` on `{sd^{k+1} < 0}`. For the explicit stencil
/// `u^{k+1} = sd^k + hΔ_ε sd^k`, so these are the discrete sub- and
/// supersolution inequalities multiplied by `h`.
pub fn inequality_excess(u_next: &[f64], sd_next: &[f64]) -> (f64, usize) {
    let mut worst = f64::NEG_INFINITY;
    let mut at = 0;
    for (i, (&u, &s)) in u_next.iter().zip(sd_next).enumerate() {
        let e = if s >= 0.0 { u - s } else { s - u };
        if e > worst {
            worst = e;
            at = i;
        }
    }
    (worst, at)
}

struct Recorder<'a> {
    cfg: &'a SchemeConfig,
    h: f64,
    trace: EvolutionTrace,
    lip: LipschitzOptions,
}

impl Recorder<'_> {
    fn record(&mut self, step: usize, field: &ScalarField, neg_cells: usize, phase_cells: Vec<usize>, check: Option<&ScalarField>) {
        let g = field.geometry();
        let area = neg_cells as f64 * g.spacing().powi(g.dim() as i32);
        let lipschitz_ok = if self.cfg.check_lipschitz {
            let t = Instant::now();
            let ok = check.map(|f| lipschitz_check(f, &self.lip).lipschitz);
            self.trace.timings.checks_secs += t.elapsed().as_secs_f64();
            ok
        } else {
            None
        };
        let time = step as f64 * self.h;
        self.trace.records.push(StepRecord {
            step,
            time,
            neg_cells,
            area,
            radius: ball_radius(area, g.dim()),
            lipschitz_ok,
            phase_cells,
        });
        if let Some(k) = self.cfg.snapshot_every {
            if k > 0 && step.is_multiple_of(k) {
                self.trace.snapshots.push(Snapshot { step, time, field: field.clone() });
            }
        }
    }

    fn extinct(&mut self, step: usize, kind: ExtinctionKind, field: &ScalarField, phase_cells: Vec<usize>) {
        let neg = match kind {
            ExtinctionKind::Sign(Sign::Negative) => 0,
            ExtinctionKind::Sign(Sign::Positive) => field.values().len(),
            ExtinctionKind::Phases => phase_cells.first().copied().unwrap_or(0),
        };
        self.record(step, field, neg, phase_cells, None);
        let time = step as f64 * self.h;
        self.trace.extinction = Some(Extinction { step, time, kind });
        self.trace.events.push(TraceEvent::Extinct { step, kind });
        log::info!("extinction at step {step} (t = {time})");
    }

    fn fail(&mut self, step: usize, err: &Error) {
        self.trace.terminal_error = Some(err.to_string());
        self.trace.events.push(TraceEvent::Failed { step, message: err.to_string() });
        log::error!("run stopped at step {step}: {err}");
    }
}

/// Seed from `mask`, redistance, and iterate until the stop rule or extinction.
pub fn run(mask: &PhaseMask, cfg: &SchemeConfig) -> Result<EvolutionTrace> {
    let geom = mask.geometry().clone();
    let kernel = cfg.kernel.build(&geom)?;
    run_with_kernel(mask, &kernel, cfg)
}

pub fn run_with_kernel(mask: &PhaseMask, kernel: &Kernel, cfg: &SchemeConfig) -> Result<EvolutionTrace> {
    let geom = mask.geometry().clone();
    cfg.redistance.validate(geom.spacing())?;
    let h = kernel.derived_h();
    let budget = cfg.step_budget(h);
    if budget.is_none() {
        log::debug!("no stop rule; running until extinction");
    }
    if cfg.variant != SchemeVariant::Multiphase && !mask.is_binary() {
        return Err(Error::InvalidParameter("two-phase schemes need a binary mask".into()));
    }
    let prepared = kernel.prepare(&geom)?;
    let explicit_stencil = matches!(kernel, Kernel::Stencil(_));
    let empty = ScalarField::constant(geom.clone(), 0.0, cfg.redistance.saturation);
    let mut rec = Recorder {
        cfg,
        h,
        trace: EvolutionTrace {
            geometry: geom.clone(),
            h,
            records: Vec::new(),
            snapshots: Vec::new(),
            extinction: None,
            events: Vec::new(),
            terminal_error: None,
            timings: Timings::default(),
            final_field: empty,
            final_phases: Vec::new(),
        },
        lip: LipschitzOptions::default(),
    };

    match cfg.variant {
        SchemeVariant::Linear | SchemeVariant::Nonlinear => {
            let nonlinear = cfg.variant == SchemeVariant::Nonlinear;
            let cap = if nonlinear { cfg.redistance.nonlinear_cap } else { cfg.redistance.saturation };
            let seed = seed_field(mask, cap);
            let t = Instant::now();
            let mut sd = seed.with_values(redistanced(&geom, seed.values(), &cfg.redistance, cap));
            rec.trace.timings.redistance_secs += t.elapsed().as_secs_f64();
            if let Some(s) = sign_class_empty(sd.values()) {
                rec.extinct(0, ExtinctionKind::Sign(s), &sd, Vec::new());
                rec.trace.final_field = sd;
                return Ok(rec.trace);
            }
            let neg = sd.negative_count();
            rec.record(0, &sd, neg, Vec::new(), Some(&sd));
            let check_ineq = cfg.check_inequalities && explicit_stencil && !nonlinear && cfg.redistance.strip == StripWidth::Full;
            let mut k = 0;
            while budget.is_none_or(|b| k < b) {
                k += 1;
                let t = Instant::now();
                let u = if nonlinear {
                    diffuse_profile(&sd, &prepared, cap)
                } else {
                    prepared.apply_values(sd.values())
                };
                rec.trace.timings.diffusion_secs += t.elapsed().as_secs_f64();
                if let Some(s) = sign_class_empty(&u) {
                    let f = sd.with_values(u);
                    rec.extinct(k, ExtinctionKind::Sign(s), &f, Vec::new());
                    rec.trace.final_field = f;
                    return Ok(rec.trace);
                }
                let t = Instant::now();
                let next = redistanced(&geom, &u, &cfg.redistance, cap);
                rec.trace.timings.redistance_secs += t.elapsed().as_secs_f64();
                if check_ineq {
                    let (excess, cell) = inequality_excess(&u, &next);
                    if excess > 1e-9 {
                        let err = Error::InequalityViolated { cell, excess: excess / h };
                        rec.fail(k, &err);
                        rec.trace.final_field = sd;
                        return Ok(rec.trace);
                    }
                }
                sd = sd.with_values(next);
                let neg = sd.negative_count();
                rec.record(k, &sd, neg, Vec::new(), Some(&sd));
            }
            rec.trace.final_field = sd;
        }
        SchemeVariant::Multiphase => {
            let cap = cfg.redistance.saturation;
            let labels = mask.labels();
            let count = labels.iter().copied().max().unwrap_or(0) as usize + 1;
            let t = Instant::now();
            let mut phases: Vec<ScalarField> = (0..count)
                .map(|l| {
                    let seed: Vec<f64> = labels
                        .iter()
                        .map(|&x| if x as usize == l { -0.5 * geom.spacing() } else { 0.5 * geom.spacing() })
                        .collect();
                    let s = redistanced(&geom, &seed, &cfg.redistance, cap);
                    ScalarField::new(geom.clone(), s.into_iter().map(|x| x.max(0.0)).collect(), cap)
                        .expect("mask geometry")
                })
                .collect();
            rec.trace.timings.redistance_secs += t.elapsed().as_secs_f64();
            let mut ids: Vec<usize> = (0..count).collect();
            // Phases absent from the mask have no cells from the start.
            let present: Vec<bool> = (0..count).map(|l| labels.iter().any(|&x| x as usize == l)).collect();
            let mut keep = Vec::new();
            let mut kept_ids = Vec::new();
            for (l, p) in phases.into_iter().enumerate() {
                if present[l] {
                    keep.push(p);
                    kept_ids.push(l);
                } else {
                    rec.trace.events.push(TraceEvent::PhaseVanished { step: 0, phase: l });
                    log::info!("phase {l} is empty at step 0");
                }
            }
            phases = keep;
            ids.retain(|l| kept_ids.contains(l));

            let summarize = |phases: &[ScalarField], ids: &[usize]| {
                let lab = label_map(phases);
                let mut cells = vec![0usize; count];
                for &l in &lab {
                    cells[ids[l]] += 1;
                }
                let map: Vec<f64> = lab.iter().map(|&l| ids[l] as f64).collect();
                (cells, map)
            };
            let (cells, map) = summarize(&phases, &ids);
            let label_field = ScalarField::new(geom.clone(), map, count as f64).expect("mask geometry");
            if phases.len() < 2 {
                rec.extinct(0, ExtinctionKind::Phases, &label_field, cells);
                rec.trace.final_field = label_field;
                rec.trace.final_phases = phases;
                return Ok(rec.trace);
            }
            let lip_ok = phases.iter().all(|p| lipschitz_check(p, &rec.lip).lipschitz);
            rec.record(0, &label_field, cells[0], cells, None);
            if cfg.check_lipschitz {
                rec.trace.records.last_mut().unwrap().lipschitz_ok = Some(lip_ok);
            }
            rec.trace.final_field = label_field;
            let mut k = 0;
            while budget.is_none_or(|b| k < b) {
                k += 1;
                let t = Instant::now();
                let out = match step_multiphase(&phases, &prepared, &cfg.redistance) {
                    Ok(o) => o,
                    Err(e) => {
                        rec.fail(k, &e);
                        break;
                    }
                };
                rec.trace.timings.redistance_secs += t.elapsed().as_secs_f64();
                for &v in &out.vanished {
                    rec.trace.events.push(TraceEvent::PhaseVanished { step: k, phase: ids[v] });
                    log::info!("phase {} vanished at step {k}", ids[v]);
                }
                ids = ids.iter().enumerate().filter(|(i, _)| !out.vanished.contains(i)).map(|(_, &l)| l).collect();
                phases = out.phases;
                let (cells, map) = summarize(&phases, &ids);
                let label_field = ScalarField::new(geom.clone(), map, count as f64).expect("mask geometry");
                if phases.len() < 2 {
                    rec.extinct(k, ExtinctionKind::Phases, &label_field, cells);
                    rec.trace.final_field = label_field;
                    rec.trace.final_phases = phases;
                    return Ok(rec.trace);
                }
                let lip_ok = cfg.check_lipschitz.then(|| phases.iter().all(|p| lipschitz_check(p, &rec.lip).lipschitz));
                rec.record(k, &label_field, cells[0], cells, None);
                rec.trace.records.last_mut().unwrap().lipschitz_ok = lip_ok;
                rec.trace.final_field = label_field;
            }
            rec.trace.final_phases = phases;
        }
    }
    Ok(rec.trace)
}
