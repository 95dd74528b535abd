//! Acceptance run: one PASS/FAIL line per criterion, followed by a summary.
//!
//! Runs several thousand-step disk evolutions; expect a few minutes on one core.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdflow::analysis::{
    ball_step_scaling, compare_to_law, disk_distance, disk_mask, random_lipschitz_field, strip_equivalence,
    KernelFamily, RadiusLaw,
};
use sdflow::grid::{GridGeometry, PhaseMask, ScalarField};
use sdflow::io::trace_to_csv;
use sdflow::kernels::{implicit_euler_symbol, validate_kernel, KernelSpec};
use sdflow::redistance::{sd_minus, sd_plus, StripWidth, Variant};
use sdflow::scheme::{label_map, run, step_multiphase, EvolutionTrace, SchemeConfig, SchemeVariant};

struct Outcome {
    passed: usize,
    failed: Vec<usize>,
}

impl Outcome {
    fn report(&mut self, id: usize, title: &str, ok: bool, detail: String, started: Instant) {
        let tag = if ok { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {tag}: {title}: {detail} [{:.1}s]", started.elapsed().as_secs_f64());
        if ok {
            self.passed += 1;
        } else {
            self.failed.push(id);
        }
    }
}

fn benchmark_disk() -> PhaseMask {
    let g = GridGeometry::cube(128, 2, 1.0).unwrap();
    disk_mask(&g, &[64.0, 64.0], 50.0)
}

fn disk_config(kernel: KernelSpec, saturation: f64) -> SchemeConfig {
    let mut cfg = SchemeConfig::new(kernel, 1.0);
    cfg.redistance.variant = Variant::Plus;
    cfg.redistance.saturation = saturation;
    cfg.max_steps = Some(8000);
    cfg.check_lipschitz = false;
    cfg.check_inequalities = false;
    cfg
}

fn extinction_step(t: &EvolutionTrace) -> Option<usize> {
    t.extinction.as_ref().map(|e| e.step)
}

/// Distance from every cell to the nearest cell of the opposite sign class, by exhaustive search.
fn brute_class_distance(u: &ScalarField) -> Vec<f64> {
    let g = u.geometry();
    let eps = g.spacing();
    let v = u.values();
    let pts: Vec<Vec<usize>> = (0..g.len()).map(|i| g.coords(i)).collect();
    (0..g.len())
        .map(|i| {
            let neg = v[i] < 0.0;
            let mut best = i64::MAX;
            for j in 0..g.len() {
                if (v[j] < 0.0) != neg {
                    let d2: i64 = pts[i].iter().zip(&pts[j]).map(|(&a, &b)| (a as i64 - b as i64).pow(2)).sum();
                    best = best.min(d2);
                }
            }
            eps * (best as f64).sqrt()
        })
        .collect()
}

/// Worst violation of `|sd⁺ − dist| ≤ (4√N + 1)ε` (mirrored on the negative side).
fn distance_bound_violations(u: &ScalarField) -> (usize, f64) {
    let eps = u.geometry().spacing();
    let c = (4.0 * (u.geometry().dim() as f64).sqrt() + 1.0) * eps;
    let sd = sd_plus(&u.clone().with_saturation(1e6)).unwrap().field;
    let dist = brute_class_distance(u);
    let mut bad = 0;
    let mut worst = 0.0f64;
    for ((&x, &s), &d) in u.values().iter().zip(sd.values()).zip(&dist) {
        let err = if x >= 0.0 { (s - d).abs() } else { (s + d).abs() };
        worst = worst.max(err);
        bad += usize::from(err > c);
    }
    (bad, worst)
}

/// `x + s`, rounded up when the nearest double falls below the exact sum.
fn add_up(x: f64, s: f64) -> f64 {
    let t = x + s;
    if two_sum_err(x, s, t) > 0.0 {
        t.next_up()
    } else {
        t
    }
}

fn two_sum_err(x: f64, s: f64, t: f64) -> f64 {
    let bp = t - x;
    (x - (t - bp)) + (s - bp)
}

/// Exact test of `x + s > y`.
fn exceeds(x: f64, s: f64, y: f64) -> bool {
    let t = x + s;
    t > y || (t == y && two_sum_err(x, s, t) > 0.0)
}

/// Cells where the lowest-index argmin label fails to describe a partition:
/// the label must name a live phase attaining the minimum, and label counts must cover the grid.
fn partition_defects(phases: &[ScalarField]) -> usize {
    let labels = label_map(phases);
    let mut counts = vec![0usize; phases.len()];
    let mut bad = 0;
    if labels.len() != phases.first().map_or(0, |p| p.values().len()) {
        return usize::MAX / 2;
    }
    for (i, &l) in labels.iter().enumerate() {
        let min = phases.iter().map(|p| p.values()[i]).fold(f64::INFINITY, f64::min);
        let first = phases.iter().position(|p| p.values()[i] == min);
        if l >= phases.len() || Some(l) != first {
            bad += 1;
        } else {
            counts[l] += 1;
        }
    }
    debug_assert_eq!(counts.iter().sum::<usize>() + bad, labels.len());
    bad
}

fn main() {
    let mut out = Outcome { passed: 0, failed: Vec::new() };
    let law = RadiusLaw::new(50.0, 2).unwrap();

    // 1, 2: explicit disk with sd⁺ and d̄ = 30, plus the strip-redistanced timing run.
    let t0 = Instant::now();
    let full = run(&benchmark_disk(), &disk_config(KernelSpec::Explicit { theta: 1.0 }, 30.0)).unwrap();
    let full_secs = t0.elapsed().as_secs_f64();
    let mut strip_cfg = disk_config(KernelSpec::Explicit { theta: 1.0 }, 30.0);
    strip_cfg.redistance.strip = StripWidth::Width(10.0);
    let ts = Instant::now();
    let strip = run(&benchmark_disk(), &strip_cfg).unwrap();
    let strip_secs = ts.elapsed().as_secs_f64();
    let step = extinction_step(&full);
    let in_window = step.is_some_and(|k| (4698..=5098).contains(&k));
    out.report(
        1,
        "disk extinction iteration in [4698, 5098], strip M=10 run under 120 s",
        in_window && strip_secs < 120.0,
        format!(
            "extinction at {step:?} (full run {full_secs:.1}s); strip M=10 extinction at {:?} in {strip_secs:.1}s",
            extinction_step(&strip)
        ),
        t0,
    );

    let t = Instant::now();
    let cmp = compare_to_law(&full, law);
    out.report(
        2,
        "radius within 2ε of sqrt(2500 − 2t) while the predicted radius is ≥ 10",
        cmp.within_tolerance && cmp.samples_compared > 0,
        format!("max deviation {:.3} at t = {:?} over {} samples", cmp.max_deviation, cmp.worst_time, cmp.samples_compared),
        t,
    );

    // 3: truncation at 10 and 30 gives the same trace.
    let t = Instant::now();
    let low = run(&benchmark_disk(), &disk_config(KernelSpec::Explicit { theta: 1.0 }, 10.0)).unwrap();
    let (a, b) = (trace_to_csv(&full), trace_to_csv(&low));
    let first_diff = full.records.iter().zip(&low.records).find(|(x, y)| x.neg_cells != y.neg_cells).map(|(x, _)| x.step);
    out.report(
        3,
        "trace CSV identical for d̄ = 10 and d̄ = 30",
        a == b,
        format!(
            "extinction {:?} vs {:?}; first differing step {:?}",
            extinction_step(&low),
            step,
            first_diff
        ),
        t,
    );

    // 4: sd⁺ against the exhaustive class distance.
    let t = Instant::now();
    let g32 = GridGeometry::cube(32, 2, 1.0).unwrap();
    let mut bad = 0;
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (b, w) = distance_bound_violations(&random_lipschitz_field(&g32, seed));
        bad += b;
        worst = worst.max(w);
    }
    let disk = disk_distance(&GridGeometry::cube(128, 2, 1.0).unwrap(), &[64.0, 64.0], 50.0, 1e6);
    let (b, w) = distance_bound_violations(&disk);
    out.report(
        4,
        "|sd⁺ − distance| ≤ (4√2 + 1)ε on 100 random fields and the disk",
        bad + b == 0,
        format!("{} violations; worst error {:.3} (random), {:.3} (disk)", bad + b, worst, w),
        t,
    );

    // 5: comparison principle on shifted pairs, with the premise and every comparison exact.
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut viol = [0usize; 3];
    for k in 0..200u64 {
        let u = random_lipschitz_field(&g32, 1000 + k).with_saturation(1e6);
        let v = random_lipschitz_field(&g32, 5000 + k);
        let s: f64 = rng.gen_range(0.0..2.0);
        let up = u.with_values(u.values().iter().zip(v.values()).map(|(&x, &y)| add_up(x, s).max(y)).collect());
        assert!(u.values().iter().zip(up.values()).all(|(&a, &b)| !exceeds(a, s, b)));
        let (p, q) = (sd_plus(&u).unwrap().field, sd_plus(&up).unwrap().field);
        let (m, n) = (sd_minus(&u).unwrap().field, sd_minus(&up).unwrap().field);
        for i in 0..g32.len() {
            viol[0] += usize::from(exceeds(p.values()[i], s, q.values()[i]));
            viol[1] += usize::from(exceeds(m.values()[i], s, n.values()[i]));
            viol[2] += usize::from(m.values()[i] > p.values()[i]);
        }
    }
    out.report(
        5,
        "sd± monotone under shifts and sd⁻ ≤ sd⁺ on 200 pairs (exact comparisons)",
        viol.iter().sum::<usize>() == 0,
        format!(
            "violations: sd⁺ shift {}, sd⁻ shift {}, sd⁻ ≤ sd⁺ {}",
            viol[0], viol[1], viol[2]
        ),
        t,
    );

    // 6: every iterate is 1-Lipschitz, for each scheme and builtin kernel.
    let t = Instant::now();
    let g96 = GridGeometry::cube(96, 2, 1.0).unwrap();
    let small = disk_mask(&g96, &[48.0, 48.0], 40.0);
    let mut lines = Vec::new();
    let mut all_ok = true;
    for variant in [SchemeVariant::Linear, SchemeVariant::Nonlinear, SchemeVariant::Multiphase] {
        for kernel in [KernelSpec::Explicit { theta: 1.0 }, KernelSpec::Implicit { tau: 1.0 }, KernelSpec::Heat { tau: 1.0 }] {
            let name = kernel.name();
            let mut cfg = SchemeConfig::new(kernel, 1.0);
            cfg.variant = variant;
            cfg.redistance.saturation = 10.0;
            cfg.redistance.nonlinear_cap = 10.0;
            cfg.max_steps = Some(500);
            cfg.check_inequalities = false;
            let tr = run(&small, &cfg).unwrap();
            let checked = tr.records.iter().filter(|r| r.lipschitz_ok.is_some()).count();
            let ok = tr.all_lipschitz() && tr.terminal_error.is_none() && checked + 1 >= tr.records.len();
            all_ok &= ok;
            lines.push(format!("{variant:?}/{name}: {checked} checked{}", if ok { "" } else { " FAILED" }));
        }
    }
    out.report(6, "Lipschitz preserved over 500-step disk runs", all_ok, lines.join(", "), t);

    // 7: one-step ball scaling.
    let t = Instant::now();
    let mut ok = true;
    let mut lines = Vec::new();
    for fam in KernelFamily::builtin() {
        let rep = ball_step_scaling(&[1.0, 0.5, 0.25], &[10.0, 20.0, 50.0], fam).unwrap();
        ok &= rep.passes();
        lines.push(format!("{} ε^{:.2} R^-{:.2}", fam.name(), rep.eps_exponent, rep.inv_radius_exponent));
    }
    out.report(7, "ball excess exponents in [1.7, 2.3] (ε) and [0.7, 1.3] (1/R)", ok, lines.join(", "), t);

    // 8: kernel validation.
    let t = Instant::now();
    let g = GridGeometry::cube(32, 2, 1.0).unwrap();
    let mut ok = true;
    let mut lines = Vec::new();
    for spec in [KernelSpec::Explicit { theta: 1.0 }, KernelSpec::Implicit { tau: 5.0 }, KernelSpec::Heat { tau: 5.0 }] {
        let rep = validate_kernel(&spec.build(&g).unwrap());
        let pass = rep.passes
            && rep.mass_error <= 1e-10
            && rep.symmetry_error == 0.0
            && rep.positivity_violations == 0
            && rep.h_relative_error <= 1e-6
            && rep.symbol_bound_samples >= 1000
            && rep.symbol_bound_violations == 0
            && rep.consistency_decreasing;
        ok &= pass;
        lines.push(format!(
            "{}: mass {:.1e}, h {} ({:.1e} rel), {} bound samples, {} violations",
            spec.name(),
            rep.mass_error,
            rep.derived_h,
            rep.h_relative_error,
            rep.symbol_bound_samples,
            rep.symbol_bound_violations
        ));
    }
    out.report(8, "builtin kernels pass validation", ok, lines.join("; "), t);

    // 9: implicit kernel against a dense Neumann solve.
    let t = Instant::now();
    let mut worst = 0.0f64;
    for n in [8usize, 16] {
        let g = GridGeometry::cube(n, 2, 1.0).unwrap();
        let tau = 3.0;
        let k = implicit_euler_symbol(tau, 1.0, &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let rhs: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = k.prepare(&g).unwrap().apply_values(&rhs);
        let mut a = DMatrix::<f64>::identity(g.len(), g.len());
        for i in 0..g.len() {
            for axis in 0..2 {
                for d in [-1i64, 1] {
                    let j = g.neighbor(i, axis, d);
                    a[(i, i)] += tau;
                    a[(i, j)] -= tau;
                }
            }
        }
        let x = a.lu().solve(&DVector::from_vec(rhs)).unwrap();
        worst = worst.max(got.iter().zip(x.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max));
    }
    out.report(9, "implicit kernel matches dense (I − τΔ)u = g on 8² and 16²", worst <= 1e-8, format!("max error {worst:e}"), t);

    // 10: large implicit steps.
    let t = Instant::now();
    let mut ok = true;
    let mut lines = Vec::new();
    for tau in [5.0, 10.0, 20.0] {
        let tr = run(&benchmark_disk(), &disk_config(KernelSpec::Implicit { tau }, 30.0)).unwrap();
        let done = tr.terminal_error.is_none() && tr.extinction.is_some();
        let time = tr.extinction.as_ref().map(|e| e.time);
        ok &= done;
        if tau == 5.0 {
            ok &= time.is_some_and(|x| (x - 1250.0).abs() <= 125.0);
        }
        lines.push(format!("h={tau}: extinction t={time:?}"));
    }
    out.report(10, "implicit h ∈ {5, 10, 20} complete; h=5 extinction within 10% of 1250", ok, lines.join(", "), t);

    // 11: strip bounds.
    let t = Instant::now();
    let mut viol = 0;
    for seed in 0..50 {
        let u = random_lipschitz_field(&g32, 7000 + seed);
        viol += strip_equivalence(&u, &[5.0, 10.0, 20.0]).unwrap().violations();
    }
    out.report(11, "strip bounds hold over 50 fields × M ∈ {5, 10, 20}", viol == 0, format!("{viol} violations"), t);

    // 12: nonlinear scheme.
    let t = Instant::now();
    let mut cfg = disk_config(KernelSpec::Explicit { theta: 1.0 }, 30.0);
    cfg.variant = SchemeVariant::Nonlinear;
    cfg.redistance.nonlinear_cap = 15.0;
    cfg.check_lipschitz = true;
    let tr = run(&benchmark_disk(), &cfg).unwrap();
    let time = tr.extinction.as_ref().map(|e| e.time);
    out.report(
        12,
        "nonlinear disk extinction within 10% of 1250, Lipschitz every step",
        time.is_some_and(|x| (x - 1250.0).abs() <= 125.0) && tr.all_lipschitz(),
        format!("extinction t={time:?}, all Lipschitz: {}", tr.all_lipschitz()),
        t,
    );

    // 13: multiphase sanity.
    let t = Instant::now();
    let g64 = GridGeometry::cube(64, 2, 1.0).unwrap();
    let mask = disk_mask(&g64, &[32.0, 32.0], 20.0);
    let mut lin = SchemeConfig::new(KernelSpec::Explicit { theta: 1.0 }, 1.0);
    lin.redistance.variant = Variant::Average;
    lin.max_steps = Some(300);
    lin.snapshot_every = Some(1);
    lin.check_lipschitz = false;
    let mut multi = lin.clone();
    multi.variant = SchemeVariant::Multiphase;
    let a = run(&mask, &lin).unwrap();
    let b = run(&mask, &multi).unwrap();
    let mismatched = a
        .snapshots
        .iter()
        .zip(&b.snapshots)
        .filter(|(x, y)| x.field.values().iter().zip(y.field.values()).any(|(&s, &l)| (s < 0.0) != (l == 0.0)))
        .count();
    let two_ok = mismatched == 0 && a.snapshots.len() == b.snapshots.len() && a.snapshots.len() == 301;

    let sectors = PhaseMask::from_fn(g64.clone(), |p| {
        let ang = (p[1] as f64 - 31.5).atan2(p[0] as f64 - 31.5) + std::f64::consts::PI;
        ((ang / (2.0 * std::f64::consts::PI / 3.0)) as u32).min(2)
    });
    let mut init = SchemeConfig::new(KernelSpec::Explicit { theta: 1.0 }, 1.0);
    init.variant = SchemeVariant::Multiphase;
    init.max_steps = Some(0);
    let mut phases = run(&sectors, &init).unwrap().final_phases;
    let kernel = init.kernel.build(&g64).unwrap().prepare(&g64).unwrap();
    let mut bad_cells = 0;
    let mut unclaimed = 0;
    let mut steps = 0;
    for _ in 0..200 {
        bad_cells += partition_defects(&phases);
        unclaimed += (0..g64.len()).filter(|&i| phases.iter().all(|p| p.values()[i] > 0.0)).count();
        let next = step_multiphase(&phases, &kernel, &init.redistance).unwrap();
        phases = next.phases;
        steps += 1;
        if phases.len() < 3 {
            break;
        }
    }
    bad_cells += partition_defects(&phases);
    out.report(
        13,
        "L=2 multiphase matches the linear interface; L=3 sectors stay a partition",
        two_ok && bad_cells == 0 && phases.len() == 3,
        format!(
            "{mismatched} mismatched L=2 steps of {}; L=3: {bad_cells} partition defects over {steps} steps \
             ({unclaimed} cell-steps with every phase positive, resolved by the tie rule)",
            a.snapshots.len()
        ),
        t,
    );

    println!("SUMMARY: {} passed, {} failed {:?}", out.passed, out.failed.len(), out.failed);
}
