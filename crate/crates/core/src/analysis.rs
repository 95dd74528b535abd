//! Measurements on evolved fields: radius extraction, comparison with the exact
//! shrinking-ball law, one-step ball excess scaling, strip-vs-full checks and a
//! generator for random 1-Lipschitz test fields.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone::inf_convolution;
use crate::error::{Error, Result};
use crate::grid::{GridGeometry, PhaseMask, ScalarField};
use crate::kernels::KernelSpec;
use crate::redistance::{sd_plus_raw, sd_strip_raw, strip_sets};
use crate::scheme::EvolutionTrace;

/// `r(t) = sqrt(R0² − 2(N−1)t)`, the radius of a ball under mean curvature flow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusLaw {
    pub r0: f64,
    pub dim: usize,
}

impl RadiusLaw {
    pub fn new(r0: f64, dim: usize) -> Result<Self> {
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(Error::InvalidParameter(format!("initial radius must be positive, got {r0}")));
        }
        if dim < 2 {
            return Err(Error::InvalidParameter("the radius law needs N ≥ 2".into()));
        }
        Ok(Self { r0, dim })
    }

    pub fn extinction_time(&self) -> f64 {
        self.r0 * self.r0 / (2.0 * (self.dim - 1) as f64)
    }

    /// Predicted radius, zero from the extinction time on.
    pub fn radius(&self, t: f64) -> f64 {
        (self.r0 * self.r0 - 2.0 * (self.dim - 1) as f64 * t).max(0.0).sqrt()
    }
}

/// `sqrt(area / π)` with `area = ε² · #{u < 0}`.
pub fn radius_from_field(field: &ScalarField) -> Result<f64> {
    let g = field.geometry();
    if g.dim() != 2 {
        return Err(Error::WrongDimension { expected: 2, found: g.dim() });
    }
    let area = field.negative_count() as f64 * g.spacing() * g.spacing();
    Ok((area / PI).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawComparison {
    pub law: RadiusLaw,
    /// Largest `|r_measured − r_predicted|` over samples with `r_predicted ≥ 10ε`.
    pub max_deviation: f64,
    pub worst_time: Option<f64>,
    pub samples_compared: usize,
    pub tolerance: f64,
    pub predicted_extinction: f64,
    pub measured_extinction: Option<f64>,
    /// `(measured − predicted) / predicted`.
    pub extinction_relative_error: Option<f64>,
    pub within_tolerance: bool,
    /// The measured set vanishes no later than the law predicts.
    pub not_late: bool,
}

/// Compare `(time, radius)` samples against `law`; radii below `10 eps` are ignored.
pub fn compare_samples(samples: &[(f64, f64)], extinction: Option<f64>, eps: f64, law: RadiusLaw) -> LawComparison {
    let mut max_deviation = 0.0f64;
    let mut worst_time = None;
    let mut compared = 0;
    for &(t, r) in samples {
        let p = law.radius(t);
        if p < 10.0 * eps {
            continue;
        }
        compared += 1;
        let d = (r - p).abs();
        if d > max_deviation || worst_time.is_none() {
            max_deviation = max_deviation.max(d);
            worst_time = Some(t);
        }
    }
    let predicted = law.extinction_time();
    let tolerance = 2.0 * eps;
    LawComparison {
        law,
        max_deviation,
        worst_time,
        samples_compared: compared,
        tolerance,
        predicted_extinction: predicted,
        measured_extinction: extinction,
        extinction_relative_error: extinction.map(|t| (t - predicted) / predicted),
        within_tolerance: max_deviation <= tolerance,
        not_late: extinction.is_some_and(|t| t <= predicted),
    }
}

pub fn compare_to_law(trace: &EvolutionTrace, law: RadiusLaw) -> LawComparison {
    let samples: Vec<(f64, f64)> = trace.records.iter().map(|r| (r.time, r.radius)).collect();
    let extinction = trace.extinction.as_ref().map(|e| e.time);
    compare_samples(&samples, extinction, trace.geometry.spacing(), law)
}

/// Kernels indexed by the spacing, for sweeps over `ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelFamily {
    /// Explicit Euler stencil, `h = θε²/(2N)`.
    Explicit { theta: f64 },
    /// Implicit Euler with `τ = c ε²`.
    Implicit { c: f64 },
    /// Heat semigroup with `τ = c ε²`.
    Heat { c: f64 },
}

impl KernelFamily {
    pub fn builtin() -> [KernelFamily; 3] {
        [KernelFamily::Explicit { theta: 1.0 }, KernelFamily::Implicit { c: 1.0 }, KernelFamily::Heat { c: 1.0 }]
    }

    pub fn at(&self, eps: f64) -> KernelSpec {
        match *self {
            KernelFamily::Explicit { theta } => KernelSpec::Explicit { theta },
            KernelFamily::Implicit { c } => KernelSpec::Implicit { tau: c * eps * eps },
            KernelFamily::Heat { c } => KernelSpec::Heat { tau: c * eps * eps },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Explicit { .. } => "explicit",
            KernelFamily::Implicit { .. } => "implicit",
            KernelFamily::Heat { .. } => "heat",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingSample {
    pub eps: f64,
    pub radius: f64,
    pub h: f64,
    /// `max_i (sd_i − (|i| − R))` over cells with `||i| − R| ≤ band`.
    pub excess: f64,
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub family: KernelFamily,
    pub samples: Vec<ScalingSample>,
    /// Fit of `excess ≈ C ε^a R^{−b}`.
    pub constant: f64,
    pub eps_exponent: f64,
    pub inv_radius_exponent: f64,
    pub eps_exponent_ok: bool,
    pub inv_radius_exponent_ok: bool,
}

impl ScalingReport {
    pub fn passes(&self) -> bool {
        self.eps_exponent_ok && self.inv_radius_exponent_ok
    }
}

/// Cells within this many `ε` of the circle are sampled for the excess.
const BALL_BAND_CELLS: f64 = 6.0;

/// One diffuse-and-redistance step applied to `u_i = |i| − R`, measuring the excess over `|i| − R`.
pub fn ball_step_excess(eps: f64, radius: f64, family: KernelFamily) -> Result<ScalingSample> {
    if !(eps > 0.0 && radius > 0.0) {
        return Err(Error::InvalidParameter("spacing and radius must be positive".into()));
    }
    if eps > radius / 8.0 {
        return Err(Error::HypothesisViolated { eps, limit: radius / 8.0 });
    }
    // Sources down to depth R/2 stay unsaturated, so lattice points close to the
    // radial segment are available to the inf-convolution.
    let cap = 0.5 * radius + 4.0 * eps;
    let half = ((radius + cap + 4.0 * eps) / eps).ceil() as usize;
    let n = 2 * half + 1;
    let geom = GridGeometry::cube(n, 2, eps)?;
    let c = half as f64;
    let norm = |p: &[usize]| eps * ((p[0] as f64 - c).powi(2) + (p[1] as f64 - c).powi(2)).sqrt();
    let u = ScalarField::from_fn(geom.clone(), cap, |p| (norm(p) - radius).clamp(-cap, cap));

    let kernel = family.at(eps).build(&geom)?;
    let h = kernel.derived_h();
    let diffused = kernel.prepare(&geom)?.apply_values(u.values());
    let (sd, _) = sd_plus_raw(&geom, &diffused, cap);

    let band = BALL_BAND_CELLS * eps;
    let mut excess = f64::NEG_INFINITY;
    let mut cells = 0;
    let mut p = vec![0usize; 2];
    for (i, &v) in sd.iter().enumerate() {
        geom.coords_into(i, &mut p);
        let exact = norm(&p) - radius;
        if exact.abs() <= band {
            cells += 1;
            excess = excess.max(v - exact);
        }
    }
    Ok(ScalingSample { eps, radius, h, excess, cells })
}

/// Sweep `ball_step_excess` and fit `log e = log C + a log ε − b log R` by least squares.
pub fn ball_step_scaling(eps_list: &[f64], radius_list: &[f64], family: KernelFamily) -> Result<ScalingReport> {
    let mut points = Vec::new();
    for &r in radius_list {
        for &e in eps_list {
            points.push((e, r));
        }
    }
    let samples: Vec<ScalingSample> =
        points.par_iter().map(|&(e, r)| ball_step_excess(e, r, family)).collect::<Result<_>>()?;
    let (constant, a, b) = fit_power_law(&samples)?;
    Ok(ScalingReport {
        family,
        samples,
        constant,
        eps_exponent: a,
        inv_radius_exponent: b,
        eps_exponent_ok: (1.7..=2.3).contains(&a),
        inv_radius_exponent_ok: (0.7..=1.3).contains(&b),
    })
}

fn fit_power_law(samples: &[ScalingSample]) -> Result<(f64, f64, f64)> {
    if let Some(s) = samples.iter().find(|s| !(s.excess > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "excess must be positive to fit a power law (ε = {}, R = {}, excess = {})",
            s.eps, s.radius, s.excess
        )));
    }
    // Normal equations for y = c0 + a x1 + b x2 with x1 = log ε, x2 = −log R.
    let rows: Vec<[f64; 3]> = samples.iter().map(|s| [1.0, s.eps.ln(), -s.radius.ln()]).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.excess.ln()).collect();
    let mut m = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for (x, y) in rows.iter().zip(&ys) {
        for i in 0..3 {
            rhs[i] += x[i] * y;
            for j in 0..3 {
                m[i][j] += x[i] * x[j];
            }
        }
    }
    let sol = solve3(m, rhs)
        .ok_or_else(|| Error::InvalidParameter("scaling sweep needs at least two spacings and two radii".into()))?;
    Ok((sol[0].exp(), sol[1], sol[2]))
}

fn solve3(mut m: [[f64; 3]; 3], mut r: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-12 {
            return None;
        }
        m.swap(col, piv);
        r.swap(col, piv);
        for row in 0..3 {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..3 {
                    m[row][k] -= f * m[col][k];
                }
                r[row] -= f * r[col];
            }
        }
    }
    Some([r[0] / m[0][0], r[1] / m[1][1], r[2] / m[2][2]])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripSample {
    pub m: f64,
    pub strip_cells: usize,
    /// `max (sd^{M,+} − sd⁺)` over the strip, against `4Nε²/M`.
    pub above_full: f64,
    pub above_full_bound: f64,
    pub above_full_violations: usize,
    /// `max |sd^{M,+} − d|` over the strip, against `√N ε`.
    pub from_distance: f64,
    pub from_distance_bound: f64,
    pub from_distance_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripReport {
    pub samples: Vec<StripSample>,
}

impl StripReport {
    pub fn violations(&self) -> usize {
        self.samples.iter().map(|s| s.above_full_violations + s.from_distance_violations).sum()
    }
}

/// Signed distance between the two sign classes of `u`, negative where `u < 0`:
/// `d_i = dist(i, {u < 0}) − dist(i, {u ≥ 0})`.
pub fn class_distance(geom: &GridGeometry, u: &[f64]) -> Vec<f64> {
    let (neg, pos): (Vec<usize>, Vec<usize>) = (0..u.len()).partition(|&i| u[i] < 0.0);
    let to_neg = inf_convolution(geom, &neg, &vec![0.0; neg.len()], &pos, f64::INFINITY);
    let to_pos = inf_convolution(geom, &pos, &vec![0.0; pos.len()], &neg, f64::INFINITY);
    let mut d = vec![0.0; u.len()];
    for (&i, v) in pos.iter().zip(to_neg) {
        d[i] = v;
    }
    for (&i, v) in neg.iter().zip(to_pos) {
        d[i] = -v;
    }
    d
}

/// Check strip redistancing against the full operator and the exact class distance
/// on the strip `S_M{u<0} ∪ S_M{u≥0}`, for each width in `widths`.
pub fn strip_equivalence(u: &ScalarField, widths: &[f64]) -> Result<StripReport> {
    let geom = u.geometry();
    let eps = geom.spacing();
    let dim = geom.dim() as f64;
    let v = u.values();
    let (neg, pos): (Vec<usize>, Vec<usize>) = (0..v.len()).partition(|&i| v[i] < 0.0);
    if neg.is_empty() || pos.is_empty() {
        return Err(Error::InvalidParameter("strip comparison needs both sign classes".into()));
    }
    // Saturation large enough that it never binds.
    let cap = f64::INFINITY;
    let (full, _) = sd_plus_raw(geom, v, cap);
    let d = class_distance(geom, v);
    // Round-off allowance for the bound comparisons.
    let slack = 1e-9 * eps;
    let mut samples = Vec::new();
    for &m in widths {
        if !(m > eps) {
            return Err(Error::InvalidParameter(format!("strip width must exceed the spacing, got {m}")));
        }
        let (strip, _) = sd_strip_raw(geom, v, m, cap);
        let (sn, sp) = strip_sets(geom, &neg, &pos, m);
        let b1 = 4.0 * dim * eps * eps / m;
        let b2 = dim.sqrt() * eps;
        let mut s = StripSample {
            m,
            strip_cells: sn.len() + sp.len(),
            above_full: f64::NEG_INFINITY,
            above_full_bound: b1,
            above_full_violations: 0,
            from_distance: 0.0,
            from_distance_bound: b2,
            from_distance_violations: 0,
        };
        for &i in sn.iter().chain(&sp) {
            let e1 = strip[i] - full[i];
            let e2 = (strip[i] - d[i]).abs();
            s.above_full = s.above_full.max(e1);
            s.from_distance = s.from_distance.max(e2);
            s.above_full_violations += usize::from(e1 > b1 + slack);
            s.from_distance_violations += usize::from(e2 > b2 + slack);
        }
        samples.push(s);
    }
    Ok(StripReport { samples })
}

/// Deterministic random 1-Lipschitz field with both signs present.
///
/// Uniform values in `[0, 8ε]` are replaced by their lower cone envelope
/// `min_j r_j + |i − j|` and shifted so the median cell sits at zero.
pub fn random_lipschitz_field(geometry: &GridGeometry, seed: u64) -> ScalarField {
    let eps = geometry.spacing();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..geometry.len()).map(|_| rng.gen_range(0.0..8.0 * eps)).collect();
    let all: Vec<usize> = (0..geometry.len()).collect();
    let env = inf_convolution(geometry, &all, &raw, &all, f64::INFINITY);
    let mut sorted = env.clone();
    sorted.sort_by(f64::total_cmp);
    let mut center = sorted[sorted.len() / 2];
    if sorted[0] == center {
        // All cells at or above the median: move the cut up to the next distinct value.
        center = sorted.iter().copied().find(|&x| x > sorted[0]).unwrap_or(center);
    }
    let values = env.iter().map(|&x| x - center).collect();
    ScalarField::new(geometry.clone(), values, 30.0 * eps).expect("values match geometry")
}

/// Cells whose centers lie strictly within `radius` of `center` (in cell units) are
/// inside (label 0); the rest get label 1.
pub fn disk_mask(geometry: &GridGeometry, center: &[f64], radius: f64) -> PhaseMask {
    PhaseMask::from_fn(geometry.clone(), |p| {
        let r2: f64 = p.iter().zip(center).map(|(&x, &c)| (x as f64 - c).powi(2)).sum();
        u32::from(r2.sqrt() >= radius)
    })
}

/// `|x − c| − R` in physical units, clamped to `±saturation`.
pub fn disk_distance(geometry: &GridGeometry, center: &[f64], radius: f64, saturation: f64) -> ScalarField {
    let eps = geometry.spacing();
    ScalarField::from_fn(geometry.clone(), saturation, |p| {
        let r2: f64 = p.iter().zip(center).map(|(&x, &c)| (x as f64 - c).powi(2)).sum();
        (eps * r2.sqrt() - radius).clamp(-saturation, saturation)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{lipschitz_check, LipschitzOptions};

    #[test]
    fn law_basics() {
        let law = RadiusLaw::new(50.0, 2).unwrap();
        assert_eq!(law.radius(0.0), 50.0);
        assert_eq!(law.extinction_time(), 1250.0);
        assert!(law.radius(100.0) < law.radius(50.0));
        assert_eq!(law.radius(2000.0), 0.0);
        assert!(RadiusLaw::new(0.0, 2).is_err());
        assert!(RadiusLaw::new(1.0, 1).is_err());
    }

    #[test]
    fn analytic_samples_have_zero_deviation() {
        let law = RadiusLaw::new(50.0, 2).unwrap();
        let samples: Vec<(f64, f64)> = (0..5000).map(|k| (0.25 * k as f64, law.radius(0.25 * k as f64))).collect();
        let c = compare_samples(&samples, Some(1250.0), 1.0, law);
        assert_eq!(c.max_deviation, 0.0);
        assert_eq!(c.extinction_relative_error, Some(0.0));
        assert!(c.within_tolerance && c.not_late);
    }

    #[test]
    fn radius_of_simple_fields() {
        let g = GridGeometry::cube(8, 2, 1.0).unwrap();
        assert_eq!(radius_from_field(&ScalarField::constant(g.clone(), 1.0, 30.0)).unwrap(), 0.0);
        let one = ScalarField::from_fn(g, 30.0, |p| if p == [3, 3] { -0.5 } else { 0.5 });
        assert!((radius_from_field(&one).unwrap() - (1.0 / PI).sqrt()).abs() < 1e-12);
        let g3 = GridGeometry::cube(4, 3, 1.0).unwrap();
        assert!(matches!(
            radius_from_field(&ScalarField::constant(g3, 1.0, 30.0)),
            Err(Error::WrongDimension { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn disk_radius_matches_lattice_count() {
        let g = GridGeometry::cube(128, 2, 1.0).unwrap();
        let f = disk_distance(&g, &[64.0, 64.0], 50.0, 30.0);
        let count = (0..128i64)
            .flat_map(|x| (0..128i64).map(move |y| (x, y)))
            .filter(|&(x, y)| (((x - 64).pow(2) + (y - 64).pow(2)) as f64).sqrt() < 50.0)
            .count();
        assert_eq!(f.negative_count(), count);
        let r = radius_from_field(&f).unwrap();
        assert!((r - 49.97).abs() <= 0.15, "{r}");
    }

    #[test]
    fn random_fields_are_lipschitz_mixed_and_deterministic() {
        let g = GridGeometry::cube(32, 2, 1.0).unwrap();
        for seed in 0..20 {
            let f = random_lipschitz_field(&g, seed);
            assert!(lipschitz_check(&f, &LipschitzOptions::default()).lipschitz);
            let n = f.negative_count();
            assert!(n > 0 && n < g.len());
        }
        assert_eq!(random_lipschitz_field(&g, 7), random_lipschitz_field(&g, 7));
    }

    #[test]
    fn ball_hypothesis_enforced() {
        assert!(matches!(
            ball_step_excess(2.0, 10.0, KernelFamily::Explicit { theta: 1.0 }),
            Err(Error::HypothesisViolated { .. })
        ));
    }

    #[test]
    fn power_law_fit_recovers_exponents() {
        let samples: Vec<ScalingSample> = [(1.0, 10.0), (0.5, 10.0), (1.0, 40.0), (0.25, 20.0)]
            .iter()
            .map(|&(eps, radius)| ScalingSample { eps, radius, h: 0.0, excess: 3.0 * eps * eps / radius, cells: 1 })
            .collect();
        let (c, a, b) = fit_power_law(&samples).unwrap();
        assert!((c - 3.0).abs() < 1e-9 && (a - 2.0).abs() < 1e-9 && (b - 1.0).abs() < 1e-9);
    }

    #[test]
    fn strip_wider_than_box_matches_full() {
        let g = GridGeometry::cube(24, 2, 1.0).unwrap();
        let u = random_lipschitz_field(&g, 3);
        let rep = strip_equivalence(&u, &[100.0]).unwrap();
        assert!(rep.samples[0].above_full.abs() < 1e-12);
    }
}
