//! Redistancing by inf/sup-convolution with the Euclidean norm.
//!
//! ```text
//! d⁺[u]_i  = inf_{u_j < 0}  u_j  + |j − i|
//! sd⁺[u]_i = sup_{u_j ≥ 0}  d⁺_j − |j − i|
//! ```
//!
//! and the mirrored `sd⁻[u] = −sd⁺[−u]`. Values are truncated at `±d̄`; cells
//! whose input already lies beyond `±d̄` are not searched, which gives the same
//! result as clamping the untruncated output.

use serde::{Deserialize, Serialize};

use crate::cone::inf_convolution;
use crate::error::{Error, Result, Sign};
use crate::grid::{lipschitz_check, GridGeometry, LipschitzOptions, ScalarField, LIPSCHITZ_TOL};

/// Largest admissible cap for the tanh profile.
pub const MAX_NONLINEAR_CAP: f64 = 15.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Plus,
    Minus,
    #[serde(alias = "avg")]
    Average,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StripWidth {
    #[default]
    Full,
    Width(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedistanceConfig {
    pub variant: Variant,
    pub strip: StripWidth,
    /// Truncation level `d̄` in length units.
    pub saturation: f64,
    /// Truncation level `d̄_γ` used by the nonlinear scheme.
    pub nonlinear_cap: f64,
}

impl RedistanceConfig {
    /// Defaults for a grid of spacing `eps`: `d̄ = 30ε`, `d̄_γ = min(15ε, 15)`.
    pub fn for_spacing(eps: f64) -> Self {
        Self {
            variant: Variant::Plus,
            strip: StripWidth::Full,
            saturation: 30.0 * eps,
            nonlinear_cap: (15.0 * eps).min(MAX_NONLINEAR_CAP),
        }
    }

    pub fn validate(&self, eps: f64) -> Result<()> {
        if !(self.saturation > 0.0) {
            return Err(Error::InvalidParameter(format!("saturation must be positive, got {}", self.saturation)));
        }
        if !(self.nonlinear_cap > 0.0 && self.nonlinear_cap <= MAX_NONLINEAR_CAP) {
            return Err(Error::InvalidParameter(format!(
                "nonlinear cap must lie in (0, {MAX_NONLINEAR_CAP}], got {}",
                self.nonlinear_cap
            )));
        }
        if let StripWidth::Width(m) = self.strip {
            if !(m > eps) {
                return Err(Error::InvalidParameter(format!("strip width must exceed the spacing {eps}, got {m}")));
            }
        }
        Ok(())
    }
}

/// Why a redistanced field came out saturated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degeneracy {
    /// The named sign class of the input is empty.
    Empty(Sign),
    EmptyStrip,
}

#[derive(Clone, Debug)]
pub struct Redistanced {
    pub field: ScalarField,
    pub degenerate: Option<Degeneracy>,
}

fn require_lipschitz(u: &ScalarField) -> Result<()> {
    let rep = lipschitz_check(u, &LipschitzOptions::default());
    if rep.lipschitz {
        Ok(())
    } else {
        let (a, b) = rep.worst_pair.unwrap_or((0, 0));
        Err(Error::NotLipschitz { a, b, excess: rep.worst_excess })
    }
}

/// `max(v, floor)` when `v` undershoots by at most `slack`, else `v`.
///
/// For Lipschitz input `d⁺ ≥ u` on `{u ≥ 0}` and `sd⁺ ≤ u` on `{u < 0}` hold
/// exactly; snapping round-off undershoots keeps them exact in floating point,
/// which makes `sd⁻ ≤ sd⁺` hold bit for bit. Larger gaps only occur for
/// non-Lipschitz input (the multiphase competitor field) and are left alone.
#[inline]
fn snap_above(v: f64, floor: f64, slack: f64) -> f64 {
    if v < floor && floor - v <= slack {
        floor
    } else {
        v
    }
}

fn split(u: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut neg = Vec::new();
    let mut pos = Vec::new();
    for (i, &v) in u.iter().enumerate() {
        if v < 0.0 {
            neg.push(i);
        } else {
            pos.push(i);
        }
    }
    (neg, pos)
}

/// `d⁺` truncated at `cap`; `None` when `{u < 0}` is empty.
pub(crate) fn d_plus_raw(geom: &GridGeometry, u: &[f64], cap: f64) -> Option<Vec<f64>> {
    let (neg, _) = split(u);
    if neg.is_empty() {
        return None;
    }
    Some(d_plus_from(geom, u, &neg, cap))
}

fn d_plus_from(geom: &GridGeometry, u: &[f64], sources: &[usize], cap: f64) -> Vec<f64> {
    let vals: Vec<f64> = sources.iter().map(|&j| u[j]).collect();
    let targets: Vec<usize> = (0..u.len()).filter(|&i| u[i] >= 0.0 && u[i] < cap).collect();
    let found = inf_convolution(geom, sources, &vals, &targets, cap);
    let mut out: Vec<f64> = u.iter().map(|&v| if v < 0.0 { v.max(-cap) } else { cap }).collect();
    let slack = LIPSCHITZ_TOL * geom.spacing();
    for (&t, v) in targets.iter().zip(found) {
        out[t] = snap_above(v, u[t], slack);
    }
    out
}

/// `sd⁺` truncated at `±cap`.
pub(crate) fn sd_plus_raw(geom: &GridGeometry, u: &[f64], cap: f64) -> (Vec<f64>, Option<Degeneracy>) {
    let (neg, pos) = split(u);
    if neg.is_empty() {
        return (vec![cap; u.len()], Some(Degeneracy::Empty(Sign::Negative)));
    }
    if pos.is_empty() {
        return (vec![-cap; u.len()], Some(Degeneracy::Empty(Sign::Positive)));
    }
    let d = d_plus_from(geom, u, &neg, cap);
    let vals: Vec<f64> = pos.iter().map(|&j| -d[j]).collect();
    let targets: Vec<usize> = neg.iter().copied().filter(|&i| u[i] > -cap).collect();
    let found = inf_convolution(geom, &pos, &vals, &targets, cap);
    let slack = LIPSCHITZ_TOL * geom.spacing();
    let mut out: Vec<f64> = (0..u.len()).map(|i| if u[i] < 0.0 { -cap } else { d[i] }).collect();
    for (&t, v) in targets.iter().zip(found) {
        out[t] = -snap_above(v, -u[t], slack);
    }
    (out, None)
}

fn flip(flag: Option<Degeneracy>) -> Option<Degeneracy> {
    flag.map(|d| match d {
        Degeneracy::Empty(Sign::Negative) => Degeneracy::Empty(Sign::Positive),
        Degeneracy::Empty(Sign::Positive) => Degeneracy::Empty(Sign::Negative),
        other => other,
    })
}

fn negated(u: &[f64]) -> Vec<f64> {
    u.iter().map(|&v| -v).collect()
}

pub(crate) fn sd_minus_raw(geom: &GridGeometry, u: &[f64], cap: f64) -> (Vec<f64>, Option<Degeneracy>) {
    let (v, flag) = sd_plus_raw(geom, &negated(u), cap);
    (negated(&v), flip(flag))
}

pub(crate) fn sd_average_raw(geom: &GridGeometry, u: &[f64], cap: f64) -> (Vec<f64>, Option<Degeneracy>) {
    let (p, fp) = sd_plus_raw(geom, u, cap);
    let (m, fm) = sd_minus_raw(geom, u, cap);
    let avg = p.iter().zip(&m).map(|(a, b)| 0.5 * (a + b)).collect();
    (avg, fp.or(fm))
}

/// Strip-restricted redistancing.
///
/// On `{u ≥ 0}` the result is `d^{M,+}_i = inf_{j ∈ S_M{u<0}} u_j + |j − i|`; on
/// `{u < 0}` it is `sup_{j ∈ S_M{u≥0}} d^{M,+}_j − |j − i|`, where `S_M E` is the
/// set of cells of `E` within distance `M` of the complement. Signs are preserved
/// everywhere, and inside the strip the result agrees with the two-sided formula.
pub(crate) fn sd_strip_raw(geom: &GridGeometry, u: &[f64], m: f64, cap: f64) -> (Vec<f64>, Option<Degeneracy>) {
    let (neg, pos) = split(u);
    if neg.is_empty() {
        return (vec![cap; u.len()], Some(Degeneracy::EmptyStrip));
    }
    if pos.is_empty() {
        return (vec![-cap; u.len()], Some(Degeneracy::EmptyStrip));
    }
    let (strip_neg, strip_pos) = strip_sets(geom, &neg, &pos, m);
    let d = d_plus_from(geom, u, &strip_neg, cap);

    let vals: Vec<f64> = strip_pos.iter().map(|&j| -d[j]).collect();
    let mut in_strip = vec![false; u.len()];
    for &i in &strip_neg {
        in_strip[i] = true;
    }
    // Inside the strip the result is at most u, so cells below -cap stay saturated.
    let targets: Vec<usize> = neg.iter().copied().filter(|&i| !in_strip[i] || u[i] > -cap).collect();
    let found = inf_convolution(geom, &strip_pos, &vals, &targets, cap);
    let slack = LIPSCHITZ_TOL * geom.spacing();
    let mut out: Vec<f64> = (0..u.len()).map(|i| if u[i] < 0.0 { -cap } else { d[i] }).collect();
    for (&t, v) in targets.iter().zip(found) {
        out[t] = if in_strip[t] { -snap_above(v, -u[t], slack) } else { -v };
    }
    (out, None)
}

/// `S_M{u<0}` and `S_M{u≥0}` as index lists.
pub(crate) fn strip_sets(geom: &GridGeometry, neg: &[usize], pos: &[usize], m: f64) -> (Vec<usize>, Vec<usize>) {
    let cap = m + geom.spacing();
    let to_pos = inf_convolution(geom, pos, &vec![0.0; pos.len()], neg, cap);
    let to_neg = inf_convolution(geom, neg, &vec![0.0; neg.len()], pos, cap);
    let sn = neg.iter().zip(&to_pos).filter(|(_, &d)| d <= m).map(|(&i, _)| i).collect();
    let sp = pos.iter().zip(&to_neg).filter(|(_, &d)| d <= m).map(|(&i, _)| i).collect();
    (sn, sp)
}

/// Configured redistancing without the Lipschitz precondition check.
pub(crate) fn redistance_values(
    geom: &GridGeometry,
    u: &[f64],
    variant: Variant,
    strip: StripWidth,
    cap: f64,
) -> (Vec<f64>, Option<Degeneracy>) {
    match (strip, variant) {
        (StripWidth::Full, Variant::Plus) => sd_plus_raw(geom, u, cap),
        (StripWidth::Full, Variant::Minus) => sd_minus_raw(geom, u, cap),
        (StripWidth::Full, Variant::Average) => sd_average_raw(geom, u, cap),
        (StripWidth::Width(m), Variant::Plus) => sd_strip_raw(geom, u, m, cap),
        (StripWidth::Width(m), Variant::Minus) => {
            let (v, f) = sd_strip_raw(geom, &negated(u), m, cap);
            (negated(&v), f)
        }
        (StripWidth::Width(m), Variant::Average) => {
            let (p, f1) = sd_strip_raw(geom, u, m, cap);
            let (q, f2) = sd_strip_raw(geom, &negated(u), m, cap);
            (p.iter().zip(&q).map(|(a, b)| 0.5 * (a - b)).collect(), f1.or(f2))
        }
    }
}

fn wrap(u: &ScalarField, values: Vec<f64>, degenerate: Option<Degeneracy>) -> Redistanced {
    Redistanced { field: u.with_values(values), degenerate }
}

/// `d⁺[u]`, saturated at `+d̄` when `{u < 0}` is empty.
pub fn d_plus(u: &ScalarField) -> Result<Redistanced> {
    require_lipschitz(u)?;
    let cap = u.saturation();
    Ok(match d_plus_raw(u.geometry(), u.values(), cap) {
        Some(v) => wrap(u, v, None),
        None => wrap(u, vec![cap; u.values().len()], Some(Degeneracy::Empty(Sign::Negative))),
    })
}

/// `d⁻[u] = −d⁺[−u]`, i.e. `sup_{u_j > 0} u_j − |j − i|`.
pub fn d_minus(u: &ScalarField) -> Result<Redistanced> {
    require_lipschitz(u)?;
    let cap = u.saturation();
    let nu = negated(u.values());
    Ok(match d_plus_raw(u.geometry(), &nu, cap) {
        Some(v) => wrap(u, negated(&v), None),
        None => wrap(u, vec![-cap; nu.len()], Some(Degeneracy::Empty(Sign::Positive))),
    })
}

pub fn sd_plus(u: &ScalarField) -> Result<Redistanced> {
    require_lipschitz(u)?;
    let (v, f) = sd_plus_raw(u.geometry(), u.values(), u.saturation());
    Ok(wrap(u, v, f))
}

pub fn sd_minus(u: &ScalarField) -> Result<Redistanced> {
    require_lipschitz(u)?;
    let (v, f) = sd_minus_raw(u.geometry(), u.values(), u.saturation());
    Ok(wrap(u, v, f))
}

/// `(sd⁺ + sd⁻) / 2`.
pub fn sd_average(u: &ScalarField) -> Result<Redistanced> {
    require_lipschitz(u)?;
    let (v, f) = sd_average_raw(u.geometry(), u.values(), u.saturation());
    Ok(wrap(u, v, f))
}

pub fn sd_strip(u: &ScalarField, m: f64) -> Result<Redistanced> {
    if !(m > u.geometry().spacing()) {
        return Err(Error::InvalidParameter(format!("strip width must exceed the spacing, got {m}")));
    }
    require_lipschitz(u)?;
    let (v, f) = sd_strip_raw(u.geometry(), u.values(), m, u.saturation());
    Ok(wrap(u, v, f))
}

/// Redistance with the configured variant; the result carries `cfg.saturation`.
pub fn redistance(u: &ScalarField, cfg: &RedistanceConfig) -> Result<Redistanced> {
    cfg.validate(u.geometry().spacing())?;
    require_lipschitz(u)?;
    let (v, f) = redistance_values(u.geometry(), u.values(), cfg.variant, cfg.strip, cfg.saturation);
    Ok(Redistanced { field: u.with_values(v).with_saturation(cfg.saturation), degenerate: f })
}

/// `γ(s) = tanh(s)`.
#[inline]
pub fn gamma(s: f64) -> f64 {
    s.tanh()
}

/// `atanh` with its argument clamped to `[−1 + 10⁻¹², 1 − 10⁻¹²]`.
#[inline]
pub fn gamma_inv(v: f64) -> f64 {
    const DELTA: f64 = 1e-12;
    v.clamp(-1.0 + DELTA, 1.0 - DELTA).atanh()
}

/// A tanh profile `v = γ(s)` stored as the pair `(1 + v, 1 − v)`.
///
/// Near `v = ±1` one of the two is tiny, and storing it directly keeps its
/// relative precision, so `γ⁻¹` stays accurate well past the point where
/// `tanh` rounds to `±1`. Convolution with a mass-one kernel is affine in `v`
/// and can be applied to both components independently.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileField {
    geometry: GridGeometry,
    plus: Vec<f64>,
    minus: Vec<f64>,
}

impl ProfileField {
    /// `γ(u)` for a distance-valued field.
    pub fn from_distance(u: &ScalarField) -> Self {
        let plus = u.values().iter().map(|&s| 2.0 / (1.0 + (-2.0 * s).exp())).collect();
        let minus = u.values().iter().map(|&s| 2.0 / (1.0 + (2.0 * s).exp())).collect();
        Self { geometry: u.geometry().clone(), plus, minus }
    }

    /// A profile from raw values in `[−1, 1]`.
    pub fn from_values(geometry: GridGeometry, values: &[f64]) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::GeometryMismatch);
        }
        let plus = values.iter().map(|&v| 1.0 + v.clamp(-1.0, 1.0)).collect();
        let minus = values.iter().map(|&v| 1.0 - v.clamp(-1.0, 1.0)).collect();
        Ok(Self { geometry, plus, minus })
    }

    pub(crate) fn from_parts(geometry: GridGeometry, plus: Vec<f64>, minus: Vec<f64>) -> Self {
        Self { geometry, plus, minus }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn plus(&self) -> &[f64] {
        &self.plus
    }

    pub fn minus(&self) -> &[f64] {
        &self.minus
    }

    pub fn values(&self) -> Vec<f64> {
        self.plus.iter().zip(&self.minus).map(|(p, m)| 0.5 * (p - m)).collect()
    }

    /// `γ⁻¹` of the profile, clamped to `[−cap, cap]`.
    pub fn inverse(&self, cap: f64) -> Vec<f64> {
        const TINY: f64 = 1e-300;
        self.plus
            .iter()
            .zip(&self.minus)
            .map(|(&p, &m)| (0.5 * (p.max(TINY) / m.max(TINY)).ln()).clamp(-cap, cap))
            .collect()
    }
}

/// `sd[γ⁻¹(v)]` for a profile `v`, truncated at `±d̄_γ`.
pub fn nonlinear_redistance(profile: &ProfileField, cfg: &RedistanceConfig) -> Redistanced {
    let cap = cfg.nonlinear_cap;
    let w = profile.inverse(cap);
    let (v, degenerate) = redistance_values(&profile.geometry, &w, cfg.variant, cfg.strip, cap);
    let field = ScalarField::new(profile.geometry.clone(), v, cap).expect("profile geometry");
    Redistanced { field, degenerate }
}
