//! Uniform grids `εZ^N` restricted to a box, scalar fields and phase masks.
//!
//! The box uses a Neumann mirror convention: a neighbor index that leaves the
//! box is reflected across the face, so `-1 -> 0` and `n -> n - 1`. This is the
//! even extension that the cosine transform diagonalizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default saturation level, in cells.
pub const DEFAULT_SATURATION_CELLS: f64 = 30.0;

/// Absolute tolerance used by Lipschitz checks, in units of the spacing.
pub const LIPSCHITZ_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    spacing: f64,
    extents: Vec<usize>,
    strides: Vec<usize>,
}

impl GridGeometry {
    pub fn new(extents: &[usize], spacing: f64) -> Result<Self> {
        if extents.is_empty() {
            return Err(Error::InvalidGeometry("dimension must be at least 1".into()));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidGeometry(format!("spacing must be positive, got {spacing}")));
        }
        if let Some(n) = extents.iter().find(|&&n| n < 3) {
            return Err(Error::InvalidGeometry(format!("every extent must be at least 3, got {n}")));
        }
        let mut strides = Vec::with_capacity(extents.len());
        let mut s = 1usize;
        for &n in extents {
            strides.push(s);
            s = s
                .checked_mul(n)
                .ok_or_else(|| Error::InvalidGeometry("grid too large".into()))?;
        }
        Ok(Self { spacing, extents: extents.to_vec(), strides })
    }

    /// An `n^dim` cube.
    pub fn cube(n: usize, dim: usize, spacing: f64) -> Result<Self> {
        Self::new(&vec![n; dim], spacing)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    #[inline]
    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    #[inline]
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.extents.iter().product()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.dim());
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    pub fn coords_into(&self, mut flat: usize, out: &mut [usize]) {
        for (a, &n) in self.extents.iter().enumerate() {
            out[a] = flat % n;
            flat /= n;
        }
    }

    pub fn coords(&self, flat: usize) -> Vec<usize> {
        let mut c = vec![0; self.dim()];
        self.coords_into(flat, &mut c);
        c
    }

    /// Mirror an arbitrary integer coordinate into `[0, n)`.
    #[inline]
    pub fn reflect(a: i64, n: usize) -> usize {
        let period = 2 * n as i64;
        let m = a.rem_euclid(period);
        if m < n as i64 {
            m as usize
        } else {
            (period - 1 - m) as usize
        }
    }

    /// Flat index of `flat + delta * e_axis`, reflected at the faces.
    #[inline]
    pub fn neighbor(&self, flat: usize, axis: usize, delta: i64) -> usize {
        let n = self.extents[axis];
        let s = self.strides[axis];
        let c = (flat / s) % n;
        let r = Self::reflect(c as i64 + delta, n);
        flat - c * s + r * s
    }

    /// Euclidean distance between two cell centers, in length units.
    pub fn center_distance(&self, a: usize, b: usize) -> f64 {
        let mut d2 = 0i64;
        for (&n, &s) in self.extents.iter().zip(&self.strides) {
            let ca = ((a / s) % n) as i64;
            let cb = ((b / s) % n) as i64;
            d2 += (ca - cb) * (ca - cb);
        }
        self.spacing * (d2 as f64).sqrt()
    }

    pub fn same_shape(&self, other: &GridGeometry) -> bool {
        self.extents == other.extents && self.spacing == other.spacing
    }
}

/// Real values on the cells of a grid, truncated at `±saturation`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    geometry: GridGeometry,
    values: Vec<f64>,
    saturation: f64,
}

impl ScalarField {
    pub fn new(geometry: GridGeometry, values: Vec<f64>, saturation: f64) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::GeometryMismatch);
        }
        if !(saturation > 0.0) {
            return Err(Error::InvalidParameter(format!("saturation must be positive, got {saturation}")));
        }
        Ok(Self { geometry, values, saturation })
    }

    pub fn from_fn(geometry: GridGeometry, saturation: f64, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut c = vec![0; geometry.dim()];
        let values = (0..geometry.len())
            .map(|i| {
                geometry.coords_into(i, &mut c);
                f(&c)
            })
            .collect();
        Self { geometry, values, saturation }
    }

    pub fn constant(geometry: GridGeometry, value: f64, saturation: f64) -> Self {
        let values = vec![value; geometry.len()];
        Self { geometry, values, saturation }
    }

    #[inline]
    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn saturation(&self) -> f64 {
        self.saturation
    }

    pub fn with_saturation(mut self, saturation: f64) -> Self {
        self.saturation = saturation;
        self
    }

    /// Same geometry and saturation, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self { geometry: self.geometry.clone(), values, saturation: self.saturation }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn clamp_to_saturation(&mut self) {
        let s = self.saturation;
        for v in &mut self.values {
            *v = v.clamp(-s, s);
        }
    }

    pub fn negative_count(&self) -> usize {
        self.values.iter().filter(|&&v| v < 0.0).count()
    }

    pub fn get(&self, coords: &[usize]) -> f64 {
        self.values[self.geometry.index(coords)]
    }
}

/// Integer phase labels, one per cell. Two-phase masks use `0` for the inside
/// (negative) phase and `1` for the outside.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseMask {
    geometry: GridGeometry,
    labels: Vec<u32>,
}

impl PhaseMask {
    pub fn new(geometry: GridGeometry, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != geometry.len() {
            return Err(Error::GeometryMismatch);
        }
        Ok(Self { geometry, labels })
    }

    pub fn from_fn(geometry: GridGeometry, mut f: impl FnMut(&[usize]) -> u32) -> Self {
        let mut c = vec![0; geometry.dim()];
        let labels = (0..geometry.len())
            .map(|i| {
                geometry.coords_into(i, &mut c);
                f(&c)
            })
            .collect();
        Self { geometry, labels }
    }

    #[inline]
    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    #[inline]
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn is_binary(&self) -> bool {
        self.labels.iter().all(|&l| l <= 1)
    }

    pub fn is_inside(&self, flat: usize) -> bool {
        self.labels[flat] == 0
    }

    pub fn inside_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 0).count()
    }

    /// Distinct labels in ascending order.
    pub fn distinct_labels(&self) -> Vec<u32> {
        let mut l = self.labels.clone();
        l.sort_unstable();
        l.dedup();
        l
    }

    /// Shift every label by a whole number of cells along each axis, filling
    /// uncovered cells with `fill`.
    pub fn translated(&self, shift: &[i64], fill: u32) -> Self {
        let g = &self.geometry;
        let mut c = vec![0usize; g.dim()];
        let mut src = vec![0usize; g.dim()];
        let labels = (0..g.len())
            .map(|i| {
                g.coords_into(i, &mut c);
                for a in 0..g.dim() {
                    let s = c[a] as i64 - shift[a];
                    if s < 0 || s >= g.extents()[a] as i64 {
                        return fill;
                    }
                    src[a] = s as usize;
                }
                self.labels[g.index(&src)]
            })
            .collect();
        Self { geometry: g.clone(), labels }
    }
}

/// `(Δ_ε v)_i = ε⁻² Σ_n (v_{i+εe_n} − 2v_i + v_{i−εe_n})` with mirror reflection at the faces.
pub fn discrete_laplacian(field: &ScalarField) -> ScalarField {
    let g = field.geometry();
    let v = field.values();
    let inv = 1.0 / (g.spacing() * g.spacing());
    let out = (0..g.len())
        .map(|i| {
            let mut acc = 0.0;
            for a in 0..g.dim() {
                acc += v[g.neighbor(i, a, 1)] - 2.0 * v[i] + v[g.neighbor(i, a, -1)];
            }
            acc * inv
        })
        .collect();
    field.with_values(out)
}

/// Outcome of [`exact_signed_distance`]. `one_phase_empty` names the phase
/// that has no cells; the field is then saturated.
#[derive(Clone, Debug)]
pub struct DistanceOutcome {
    pub field: ScalarField,
    pub one_phase_empty: Option<crate::error::Sign>,
}

/// Exact signed distance between cell centers: at each cell, the minimum
/// distance to a cell of the opposite phase, negative inside phase 0, clamped
/// to `[-saturation, saturation]`. Quadratic in the number of cells.
pub fn exact_signed_distance(mask: &PhaseMask, saturation: f64) -> Result<DistanceOutcome> {
    use crate::error::Sign;
    if !mask.is_binary() {
        return Err(Error::InvalidParameter("exact_signed_distance needs a binary mask".into()));
    }
    let g = mask.geometry().clone();
    let dim = g.dim();
    let coords: Vec<Vec<i64>> = (0..g.len())
        .map(|i| g.coords(i).into_iter().map(|c| c as i64).collect())
        .collect();
    let inside: Vec<usize> = (0..g.len()).filter(|&i| mask.is_inside(i)).collect();
    let outside: Vec<usize> = (0..g.len()).filter(|&i| !mask.is_inside(i)).collect();

    if inside.is_empty() || outside.is_empty() {
        let (fill, empty) = if inside.is_empty() {
            (saturation, Sign::Negative)
        } else {
            (-saturation, Sign::Positive)
        };
        return Ok(DistanceOutcome {
            field: ScalarField::constant(g, fill, saturation),
            one_phase_empty: Some(empty),
        });
    }

    let eps = g.spacing();
    let values = (0..g.len())
        .map(|i| {
            let (others, sign) = if mask.is_inside(i) { (&outside, -1.0) } else { (&inside, 1.0) };
            let ci = &coords[i];
            let mut best = i64::MAX;
            for &j in others {
                let cj = &coords[j];
                let mut d2 = 0i64;
                for a in 0..dim {
                    let d = ci[a] - cj[a];
                    d2 += d * d;
                }
                best = best.min(d2);
            }
            (sign * eps * (best as f64).sqrt()).clamp(-saturation, saturation)
        })
        .collect();
    Ok(DistanceOutcome { field: ScalarField::new(g, values, saturation)?, one_phase_empty: None })
}

/// The initial 1-Lipschitz level-set function: `-ε/2` on phase 0, `+ε/2` elsewhere.
pub fn seed_field(mask: &PhaseMask, saturation: f64) -> ScalarField {
    let half = 0.5 * mask.geometry().spacing();
    let values = mask.labels().iter().map(|&l| if l == 0 { -half } else { half }).collect();
    ScalarField { geometry: mask.geometry().clone(), values, saturation }
}

#[derive(Clone, Copy, Debug)]
pub struct LipschitzOptions {
    /// Number of random long-range pairs checked in addition to all local pairs.
    pub random_pairs: usize,
    pub seed: u64,
    /// Absolute tolerance in units of the spacing.
    pub tol: f64,
}

impl Default for LipschitzOptions {
    fn default() -> Self {
        Self { random_pairs: 10_000, seed: 0x5d_f10e, tol: LIPSCHITZ_TOL }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub lipschitz: bool,
    /// Largest `|u_a - u_b| - |a - b|` seen, negative when every pair has slack.
    pub worst_excess: f64,
    pub worst_pair: Option<(usize, usize)>,
    pub pairs_checked: usize,
}

/// Check `|u_i − u_j| ≤ |i − j|` on every pair of cells at Chebyshev distance
/// one, plus a configurable number of random long-range pairs. Adjacency alone
/// is not sufficient for the Euclidean norm, hence the random sample.
pub fn lipschitz_check(field: &ScalarField, opts: &LipschitzOptions) -> LipschitzReport {
    let g = field.geometry();
    let v = field.values();
    let dim = g.dim();
    let tol = opts.tol * g.spacing();

    // Half of the 3^N - 1 neighbor offsets; the other half is covered by symmetry.
    let mut offsets: Vec<Vec<i64>> = Vec::new();
    let total = 3usize.pow(dim as u32);
    for code in 0..total {
        let mut o = Vec::with_capacity(dim);
        let mut c = code;
        for _ in 0..dim {
            o.push((c % 3) as i64 - 1);
            c /= 3;
        }
        let first_nonzero = o.iter().find(|&&x| x != 0);
        if matches!(first_nonzero, Some(&x) if x > 0) {
            offsets.push(o);
        }
    }

    let mut report = LipschitzReport {
        lipschitz: true,
        worst_excess: f64::NEG_INFINITY,
        worst_pair: None,
        pairs_checked: 0,
    };
    let consider = |a: usize, b: usize, report: &mut LipschitzReport| {
        let excess = (v[a] - v[b]).abs() - g.center_distance(a, b);
        report.pairs_checked += 1;
        if excess > report.worst_excess || excess.is_nan() {
            report.worst_excess = if excess.is_nan() { f64::INFINITY } else { excess };
            report.worst_pair = Some((a, b));
        }
    };

    let mut c = vec![0usize; dim];
    let mut other = vec![0usize; dim];
    for i in 0..g.len() {
        g.coords_into(i, &mut c);
        'offsets: for o in &offsets {
            for a in 0..dim {
                let x = c[a] as i64 + o[a];
                if x < 0 || x >= g.extents()[a] as i64 {
                    continue 'offsets;
                }
                other[a] = x as usize;
            }
            consider(i, g.index(&other), &mut report);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = g.len();
    for _ in 0..opts.random_pairs {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            consider(a, b, &mut report);
        }
    }
    report.lipschitz = report.worst_excess <= tol;
    report
}

/// Equivalent radius of an `N`-ball with volume `volume`.
pub fn ball_radius(volume: f64, dim: usize) -> f64 {
    if volume <= 0.0 {
        return 0.0;
    }
    (volume / unit_ball_volume(dim)).powf(1.0 / dim as f64)
}

pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        0 => 1.0,
        1 => 2.0,
        n => unit_ball_volume(n - 2) * 2.0 * std::f64::consts::PI / n as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(values: &[f64]) -> ScalarField {
        let g = GridGeometry::new(&[values.len()], 1.0).unwrap();
        ScalarField::new(g, values.to_vec(), 30.0).unwrap()
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(GridGeometry::new(&[], 1.0).is_err());
        assert!(GridGeometry::new(&[2, 5], 1.0).is_err());
        assert!(GridGeometry::new(&[5, 5], 0.0).is_err());
        assert!(GridGeometry::new(&[5, 5], -1.0).is_err());
    }

    #[test]
    fn reflection_stays_in_box() {
        for n in 3..8usize {
            for a in -40i64..40 {
                let r = GridGeometry::reflect(a, n);
                assert!(r < n);
            }
            assert_eq!(GridGeometry::reflect(-1, n), 0);
            assert_eq!(GridGeometry::reflect(n as i64, n), n - 1);
            assert_eq!(GridGeometry::reflect(-2, n), 1);
        }
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let g = GridGeometry::cube(7, 2, 0.5).unwrap();
        let f = ScalarField::constant(g, 3.25, 30.0);
        assert!(discrete_laplacian(&f).values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn laplacian_three_cell_line() {
        let lap = discrete_laplacian(&line(&[0.0, 1.0, 4.0]));
        assert_eq!(lap.values()[1], 2.0);
        // reflected ends: v_{-1} = v_0, v_3 = v_2
        assert_eq!(lap.values()[0], 1.0);
        assert_eq!(lap.values()[2], -3.0);
    }

    #[test]
    fn laplacian_of_quadratic_is_2n() {
        for dim in 1..=3 {
            let g = GridGeometry::cube(9, dim, 1.0).unwrap();
            let f = ScalarField::from_fn(g.clone(), 100.0, |c| {
                c.iter().map(|&x| (x as f64 - 4.0).powi(2)).sum()
            });
            let lap = discrete_laplacian(&f);
            let mut c = vec![0; dim];
            for i in 0..g.len() {
                g.coords_into(i, &mut c);
                if c.iter().all(|&x| (1..=7).contains(&x)) {
                    assert!((lap.values()[i] - 2.0 * dim as f64).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn exact_distance_pythagorean() {
        let g = GridGeometry::cube(8, 2, 1.0).unwrap();
        let mask = PhaseMask::from_fn(g.clone(), |c| if c == [0, 0] { 0 } else { 1 });
        let out = exact_signed_distance(&mask, 30.0).unwrap();
        assert_eq!(out.field.get(&[3, 4]), 5.0);
        assert_eq!(out.field.get(&[0, 0]), -1.0);
        assert!(out.one_phase_empty.is_none());
    }

    #[test]
    fn exact_distance_one_phase_empty() {
        let g = GridGeometry::cube(5, 2, 1.0).unwrap();
        let mask = PhaseMask::from_fn(g, |_| 0);
        let out = exact_signed_distance(&mask, 7.0).unwrap();
        assert!(out.field.values().iter().all(|&v| v == -7.0));
        assert_eq!(out.one_phase_empty, Some(crate::error::Sign::Positive));
    }

    #[test]
    fn seed_field_checkerboard() {
        let g = GridGeometry::cube(6, 2, 1.0).unwrap();
        let mask = PhaseMask::from_fn(g, |c| ((c[0] + c[1]) % 2) as u32);
        let f = seed_field(&mask, 30.0);
        assert!(f.values().iter().all(|&v| v.abs() == 0.5));
        assert!(lipschitz_check(&f, &LipschitzOptions::default()).lipschitz);
    }

    #[test]
    fn seed_field_empty_inside() {
        let g = GridGeometry::cube(4, 2, 2.0).unwrap();
        let f = seed_field(&PhaseMask::from_fn(g, |_| 1), 30.0);
        assert!(f.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn lipschitz_check_reports_bump() {
        let g = GridGeometry::cube(9, 2, 1.0).unwrap();
        let mut f = ScalarField::from_fn(g.clone(), 30.0, |c| 0.6 * c[0] as f64 - 0.3 * c[1] as f64);
        assert!(lipschitz_check(&f, &LipschitzOptions::default()).lipschitz);
        let bumped = g.index(&[6, 6]);
        f.values_mut()[bumped] += 2.0;
        let rep = lipschitz_check(&f, &LipschitzOptions::default());
        assert!(!rep.lipschitz);
        let (a, b) = rep.worst_pair.unwrap();
        assert!(a == bumped || b == bumped);
    }

    #[test]
    fn exact_distance_jumps_across_interface() {
        // Cell-center distances are 1-Lipschitz within each phase but jump by 2ε across it.
        let g = GridGeometry::cube(9, 2, 1.0).unwrap();
        let mask = PhaseMask::from_fn(g.clone(), |c| if c[0] < 4 { 0 } else { 1 });
        let f = exact_signed_distance(&mask, 30.0).unwrap().field;
        assert_eq!(f.get(&[3, 2]), -1.0);
        assert_eq!(f.get(&[4, 2]), 1.0);
        let rep = lipschitz_check(&f, &LipschitzOptions::default());
        assert!((rep.worst_excess - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ball_volumes() {
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 / 3.0 * std::f64::consts::PI).abs() < 1e-14);
        assert!((ball_radius(std::f64::consts::PI * 4.0, 2) - 2.0).abs() < 1e-14);
        assert_eq!(ball_radius(3.0, 1), 1.5);
    }
}
