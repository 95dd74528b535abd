//! Diffusion kernels: finite stencils applied in space, and spectral kernels
//! applied through the cosine transform that diagonalizes the mirrored box.
//!
//! A kernel `K` on `εZ^N` is admissible when it is nonnegative, symmetric and
//! has unit mass; its time step is `h = (1/2N) Σ |j|² K_j`. Its symbol is
//! `K̃(ξ) = Σ_j K_j cos(2π j·ξ)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridGeometry, ScalarField};

/// Threshold below which a space-domain weight of a spectral kernel counts as negative.
pub const SPECTRAL_POSITIVITY_FLOOR: f64 = 1e-13;

fn default_theta() -> f64 {
    1.0
}

/// Serialized kernel description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelSpec {
    Explicit {
        #[serde(default = "default_theta")]
        theta: f64,
    },
    Implicit {
        tau: f64,
    },
    Heat {
        tau: f64,
    },
    Stencil {
        weights: Vec<(Vec<i32>, f64)>,
    },
}

impl KernelSpec {
    pub fn build(&self, geometry: &GridGeometry) -> Result<Kernel> {
        let eps = geometry.spacing();
        let dim = geometry.dim();
        match *self {
            KernelSpec::Explicit { theta } => explicit_euler_kernel(theta, eps, dim),
            KernelSpec::Implicit { tau } => implicit_euler_symbol(tau, eps, geometry),
            KernelSpec::Heat { tau } => heat_semigroup_symbol(tau, eps, geometry),
            KernelSpec::Stencil { ref weights } => {
                let offsets = weights.iter().map(|(o, _)| o.clone()).collect();
                let w = weights.iter().map(|(_, w)| *w).collect();
                StencilKernel::new(offsets, w, eps, dim).map(Kernel::Stencil)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Explicit { .. } => "explicit",
            KernelSpec::Implicit { .. } => "implicit",
            KernelSpec::Heat { .. } => "heat",
            KernelSpec::Stencil { .. } => "stencil",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StencilKernel {
    dim: usize,
    spacing: f64,
    offsets: Vec<Vec<i32>>,
    weights: Vec<f64>,
    derived_h: f64,
    nominal_h: f64,
}

impl StencilKernel {
    /// A stencil from integer offsets (in cells) and weights. `derived_h` is the second moment.
    pub fn new(offsets: Vec<Vec<i32>>, weights: Vec<f64>, spacing: f64, dim: usize) -> Result<Self> {
        if offsets.len() != weights.len() || offsets.is_empty() {
            return Err(Error::InvalidParameter("stencil needs one weight per offset".into()));
        }
        if let Some(o) = offsets.iter().find(|o| o.len() != dim) {
            return Err(Error::WrongDimension { expected: dim, found: o.len() });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("stencil weights must be finite".into()));
        }
        let h = second_moment(&offsets, &weights, spacing, dim);
        Ok(Self { dim, spacing, offsets, weights, derived_h: h, nominal_h: h })
    }

    pub fn offsets(&self) -> &[Vec<i32>] {
        &self.offsets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn symbol(&self, xi: &[f64]) -> f64 {
        self.offsets
            .iter()
            .zip(&self.weights)
            .map(|(o, w)| {
                let phase: f64 = o.iter().zip(xi).map(|(&a, &x)| a as f64 * x).sum();
                w * (2.0 * PI * self.spacing * phase).cos()
            })
            .sum()
    }
}

fn second_moment(offsets: &[Vec<i32>], weights: &[f64], eps: f64, dim: usize) -> f64 {
    let m: f64 = offsets
        .iter()
        .zip(weights)
        .map(|(o, w)| o.iter().map(|&a| (a as f64) * (a as f64)).sum::<f64>() * w)
        .sum();
    m * eps * eps / (2.0 * dim as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolKind {
    Implicit,
    Heat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralKernel {
    kind: SymbolKind,
    tau: f64,
    spacing: f64,
    dim: usize,
    derived_h: f64,
}

/// `Δ̃(ξ) = (2/ε²) Σ_k (cos(2πε ξ_k) − 1)`.
pub fn laplacian_symbol(xi: &[f64], eps: f64) -> f64 {
    xi.iter().map(|&x| (2.0 * PI * eps * x).cos() - 1.0).sum::<f64>() * 2.0 / (eps * eps)
}

impl SpectralKernel {
    fn new(kind: SymbolKind, tau: f64, spacing: f64, dim: usize) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        if tau < spacing * spacing {
            log::warn!("time step {tau} is below eps^2 = {}; consistency estimates assume h >= eps^2", spacing * spacing);
        }
        let mut k = Self { kind, tau, spacing, dim, derived_h: f64::NAN };
        k.derived_h = k.symbol_h();
        Ok(k)
    }

    pub fn kind(&self) -> SymbolKind {
        self.kind
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    fn of_laplacian(&self, lap: f64) -> f64 {
        match self.kind {
            SymbolKind::Implicit => 1.0 / (1.0 - self.tau * lap),
            SymbolKind::Heat => (self.tau * lap).exp(),
        }
    }

    pub fn symbol(&self, xi: &[f64]) -> f64 {
        self.of_laplacian(laplacian_symbol(xi, self.spacing))
    }

    /// `h = −ΔK̃(0) / (8π²N)` by Richardson-extrapolated central differences.
    fn symbol_h(&self) -> f64 {
        let d = 1e-4 / self.spacing.max(self.tau.sqrt());
        let estimate = |d: f64| {
            let mut lap = 0.0;
            for a in 0..self.dim {
                let mut xi = vec![0.0; self.dim];
                xi[a] = d;
                let up = self.symbol(&xi);
                xi[a] = -d;
                let down = self.symbol(&xi);
                lap += (up - 2.0 + down) / (d * d);
            }
            -lap / (8.0 * PI * PI * self.dim as f64)
        };
        (4.0 * estimate(d) - estimate(2.0 * d)) / 3.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    Stencil(StencilKernel),
    Spectral(SpectralKernel),
}

/// `K = (1 − θ)δ₀ + θ/(2N) Σ_k (δ_{εe_k} + δ_{−εe_k})`, the explicit Euler step for
/// `τ = θε²/(2N)`.
pub fn explicit_euler_kernel(theta: f64, eps: f64, dim: usize) -> Result<Kernel> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::BadTheta(theta));
    }
    if !(eps > 0.0) || dim == 0 {
        return Err(Error::InvalidGeometry(format!("eps = {eps}, dim = {dim}")));
    }
    let mut offsets = vec![vec![0; dim]];
    let mut weights = vec![1.0 - theta];
    let side = theta / (2.0 * dim as f64);
    for a in 0..dim {
        for s in [1, -1] {
            let mut o = vec![0; dim];
            o[a] = s;
            offsets.push(o);
            weights.push(side);
        }
    }
    let h = theta * eps * eps / (2.0 * dim as f64);
    Ok(Kernel::Stencil(StencilKernel { dim, spacing: eps, offsets, weights, derived_h: h, nominal_h: h }))
}

/// The resolvent of the discrete Laplacian: `K̃(ξ) = 1 / (1 − τΔ̃(ξ))`.
pub fn implicit_euler_symbol(tau: f64, eps: f64, geometry: &GridGeometry) -> Result<Kernel> {
    SpectralKernel::new(SymbolKind::Implicit, tau, eps, geometry.dim()).map(Kernel::Spectral)
}

/// The discrete heat semigroup: `K̃(ξ) = exp(τΔ̃(ξ))`.
pub fn heat_semigroup_symbol(tau: f64, eps: f64, geometry: &GridGeometry) -> Result<Kernel> {
    SpectralKernel::new(SymbolKind::Heat, tau, eps, geometry.dim()).map(Kernel::Spectral)
}

impl Kernel {
    pub fn dim(&self) -> usize {
        match self {
            Kernel::Stencil(k) => k.dim,
            Kernel::Spectral(k) => k.dim,
        }
    }

    pub fn spacing(&self) -> f64 {
        match self {
            Kernel::Stencil(k) => k.spacing,
            Kernel::Spectral(k) => k.spacing,
        }
    }

    pub fn derived_h(&self) -> f64 {
        match self {
            Kernel::Stencil(k) => k.derived_h,
            Kernel::Spectral(k) => k.derived_h,
        }
    }

    /// The time step the kernel is meant to realize: `θε²/2N` or `τ`.
    pub fn nominal_h(&self) -> f64 {
        match self {
            Kernel::Stencil(k) => k.nominal_h,
            Kernel::Spectral(k) => k.tau,
        }
    }

    pub fn is_spectral(&self) -> bool {
        matches!(self, Kernel::Spectral(_))
    }

    /// `K̃(ξ)`, with `ξ` in inverse length units.
    pub fn symbol(&self, xi: &[f64]) -> f64 {
        match self {
            Kernel::Stencil(k) => k.symbol(xi),
            Kernel::Spectral(k) => k.symbol(xi),
        }
    }

    /// The same kernel family at another spacing: stencil weights are kept, spectral
    /// kernels keep `τ/ε²`.
    pub fn rescaled(&self, eps: f64) -> Kernel {
        match self {
            Kernel::Stencil(k) => {
                let scale = (eps / k.spacing).powi(2);
                Kernel::Stencil(StencilKernel {
                    spacing: eps,
                    derived_h: k.derived_h * scale,
                    nominal_h: k.nominal_h * scale,
                    ..k.clone()
                })
            }
            Kernel::Spectral(k) => {
                let tau = k.tau * (eps / k.spacing).powi(2);
                let mut out = SpectralKernel { tau, spacing: eps, ..k.clone() };
                out.derived_h = out.symbol_h();
                Kernel::Spectral(out)
            }
        }
    }

    pub fn prepare(&self, geometry: &GridGeometry) -> Result<PreparedKernel> {
        if geometry.dim() != self.dim() || geometry.spacing() != self.spacing() {
            return Err(Error::GeometryMismatch);
        }
        let inner = match self {
            Kernel::Stencil(k) => Prepared::Stencil(StencilPlan::new(k, geometry)),
            Kernel::Spectral(k) => Prepared::Spectral(SpectralPlan::new(k, geometry)),
        };
        Ok(PreparedKernel { geometry: geometry.clone(), inner })
    }
}

struct StencilPlan {
    weights: Vec<f64>,
    // For each offset and axis, the reflected source coordinate times the stride, per coordinate.
    tables: Vec<Vec<Vec<usize>>>,
}

impl StencilPlan {
    fn new(k: &StencilKernel, g: &GridGeometry) -> Self {
        let mut weights = Vec::new();
        let mut tables = Vec::new();
        for (o, &w) in k.offsets.iter().zip(&k.weights) {
            if w == 0.0 {
                continue;
            }
            weights.push(w);
            tables.push(
                (0..g.dim())
                    .map(|a| {
                        let n = g.extents()[a];
                        (0..n)
                            .map(|c| GridGeometry::reflect(c as i64 - o[a] as i64, n) * g.strides()[a])
                            .collect()
                    })
                    .collect(),
            );
        }
        Self { weights, tables }
    }

    fn apply(&self, g: &GridGeometry, v: &[f64]) -> Vec<f64> {
        let dim = g.dim();
        let mut c = vec![0usize; dim];
        (0..g.len())
            .map(|i| {
                g.coords_into(i, &mut c);
                let mut acc = 0.0;
                for (w, t) in self.weights.iter().zip(&self.tables) {
                    let mut j = 0;
                    for a in 0..dim {
                        j += t[a][c[a]];
                    }
                    acc += w * v[j];
                }
                acc
            })
            .collect()
    }
}

struct SpectralPlan {
    symbol: Vec<f64>,
    plans: Vec<Arc<dyn TransformType2And3<f64>>>,
    scale: f64,
}

impl SpectralPlan {
    fn new(k: &SpectralKernel, g: &GridGeometry) -> Self {
        let mut planner = DctPlanner::new();
        let plans = g.extents().iter().map(|&n| planner.plan_dct2(n)).collect();
        // Eigenvalues of the mirrored second difference: (2/ε²)(cos(πk/n) − 1) per axis.
        let eps = g.spacing();
        let axis: Vec<Vec<f64>> = g
            .extents()
            .iter()
            .map(|&n| (0..n).map(|q| 2.0 / (eps * eps) * ((PI * q as f64 / n as f64).cos() - 1.0)).collect())
            .collect();
        let mut c = vec![0usize; g.dim()];
        let symbol = (0..g.len())
            .map(|i| {
                g.coords_into(i, &mut c);
                let lap: f64 = c.iter().enumerate().map(|(a, &q)| axis[a][q]).sum();
                k.of_laplacian(lap)
            })
            .collect();
        let scale = g.extents().iter().map(|&n| 2.0 / n as f64).product();
        Self { symbol, plans, scale }
    }

    fn transform(&self, g: &GridGeometry, data: &mut [f64], forward: bool) {
        for (a, plan) in self.plans.iter().enumerate() {
            let n = g.extents()[a];
            let s = g.strides()[a];
            let mut line = vec![0.0; n];
            for base in 0..g.len() {
                if !(base / s).is_multiple_of(n) {
                    continue;
                }
                for q in 0..n {
                    line[q] = data[base + q * s];
                }
                if forward {
                    plan.process_dct2(&mut line);
                } else {
                    plan.process_dct3(&mut line);
                }
                for q in 0..n {
                    data[base + q * s] = line[q];
                }
            }
        }
    }

    fn apply(&self, g: &GridGeometry, v: &[f64]) -> Vec<f64> {
        let mut data = v.to_vec();
        self.transform(g, &mut data, true);
        for (x, s) in data.iter_mut().zip(&self.symbol) {
            *x *= s * self.scale;
        }
        self.transform(g, &mut data, false);
        data
    }
}

enum Prepared {
    Stencil(StencilPlan),
    Spectral(SpectralPlan),
}

/// A kernel bound to a grid, with transform plans and symbol samples cached.
pub struct PreparedKernel {
    geometry: GridGeometry,
    inner: Prepared,
}

impl PreparedKernel {
    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    /// Apply to raw values laid out on the prepared grid.
    pub fn apply_values(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.geometry.len());
        match &self.inner {
            Prepared::Stencil(p) => p.apply(&self.geometry, v),
            Prepared::Spectral(p) => p.apply(&self.geometry, v),
        }
    }

    pub fn apply(&self, field: &ScalarField) -> Result<ScalarField> {
        if !field.geometry().same_shape(&self.geometry) {
            return Err(Error::GeometryMismatch);
        }
        Ok(field.with_values(self.apply_values(field.values())))
    }
}

/// `K ∗ v` with mirror reflection at the box faces.
pub fn apply_kernel(kernel: &Kernel, field: &ScalarField) -> Result<ScalarField> {
    kernel.prepare(field.geometry())?.apply(field)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySample {
    /// Frequency along the first axis, in units of `1/ε₀`.
    pub xi: f64,
    /// `|(1 − K̃(ξ))/h − 4π²|ξ|²|` at `ε₀, ε₀/2, ε₀/4`.
    pub errors: Vec<f64>,
    pub decreasing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub kind: String,
    pub mass_error: f64,
    pub symmetry_error: f64,
    pub positivity_violations: usize,
    pub derived_h: f64,
    pub nominal_h: f64,
    pub h_relative_error: f64,
    pub symbol_bound_checked: bool,
    pub symbol_bound_samples: usize,
    pub symbol_bound_violations: usize,
    pub symbol_consistency_error: f64,
    pub consistency: Vec<ConsistencySample>,
    pub consistency_decreasing: bool,
    pub cfl_ok: bool,
    pub passes: bool,
}

fn bound_samples(dim: usize) -> usize {
    match dim {
        1 => 1000,
        2 => 32,
        _ => 10,
    }
}

/// Check the kernel axioms, the symbol bound `0 ≤ (1 − K̃)/h ≤ 4π²N|ξ|²` on a
/// sample of frequencies, and the fixed-frequency consistency trend.
pub fn validate_kernel(kernel: &Kernel) -> KernelReport {
    let dim = kernel.dim();
    let eps = kernel.spacing();
    let h = kernel.derived_h();

    let (kind, mass_error, symmetry_error, positivity_violations) = match kernel {
        Kernel::Stencil(k) => {
            let mass: f64 = k.weights.iter().sum();
            let mut sym = 0.0f64;
            for o in &k.offsets {
                let neg: Vec<i32> = o.iter().map(|&a| -a).collect();
                let mirror: f64 = k.offsets.iter().zip(&k.weights).filter(|(p, _)| **p == neg).map(|(_, &w)| w).sum();
                let same: f64 = k.offsets.iter().zip(&k.weights).filter(|(p, _)| *p == o).map(|(_, &w)| w).sum();
                sym = sym.max((same - mirror).abs());
            }
            let pos = k.weights.iter().filter(|&&w| w < 0.0).count();
            ("stencil".to_string(), (mass - 1.0).abs(), sym, pos)
        }
        Kernel::Spectral(k) => {
            let zero = vec![0.0; dim];
            let mass = k.symbol(&zero);
            // A real, even symbol is the transform of a symmetric kernel; the
            // space-domain weights are inspected for sign on a delta response.
            let pos = spectral_negative_weights(kernel);
            let name = match k.kind {
                SymbolKind::Implicit => "implicit",
                SymbolKind::Heat => "heat",
            };
            (name.to_string(), (mass - 1.0).abs(), 0.0, pos)
        }
    };

    let claims_axioms = symmetry_error == 0.0 && positivity_violations == 0;
    let per_axis = bound_samples(dim);
    let mut samples = 0;
    let mut violations = 0;
    if claims_axioms {
        let nyq = 0.5 / eps;
        let total = per_axis.pow(dim as u32);
        for s in 0..total {
            let mut xi = vec![0.0; dim];
            let mut r = s;
            for x in xi.iter_mut() {
                let q = r % per_axis;
                r /= per_axis;
                *x = -nyq + 2.0 * nyq * (q as f64 + 0.5) / per_axis as f64;
            }
            let norm2: f64 = xi.iter().map(|x| x * x).sum();
            let ratio = (1.0 - kernel.symbol(&xi)) / h;
            let upper = 4.0 * PI * PI * dim as f64 * norm2;
            let tol = 1e-12 * upper.max(1.0 / (eps * eps));
            samples += 1;
            if ratio < -tol || ratio > upper + tol {
                violations += 1;
            }
        }
    }

    let consistency: Vec<ConsistencySample> = [0.1, 0.25, 0.5]
        .iter()
        .map(|&x| {
            let errors: Vec<f64> = [1.0, 0.5, 0.25]
                .iter()
                .map(|&f| {
                    let k = kernel.rescaled(eps * f);
                    let mut xi = vec![0.0; dim];
                    xi[0] = x / eps;
                    ((1.0 - k.symbol(&xi)) / k.derived_h() - 4.0 * PI * PI * xi[0] * xi[0]).abs()
                })
                .collect();
            let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
            ConsistencySample { xi: x, errors, decreasing }
        })
        .collect();
    let consistency_decreasing = consistency.iter().all(|c| c.decreasing);
    let symbol_consistency_error = consistency.iter().flat_map(|c| c.errors.iter().copied()).fold(0.0, f64::max);

    let nominal = kernel.nominal_h();
    let passes = mass_error < 1e-10 && symmetry_error == 0.0 && positivity_violations == 0 && violations == 0;
    KernelReport {
        kind,
        mass_error,
        symmetry_error,
        positivity_violations,
        derived_h: h,
        nominal_h: nominal,
        h_relative_error: ((h - nominal) / nominal).abs(),
        symbol_bound_checked: claims_axioms,
        symbol_bound_samples: samples,
        symbol_bound_violations: violations,
        symbol_consistency_error,
        consistency,
        consistency_decreasing,
        cfl_ok: h >= eps * eps,
        passes,
    }
}

fn spectral_negative_weights(kernel: &Kernel) -> usize {
    let dim = kernel.dim();
    let n = 33;
    let g = GridGeometry::new(&vec![n; dim], kernel.spacing()).expect("valid probe grid");
    let mut delta = vec![0.0; g.len()];
    delta[g.index(&vec![n / 2; dim])] = 1.0;
    let out = kernel.prepare(&g).expect("matching probe grid").apply_values(&delta);
    out.iter().filter(|&&w| w < -SPECTRAL_POSITIVITY_FLOOR).count()
}
