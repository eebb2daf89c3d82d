//! Absorption and scattering coefficients, their admissibility checks and the
//! phantom library.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Condition, Error, Result};
use crate::geometry::{dist, dot, AngularGrid, Discretization, Domain, SpatialGrid, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec3,
    pub width: f64,
    pub amplitude: f64,
}

impl Bump {
    pub fn eval(&self, x: Vec3) -> f64 {
        let r = dist(x, self.center);
        self.amplitude * (-0.5 * r * r / (self.width * self.width)).exp()
    }
}

/// Ball-shaped inclusion with a `tanh` edge of thickness `edge`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    pub center: Vec3,
    pub radius: f64,
    pub edge: f64,
    pub amplitude: f64,
}

impl Inclusion {
    pub fn eval(&self, x: Vec3) -> f64 {
        let r = dist(x, self.center);
        0.5 * self.amplitude * (1.0 - ((r - self.radius) / self.edge).tanh())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScalarField {
    Constant { value: f64 },
    Bumps { base: f64, bumps: Vec<Bump> },
    Inclusions { base: f64, inclusions: Vec<Inclusion> },
    Gridded { grid: SpatialGrid, values: Vec<f64> },
    Sum { parts: Vec<ScalarField> },
}

impl ScalarField {
    pub fn constant(value: f64) -> Self {
        ScalarField::Constant { value }
    }

    pub fn eval(&self, x: Vec3) -> f64 {
        match self {
            ScalarField::Constant { value } => *value,
            ScalarField::Bumps { base, bumps } => base + bumps.iter().map(|b| b.eval(x)).sum::<f64>(),
            ScalarField::Inclusions { base, inclusions } => {
                base + inclusions.iter().map(|b| b.eval(x)).sum::<f64>()
            }
            ScalarField::Gridded { grid, values } => grid.interpolate(values, x),
            ScalarField::Sum { parts } => parts.iter().map(|p| p.eval(x)).sum(),
        }
    }

    pub fn sample(&self, grid: &SpatialGrid) -> Vec<f64> {
        (0..grid.len()).map(|i| self.eval(grid.position(i))).collect()
    }

    /// Adds a Gaussian bump, converting constants to a bump family.
    pub fn with_bump(&self, bump: Bump) -> ScalarField {
        match self {
            ScalarField::Constant { value } => ScalarField::Bumps { base: *value, bumps: vec![bump] },
            ScalarField::Bumps { base, bumps } => {
                let mut bumps = bumps.clone();
                bumps.push(bump);
                ScalarField::Bumps { base: *base, bumps }
            }
            other => ScalarField::Sum {
                parts: vec![other.clone(), ScalarField::Bumps { base: 0.0, bumps: vec![bump] }],
            },
        }
    }

    pub fn is_analytic(&self) -> bool {
        match self {
            ScalarField::Gridded { .. } => false,
            ScalarField::Sum { parts } => parts.iter().all(|p| p.is_analytic()),
            _ => true,
        }
    }
}

/// Phase functions normalized to unit mass on the circle (2D) or sphere (3D).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PhaseFunction {
    Isotropic,
    HenyeyGreenstein { g: f64 },
}

impl PhaseFunction {
    pub fn eval(&self, cos: f64, dim: usize) -> f64 {
        match *self {
            PhaseFunction::Isotropic => 1.0 / sphere_measure(dim),
            PhaseFunction::HenyeyGreenstein { g } => {
                let d = 1.0 + g * g - 2.0 * g * cos;
                if dim == 2 {
                    (1.0 - g * g) / (2.0 * PI * d)
                } else {
                    (1.0 - g * g) / (4.0 * PI * d.powf(1.5))
                }
            }
        }
    }
}

pub fn sphere_measure(dim: usize) -> f64 {
    if dim == 2 {
        2.0 * PI
    } else {
        4.0 * PI
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelLaw {
    Phase { phase: PhaseFunction },
    /// Row-major `m x m` table `p(theta_i, theta_j)` on a fixed angular grid.
    Table { m: usize, values: Vec<f64> },
}

/// `k(x, theta, theta') = kappa(x) * law(theta, theta')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub kappa: ScalarField,
    pub law: KernelLaw,
}

impl Kernel {
    pub fn isotropic(kappa: ScalarField) -> Self {
        Kernel { kappa, law: KernelLaw::Phase { phase: PhaseFunction::Isotropic } }
    }

    pub fn none() -> Self {
        Kernel::isotropic(ScalarField::constant(0.0))
    }

    /// Angular factor `p(theta_i, theta_j)` on `angles`.
    pub fn angular_matrix(&self, angles: &AngularGrid) -> Result<Vec<f64>> {
        let m = angles.len();
        match &self.law {
            KernelLaw::Phase { phase } => {
                let mut p = vec![0.0; m * m];
                for i in 0..m {
                    for j in 0..m {
                        p[i * m + j] = phase.eval(dot(angles.nodes[i], angles.nodes[j]), angles.dim);
                    }
                }
                Ok(p)
            }
            KernelLaw::Table { m: tm, values } => {
                if *tm != m || values.len() != m * m {
                    return Err(Error::Parameter(format!(
                        "kernel table is {tm}x{tm} but the angular grid has {m} nodes"
                    )));
                }
                Ok(values.clone())
            }
        }
    }

    pub fn is_isotropic_phase(&self) -> bool {
        matches!(self.law, KernelLaw::Phase { phase: PhaseFunction::Isotropic })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub name: String,
    pub sigma: ScalarField,
    pub kernel: Kernel,
    /// Required lower bound on `inf (sigma - rho)`.
    pub margin: f64,
}

impl Phantom {
    pub fn sigma_at(&self, x: Vec3) -> f64 {
        self.sigma.eval(x)
    }

    pub fn kappa_at(&self, x: Vec3) -> f64 {
        self.kernel.kappa.eval(x)
    }

    /// The same phantom without scattering.
    pub fn without_scattering(&self) -> Phantom {
        Phantom { name: format!("{}-k0", self.name), kernel: Kernel::none(), ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub min_margin: f64,
    pub min_sigma: f64,
    pub min_k: f64,
    pub max_rho: f64,
    pub max_sigma: f64,
    pub max_isotropy_defect: f64,
    pub worst_margin_point: Vec3,
    pub worst_sigma_point: Vec3,
    pub worst_k_point: Vec3,
}

impl ValidationReport {
    /// Contraction bound `sup rho / inf sigma`.
    pub fn contraction_bound(&self) -> f64 {
        self.max_rho / self.min_sigma
    }

    pub fn check(&self, required_margin: f64) -> Result<()> {
        if self.min_sigma < 0.0 {
            return Err(Error::Validation {
                condition: Condition::Regularity,
                point: self.worst_sigma_point,
                detail: format!("sigma = {:.6e} < 0", self.min_sigma),
            });
        }
        if self.min_k < 0.0 {
            return Err(Error::Validation {
                condition: Condition::Regularity,
                point: self.worst_k_point,
                detail: format!("k = {:.6e} < 0", self.min_k),
            });
        }
        if !(self.min_margin > required_margin) {
            return Err(Error::Validation {
                condition: Condition::Absorption,
                point: self.worst_margin_point,
                detail: format!("inf(sigma - rho) = {:.6e} not above {required_margin}", self.min_margin),
            });
        }
        if self.max_isotropy_defect > 1e-12 {
            return Err(Error::Validation {
                condition: Condition::Isotropy,
                point: [0.0; 3],
                detail: format!("max |k(t,t') - k(-t',-t)| = {:.3e}", self.max_isotropy_defect),
            });
        }
        Ok(())
    }
}

/// Computes the admissibility summary at every node inside the domain.
pub fn assess(phantom: &Phantom, disc: &Discretization) -> Result<ValidationReport> {
    let angles = &disc.angles;
    let m = angles.len();
    let p = phantom.kernel.angular_matrix(angles)?;
    let mut row_max: f64 = 0.0;
    let mut p_min = f64::INFINITY;
    let mut defect: f64 = 0.0;
    for i in 0..m {
        let mut s = 0.0;
        for j in 0..m {
            let v = p[i * m + j];
            s += v * angles.weights[j];
            p_min = p_min.min(v);
            let mirrored = p[angles.antipode[j] * m + angles.antipode[i]];
            defect = defect.max((v - mirrored).abs());
        }
        row_max = row_max.max(s);
    }
    let mut r = ValidationReport {
        min_margin: f64::INFINITY,
        min_sigma: f64::INFINITY,
        min_k: f64::INFINITY,
        max_rho: 0.0,
        max_sigma: 0.0,
        max_isotropy_defect: 0.0,
        worst_margin_point: [0.0; 3],
        worst_sigma_point: [0.0; 3],
        worst_k_point: [0.0; 3],
    };
    for n in 0..disc.nodes() {
        if !disc.inside[n] {
            continue;
        }
        let x = disc.grid.position(n);
        let s = phantom.sigma_at(x);
        let kappa = phantom.kappa_at(x);
        let rho = kappa * row_max;
        if s - rho < r.min_margin {
            r.min_margin = s - rho;
            r.worst_margin_point = x;
        }
        if s < r.min_sigma {
            r.min_sigma = s;
            r.worst_sigma_point = x;
        }
        let kmin = (kappa * p_min).min(kappa * p.iter().cloned().fold(f64::INFINITY, f64::max));
        if kmin < r.min_k {
            r.min_k = kmin;
            r.worst_k_point = x;
        }
        r.max_rho = r.max_rho.max(rho);
        r.max_sigma = r.max_sigma.max(s);
        r.max_isotropy_defect = r.max_isotropy_defect.max(kappa.abs() * defect);
    }
    Ok(r)
}

/// Checks the regularity, absorption and isotropy conditions.
pub fn validate(phantom: &Phantom, disc: &Discretization) -> Result<ValidationReport> {
    let r = assess(phantom, disc)?;
    r.check(phantom.margin)?;
    Ok(r)
}

/// Optional overrides for library phantoms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomParams {
    pub sigma0: f64,
    pub kappa0: f64,
    /// Henyey-Greenstein asymmetry; zero gives isotropic scattering.
    pub anisotropy: f64,
    /// Scales every bump or inclusion amplitude.
    pub contrast: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams { sigma0: 2.0, kappa0: 0.1, anisotropy: 0.0, contrast: 1.0 }
    }
}

pub const PHANTOM_NAMES: [&str; 3] = ["homogeneous", "gaussian-bumps", "two-inclusion"];

/// Analytic phantoms placed relative to the domain's bounding box.
pub fn phantom_library(name: &str, params: &PhantomParams, domain: &Domain) -> Result<Phantom> {
    let (lo, hi) = domain.bounding_box();
    let at = |f: [f64; 3]| -> Vec3 {
        let mut p = [0.0; 3];
        for a in 0..domain.dim {
            p[a] = lo[a] + f[a] * (hi[a] - lo[a]);
        }
        p
    };
    let size = (0..domain.dim).map(|a| hi[a] - lo[a]).fold(f64::INFINITY, f64::min);
    let law = if params.anisotropy == 0.0 {
        KernelLaw::Phase { phase: PhaseFunction::Isotropic }
    } else {
        KernelLaw::Phase { phase: PhaseFunction::HenyeyGreenstein { g: params.anisotropy } }
    };
    let c = params.contrast;
    let (sigma, kappa) = match name {
        "homogeneous" => (ScalarField::constant(params.sigma0), ScalarField::constant(params.kappa0)),
        "gaussian-bumps" => (
            ScalarField::Bumps {
                base: 0.75 * params.sigma0,
                bumps: vec![
                    Bump { center: at([0.4, 0.55, 0.5]), width: 0.15 * size, amplitude: 0.5 * c },
                    Bump { center: at([0.68, 0.35, 0.45]), width: 0.1 * size, amplitude: 0.3 * c },
                ],
            },
            ScalarField::Bumps {
                base: params.kappa0,
                bumps: vec![Bump { center: at([0.55, 0.6, 0.5]), width: 0.2 * size, amplitude: 0.1 * c }],
            },
        ),
        "two-inclusion" => (
            ScalarField::Inclusions {
                base: 0.75 * params.sigma0,
                inclusions: vec![
                    Inclusion { center: at([0.35, 0.4, 0.5]), radius: 0.15 * size, edge: 0.04 * size, amplitude: 0.6 * c },
                    Inclusion { center: at([0.68, 0.62, 0.5]), radius: 0.1 * size, edge: 0.04 * size, amplitude: 0.4 * c },
                ],
            },
            ScalarField::Inclusions {
                base: params.kappa0,
                inclusions: vec![Inclusion {
                    center: at([0.35, 0.4, 0.5]),
                    radius: 0.15 * size,
                    edge: 0.04 * size,
                    amplitude: 0.05 * c,
                }],
            },
        ),
        other => return Err(Error::UnknownPhantom(other.to_string())),
    };
    Ok(Phantom { name: name.to_string(), sigma, kernel: Kernel { kappa, law }, margin: 0.1 })
}

/// Plane-wave ultrasound modulation `cos(Q . x + phase)` with couplings `a`, `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UltrasoundProbe {
    pub q: Vec3,
    pub phase: f64,
    pub a: f64,
    pub b: f64,
}

impl UltrasoundProbe {
    pub fn new(q: Vec3, phase: f64, a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::Parameter("coupling amplitudes must be finite".into()));
        }
        Ok(UltrasoundProbe { q, phase, a, b })
    }

    pub fn modulation(&self, x: Vec3) -> f64 {
        (dot(self.q, x) + self.phase).cos()
    }

    /// Rejects wavevectors beyond the grid's Nyquist limit `pi / spacing`.
    pub fn check_nyquist(&self, grid: &SpatialGrid) -> Result<()> {
        for a in 0..grid.dim {
            let limit = PI / grid.spacing[a];
            if self.q[a].abs() > limit * (1.0 + 1e-12) {
                return Err(Error::Aliasing(format!(
                    "|Q_{a}| = {:.4} exceeds the Nyquist limit {:.4}",
                    self.q[a].abs(),
                    limit
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AngularGrid, SpatialGrid};
    use approx::assert_abs_diff_eq;

    fn disc2(n: usize, m: usize) -> Discretization {
        let d = Domain::unit_box(2);
        let g = SpatialGrid::cubic(&d, n).unwrap();
        Discretization::new(d, g, AngularGrid::circle(m).unwrap()).unwrap()
    }

    fn disc3() -> Discretization {
        let d = Domain::unit_box(3);
        let g = SpatialGrid::cubic(&d, 6).unwrap();
        Discretization::new(d, g, AngularGrid::product(8, 16).unwrap()).unwrap()
    }

    #[test]
    fn zero_scattering_passes_with_full_margin() {
        let p = Phantom { name: "t".into(), sigma: ScalarField::constant(2.0), kernel: Kernel::none(), margin: 0.1 };
        let r = validate(&p, &disc2(8, 16)).unwrap();
        assert_abs_diff_eq!(r.min_margin, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn supercritical_scattering_fails_absorption() {
        let p = Phantom {
            name: "t".into(),
            sigma: ScalarField::constant(1.0),
            kernel: Kernel::isotropic(ScalarField::constant(2.0)),
            margin: 0.1,
        };
        match validate(&p, &disc2(8, 16)) {
            Err(Error::Validation { condition: Condition::Absorption, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn separable_kernel_has_no_isotropy_defect() {
        let mut p = phantom_library("homogeneous", &PhantomParams::default(), &Domain::unit_box(3)).unwrap();
        p.kernel.law = KernelLaw::Phase { phase: PhaseFunction::HenyeyGreenstein { g: 0.4 } };
        let r = assess(&p, &disc3()).unwrap();
        assert!(r.max_isotropy_defect <= 1e-15);
    }

    #[test]
    fn asymmetric_table_fails_isotropy() {
        let disc = disc2(6, 8);
        let m = 8;
        let mut values = vec![1.0 / (2.0 * PI); m * m];
        values[1] *= 1.5;
        let p = Phantom {
            name: "t".into(),
            sigma: ScalarField::constant(2.0),
            kernel: Kernel { kappa: ScalarField::constant(0.1), law: KernelLaw::Table { m, values } },
            margin: 0.1,
        };
        match validate(&p, &disc) {
            Err(Error::Validation { condition: Condition::Isotropy, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rho_matches_kappa_for_normalized_phase() {
        for disc in [disc2(6, 32), disc3()] {
            let p = phantom_library("homogeneous", &PhantomParams::default(), &disc.domain).unwrap();
            let r = assess(&p, &disc).unwrap();
            assert_abs_diff_eq!(r.max_rho, 0.1, epsilon = 1e-12);
        }
        let mut p = phantom_library("homogeneous", &PhantomParams::default(), &Domain::unit_box(2)).unwrap();
        p.kernel.law = KernelLaw::Phase { phase: PhaseFunction::HenyeyGreenstein { g: 0.3 } };
        let r = assess(&p, &disc2(6, 64)).unwrap();
        assert_abs_diff_eq!(r.max_rho, 0.1, epsilon = 1e-6);
    }

    /// Dense sampling of `sigma - kappa` as an independent margin oracle.
    fn sampled_margin(p: &Phantom, dim: usize) -> f64 {
        let n = 41;
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                for k in 0..if dim == 3 { n } else { 1 } {
                    let x = [i as f64 / 40.0, j as f64 / 40.0, if dim == 3 { k as f64 / 40.0 } else { 0.0 }];
                    best = best.min(p.sigma_at(x) - p.kappa_at(x));
                }
            }
        }
        best
    }

    #[test]
    fn library_phantoms_validate() {
        for dim in [2, 3] {
            let d = Domain::unit_box(dim);
            let disc = if dim == 2 { disc2(17, 32) } else { disc3() };
            for name in PHANTOM_NAMES {
                let p = phantom_library(name, &PhantomParams::default(), &d).unwrap();
                let r = validate(&p, &disc).unwrap();
                assert!(r.min_margin >= 0.1, "{name}: {}", r.min_margin);
                assert!(sampled_margin(&p, dim) > 0.1, "{name}");
            }
        }
    }

    #[test]
    fn unknown_phantom_is_rejected() {
        assert!(matches!(
            phantom_library("nope", &PhantomParams::default(), &Domain::unit_box(2)),
            Err(Error::UnknownPhantom(_))
        ));
    }

    #[test]
    fn phase_functions_are_normalized() {
        for g in [0.0, 0.3, 0.7] {
            let pf = PhaseFunction::HenyeyGreenstein { g };
            let n = 20000;
            let s2: f64 = (0..n).map(|i| pf.eval((2.0 * PI * (i as f64 + 0.5) / n as f64).cos(), 2)).sum::<f64>()
                * 2.0 * PI / n as f64;
            assert_abs_diff_eq!(s2, 1.0, epsilon = 1e-9);
            let s3: f64 = (0..n).map(|i| pf.eval(-1.0 + 2.0 * (i as f64 + 0.5) / n as f64, 3)).sum::<f64>()
                * 2.0 / n as f64 * 2.0 * PI;
            assert_abs_diff_eq!(s3, 1.0, epsilon = 1e-5);
        }
    }

    #[test]
    fn probe_nyquist_guard() {
        let d = Domain::unit_box(2);
        let g = SpatialGrid::cubic(&d, 11).unwrap();
        assert!(UltrasoundProbe::new([10.0 * PI, 0.0, 0.0], 0.0, 1.0, 1.0).unwrap().check_nyquist(&g).is_ok());
        assert!(matches!(
            UltrasoundProbe::new([10.5 * PI, 0.0, 0.0], 0.0, 1.0, 1.0).unwrap().check_nyquist(&g),
            Err(Error::Aliasing(_))
        ));
    }
}
