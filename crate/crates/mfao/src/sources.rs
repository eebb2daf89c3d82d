//! Width-`h` approximations of point sources, point detectors and the
//! oscillatory plane sources, plus the scaling audit of their collision terms.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coefficients::Phantom;
use crate::error::{Component, Error, Result};
use crate::geometry::{
    axpy, dist, dot, gamma, normalize, optical_distance, AngularGrid, Discretization, Domain, Sign, SpatialGrid, Vec3,
};
use crate::stats::loglog_slope;
use crate::transport::{BoundaryField, RadianceField, SolveOptions, SpatialProfile, Transport};

/// Nodal values of `delta^h_theta`: `h^{-(n-1)}` on nodes within chord `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularDelta {
    pub theta: Vec3,
    pub h: f64,
    pub values: Vec<f64>,
    pub support: Vec<usize>,
    /// `sum_j w_j delta(theta_j)`.
    pub mass: f64,
}

pub fn make_angular_delta(angles: &AngularGrid, theta: Vec3, h: f64) -> Result<AngularDelta> {
    if !(h > 0.0) {
        return Err(Error::Parameter("delta width must be positive".into()));
    }
    let theta = normalize(theta);
    let height = h.powi(-(angles.dim as i32 - 1));
    let mut values = vec![0.0; angles.len()];
    let mut support = Vec::new();
    for (j, n) in angles.nodes.iter().enumerate() {
        if dist(*n, theta) < h {
            values[j] = height;
            support.push(j);
        }
    }
    if support.is_empty() {
        return Err(Error::Unresolved(format!("no direction within {h} of {theta:?}")));
    }
    let mass = support.iter().map(|&j| angles.weights[j] * height).sum();
    Ok(AngularDelta { theta, h, values, support, mass })
}

/// Delta whose cap holds only the node nearest `theta`.
pub fn single_node_delta(angles: &AngularGrid, theta: Vec3) -> Result<AngularDelta> {
    let (j, _) = angles.nearest(theta);
    make_angular_delta(angles, angles.nodes[j], 0.5 * angles.separation(j))
}

/// `f(x, theta) = delta^h(theta) exp(i x3 . x / h)` on the incoming boundary.
pub fn make_oscillatory_source(
    disc: &Discretization,
    delta: &AngularDelta,
    x3: Vec3,
    h: f64,
) -> Result<BoundaryField<Complex64>> {
    if disc.dim() != 3 {
        return Err(Error::Parameter("oscillatory sources need three dimensions".into()));
    }
    let x3 = normalize(x3);
    if dot(delta.theta, x3).abs() > 1e-12 {
        return Err(Error::Parameter("the source direction must be orthogonal to the oscillation axis".into()));
    }
    let spacing = disc.grid.max_spacing();
    if 2.0 * std::f64::consts::PI * h < 4.0 * spacing {
        return Err(Error::Aliasing(format!(
            "wavelength {:.4} is below four boundary spacings ({:.4})",
            2.0 * std::f64::consts::PI * h,
            4.0 * spacing
        )));
    }
    Ok(BoundaryField::Separable {
        component: Component::Incoming,
        angular: delta.values.iter().map(|v| Complex64::new(*v, 0.0)).collect(),
        spatial: SpatialProfile::Wave { wavevector: x3.map(|c| c / h), phase: 0.0 },
    })
}

/// A boundary beam: disks of radius `radius` around `centers` times an angular
/// delta, on the incoming or outgoing component.
#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    pub field: BoundaryField<f64>,
    /// Angular mass times spatial height.
    pub mass: f64,
    pub height: f64,
}

fn check_beam_anchor(domain: &Domain, x0: Vec3, theta: Vec3, component: Component) -> Result<()> {
    if !domain.on_boundary(x0) {
        return Err(Error::OutsideDomain { point: x0 });
    }
    let c = dot(theta, domain.normal(x0));
    let ok = match component {
        Component::Outgoing => c > 0.0,
        Component::Incoming => c < 0.0,
    };
    if !ok {
        return Err(Error::Parameter(format!("direction {theta:?} does not point {component:?} at {x0:?}")));
    }
    Ok(())
}

/// `g = h^{n-1} delta^h_x delta^h_theta2`, with the spatial delta of width
/// `radius` and height `radius^{-(n-1)}`, so `g` is the disk indicator times
/// the angular delta.
pub fn make_point_detector(domain: &Domain, centers: &[Vec3], radius: f64, delta: &AngularDelta) -> Result<Beam> {
    for c in centers {
        check_beam_anchor(domain, *c, delta.theta, Component::Outgoing)?;
    }
    Ok(beam(centers, radius, delta, Component::Outgoing, 1.0))
}

/// `f = delta^h_x delta^h_theta1` with spatial height `height`.
pub fn make_point_source(domain: &Domain, centers: &[Vec3], radius: f64, delta: &AngularDelta, height: f64) -> Result<Beam> {
    for c in centers {
        check_beam_anchor(domain, *c, delta.theta, Component::Incoming)?;
    }
    Ok(beam(centers, radius, delta, Component::Incoming, height))
}

fn beam(centers: &[Vec3], radius: f64, delta: &AngularDelta, component: Component, height: f64) -> Beam {
    Beam {
        field: BoundaryField::Separable {
            component,
            angular: delta.values.clone(),
            spatial: SpatialProfile::Disks { centers: centers.to_vec(), radius, height },
        },
        mass: delta.mass * height,
        height,
    }
}

/// One row of the scaling audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub h: f64,
    pub jf_sup: f64,
    pub jf_l1: f64,
    pub kjf_sup: f64,
    pub kjf_l1: f64,
    pub r_sup: f64,
    pub kjg_off_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingAudit {
    pub rows: Vec<AuditRow>,
    pub jf_sup_slope: f64,
    pub jf_l1_slope: f64,
    pub kjf_sup_slope: f64,
    pub kjf_l1_slope: f64,
    pub r_sup_slope: f64,
    pub kjg_off_cap_slope: f64,
}

/// Geometry of the audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub grid_nodes: usize,
    /// Rings of the fine polar grid about the source and detector directions.
    pub cap_rings: usize,
    pub cap_meridians: usize,
    pub theta1: Vec3,
    pub x3: Vec3,
    pub detector: Vec3,
    pub theta2: Vec3,
    /// Depth of the off-cap probe point along `-theta2` from the detector.
    pub probe_depth: f64,
    pub off_cap_direction: Vec3,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            grid_nodes: 16,
            cap_rings: 400,
            cap_meridians: 16,
            theta1: [1.0, 0.0, 0.0],
            x3: [0.0, 0.0, 1.0],
            detector: [0.5, 1.0, 0.5],
            theta2: [0.0, 1.0, 0.0],
            probe_depth: 0.5,
            off_cap_direction: [0.8, 0.0, 0.6],
        }
    }
}

/// Measures the collision terms of the oscillatory source and the point
/// detector over an `h` sweep, and fits their power laws in `h`.
///
/// `Jf` is evaluated on a fine polar grid about `theta1`. `A2 Jf` is formed
/// from those directions and lifted on a coarse product grid, where `R` is the
/// remaining collision series. `K* J* g` is evaluated without a grid by
/// marching along the probe ray and summing over a fine polar grid about
/// `theta2`.
pub fn scaling_audit(phantom: &Phantom, hs: &[f64], cfg: &AuditConfig, opts: &SolveOptions) -> Result<ScalingAudit> {
    if hs.len() < 3 {
        return Err(Error::TooFewSamples("the audit needs at least three widths".into()));
    }
    let domain = Domain::unit_box(3);
    let grid = SpatialGrid::cubic(&domain, cfg.grid_nodes)?;
    let out_angles = AngularGrid::polar_uniform(cfg.x3, cfg.theta1, 8, 16)?;
    let disc = Arc::new(Discretization::new(domain, grid.clone(), out_angles.clone())?);
    let t = Transport::new(disc.clone(), phantom)?;
    let cap1 = AngularGrid::polar_uniform(cfg.theta1, cfg.x3, cfg.cap_rings, cfg.cap_meridians)?;
    let cap2 = AngularGrid::polar_uniform(cfg.theta2, cfg.x3, cfg.cap_rings, cfg.cap_meridians)?;
    let p_out = |a: Vec3, b: Vec3| match &phantom.kernel.law {
        crate::coefficients::KernelLaw::Phase { phase } => Ok(phase.eval(dot(a, b), 3)),
        _ => Err(Error::Parameter("the audit needs a phase-function kernel".into())),
    };
    let sigma = |p: Vec3| phantom.sigma_at(p);
    let mut rows = Vec::new();
    for &h in hs {
        let delta = make_angular_delta(&cap1, cfg.theta1, h)?;
        let n = grid.len();
        // Jf on the cap directions
        let mut jf = vec![vec![Complex64::default(); n]; delta.support.len()];
        for (s, &j) in delta.support.iter().enumerate() {
            let th = cap1.nodes[j];
            for node in 0..n {
                let x = grid.position(node);
                let entry = gamma(&domain, x, th, Sign::Minus)?;
                let phase = Complex64::from_polar(1.0, dot(cfg.x3, entry) / h);
                jf[s][node] = phase * delta.values[j] * (-optical_distance(&sigma, x, entry, disc.step)).exp();
            }
        }
        let jf_sup = jf.iter().flatten().fold(0.0f64, |m, v| m.max(v.norm()));
        let jf_l1 = (0..n)
            .map(|node| delta.support.iter().enumerate().map(|(s, &j)| cap1.weights[j] * jf[s][node].norm()).sum::<f64>())
            .fold(0.0f64, f64::max);
        // A2 Jf onto the coarse output directions, then lift
        let mut src = RadianceField::<Complex64>::zeros(&disc);
        for i in 0..out_angles.len() {
            let weights: Vec<f64> = delta
                .support
                .iter()
                .map(|&j| Ok(p_out(out_angles.nodes[i], cap1.nodes[j])? * cap1.weights[j]))
                .collect::<Result<_>>()?;
            let slab = src.slab_mut(i);
            for node in 0..n {
                let kappa = phantom.kappa_at(grid.position(node));
                let mut acc = Complex64::default();
                for (s, w) in weights.iter().enumerate() {
                    acc += jf[s][node] * *w;
                }
                slab[node] = acc * kappa;
            }
        }
        let kjf = t.lift(&src);
        let kjf_sup = kjf.sup_norm();
        let kjf_l1 = (0..n).map(|node| kjf.angular_l1(node)).fold(0.0f64, f64::max);
        let r = t.neumann(t.collide(&kjf), opts)?.field;
        let r_sup = r.sup_norm();
        let kjg = off_cap_adjoint_term(phantom, &domain, &cap2, cfg, h, disc.step, &p_out)?;
        rows.push(AuditRow { h, jf_sup, jf_l1, kjf_sup, kjf_l1, r_sup, kjg_off_cap: kjg });
    }
    let slope = |f: fn(&AuditRow) -> f64| {
        let x: Vec<f64> = rows.iter().map(|r| r.h).collect();
        let y: Vec<f64> = rows.iter().map(f).collect();
        loglog_slope(&x, &y)
    };
    Ok(ScalingAudit {
        jf_sup_slope: slope(|r| r.jf_sup),
        jf_l1_slope: slope(|r| r.jf_l1),
        kjf_sup_slope: slope(|r| r.kjf_sup),
        kjf_l1_slope: slope(|r| r.kjf_l1),
        r_sup_slope: slope(|r| r.r_sup),
        kjg_off_cap_slope: slope(|r| r.kjg_off_cap),
        rows,
    })
}

/// `K* J* g (x, theta)` for the point detector of width `h` at a point `x` on
/// the detector line and a direction `theta` far from `theta2`.
fn off_cap_adjoint_term(
    phantom: &Phantom,
    domain: &Domain,
    cap2: &AngularGrid,
    cfg: &AuditConfig,
    h: f64,
    step: f64,
    p: &dyn Fn(Vec3, Vec3) -> Result<f64>,
) -> Result<f64> {
    let delta = make_angular_delta(cap2, cfg.theta2, h)?;
    let theta = normalize(cfg.off_cap_direction);
    let x = axpy(cfg.detector, -cfg.probe_depth, cfg.theta2);
    let sigma = |q: Vec3| phantom.sigma_at(q);
    let exit = gamma(domain, x, theta, Sign::Plus)?;
    let len = dist(x, exit);
    let ds = (h / 40.0).min(step);
    let m = (len / ds).ceil() as usize;
    let dt = len / m as f64;
    // J* g (y, theta') = exp(-tau(gamma_+, y)) g(gamma_+(y, theta'), theta')
    let adj = |y: Vec3| -> Result<f64> {
        let mut acc = 0.0;
        for &j in &delta.support {
            let th = cap2.nodes[j];
            let out = gamma(domain, y, th, Sign::Plus)?;
            if dist(out, cfg.detector) >= h {
                continue;
            }
            // adjoint kernel k(y, theta', theta) with theta' the detector direction
            let k = phantom.kappa_at(y) * p(th, theta)?;
            acc += cap2.weights[j] * delta.values[j] * k * (-optical_distance(&sigma, y, out, step)).exp();
        }
        Ok(acc)
    };
    let mut total = 0.0;
    let mut tau = 0.0;
    let mut prev = (x, sigma(x));
    for i in 0..=m {
        let y = axpy(x, i as f64 * dt, theta);
        if i > 0 {
            let s = sigma(y);
            tau += 0.5 * (prev.1 + s) * dt;
            prev = (y, s);
        }
        let w = if i == 0 || i == m { 0.5 * dt } else { dt };
        let a = adj(y)?;
        if a != 0.0 {
            total += w * (-tau).exp() * a;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{phantom_library, PhantomParams};

    #[test]
    fn single_node_delta_has_one_value() {
        let a = AngularGrid::circle(32).unwrap();
        let d = single_node_delta(&a, [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(d.support, vec![0]);
        assert_eq!(d.values[0], 1.0 / d.h);
    }

    #[test]
    fn unresolved_cap_is_rejected() {
        let a = AngularGrid::product(4, 8).unwrap();
        assert!(matches!(make_angular_delta(&a, [0.0, 0.0, 1.0], 1e-3), Err(Error::Unresolved(_))));
    }

    #[test]
    fn cap_mass_tends_to_pi() {
        // the chord cap of radius h on the sphere has area pi h^2 exactly
        let a = AngularGrid::polar_uniform([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], 400, 64).unwrap();
        for h in [0.4, 0.2, 0.1] {
            let d = make_angular_delta(&a, [0.0, 0.0, 1.0], h).unwrap();
            let ring = std::f64::consts::PI / 400.0;
            let edge = 2.0 * std::f64::consts::PI * ring / h;
            assert!((d.mass - std::f64::consts::PI).abs() < edge, "{h}: {}", d.mass);
        }
    }

    #[test]
    fn antipodal_delta_has_antipodal_support() {
        let a = AngularGrid::product(8, 16).unwrap();
        let th = a.nodes[5];
        let d = make_angular_delta(&a, th, 0.5).unwrap();
        let e = make_angular_delta(&a, th.map(|c| -c), 0.5).unwrap();
        let mut mapped: Vec<usize> = d.support.iter().map(|&j| a.antipode[j]).collect();
        mapped.sort();
        assert_eq!(mapped, e.support);
    }

    fn disc3(n: usize) -> Discretization {
        let d = Domain::unit_box(3);
        Discretization::new(d, SpatialGrid::cubic(&d, n).unwrap(), AngularGrid::product(4, 8).unwrap()).unwrap()
    }

    #[test]
    fn oscillatory_source_phase_and_modulus() {
        let disc = disc3(9);
        let delta = make_angular_delta(&disc.angles, [1.0, 0.0, 0.0], 0.9).unwrap();
        let f = make_oscillatory_source(&disc, &delta, [0.0, 0.0, 1.0], 0.3).unwrap();
        let j = delta.support[0];
        let at = |z: f64| f.eval([0.0, 0.4, z], j);
        assert!((at(0.0) - Complex64::new(delta.values[j], 0.0)).norm() < 1e-14);
        let dphi = (at(0.25) / at(0.1)).arg();
        assert!((dphi - 0.15 / 0.3).abs() < 1e-12);
        assert_eq!(f.eval([0.0, 0.4, 0.2], delta.support.iter().map(|_| 0).find(|k| !delta.support.contains(k)).unwrap_or(0)).norm(), 0.0);
        assert!((at(0.7).norm() - delta.values[j]).abs() < 1e-12);
    }

    #[test]
    fn oscillatory_source_guards() {
        let disc = disc3(9);
        let delta = make_angular_delta(&disc.angles, [1.0, 0.0, 0.0], 0.9).unwrap();
        assert!(make_oscillatory_source(&disc, &delta, [0.3, 0.0, 1.0], 0.3).is_err());
        assert!(matches!(make_oscillatory_source(&disc, &delta, [0.0, 0.0, 1.0], 0.05), Err(Error::Aliasing(_))));
    }

    #[test]
    fn point_detector_support_and_height() {
        let d = Domain::unit_box(2);
        let a = AngularGrid::circle(64).unwrap();
        let delta = make_angular_delta(&a, [1.0, 0.0, 0.0], 0.12).unwrap();
        let b = make_point_detector(&d, &[[1.0, 0.5, 0.0]], 0.05, &delta).unwrap();
        assert_eq!(b.field.sup_norm(), 1.0 / 0.12);
        for &j in &delta.support {
            assert!(dist(a.nodes[j], [1.0, 0.0, 0.0]) <= 0.12);
        }
        assert_eq!(b.field.eval([1.0, 0.56, 0.0], delta.support[0]), 0.0);
        // outward-pointing requirement
        assert!(make_point_detector(&d, &[[0.0, 0.5, 0.0]], 0.05, &delta).is_err());
        assert!(make_point_detector(&d, &[[0.5, 0.5, 0.0]], 0.05, &delta).is_err());
    }

    #[test]
    fn audit_without_scattering_has_no_collision_terms() {
        let d = Domain::unit_box(3);
        let ph = phantom_library("homogeneous", &PhantomParams::default(), &d).unwrap().without_scattering();
        let cfg = AuditConfig { grid_nodes: 8, cap_rings: 48, ..Default::default() };
        let audit = scaling_audit(&ph, &[0.4, 0.3, 0.2], &cfg, &SolveOptions::default()).unwrap();
        for r in &audit.rows {
            assert_eq!((r.kjf_sup, r.r_sup, r.kjg_off_cap), (0.0, 0.0, 0.0));
        }
        assert!((audit.jf_sup_slope + 2.0).abs() < 0.3);
    }
}
