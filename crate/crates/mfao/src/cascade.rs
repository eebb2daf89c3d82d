//! The three-stage acousto-optic system and its boundary measurements.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::UltrasoundProbe;
use crate::error::{Error, Result};
use crate::geometry::{dot, BoundaryMesh, Vec3};
use crate::transport::{BoundaryField, RadianceField, Scalar, Solution, SolveOptions, Transport};

#[derive(Debug, Clone)]
pub struct CascadeSolution {
    pub u00: RadianceField<f64>,
    pub u01: RadianceField<f64>,
    pub u11: RadianceField<f64>,
    pub probe: UltrasoundProbe,
    pub source: BoundaryField<f64>,
}

/// Pointwise product `amp * m(x) * u(x, theta)` at the nodes.
pub fn modulate<T: Scalar, M: Scalar>(
    t: &Transport,
    u: &RadianceField<T>,
    amp: f64,
    m: impl Fn(Vec3) -> M + Sync,
) -> RadianceField<M>
where
    M: std::ops::Mul<T, Output = M>,
{
    let grid = &t.disc.grid;
    let weights: Vec<M> = (0..grid.len()).map(|n| m(grid.position(n)) * amp).collect();
    let n = grid.len();
    let mut out = RadianceField::<M>::zeros(&t.disc);
    out.values.par_chunks_mut(n).enumerate().for_each(|(j, slab)| {
        for ((o, w), v) in slab.iter_mut().zip(&weights).zip(u.slab(j)) {
            *o = *w * *v;
        }
    });
    out
}

/// `u01` from a precomputed `u00`: the collision expansion of the lifted
/// modulated source, with zero inflow.
pub fn solve_u01(t: &Transport, u00: &RadianceField<f64>, probe: &UltrasoundProbe, opts: &SolveOptions) -> Result<Solution<f64>> {
    if probe.a == 0.0 {
        return Ok(Solution { field: RadianceField::zeros(&t.disc), term_norms: vec![0.0] });
    }
    t.solve_source(&modulate(t, u00, probe.a, |x| probe.modulation(x)), opts)
}

/// `u01` for the complex modulation `exp(i Q . x)`.
pub fn solve_u01_complex(t: &Transport, u00: &RadianceField<f64>, q: Vec3, a: f64, opts: &SolveOptions) -> Result<Solution<Complex64>> {
    let s = modulate(t, u00, a, |x| Complex64::from_polar(1.0, dot(q, x)));
    t.solve_source(&s, opts)
}

pub fn solve_cascade(
    t: &Transport,
    probe: &UltrasoundProbe,
    f: &BoundaryField<f64>,
    opts: &SolveOptions,
) -> Result<CascadeSolution> {
    let u00 = t.solve_rte(f, opts)?.field;
    let u01 = solve_u01(t, &u00, probe, opts)?.field;
    let u11 = if probe.b == 0.0 || probe.a == 0.0 {
        RadianceField::zeros(&t.disc)
    } else {
        t.solve_source(&modulate(t, &u01, probe.b, |x| probe.modulation(x)), opts)?.field
    };
    Ok(CascadeSolution { u00, u01, u11, probe: *probe, source: f.clone() })
}

/// `A01(Q, f)`: the outgoing trace of `u01`.
pub fn measure_a01(
    t: &Transport,
    probe: &UltrasoundProbe,
    f: &BoundaryField<f64>,
    mesh: &Arc<BoundaryMesh>,
    opts: &SolveOptions,
) -> Result<BoundaryField<f64>> {
    let u00 = t.solve_rte(f, opts)?.field;
    Ok(t.trace(&solve_u01(t, &u00, probe, opts)?.field, mesh))
}

/// One boundary measurement of `u01`.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub probe: UltrasoundProbe,
    pub trace: BoundaryField<f64>,
}

/// Measurements for a list of probes sharing the source `f`.
pub fn sweep(
    t: &Transport,
    f: &BoundaryField<f64>,
    probes: &[UltrasoundProbe],
    mesh: &Arc<BoundaryMesh>,
    opts: &SolveOptions,
) -> Result<Vec<Measurement>> {
    let u00 = t.solve_rte(f, opts)?.field;
    probes
        .iter()
        .map(|p| Ok(Measurement { probe: *p, trace: t.trace(&solve_u01(t, &u00, p, opts)?.field, mesh) }))
        .collect()
}

/// Boundary pairing `int_{Gamma+} u g theta.n` of a sampled trace.
pub fn boundary_pairing(t: &Transport, trace: &BoundaryField<f64>, g: &BoundaryField<f64>) -> Result<f64> {
    let BoundaryField::Sampled { mesh, values, .. } = trace else {
        return Err(Error::Parameter("boundary pairing needs a sampled trace".into()));
    };
    let disc = &t.disc;
    let m = disc.directions();
    let mut acc = 0.0;
    for (p, bp) in mesh.points.iter().enumerate() {
        for j in 0..m {
            let c = dot(disc.angles.nodes[j], bp.normal);
            if c <= 0.0 {
                continue;
            }
            let v = values[p * m + j];
            if v == 0.0 {
                continue;
            }
            acc += bp.weight * disc.angles.weights[j] * c * v * g.eval(bp.x, j);
        }
    }
    Ok(acc)
}

/// Batched evaluation of `g`-paired `u01` measurements for many probes.
///
/// The pairing `<trace(u01), g>` is a linear functional of the modulated
/// source, so one transposed collision expansion gives a nodal density `G`
/// with `pairing(Q, phi) = a sum_n cos(Q . x_n + phi) G_n`. This is the same
/// discrete quantity as tracing each `u01` and pairing it.
#[derive(Debug, Clone)]
pub struct PairingDensity {
    pub density: Vec<f64>,
    pub positions: Vec<Vec3>,
    pub terms: usize,
}

impl PairingDensity {
    pub fn new(
        t: &Transport,
        u00: &RadianceField<f64>,
        g: &BoundaryField<f64>,
        mesh: &Arc<BoundaryMesh>,
        opts: &SolveOptions,
    ) -> Result<Self> {
        let disc = &t.disc;
        let m = disc.directions();
        let mut r = RadianceField::<f64>::zeros(&t.disc);
        for bp in mesh.points.iter() {
            let st = disc.grid.stencil(bp.x);
            for j in 0..m {
                let c = dot(disc.angles.nodes[j], bp.normal);
                if c <= 0.0 {
                    continue;
                }
                let coef = bp.weight * disc.angles.weights[j] * c * g.eval(bp.x, j);
                if coef == 0.0 {
                    continue;
                }
                match bp.node {
                    Some(node) => {
                        let v = r.get(node, j);
                        r.set(node, j, v + coef);
                    }
                    None => {
                        for k in 0..st.len {
                            let v = r.get(st.idx[k], j);
                            r.set(st.idx[k], j, v + coef * st.w[k]);
                        }
                    }
                }
            }
        }
        // z = sum_m (A2^T L^T)^m r, y = L^T z
        let norm0 = r.sup_norm();
        let mut z = r.clone();
        let mut term = r;
        let mut norms = vec![norm0];
        let mut rising = 0;
        while norm0 > 0.0 && norms.len() < opts.max_terms {
            term = t.scatter_transpose(&t.lift_transpose(&term));
            let norm = term.sup_norm();
            let prev = *norms.last().unwrap();
            norms.push(norm);
            z.add_assign(&term);
            if prev > 0.0 && norm >= prev {
                rising += 1;
                if rising >= 2 {
                    return Err(Error::NonContraction { ratios: norms.windows(2).map(|w| w[1] / w[0]).collect() });
                }
            } else {
                rising = 0;
            }
            if norm < opts.tol * norm0 {
                break;
            }
        }
        let y = t.lift_transpose(&z);
        let density = (0..disc.nodes())
            .map(|n| (0..m).map(|j| y.get(n, j) * u00.get(n, j)).sum())
            .collect();
        let positions = (0..disc.nodes()).map(|n| disc.grid.position(n)).collect();
        Ok(PairingDensity { density, positions, terms: norms.len() })
    }

    /// `int_{Gamma+} u01 g theta.n` for one probe.
    pub fn pairing(&self, probe: &UltrasoundProbe) -> f64 {
        probe.a
            * self
                .density
                .iter()
                .zip(&self.positions)
                .map(|(d, x)| d * probe.modulation(*x))
                .sum::<f64>()
    }

    /// Pairings for both quadrature phases at every wavevector.
    pub fn pairings(&self, qs: &[Vec3], a: f64) -> Vec<PairedRecord> {
        qs.par_iter()
            .flat_map_iter(|q| {
                [0.0, std::f64::consts::FRAC_PI_2].into_iter().map(move |phase| {
                    let probe = UltrasoundProbe { q: *q, phase, a, b: 0.0 };
                    PairedRecord { q: *q, phase, a, value: self.pairing(&probe) }
                })
            })
            .collect()
    }
}

/// A `g`-paired measurement `int_{Gamma+} A01(Q, phi) g theta.n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedRecord {
    pub q: Vec3,
    pub phase: f64,
    pub a: f64,
    pub value: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{phantom_library, Kernel, Phantom, PhantomParams, ScalarField};
    use crate::error::Component;
    use crate::geometry::{AngularGrid, Discretization, Domain, SpatialGrid};
    use crate::transport::SpatialProfile;

    fn setup(n: usize, name: &str) -> Transport {
        let d = Domain::unit_box(2);
        let disc = Arc::new(Discretization::new(d, SpatialGrid::cubic(&d, n).unwrap(), AngularGrid::circle(16).unwrap()).unwrap());
        let ph = phantom_library(name, &PhantomParams::default(), &d).unwrap();
        Transport::new(disc, &ph).unwrap()
    }

    fn inflow(t: &Transport) -> BoundaryField<f64> {
        BoundaryField::Separable {
            component: Component::Incoming,
            angular: (0..t.disc.directions()).map(|j| 1.0 + 0.3 * j as f64).collect(),
            spatial: SpatialProfile::Gaussian { center: [0.0, 0.4, 0.0], width: 0.4 },
        }
    }

    #[test]
    fn zero_coupling_gives_zero_fields() {
        let t = setup(9, "gaussian-bumps");
        let probe = UltrasoundProbe::new([3.0, 0.0, 0.0], 0.0, 0.0, 1.0).unwrap();
        let c = solve_cascade(&t, &probe, &inflow(&t), &SolveOptions::default()).unwrap();
        assert_eq!(c.u01.sup_norm(), 0.0);
        assert_eq!(c.u11.sup_norm(), 0.0);
    }

    #[test]
    fn unmodulated_slab_matches_closed_form() {
        // Q = 0, k = 0, constant sigma: u01 = a d exp(-sigma d) f along the ray,
        // up to interpolation of the exponential u00 between nodes
        let d = Domain::unit_box(2);
        let disc = Arc::new(Discretization::new(d, SpatialGrid::cubic(&d, 17).unwrap(), AngularGrid::circle(8).unwrap()).unwrap());
        let ph = Phantom { name: "slab".into(), sigma: ScalarField::constant(1.3), kernel: Kernel::none(), margin: 0.0 };
        let t = Transport::new(disc.clone(), &ph).unwrap();
        let probe = UltrasoundProbe::new([0.0; 3], 0.0, 0.7, 0.0).unwrap();
        let f = BoundaryField::uniform(&disc, Component::Incoming, 2.0);
        let c = solve_cascade(&t, &probe, &f, &SolveOptions::default()).unwrap();
        // axis directions march through nodes; diagonal ones cross the kink of u00
        for j in [0, 2, 4, 6] {
            for n in 0..disc.nodes() {
                let depth = t.depth(disc.grid.position(n), disc.angles.nodes[j]).unwrap();
                let exact = 0.7 * depth * (-1.3 * depth).exp() * 2.0;
                assert!((c.u01.get(n, j) - exact).abs() < 1.5e-3 * exact.max(0.05), "{} {} at {:?} dir {j}", c.u01.get(n, j), exact, disc.grid.position(n));
            }
        }
    }

    #[test]
    fn cascade_is_linear_and_ordered() {
        let t = setup(9, "two-inclusion");
        let opts = SolveOptions::default();
        let probe = UltrasoundProbe::new([2.0, 1.0, 0.0], 0.3, 0.5, 0.0).unwrap();
        let f = inflow(&t);
        let one = solve_cascade(&t, &probe, &f, &opts).unwrap();
        let two = solve_cascade(&t, &probe, &f.scaled(2.0), &opts).unwrap();
        for (a, b) in one.u01.values.iter().zip(&two.u01.values) {
            assert!((2.0 * a - b).abs() <= 1e-13 * b.abs().max(1e-300));
        }
        assert_eq!(one.u11.sup_norm(), 0.0);
        let with_b = solve_cascade(&t, &UltrasoundProbe { b: 0.4, ..probe }, &f, &opts).unwrap();
        assert_eq!(with_b.u01, one.u01);
        assert!(with_b.u11.sup_norm() > 0.0);
    }

    #[test]
    fn modulated_stages_vanish_on_inflow_boundary() {
        let t = setup(17, "gaussian-bumps");
        let probe = UltrasoundProbe::new([4.0, -2.0, 0.0], 0.0, 1.0, 1.0).unwrap();
        let c = solve_cascade(&t, &probe, &inflow(&t), &SolveOptions::default()).unwrap();
        let disc = &t.disc;
        let sup = c.u00.sup_norm();
        for n in 0..disc.nodes() {
            let x = disc.grid.position(n);
            if !disc.domain.on_boundary(x) {
                continue;
            }
            let nu = disc.domain.normal(x);
            for j in 0..disc.directions() {
                if dot(disc.angles.nodes[j], nu) < 0.0 {
                    assert!(c.u01.get(n, j).abs() <= 1e-12 * sup);
                    assert!(c.u11.get(n, j).abs() <= 1e-12 * sup);
                }
            }
        }
    }

    #[test]
    fn quadrature_phases_assemble_complex_modulation() {
        // exp(iQx) = cos(Qx) - i cos(Qx + pi/2)
        let t = setup(17, "gaussian-bumps");
        let opts = SolveOptions::default();
        let u00 = t.solve_rte(&inflow(&t), &opts).unwrap().field;
        let q = [5.0, 2.0, 0.0];
        let c0 = solve_u01(&t, &u00, &UltrasoundProbe::new(q, 0.0, 1.0, 0.0).unwrap(), &opts).unwrap().field;
        let c1 = solve_u01(&t, &u00, &UltrasoundProbe::new(q, std::f64::consts::FRAC_PI_2, 1.0, 0.0).unwrap(), &opts)
            .unwrap()
            .field;
        let z = solve_u01_complex(&t, &u00, q, 1.0, &opts).unwrap().field;
        let scale = z.sup_norm();
        for k in 0..z.values.len() {
            assert!((z.values[k].re - c0.values[k]).abs() <= 1e-9 * scale);
            assert!((z.values[k].im + c1.values[k]).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn batched_pairings_match_direct_traces() {
        let t = setup(17, "gaussian-bumps");
        let opts = SolveOptions { tol: 1e-12, ..Default::default() };
        let f = inflow(&t);
        let u00 = t.solve_rte(&f, &opts).unwrap().field;
        let mesh = Arc::new(BoundaryMesh::new(&t.disc.domain, &t.disc.grid, 2));
        let g = BoundaryField::Separable {
            component: Component::Outgoing,
            angular: (0..16).map(|j| 1.0 + (j % 3) as f64).collect(),
            spatial: SpatialProfile::Gaussian { center: [1.0, 0.6, 0.0], width: 0.5 },
        };
        let dens = PairingDensity::new(&t, &u00, &g, &mesh, &opts).unwrap();
        for (q, phase) in [([0.0, 0.0, 0.0], 0.0), ([3.0, -6.0, 0.0], 0.0), ([9.0, 3.0, 0.0], std::f64::consts::FRAC_PI_2)] {
            let probe = UltrasoundProbe::new(q, phase, 0.8, 0.0).unwrap();
            let trace = t.trace(&solve_u01(&t, &u00, &probe, &opts).unwrap().field, &mesh);
            let direct = boundary_pairing(&t, &trace, &g).unwrap();
            let batched = dens.pairing(&probe);
            assert!((direct - batched).abs() <= 1e-9 * direct.abs().max(1e-12), "{direct} vs {batched}");
        }
    }
}
