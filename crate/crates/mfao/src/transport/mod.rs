//! The transport operator algebra: ballistic solution `J`, lift `T^{-1}`,
//! scattering `A2`, collision operator `K = T^{-1} A2` and the collision
//! expansion solver.

pub mod field;
pub mod lift;

use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{validate, Phantom, ValidationReport};
use crate::error::{Component, Error, Result};
use crate::geometry::{dist, dot, gamma, optical_distance, BoundaryMesh, Discretization, Sign, Vec3};

pub use field::{BoundaryField, FieldData, FieldHeader, Provenance, RadianceField, Scalar, SpatialProfile};
pub use lift::LiftPlan;

/// Default memory budget for a stored lift plan.
pub const PLAN_BUDGET: usize = 2 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_terms: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-8, max_terms: 200 }
    }
}

/// A solution with the sup norms of its collision terms.
#[derive(Debug, Clone)]
pub struct Solution<T> {
    pub field: RadianceField<T>,
    pub term_norms: Vec<f64>,
}

impl<T> Solution<T> {
    pub fn ratios(&self) -> Vec<f64> {
        self.term_norms.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect()
    }

    pub fn terms(&self) -> usize {
        self.term_norms.len()
    }
}

/// A phantom bound to a discretization.
pub struct Transport {
    pub disc: Arc<Discretization>,
    pub phantom: Phantom,
    pub report: ValidationReport,
    kappa: Vec<f64>,
    /// `p(theta_i, theta_j) w_j`, row-major.
    scatter: Vec<f64>,
    /// Constant kernel value when the phase is isotropic.
    isotropic: Option<f64>,
    plan: OnceLock<LiftPlan>,
    budget: usize,
}

impl std::fmt::Debug for Transport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transport").field("phantom", &self.phantom.name).field("plan", &self.plan.get()).finish()
    }
}

impl Transport {
    /// Binds and validates a phantom.
    pub fn new(disc: Arc<Discretization>, phantom: &Phantom) -> Result<Self> {
        let report = validate(phantom, &disc)?;
        Transport::build(disc, phantom, report)
    }

    /// Binds without enforcing the admissibility conditions.
    pub fn unchecked(disc: Arc<Discretization>, phantom: &Phantom) -> Result<Self> {
        let report = crate::coefficients::assess(phantom, &disc)?;
        Transport::build(disc, phantom, report)
    }

    fn build(disc: Arc<Discretization>, phantom: &Phantom, report: ValidationReport) -> Result<Self> {
        let m = disc.directions();
        let p = phantom.kernel.angular_matrix(&disc.angles)?;
        let mut scatter = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                scatter[i * m + j] = p[i * m + j] * disc.angles.weights[j];
            }
        }
        let isotropic = phantom.kernel.is_isotropic_phase().then(|| p[0]);
        let kappa = (0..disc.nodes())
            .map(|n| if disc.inside[n] { phantom.kappa_at(disc.grid.position(n)) } else { 0.0 })
            .collect();
        Ok(Transport {
            disc,
            phantom: phantom.clone(),
            report,
            kappa,
            scatter,
            isotropic,
            plan: OnceLock::new(),
            budget: PLAN_BUDGET,
        })
    }

    pub fn with_budget(mut self, bytes: usize) -> Self {
        self.budget = bytes;
        self.plan = OnceLock::new();
        self
    }

    pub fn sigma(&self, x: Vec3) -> f64 {
        self.phantom.sigma_at(x)
    }

    /// Optical distance between two points.
    pub fn tau(&self, x: Vec3, y: Vec3) -> f64 {
        optical_distance(&|p: Vec3| self.phantom.sigma_at(p), x, y, self.disc.step)
    }

    pub fn plan(&self) -> &LiftPlan {
        self.plan.get_or_init(|| {
            let sigma = |p: Vec3| self.phantom.sigma_at(p);
            LiftPlan::build(&self.disc, &sigma, self.budget)
        })
    }

    fn check_component<T: Scalar>(f: &BoundaryField<T>, expected: Component) -> Result<()> {
        if f.component() != expected {
            return Err(Error::Contract { expected, found: f.component() });
        }
        Ok(())
    }

    /// `Jf(x, theta) = exp(-tau(x, gamma_-)) f(gamma_-, theta)`.
    pub fn ballistic<T: Scalar>(&self, f: &BoundaryField<T>) -> Result<RadianceField<T>> {
        Transport::check_component(f, Component::Incoming)?;
        let disc = &self.disc;
        let n = disc.nodes();
        let mut out = RadianceField::zeros(disc);
        let support = f.angular_support(disc.directions());
        out.values.par_chunks_mut(n).enumerate().for_each(|(j, slab)| {
            if !support.contains(&j) {
                return;
            }
            let theta = disc.angles.nodes[j];
            for (node, o) in slab.iter_mut().enumerate() {
                if !disc.inside[node] {
                    continue;
                }
                let x = disc.grid.position(node);
                let Ok(entry) = gamma(&disc.domain, x, theta, Sign::Minus) else { continue };
                let v = f.eval(entry, j);
                if v.is_zero() {
                    continue;
                }
                *o = v * (-self.tau(x, entry)).exp();
            }
        });
        Ok(out)
    }

    /// `A2 w(x, theta_i) = kappa(x) sum_j p_ij w_j w(x, theta_j)`.
    pub fn scatter<T: Scalar>(&self, w: &RadianceField<T>) -> RadianceField<T> {
        let n = self.disc.nodes();
        let m = self.disc.directions();
        let mut out = RadianceField::zeros(&w.disc);
        if let Some(p) = self.isotropic {
            let mut mean = w.angular_integral();
            for (v, k) in mean.iter_mut().zip(&self.kappa) {
                *v = *v * (k * p);
            }
            out.values.par_chunks_mut(n).for_each(|slab| slab.copy_from_slice(&mean));
            return out;
        }
        out.values.par_chunks_mut(n).enumerate().for_each(|(i, slab)| {
            for j in 0..m {
                let b = self.scatter[i * m + j];
                if b == 0.0 {
                    continue;
                }
                for (o, v) in slab.iter_mut().zip(w.slab(j)) {
                    *o += *v * b;
                }
            }
            for (o, k) in slab.iter_mut().zip(&self.kappa) {
                *o = *o * *k;
            }
        });
        out
    }

    /// Adjoint of [`Transport::scatter`] in the weighted pairing, built from the
    /// parity-permuted kernel `k(x, -theta', -theta)`.
    pub fn scatter_adjoint<T: Scalar>(&self, v: &RadianceField<T>) -> RadianceField<T> {
        self.scatter(&v.relabel()).relabel()
    }

    /// `T^{-1} s`.
    pub fn lift<T: Scalar>(&self, s: &RadianceField<T>) -> RadianceField<T> {
        let sigma = |p: Vec3| self.phantom.sigma_at(p);
        self.plan().apply(&self.disc, &sigma, s)
    }

    /// Euclidean transpose of the lift.
    pub fn lift_transpose<T: Scalar>(&self, r: &RadianceField<T>) -> RadianceField<T> {
        let sigma = |p: Vec3| self.phantom.sigma_at(p);
        self.plan().apply_transpose(&self.disc, &sigma, r)
    }

    /// Euclidean transpose of [`Transport::scatter`].
    pub fn scatter_transpose<T: Scalar>(&self, r: &RadianceField<T>) -> RadianceField<T> {
        let n = self.disc.nodes();
        let m = self.disc.directions();
        let mut weighted = r.clone();
        for j in 0..m {
            for (o, k) in weighted.slab_mut(j).iter_mut().zip(&self.kappa) {
                *o = *o * *k;
            }
        }
        let mut out = RadianceField::zeros(&r.disc);
        out.values.par_chunks_mut(n).enumerate().for_each(|(j, slab)| {
            for i in 0..m {
                let b = self.scatter[i * m + j];
                if b == 0.0 {
                    continue;
                }
                for (o, v) in slab.iter_mut().zip(weighted.slab(i)) {
                    *o += *v * b;
                }
            }
        });
        out
    }

    /// `K w = T^{-1} A2 w`.
    pub fn collide<T: Scalar>(&self, w: &RadianceField<T>) -> RadianceField<T> {
        self.lift(&self.scatter(w))
    }

    /// Sums `sum_m K^m first` until a term falls below `tol` times the first.
    pub fn neumann<T: Scalar>(&self, first: RadianceField<T>, opts: &SolveOptions) -> Result<Solution<T>> {
        let norm0 = first.sup_norm();
        let mut term_norms = vec![norm0];
        let mut sum = first.clone();
        if norm0 == 0.0 {
            return Ok(Solution { field: sum, term_norms });
        }
        let mut term = first;
        let mut rising = 0;
        for _ in 1..opts.max_terms {
            term = self.collide(&term);
            let norm = term.sup_norm();
            let prev = *term_norms.last().unwrap();
            term_norms.push(norm);
            sum.add_assign(&term);
            if prev > 0.0 && norm / prev >= 1.0 {
                rising += 1;
                if rising >= 2 {
                    let ratios = term_norms.windows(2).map(|w| w[1] / w[0]).collect();
                    return Err(Error::NonContraction { ratios });
                }
            } else {
                rising = 0;
            }
            if norm < opts.tol * norm0 {
                break;
            }
        }
        Ok(Solution { field: sum, term_norms })
    }

    /// Solves the transport equation with inflow `f`.
    pub fn solve_rte<T: Scalar>(&self, f: &BoundaryField<T>, opts: &SolveOptions) -> Result<Solution<T>> {
        let j = self.ballistic(f)?;
        self.neumann(j, opts)
    }

    /// Solves with zero inflow and interior source `s`.
    pub fn solve_source<T: Scalar>(&self, s: &RadianceField<T>, opts: &SolveOptions) -> Result<Solution<T>> {
        self.neumann(self.lift(s), opts)
    }

    /// Solves the adjoint equation with outflow data `g` on the outgoing boundary,
    /// as the forward problem under `theta -> -theta`.
    pub fn solve_adjoint<T: Scalar>(&self, g: &BoundaryField<T>, opts: &SolveOptions) -> Result<Solution<T>> {
        Transport::check_component(g, Component::Outgoing)?;
        let sol = self.solve_rte(&g.relabel(&self.disc), opts)?;
        Ok(Solution { field: sol.field.relabel(), term_norms: sol.term_norms })
    }

    /// Trace of `u` on the outgoing boundary, sampled on `mesh`.
    pub fn trace<T: Scalar>(&self, u: &RadianceField<T>, mesh: &Arc<BoundaryMesh>) -> BoundaryField<T> {
        let disc = &self.disc;
        let m = disc.directions();
        let mut values = vec![T::default(); mesh.len() * m];
        for (p, bp) in mesh.points.iter().enumerate() {
            let st = disc.grid.stencil(bp.x);
            for j in 0..m {
                if dot(disc.angles.nodes[j], bp.normal) <= 0.0 {
                    continue;
                }
                values[p * m + j] = match bp.node {
                    Some(node) => u.get(node, j),
                    None => {
                        let slab = u.slab(j);
                        let mut acc = T::default();
                        for c in 0..st.len {
                            acc += slab[st.idx[c]] * st.w[c];
                        }
                        acc
                    }
                };
            }
        }
        BoundaryField::Sampled { component: Component::Outgoing, mesh: mesh.clone(), values }
    }

    /// Outgoing boundary trace of the solution with inflow `f`.
    pub fn albedo<T: Scalar>(
        &self,
        f: &BoundaryField<T>,
        mesh: &Arc<BoundaryMesh>,
        opts: &SolveOptions,
    ) -> Result<BoundaryField<T>> {
        let u = self.solve_rte(f, opts)?;
        Ok(self.trace(&u.field, mesh))
    }

    /// Weighted pairing `sum_n vol_n sum_j w_j u v`.
    pub fn pairing(&self, u: &RadianceField<f64>, v: &RadianceField<f64>) -> f64 {
        let vol = self.disc.grid.volume_weights();
        let w = &self.disc.angles.weights;
        let mut acc = 0.0;
        for (j, wj) in w.iter().enumerate() {
            let s: f64 = u.slab(j).iter().zip(v.slab(j)).zip(&vol).map(|((a, b), c)| a * b * c).sum();
            acc += wj * s;
        }
        acc
    }

    /// Relative defect `|<A2 u, v> - <u, A2* v>| / (|u| |v|)` in the weighted pairing.
    pub fn adjoint_defect(&self, u: &RadianceField<f64>, v: &RadianceField<f64>) -> f64 {
        let lhs = self.pairing(&self.scatter(u), v);
        let rhs = self.pairing(u, &self.scatter_adjoint(v));
        let nu = self.pairing(u, u).sqrt();
        let nv = self.pairing(v, v).sqrt();
        (lhs - rhs).abs() / (nu * nv).max(f64::MIN_POSITIVE)
    }

    /// Upwind finite-difference residual `theta . grad u + sigma u - A2 u - s`
    /// at interior nodes, relative to `sup |sigma u|`.
    pub fn residual(&self, u: &RadianceField<f64>, source: Option<&RadianceField<f64>>) -> f64 {
        let disc = &self.disc;
        let grid = &disc.grid;
        let a2 = self.scatter(u);
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for j in 0..disc.directions() {
            let theta = disc.angles.nodes[j];
            let slab = u.slab(j);
            for node in 0..disc.nodes() {
                if !disc.inside[node] || grid.boundary_layer(node) < 1 {
                    continue;
                }
                let c = grid.coords(node);
                let mut deriv = 0.0;
                for a in 0..disc.dim() {
                    let mut up = c;
                    let mut dn = c;
                    up[a] += 1;
                    dn[a] -= 1;
                    let d = (slab[grid.index(up)] - slab[grid.index(dn)]) / (2.0 * grid.spacing[a]);
                    deriv += theta[a] * d;
                }
                let x = grid.position(node);
                let su = self.sigma(x) * slab[node];
                let s = source.map_or(0.0, |s| s.get(node, j));
                worst = worst.max((deriv + su - a2.get(node, j) - s).abs());
                scale = scale.max(su.abs());
            }
        }
        worst / scale.max(f64::MIN_POSITIVE)
    }

    /// Boundary flux `int_{Gamma} |g| |theta . n|` of a sampled field.
    pub fn boundary_flux<T: Scalar>(&self, g: &BoundaryField<T>) -> f64 {
        match g {
            BoundaryField::Sampled { mesh, values, .. } => {
                let m = self.disc.directions();
                let mut acc = 0.0;
                for (p, bp) in mesh.points.iter().enumerate() {
                    for j in 0..m {
                        let c = dot(self.disc.angles.nodes[j], bp.normal).abs();
                        acc += bp.weight * self.disc.angles.weights[j] * c * values[p * m + j].abs();
                    }
                }
                acc
            }
            _ => {
                let mesh = Arc::new(BoundaryMesh::new(&self.disc.domain, &self.disc.grid, 1));
                self.boundary_flux(&g.sample_on(&self.disc, &mesh))
            }
        }
    }

    pub fn kappa_nodes(&self) -> &[f64] {
        &self.kappa
    }

    /// Distance from a node to the inflow boundary along `theta`.
    pub fn depth(&self, x: Vec3, theta: Vec3) -> Result<f64> {
        Ok(dist(x, gamma(&self.disc.domain, x, theta, Sign::Minus)?))
    }
}
