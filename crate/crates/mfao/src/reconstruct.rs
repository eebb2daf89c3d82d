//! Inversion of the internal functional for `sigma` and `k`.
//!
//! Both pipelines read the broken-ray quantity
//! `F(x, t1, t2) = exp(-tau(gamma_+(x, t2), x) - tau(x, gamma_-(x, t1))) k(x, t2, t1)`
//! off a directional derivative of `H`, recover `tau` from a backscatter pair
//! and a transmission, differentiate `tau` for `sigma`, and unwind the
//! exponentials for `k`.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cascade::PairingDensity;
use crate::coefficients::{KernelLaw, Phantom};
use crate::error::{Error, Result};
use crate::functional::{h_from_fields, h_hat_from_boundary, h_recover, FunctionalField, QLattice};
use crate::geometry::{
    axpy, dist, dot, gamma, normalize, optical_distance, AngularGrid, BoundaryMesh, Domain, Sign, SpatialGrid, Vec3,
};
use crate::sources::{make_oscillatory_source, make_point_detector, make_point_source, single_node_delta, AngularDelta, Beam};
use crate::stats::{median, rel_linf};
use crate::transport::{BoundaryField, Provenance, RadianceField, SolveOptions, Transport};

/// A difference quotient of `H` along `theta2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FExtraction {
    pub value: f64,
    pub s: f64,
    /// Gap between the interpolated and nearest-node values, over `s`.
    pub interp_error: f64,
}

/// `[H(x) - H(x - s theta2)] / s` on the real part of `H`, interpolated
/// multilinearly.
pub fn extract_f(h: &FunctionalField, domain: &Domain, x: Vec3, theta2: Vec3, s: f64) -> Result<FExtraction> {
    if !(s > 0.0) {
        return Err(Error::Parameter("difference step must be positive".into()));
    }
    let y = axpy(x, -s, theta2);
    for p in [x, y] {
        if !domain.contains(p) {
            return Err(Error::OutsideDomain { point: p });
        }
    }
    let hx = h.at(x).re;
    let hy = h.at(y).re;
    let near = |p: Vec3| h.values[h.grid.nearest(p).0].re;
    Ok(FExtraction { value: (hx - hy) / s, s, interp_error: ((hx - near(x)).abs() + (hy - near(y)).abs()) / s })
}

/// `tau(x, gamma_-(x, t1))` from `F(x, t1, -t1)`, `F(x, -t1, t1)` and the
/// ballistic transmission `exp(-tau(gamma_-(x, t1), gamma_+(x, t1)))`.
pub fn recover_tau(f_fwd: f64, f_bwd: f64, transmission: f64) -> Result<f64> {
    for (name, v) in [("F forward", f_fwd), ("F backward", f_bwd), ("transmission", transmission)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::LogDomain(format!("{name} = {v:e}")));
        }
    }
    Ok(0.25 * (f_bwd.ln() - f_fwd.ln() - 2.0 * transmission.ln()))
}

/// Derivative of `tau` sampled at spacing `dt`: centered inside, second-order
/// one-sided at the ends.
pub fn recover_sigma(taus: &[f64], dt: f64) -> Result<Vec<f64>> {
    let n = taus.len();
    if n < 3 {
        return Err(Error::TooFewSamples(format!("{n} samples on a ray")));
    }
    let mut out = vec![0.0; n];
    out[0] = (-3.0 * taus[0] + 4.0 * taus[1] - taus[2]) / (2.0 * dt);
    out[n - 1] = (3.0 * taus[n - 1] - 4.0 * taus[n - 2] + taus[n - 3]) / (2.0 * dt);
    for i in 1..n - 1 {
        out[i] = (taus[i + 1] - taus[i - 1]) / (2.0 * dt);
    }
    Ok(out)
}

/// `k(x, t2, t1) = F exp(tau_out + tau_in)`, refusing attenuations above `cap`.
pub fn recover_k(f: f64, tau_out: f64, tau_in: f64, cap: f64) -> Result<f64> {
    let att = tau_out + tau_in;
    if !att.is_finite() || att > cap {
        return Err(Error::DynamicRange { attenuation: att, cap });
    }
    Ok(f * att.exp())
}

/// The true `k(x, out, inn)` when the kernel is analytic.
pub fn kernel_value(phantom: &Phantom, angles: &AngularGrid, x: Vec3, out: Vec3, inn: Vec3) -> Option<f64> {
    if !phantom.kernel.kappa.is_analytic() {
        return None;
    }
    let kappa = phantom.kappa_at(x);
    match &phantom.kernel.law {
        KernelLaw::Phase { phase } => Some(kappa * phase.eval(dot(out, inn), angles.dim)),
        KernelLaw::Table { m, values } => {
            let i = angles.index_of(out)?;
            let j = angles.index_of(inn)?;
            Some(kappa * values[i * m + j])
        }
    }
}

/// Source of `H` for a forward field and a detector.
pub trait FunctionalProvider: Sync {
    fn provenance(&self) -> Provenance;

    /// `H` for each forward field against the outflow weight `g`.
    fn functionals(&self, t: &Transport, u00: &[&RadianceField<f64>], g: &BoundaryField<f64>) -> Result<Vec<FunctionalField>>;
}

/// `H = int u00 v` with `v` from an adjoint solve.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleProvider {
    pub opts: SolveOptions,
}

impl FunctionalProvider for OracleProvider {
    fn provenance(&self) -> Provenance {
        Provenance::Oracle
    }

    fn functionals(&self, t: &Transport, u00: &[&RadianceField<f64>], g: &BoundaryField<f64>) -> Result<Vec<FunctionalField>> {
        let v = t.solve_adjoint(g, &self.opts)?.field;
        Ok(u00.iter().map(|u| h_from_fields(u, &v, &t.phantom.name)).collect())
    }
}

/// `H` synthesized from `g`-paired boundary measurements over a wavevector lattice.
#[derive(Debug, Clone)]
pub struct MeasuredProvider {
    pub opts: SolveOptions,
    pub lattice: QLattice,
    pub a: f64,
    pub mesh: Arc<BoundaryMesh>,
}

impl FunctionalProvider for MeasuredProvider {
    fn provenance(&self) -> Provenance {
        Provenance::FourierRecovered
    }

    fn functionals(&self, t: &Transport, u00: &[&RadianceField<f64>], g: &BoundaryField<f64>) -> Result<Vec<FunctionalField>> {
        let qs: Vec<Vec3> = self.lattice.index_vectors().into_iter().map(|k| self.lattice.wavevector(k)).collect();
        u00.iter()
            .map(|u| {
                let density = PairingDensity::new(t, u, g, &self.mesh, &self.opts)?;
                let coeffs = h_hat_from_boundary(&density.pairings(&qs, self.a))?;
                h_recover(&coeffs, &self.lattice, &t.disc.grid)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrokenRayDatum {
    pub x: Vec3,
    pub theta1: Vec3,
    pub theta2: Vec3,
    pub value: f64,
    pub s: f64,
    pub h: f64,
    pub interp_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KSample {
    pub x: Vec3,
    pub theta2: Vec3,
    pub theta1: Vec3,
    pub value: f64,
    pub truth: Option<f64>,
    pub f: f64,
    pub tau_out: f64,
    pub tau_in: f64,
    pub rotation: usize,
    /// Set on the copy added by the symmetry `k(x, t, t') = k(x, -t', -t)`.
    pub mirrored: bool,
}

impl KSample {
    pub fn rel_error(&self) -> Option<f64> {
        self.truth.filter(|t| *t != 0.0).map(|t| (self.value - t).abs() / t.abs())
    }

    fn key(&self) -> [i64; 9] {
        let r = |v: f64| (v * 1e6).round() as i64;
        [
            r(self.x[0]),
            r(self.x[1]),
            r(self.x[2]),
            r(self.theta2[0]),
            r(self.theta2[1]),
            r(self.theta2[2]),
            r(self.theta1[0]),
            r(self.theta1[1]),
            r(self.theta1[2]),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauSample {
    pub x: Vec3,
    /// Direction of the ray; the value is `tau(gamma_-(x, theta), x)`.
    pub theta: Vec3,
    pub value: f64,
    pub truth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub key: String,
    pub error: String,
}

/// `log F` along one backscatter row, kept for the stability report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowProfile {
    pub axis: usize,
    pub nodes: Vec<usize>,
    pub log_f_fwd: Vec<f64>,
    pub log_f_bwd: Vec<f64>,
    pub log_transmission: f64,
    pub spacing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub rotation: usize,
    pub psi: f64,
    pub theta2: Vec3,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub sigma_rel_linf: Option<f64>,
    pub sigma_median_abs: Option<f64>,
    pub sigma_nodes: usize,
    pub sigma_clamped: usize,
    pub k_rel_max: Option<f64>,
    pub k_rel_median: Option<f64>,
    pub k_samples: usize,
    pub failures: usize,
    pub imaginary_fraction: Option<f64>,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub grid: SpatialGrid,
    /// `sigma` at every node; nodes without an estimate carry a neighbour fill.
    pub sigma: Vec<f64>,
    pub sigma_count: Vec<u32>,
    pub sigma_dispersion: Vec<f64>,
    pub tau: Vec<TauSample>,
    pub k: Vec<KSample>,
    pub data: Vec<BrokenRayDatum>,
    pub rows: Vec<RowProfile>,
    pub coverage: Vec<Coverage>,
    pub failures: Vec<Failure>,
    pub interior_layer: usize,
    pub provenance: Provenance,
    pub metrics: Metrics,
}

impl ReconstructionResult {
    /// The samples together with their images under `(t, t') -> (-t', -t)`.
    pub fn k_symmetric(&self) -> Vec<KSample> {
        let mut out = Vec::with_capacity(2 * self.k.len());
        for s in &self.k {
            out.push(*s);
            out.push(KSample {
                theta2: s.theta1.map(|c| -c),
                theta1: s.theta2.map(|c| -c),
                mirrored: true,
                ..*s
            });
        }
        out
    }

    pub fn interior(&self, node: usize) -> bool {
        self.grid.boundary_layer(node) >= self.interior_layer
    }

    fn finish(&mut self, phantom: &Phantom) {
        let m = &mut self.metrics;
        m.failures = self.failures.len();
        m.k_samples = self.k.len();
        let covered: Vec<usize> = self.sigma_count.iter().enumerate().filter(|(_, c)| **c > 0).map(|(n, _)| n).collect();
        m.sigma_nodes = covered.iter().filter(|n| self.grid.boundary_layer(**n) >= self.interior_layer).count();
        if phantom.sigma.is_analytic() && m.sigma_nodes > 0 {
            let truth = phantom.sigma.sample(&self.grid);
            let mask = |n: usize| self.sigma_count[n] > 0 && self.grid.boundary_layer(n) >= self.interior_layer;
            m.sigma_rel_linf = Some(rel_linf(&self.sigma, &truth, mask));
            let mut errs: Vec<f64> = (0..truth.len()).filter(|n| mask(*n)).map(|n| (self.sigma[n] - truth[n]).abs()).collect();
            m.sigma_median_abs = Some(median(&mut errs));
        }
        let mut errs: Vec<f64> = self.k.iter().filter_map(KSample::rel_error).collect();
        if !errs.is_empty() {
            m.k_rel_max = Some(errs.iter().cloned().fold(0.0, f64::max));
            m.k_rel_median = Some(median(&mut errs));
        }
        if !self.coverage.is_empty() {
            let hit = self.coverage.iter().filter(|c| c.samples > 0).count();
            m.coverage = Some(hit as f64 / self.coverage.len() as f64);
        }
    }
}

/// Incoming light of one experiment: the forward field (real, or real and
/// imaginary parts), its boundary amplitude and the carrier phase.
struct Illumination {
    theta: Vec3,
    parts: Vec<RadianceField<f64>>,
    amplitude: f64,
    mass: f64,
    carrier: Option<(Vec3, f64)>,
}

impl Illumination {
    fn unit(&self, y: Vec3) -> Complex64 {
        match self.carrier {
            Some((x3, h)) => Complex64::from_polar(1.0, dot(x3, y) / h),
            None => Complex64::new(1.0, 0.0),
        }
    }

    fn value(&self, node: usize, j: usize) -> Complex64 {
        let mut v = Complex64::new(self.parts[0].get(node, j), 0.0);
        if let Some(im) = self.parts.get(1) {
            v += Complex64::new(0.0, im.get(node, j));
        }
        v
    }

    /// `H` against `g` with the carrier phase divided out.
    fn functional(&self, t: &Transport, provider: &dyn FunctionalProvider, g: &BoundaryField<f64>) -> Result<FunctionalField> {
        let refs: Vec<&RadianceField<f64>> = self.parts.iter().collect();
        let hs = provider.functionals(t, &refs, g)?;
        let mut out = hs[0].clone();
        if let Some(im) = hs.get(1) {
            for (o, v) in out.values.iter_mut().zip(&im.values) {
                *o += Complex64::i() * v;
            }
        }
        for (n, o) in out.values.iter_mut().enumerate() {
            *o *= self.unit(out.grid.position(n)).conj();
        }
        out.provenance = provider.provenance();
        Ok(out)
    }
}

struct SigmaAccumulator {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    count: Vec<u32>,
}

impl SigmaAccumulator {
    fn new(n: usize) -> Self {
        SigmaAccumulator { sum: vec![0.0; n], sumsq: vec![0.0; n], count: vec![0; n] }
    }

    fn add(&mut self, node: usize, v: f64) {
        self.sum[node] += v;
        self.sumsq[node] += v * v;
        self.count[node] += 1;
    }

    /// Mean, dispersion, clamp count; nodes without estimates are filled from
    /// their neighbours.
    fn finish(self, grid: &SpatialGrid) -> (Vec<f64>, Vec<u32>, Vec<f64>, usize) {
        let n = self.count.len();
        let mut sigma = vec![0.0; n];
        let mut disp = vec![0.0; n];
        let mut clamped = 0;
        for i in 0..n {
            if self.count[i] > 0 {
                let c = self.count[i] as f64;
                let mean = self.sum[i] / c;
                disp[i] = (self.sumsq[i] / c - mean * mean).max(0.0).sqrt();
                if mean < 0.0 {
                    clamped += 1;
                }
                sigma[i] = mean.max(0.0);
            }
        }
        let mut known: Vec<bool> = self.count.iter().map(|c| *c > 0).collect();
        if known.iter().any(|k| *k) {
            while known.iter().any(|k| !*k) {
                let mut next = known.clone();
                for i in 0..n {
                    if known[i] {
                        continue;
                    }
                    let ijk = grid.coords(i);
                    let (mut acc, mut cnt) = (0.0, 0);
                    for a in 0..grid.dim {
                        for d in [-1i64, 1] {
                            let c = ijk[a] as i64 + d;
                            if c < 0 || c >= grid.counts[a] as i64 {
                                continue;
                            }
                            let mut nb = ijk;
                            nb[a] = c as usize;
                            let j = grid.index(nb);
                            if known[j] {
                                acc += sigma[j];
                                cnt += 1;
                            }
                        }
                    }
                    if cnt > 0 {
                        sigma[i] = acc / cnt as f64;
                        next[i] = true;
                    }
                }
                known = next;
            }
        }
        (sigma, self.count, disp, clamped)
    }
}

fn axis_vector(a: usize, sign: f64) -> Vec3 {
    let mut v = [0.0; 3];
    v[a] = sign;
    v
}

/// Exact grid direction for `theta`, or an error.
fn grid_direction(angles: &AngularGrid, theta: Vec3) -> Result<(usize, Vec3)> {
    let (j, d) = angles.nearest(normalize(theta));
    if d > 1e-9 {
        return Err(Error::Parameter(format!("direction {theta:?} is not on the angular grid")));
    }
    Ok((j, angles.nodes[j]))
}

/// `d` with `d theta` a grid vector with entries in `{-1, 0, 1}` spacings,
/// when the spacings of the involved axes agree.
fn lattice_step(grid: &SpatialGrid, theta: Vec3) -> Option<f64> {
    let m = theta.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let mut spacing = None;
    for a in 0..grid.dim {
        let v = theta[a] / m;
        if v.abs() < 1e-9 {
            continue;
        }
        if (v.abs() - 1.0).abs() > 1e-9 {
            return None;
        }
        match spacing {
            None => spacing = Some(grid.spacing[a]),
            Some(s) if (s - grid.spacing[a]).abs() > 1e-12 * s => return None,
            _ => {}
        }
    }
    spacing.map(|s| s / m)
}

fn check_box(t: &Transport) -> Result<()> {
    match t.disc.domain.shape {
        crate::geometry::Shape::Box { .. } => Ok(()),
        _ => Err(Error::Parameter("the reconstruction pipelines need a box domain".into())),
    }
}

/// Rows along `axis` through interior nodes whose transverse indices match
/// `pattern` modulo `stride`. Each row lists its nodes from the low face.
fn rows(grid: &SpatialGrid, axis: usize, stride: usize, pattern: &[usize]) -> Vec<Vec<usize>> {
    let trans: Vec<usize> = (0..grid.dim).filter(|a| *a != axis).collect();
    let mut out = Vec::new();
    let mut idx = vec![1usize; trans.len()];
    'outer: loop {
        let matches = trans.iter().enumerate().all(|(k, _)| idx[k] % stride == pattern[k] % stride);
        if matches {
            let mut ijk = [0usize; 3];
            for (k, a) in trans.iter().enumerate() {
                ijk[*a] = idx[k];
            }
            out.push(
                (0..grid.counts[axis])
                    .map(|i| {
                        let mut p = ijk;
                        p[axis] = i;
                        grid.index(p)
                    })
                    .collect(),
            );
        }
        for k in 0..trans.len() {
            idx[k] += 1;
            if idx[k] + 1 < grid.counts[trans[k]] {
                continue 'outer;
            }
            idx[k] = 1;
        }
        break;
    }
    out
}

fn patterns(dim: usize, stride: usize) -> Vec<Vec<usize>> {
    if dim == 2 {
        (0..stride).map(|p| vec![p]).collect()
    } else {
        (0..stride * stride).map(|p| vec![p % stride, p / stride]).collect()
    }
}

struct Backscatter<'a> {
    t: &'a Transport,
    provider: &'a dyn FunctionalProvider,
    axis: usize,
    s_nodes: usize,
    h: f64,
}

impl Backscatter<'_> {
    /// Recovers `tau` and `sigma` along `rows` from the forward and backward
    /// illuminations and comb detectors on the same faces.
    fn run(
        &self,
        rows: &[Vec<usize>],
        fwd: &Illumination,
        bwd: &Illumination,
        det_fwd: &Beam,
        det_bwd: &Beam,
        acc: &mut SigmaAccumulator,
        out: &mut ReconstructionResult,
    ) -> Result<()> {
        let t = self.t;
        let disc = &t.disc;
        let grid = &disc.grid;
        let e = axis_vector(self.axis, 1.0);
        let me = axis_vector(self.axis, -1.0);
        let (je, _) = grid_direction(&disc.angles, e)?;
        let dx = grid.spacing[self.axis];
        let s = self.s_nodes as f64 * dx;
        let half = self.s_nodes / 2;
        let h_f = fwd.functional(t, self.provider, &det_fwd.field)?;
        let h_b = bwd.functional(t, self.provider, &det_bwd.field)?;
        let analytic = t.phantom.sigma.is_analytic();
        for row in rows {
            let n = row.len();
            let key = format!("row axis {} at {:?}", self.axis, grid.position(row[0]));
            let end = row[n - 1];
            let transmission = (fwd.value(end, je) / (fwd.amplitude * fwd.unit(grid.position(end)))).re;
            let mut profile = RowProfile {
                axis: self.axis,
                nodes: Vec::new(),
                log_f_fwd: Vec::new(),
                log_f_bwd: Vec::new(),
                log_transmission: transmission.ln(),
                spacing: dx,
            };
            let mut segment: Vec<(usize, f64)> = Vec::new();
            let mut segments = Vec::new();
            for &node in &row[half..n - half] {
                let x = grid.position(node);
                let ff = extract_f(&h_f, &disc.domain, axpy(x, 0.5 * s, me), me, s)?;
                let fb = extract_f(&h_b, &disc.domain, axpy(x, 0.5 * s, e), e, s)?;
                let f_fwd = ff.value / (2.0 * fwd.mass * det_fwd.mass);
                let f_bwd = fb.value / (2.0 * bwd.mass * det_bwd.mass);
                out.data.push(BrokenRayDatum { x, theta1: e, theta2: me, value: f_fwd, s, h: self.h, interp_error: ff.interp_error });
                out.data.push(BrokenRayDatum { x, theta1: me, theta2: e, value: f_bwd, s, h: self.h, interp_error: fb.interp_error });
                match recover_tau(f_fwd, f_bwd, transmission) {
                    Ok(tau) => {
                        profile.nodes.push(node);
                        profile.log_f_fwd.push(f_fwd.ln());
                        profile.log_f_bwd.push(f_bwd.ln());
                        let entry = grid.position(row[0]);
                        out.tau.push(TauSample { x, theta: e, value: tau, truth: analytic.then(|| t.tau(entry, x)) });
                        segment.push((node, tau));
                    }
                    Err(err) => {
                        out.failures.push(Failure { key: format!("{key}, node {node}"), error: err.to_string() });
                        segments.push(std::mem::take(&mut segment));
                    }
                }
            }
            segments.push(segment);
            for seg in segments.into_iter().filter(|s| !s.is_empty()) {
                let taus: Vec<f64> = seg.iter().map(|p| p.1).collect();
                match recover_sigma(&taus, dx) {
                    Ok(sig) => {
                        for ((node, _), v) in seg.iter().zip(sig) {
                            acc.add(*node, v);
                        }
                    }
                    Err(err) => out.failures.push(Failure { key: key.clone(), error: err.to_string() }),
                }
            }
            out.rows.push(profile);
        }
        Ok(())
    }
}

fn empty_result(t: &Transport, provider: &dyn FunctionalProvider, interior_layer: usize) -> ReconstructionResult {
    let n = t.disc.nodes();
    ReconstructionResult {
        grid: t.disc.grid.clone(),
        sigma: vec![0.0; n],
        sigma_count: vec![0; n],
        sigma_dispersion: vec![0.0; n],
        tau: Vec::new(),
        k: Vec::new(),
        data: Vec::new(),
        rows: Vec::new(),
        coverage: Vec::new(),
        failures: Vec::new(),
        interior_layer,
        provenance: provider.provenance(),
        metrics: Metrics::default(),
    }
}

fn store_sigma(out: &mut ReconstructionResult, acc: SigmaAccumulator) {
    let (sigma, count, disp, clamped) = acc.finish(&out.grid);
    out.sigma = sigma;
    out.sigma_count = count;
    out.sigma_dispersion = disp;
    out.metrics.sigma_clamped = clamped;
}

/// Optical distance through the reconstructed `sigma`.
fn tau_hat(out: &ReconstructionResult, x: Vec3, y: Vec3, step: f64) -> f64 {
    let f = |p: Vec3| out.grid.interpolate(&out.sigma, p);
    optical_distance(&f, x, y, step)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointDesign {
    /// Spacing between beams of one comb, in rows.
    pub comb: usize,
    /// Difference step in lattice steps along the detector direction (even).
    pub s_nodes: usize,
    /// Sample points for `k` as fractions of the bounding box.
    pub k_points: Vec<Vec3>,
    /// `(theta1, theta2)` pairs for `k`.
    pub k_pairs: Vec<[Vec3; 2]>,
    pub attenuation_cap: f64,
    pub interior_layer: usize,
}

impl Default for PointDesign {
    fn default() -> Self {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let f = [0.3, 0.5, 0.7];
        PointDesign {
            comb: 4,
            s_nodes: 2,
            k_points: f.iter().flat_map(|a| f.iter().map(move |b| [*a, *b, 0.5])).collect(),
            k_pairs: vec![
                [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
                [[1.0, 0.0, 0.0], [-r, r, 0.0]],
                [[r, r, 0.0], [r, -r, 0.0]],
            ],
            attenuation_cap: 30.0,
            interior_layer: 3,
        }
    }
}

fn snap(grid: &SpatialGrid, domain: &Domain, frac: Vec3) -> usize {
    let (lo, hi) = domain.bounding_box();
    let mut p = [0.0; 3];
    for a in 0..grid.dim {
        p[a] = lo[a] + frac[a] * (hi[a] - lo[a]);
    }
    grid.nearest(p).0
}

/// Point sources and point detectors on lattice-aligned rays.
///
/// `sigma` comes from backscatter along every axis: combs of single-row beams
/// enter through one face and are detected on the same face in the reversed
/// direction. `k` comes from crossing beams at the sample points, where the
/// jump of `H` across the source beam along the detector ray is the crossing
/// integral of the beam times `F`.
pub fn run_point_pipeline(
    t: &Transport,
    provider: &dyn FunctionalProvider,
    design: &PointDesign,
    opts: &SolveOptions,
) -> Result<ReconstructionResult> {
    check_box(t)?;
    if design.s_nodes == 0 || design.s_nodes % 2 != 0 || design.comb == 0 {
        return Err(Error::Parameter("s_nodes must be even and positive, comb positive".into()));
    }
    let disc = &t.disc;
    let grid = &disc.grid;
    let domain = &disc.domain;
    let mut out = empty_result(t, provider, design.interior_layer);
    let mut acc = SigmaAccumulator::new(grid.len());
    let radius = 0.5 * grid.min_spacing();
    for axis in 0..grid.dim {
        let e = axis_vector(axis, 1.0);
        let d_f = single_node_delta(&disc.angles, e)?;
        let d_b = single_node_delta(&disc.angles, e.map(|c| -c))?;
        let bs = Backscatter { t, provider, axis, s_nodes: design.s_nodes, h: d_f.h };
        for pattern in patterns(grid.dim, design.comb) {
            let rs = rows(grid, axis, design.comb, &pattern);
            if rs.is_empty() {
                continue;
            }
            let starts: Vec<Vec3> = rs.iter().map(|r| grid.position(r[0])).collect();
            let ends: Vec<Vec3> = rs.iter().map(|r| grid.position(*r.last().unwrap())).collect();
            let mut run = || -> Result<()> {
                let src_f = make_point_source(domain, &starts, radius, &d_f, 1.0)?;
                let src_b = make_point_source(domain, &ends, radius, &d_b, 1.0)?;
                let det_f = make_point_detector(domain, &starts, radius, &d_b)?;
                let det_b = make_point_detector(domain, &ends, radius, &d_f)?;
                let fwd = Illumination {
                    theta: e,
                    parts: vec![t.solve_rte(&src_f.field, opts)?.field],
                    amplitude: d_f.values[disc.angles.nearest(e).0],
                    mass: src_f.mass,
                    carrier: None,
                };
                let bwd = Illumination {
                    theta: e.map(|c| -c),
                    parts: vec![t.solve_rte(&src_b.field, opts)?.field],
                    amplitude: d_b.values[disc.angles.nearest(e.map(|c| -c)).0],
                    mass: src_b.mass,
                    carrier: None,
                };
                debug_assert!(dot(fwd.theta, bwd.theta) < 0.0);
                bs.run(&rs, &fwd, &bwd, &det_f, &det_b, &mut acc, &mut out)
            };
            if let Err(err) = run() {
                out.failures.push(Failure { key: format!("axis {axis} pattern {pattern:?}"), error: err.to_string() });
            }
        }
    }
    store_sigma(&mut out, acc);
    let have_sigma = out.sigma_count.iter().any(|c| *c > 0);
    for frac in &design.k_points {
        let node = snap(grid, domain, *frac);
        let x = grid.position(node);
        for [th1, th2] in &design.k_pairs {
            let key = format!("k at {x:?} pair {th1:?} {th2:?}");
            match point_k_sample(t, provider, &out, x, *th1, *th2, design, opts, have_sigma) {
                Ok((datum, sample)) => {
                    out.data.push(datum);
                    match sample {
                        Ok(s) => out.k.push(s),
                        Err(err) => out.failures.push(Failure { key, error: err.to_string() }),
                    }
                }
                Err(err) => out.failures.push(Failure { key, error: err.to_string() }),
            }
        }
    }
    out.finish(&t.phantom);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn point_k_sample(
    t: &Transport,
    provider: &dyn FunctionalProvider,
    out: &ReconstructionResult,
    x: Vec3,
    th1: Vec3,
    th2: Vec3,
    design: &PointDesign,
    opts: &SolveOptions,
    have_sigma: bool,
) -> Result<(BrokenRayDatum, Result<KSample>)> {
    let disc = &t.disc;
    let grid = &disc.grid;
    let domain = &disc.domain;
    let (j1, th1) = grid_direction(&disc.angles, th1)?;
    let (_, th2) = grid_direction(&disc.angles, th2)?;
    let d1 = single_node_delta(&disc.angles, th1)?;
    let d2 = single_node_delta(&disc.angles, th2)?;
    check_separation(&d1, &d2)?;
    let step = lattice_step(grid, th2).ok_or_else(|| Error::Parameter(format!("{th2:?} is not lattice aligned")))?;
    let s = design.s_nodes as f64 * step;
    let x1 = gamma(domain, x, th1, Sign::Minus)?;
    let x2 = gamma(domain, x, th2, Sign::Plus)?;
    let radius = 0.5 * grid.min_spacing();
    let src = make_point_source(domain, &[x1], radius, &d1, 1.0)?;
    let det = make_point_detector(domain, &[x2], radius, &d2)?;
    let ill = Illumination {
        theta: th1,
        parts: vec![t.solve_rte(&src.field, opts)?.field],
        amplitude: d1.values[j1],
        mass: src.mass,
        carrier: None,
    };
    let h = ill.functional(t, provider, &det.field)?;
    let ext = extract_f(&h, domain, axpy(x, 0.5 * s, th2), th2, s)?;
    // crossing integral of the interpolated source beam along the detector ray
    let jf = t.ballistic(&src.field)?;
    let beam: Vec<f64> = jf.slab(j1).iter().map(|v| if *v > 0.0 { 1.0 } else { 0.0 }).collect();
    let m = 400;
    let crossing: f64 = (0..=m)
        .map(|i| {
            let tt = -0.5 * s + s * i as f64 / m as f64;
            let w = if i == 0 || i == m { 0.5 } else { 1.0 };
            w * grid.interpolate(&beam, axpy(x, tt, th2))
        })
        .sum::<f64>()
        * s
        / m as f64;
    if crossing <= 0.0 {
        return Err(Error::Parameter(format!("the detector ray misses the source beam at {x:?}")));
    }
    let f = ext.value * s / (ill.mass * det.mass * crossing);
    let datum = BrokenRayDatum { x, theta1: th1, theta2: th2, value: f, s, h: d1.h, interp_error: ext.interp_error };
    let sample = (|| {
        if !have_sigma {
            return Err(Error::LogDomain("no attenuation estimate is available for the legs".into()));
        }
        let tau_out = tau_hat(out, x, x2, disc.step);
        let tau_in = tau_hat(out, x1, x, disc.step);
        let value = recover_k(f, tau_out, tau_in, design.attenuation_cap)?;
        let truth = kernel_value(&t.phantom, &disc.angles, x, th2, th1);
        Ok(KSample { x, theta2: th2, theta1: th1, value, truth, f, tau_out, tau_in, rotation: 0, mirrored: false })
    })();
    Ok((datum, sample))
}

fn check_separation(d1: &AngularDelta, d2: &AngularDelta) -> Result<()> {
    let h = d1.h.max(d2.h);
    if dist(d1.theta, d2.theta) < 10.0 * h {
        return Err(Error::Parameter(format!(
            "directions {:?} and {:?} are closer than 10 h = {:.3}",
            d1.theta,
            d2.theta,
            10.0 * h
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OscillatoryDesign {
    /// Rotation angles `psi` of the oscillation axis about `theta1 = x`.
    pub rotations: Vec<f64>,
    /// Difference step in lattice steps along `theta2` (even).
    pub s_nodes: usize,
    /// Spacings in the nominal `s` of the ratio policy `h = s^2 / diam`.
    pub policy_nodes: usize,
    /// Overrides the policy width of the oscillation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    /// Stride of the backscatter detector comb in each transverse index.
    pub row_stride: usize,
    /// Polar angles of `theta2` from `theta1` in the plane orthogonal to the
    /// oscillation axis; both sides of `theta1` are used.
    pub polar_angles: Vec<f64>,
    /// Positions of the detector tubes along `theta1`, as fractions of the box.
    pub tube_positions: Vec<f64>,
    /// Detector radius for directions off the lattice, in spacings.
    pub tube_radius_nodes: f64,
    pub attenuation_cap: f64,
    pub interior_layer: usize,
}

impl Default for OscillatoryDesign {
    fn default() -> Self {
        use std::f64::consts::PI;
        OscillatoryDesign {
            rotations: vec![0.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0],
            s_nodes: 2,
            policy_nodes: 8,
            h: None,
            row_stride: 2,
            polar_angles: vec![PI / 2.0, 3.0 * PI / 4.0],
            tube_positions: vec![0.3, 0.5, 0.7],
            tube_radius_nodes: 1.5,
            attenuation_cap: 30.0,
            interior_layer: 3,
        }
    }
}

impl OscillatoryDesign {
    /// The oscillation width: the ratio policy, raised to the smallest width
    /// the boundary grid resolves.
    pub fn width(&self, grid: &SpatialGrid, domain: &Domain) -> f64 {
        if let Some(h) = self.h {
            return h;
        }
        let s = self.policy_nodes as f64 * grid.max_spacing();
        let resolvable = 4.0 * grid.max_spacing() / (2.0 * std::f64::consts::PI) * (1.0 + 1e-9);
        (s * s / domain.diameter()).max(resolvable)
    }
}

/// `(x3, e_psi)` for rotation `psi`: the oscillation axis and the in-plane
/// direction orthogonal to `theta1 = x`.
fn frame(psi: f64) -> (Vec3, Vec3) {
    let (s, c) = psi.sin_cos();
    let clean = |v: f64| if v.abs() < 1e-15 { 0.0 } else { v };
    ([0.0, clean(-s), clean(c)], [0.0, clean(c), clean(s)])
}

/// The oscillatory plane source along `theta1 = x`.
///
/// For the first rotation, backscatter with comb detectors on the faces
/// orthogonal to `x` gives `sigma`. For every rotation, detector tubes along
/// each `theta2` orthogonal to the oscillation axis give `F = theta2 . grad H`
/// on the tube, and `k` follows. Tubes of one detector lie in distinct planes
/// orthogonal to the oscillation axis.
pub fn run_oscillatory_pipeline(
    t: &Transport,
    provider: &dyn FunctionalProvider,
    design: &OscillatoryDesign,
    opts: &SolveOptions,
) -> Result<ReconstructionResult> {
    check_box(t)?;
    let disc = &t.disc;
    if disc.dim() != 3 {
        return Err(Error::Parameter("the oscillatory pipeline is three-dimensional".into()));
    }
    if design.s_nodes == 0 || design.s_nodes % 2 != 0 || design.row_stride == 0 || design.rotations.is_empty() {
        return Err(Error::Parameter("s_nodes must be even and positive, row_stride positive, rotations nonempty".into()));
    }
    let grid = &disc.grid;
    let domain = &disc.domain;
    let h = design.width(grid, domain);
    let ex = [1.0, 0.0, 0.0];
    let d1 = single_node_delta(&disc.angles, ex)?;
    let dm = single_node_delta(&disc.angles, [-1.0, 0.0, 0.0])?;
    let (j1, _) = grid_direction(&disc.angles, ex)?;
    let (jm, _) = grid_direction(&disc.angles, [-1.0, 0.0, 0.0])?;
    let mut out = empty_result(t, provider, design.interior_layer);
    let mut imag: f64 = 0.0;
    let illuminate = |x3: Vec3, delta: &AngularDelta, j: usize| -> Result<Illumination> {
        let f = make_oscillatory_source(disc, delta, x3, h)?;
        let u = t.solve_rte(&f, opts)?.field;
        Ok(Illumination {
            theta: delta.theta,
            parts: vec![u.re(), u.im()],
            amplitude: delta.values[j],
            mass: delta.mass,
            carrier: Some((x3, h)),
        })
    };
    // attenuation from the first rotation
    let (x3, _) = frame(design.rotations[0]);
    let fwd0 = illuminate(x3, &d1, j1)?;
    {
        let bwd = illuminate(x3, &dm, jm)?;
        let radius = 0.5 * grid.min_spacing();
        let bs = Backscatter { t, provider, axis: 0, s_nodes: design.s_nodes, h };
        let mut acc = SigmaAccumulator::new(grid.len());
        for pattern in patterns(3, design.row_stride) {
            let rs = rows(grid, 0, design.row_stride, &pattern);
            if rs.is_empty() {
                continue;
            }
            let starts: Vec<Vec3> = rs.iter().map(|r| grid.position(r[0])).collect();
            let ends: Vec<Vec3> = rs.iter().map(|r| grid.position(*r.last().unwrap())).collect();
            let run = |acc: &mut SigmaAccumulator, out: &mut ReconstructionResult| -> Result<()> {
                let det_f = make_point_detector(domain, &starts, radius, &dm)?;
                let det_b = make_point_detector(domain, &ends, radius, &d1)?;
                bs.run(&rs, &fwd0, &bwd, &det_f, &det_b, acc, out)
            };
            if let Err(err) = run(&mut acc, &mut out) {
                out.failures.push(Failure { key: format!("backscatter pattern {pattern:?}"), error: err.to_string() });
            }
        }
        store_sigma(&mut out, acc);
    }
    let have_sigma = out.sigma_count.iter().any(|c| *c > 0);
    for (r, &psi) in design.rotations.iter().enumerate() {
        let (x3, e_psi) = frame(psi);
        let fwd = if r == 0 {
            None
        } else {
            match illuminate(x3, &d1, j1) {
                Ok(f) => Some(f),
                Err(err) => {
                    out.failures.push(Failure { key: format!("rotation {psi}"), error: err.to_string() });
                    continue;
                }
            }
        };
        let fwd = fwd.as_ref().unwrap_or(&fwd0);
        for &alpha in &design.polar_angles {
            for side in [1.0, -1.0] {
                let th2 = normalize(axpy(ex.map(|c| c * alpha.cos()), side * alpha.sin(), e_psi));
                let key = format!("rotation {psi:.4} theta2 {th2:?}");
                let th2 = match grid_direction(&disc.angles, th2) {
                    Ok((_, node)) => node,
                    Err(err) => {
                        out.failures.push(Failure { key, error: err.to_string() });
                        out.coverage.push(Coverage { rotation: r, psi, theta2: th2, samples: 0 });
                        continue;
                    }
                };
                let mut count = 0;
                match tube_samples(t, provider, &out, fwd, &d1, x3, th2, design, have_sigma) {
                    Ok((data, samples, fails, im)) => {
                        imag = imag.max(im);
                        out.data.extend(data);
                        for s in samples {
                            count += 1;
                            out.k.push(KSample { rotation: r, ..s });
                        }
                        for (k, e) in fails {
                            out.failures.push(Failure { key: format!("{key}: {k}"), error: e });
                        }
                    }
                    Err(err) => out.failures.push(Failure { key: key.clone(), error: err.to_string() }),
                }
                out.coverage.push(Coverage { rotation: r, psi, theta2: th2, samples: count });
            }
        }
    }
    out.finish(&t.phantom);
    out.metrics.imaginary_fraction = Some(imag);
    Ok(out)
}

type TubeOutput = (Vec<BrokenRayDatum>, Vec<KSample>, Vec<(String, String)>, f64);

#[allow(clippy::too_many_arguments)]
fn tube_samples(
    t: &Transport,
    provider: &dyn FunctionalProvider,
    out: &ReconstructionResult,
    fwd: &Illumination,
    d1: &AngularDelta,
    x3: Vec3,
    th2: Vec3,
    design: &OscillatoryDesign,
    have_sigma: bool,
) -> Result<TubeOutput> {
    let disc = &t.disc;
    let grid = &disc.grid;
    let domain = &disc.domain;
    let (_, th2) = grid_direction(&disc.angles, th2)?;
    if dot(th2, x3).abs() > 1e-9 {
        return Err(Error::Parameter("theta2 is not orthogonal to the oscillation axis".into()));
    }
    let d2 = single_node_delta(&disc.angles, th2)?;
    check_separation(d1, &d2)?;
    let spacing = grid.min_spacing();
    let aligned = lattice_step(grid, th2);
    let step = aligned.unwrap_or(spacing);
    let s = design.s_nodes as f64 * step;
    // one tube per plane orthogonal to x3
    let m3 = x3.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let l3 = x3.map(|c| c / m3);
    let (lo, hi) = domain.bounding_box();
    let mid: Vec3 = std::array::from_fn(|a| 0.5 * (lo[a] + hi[a]));
    let center = grid.position(grid.nearest(mid).0);
    let mut anchors = Vec::new();
    let reach = grid.counts[0].max(grid.counts[1]).max(grid.counts[2]) as i64;
    for m in -reach..=reach {
        let mut p = axpy(center, m as f64 * spacing, l3);
        let frac = design.tube_positions[m.rem_euclid(design.tube_positions.len() as i64) as usize];
        p[0] = lo[0] + frac * (hi[0] - lo[0]);
        let (node, d) = grid.nearest(p);
        if d > 0.5 * spacing * 3f64.sqrt() || !domain.contains(p) {
            continue;
        }
        if grid.boundary_layer(node) >= design.interior_layer {
            anchors.push(node);
        }
    }
    if anchors.is_empty() {
        return Err(Error::TooFewSamples("no interior tube anchors".into()));
    }
    let exits: Vec<Vec3> = anchors
        .iter()
        .map(|n| gamma(domain, grid.position(*n), th2, Sign::Plus))
        .collect::<Result<_>>()?;
    let radius = if aligned.is_some() { 0.5 * spacing } else { design.tube_radius_nodes * spacing };
    let det = make_point_detector(domain, &exits, radius, &d2)?;
    let h = fwd.functional(t, provider, &det.field)?;
    let im = h.imaginary_fraction();
    let mut data = Vec::new();
    let mut samples = Vec::new();
    let mut fails = Vec::new();
    for &anchor in &anchors {
        let a = grid.position(anchor);
        let mut nodes = vec![anchor];
        if let Some(d) = aligned {
            for dir in [1.0, -1.0] {
                let mut l = 1;
                loop {
                    let (n, off) = grid.nearest(axpy(a, dir * l as f64 * d, th2));
                    if off > 1e-9 || grid.boundary_layer(n) < design.interior_layer {
                        break;
                    }
                    nodes.push(n);
                    l += 1;
                }
            }
            nodes.sort_unstable();
        }
        for node in nodes {
            let x = grid.position(node);
            let ext = match extract_f(&h, domain, axpy(x, 0.5 * s, th2), th2, s) {
                Ok(e) => e,
                Err(err) => {
                    fails.push((format!("{x:?}"), err.to_string()));
                    continue;
                }
            };
            let f = ext.value / (fwd.mass * det.mass);
            data.push(BrokenRayDatum { x, theta1: d1.theta, theta2: th2, value: f, s, h: d2.h, interp_error: ext.interp_error });
            if !have_sigma {
                fails.push((format!("{x:?}"), "no attenuation estimate is available for the legs".into()));
                continue;
            }
            let x1 = gamma(domain, x, d1.theta, Sign::Minus)?;
            let x2 = gamma(domain, x, th2, Sign::Plus)?;
            let tau_out = tau_hat(out, x, x2, disc.step);
            let tau_in = tau_hat(out, x1, x, disc.step);
            match recover_k(f, tau_out, tau_in, design.attenuation_cap) {
                Ok(value) => samples.push(KSample {
                    x,
                    theta2: th2,
                    theta1: d1.theta,
                    value,
                    truth: kernel_value(&t.phantom, &disc.angles, x, th2, d1.theta),
                    f,
                    tau_out,
                    tau_in,
                    rotation: 0,
                    mirrored: false,
                }),
                Err(err) => fails.push((format!("{x:?}"), err.to_string())),
            }
        }
    }
    Ok((data, samples, fails, im))
}

/// Both sides of the two stability inequalities, evaluated on reconstructed
/// differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// `max |sigma1 - sigma2|` over interior nodes estimated in both.
    pub sigma_lhs: f64,
    /// `1/2 max ||log F1 - log F2||_C1` over matched backscatter rows.
    pub sigma_rhs: f64,
    pub sigma_holds: bool,
    /// `max |k1 - k2|` over matched samples.
    pub k_lhs: f64,
    /// `max |F1 - F2|`, the directional part of `||H1 - H2||_C1`.
    pub k_data_gap: f64,
    /// `sup exp(2 tau)` over chords of the domain, from the larger `sigma`.
    pub k_constant: f64,
    pub k_rhs: f64,
    pub k_holds: bool,
}

impl StabilityReport {
    pub fn sigma_margin(&self) -> f64 {
        self.sigma_rhs - self.sigma_lhs
    }

    pub fn k_margin(&self) -> f64 {
        self.k_rhs - self.k_lhs
    }
}

fn c1_norm(d: &[f64], dt: f64) -> f64 {
    let sup = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let grad = recover_sigma(d, dt).map(|g| g.iter().fold(0.0f64, |m, v| m.max(v.abs()))).unwrap_or(0.0);
    sup + grad
}

/// Compares two reconstructions of the same design.
pub fn stability_report(r1: &ReconstructionResult, r2: &ReconstructionResult, domain: &Domain) -> StabilityReport {
    let mut sigma_lhs: f64 = 0.0;
    for n in 0..r1.sigma.len().min(r2.sigma.len()) {
        if r1.sigma_count[n] > 0 && r2.sigma_count[n] > 0 && r1.interior(n) {
            sigma_lhs = sigma_lhs.max((r1.sigma[n] - r2.sigma[n]).abs());
        }
    }
    let mut sigma_rhs: f64 = 0.0;
    let rows2: BTreeMap<(usize, usize), &RowProfile> =
        r2.rows.iter().filter(|r| !r.nodes.is_empty()).map(|r| ((r.axis, r.nodes[0]), r)).collect();
    for a in r1.rows.iter().filter(|r| !r.nodes.is_empty()) {
        let Some(b) = rows2.get(&(a.axis, a.nodes[0])) else { continue };
        if a.nodes != b.nodes {
            continue;
        }
        let df: Vec<f64> = a.log_f_fwd.iter().zip(&b.log_f_fwd).map(|(x, y)| x - y).collect();
        let db: Vec<f64> = a.log_f_bwd.iter().zip(&b.log_f_bwd).map(|(x, y)| x - y).collect();
        sigma_rhs = sigma_rhs.max(0.5 * c1_norm(&df, a.spacing).max(c1_norm(&db, a.spacing)));
    }
    let k2: BTreeMap<[i64; 9], &KSample> = r2.k.iter().map(|s| (s.key(), s)).collect();
    let (mut k_lhs, mut gap): (f64, f64) = (0.0, 0.0);
    for s in &r1.k {
        if let Some(o) = k2.get(&s.key()) {
            k_lhs = k_lhs.max((s.value - o.value).abs());
            gap = gap.max((s.f - o.f).abs());
        }
    }
    let smax = r1.sigma.iter().chain(&r2.sigma).fold(0.0f64, |m, v| m.max(*v));
    let k_constant = (2.0 * domain.diameter() * smax).exp();
    let k_rhs = k_constant * gap;
    StabilityReport {
        sigma_lhs,
        sigma_rhs,
        sigma_holds: sigma_lhs <= sigma_rhs,
        k_lhs,
        k_data_gap: gap,
        k_constant,
        k_rhs,
        k_holds: k_lhs <= k_rhs,
    }
}

#[cfg(test)]
mod tests;
