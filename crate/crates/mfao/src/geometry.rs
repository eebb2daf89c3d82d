//! Domains, grids, boundary projections and optical distance.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// `a + s * b`
pub fn axpy(a: Vec3, s: f64, b: Vec3) -> Vec3 {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    scale(a, 1.0 / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    Box { lo: Vec3, hi: Vec3 },
    Ball { center: Vec3, radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub shape: Shape,
    pub dim: usize,
}

impl Domain {
    pub fn new(shape: Shape, dim: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Grid(format!("dimension {dim} not in {{2, 3}}")));
        }
        let d = Domain { shape: flatten(shape, dim), dim };
        if !(d.diameter() > 0.0 && d.diameter().is_finite()) {
            return Err(Error::Grid("domain diameter must be finite and positive".into()));
        }
        Ok(d)
    }

    pub fn unit_box(dim: usize) -> Self {
        Domain::new(Shape::Box { lo: [0.0; 3], hi: [1.0; 3] }, dim).expect("unit box")
    }

    pub fn unit_ball(dim: usize) -> Self {
        Domain::new(Shape::Ball { center: [0.0; 3], radius: 1.0 }, dim).expect("unit ball")
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        match self.shape {
            Shape::Box { lo, hi } => (lo, hi),
            Shape::Ball { center, radius } => {
                let mut lo = center;
                let mut hi = center;
                for a in 0..self.dim {
                    lo[a] -= radius;
                    hi[a] += radius;
                }
                (lo, hi)
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match self.shape {
            Shape::Box { lo, hi } => dist(lo, hi),
            Shape::Ball { radius, .. } => 2.0 * radius,
        }
    }

    /// Geometric tolerance used for membership tests.
    pub fn tol(&self) -> f64 {
        1e-10 * self.diameter()
    }

    pub fn contains(&self, x: Vec3) -> bool {
        let tol = self.tol();
        match self.shape {
            Shape::Box { lo, hi } => (0..self.dim).all(|a| x[a] >= lo[a] - tol && x[a] <= hi[a] + tol),
            Shape::Ball { center, radius } => dist(x, center) <= radius + tol,
        }
    }

    pub fn on_boundary(&self, x: Vec3) -> bool {
        let tol = 1e-8 * self.diameter();
        if !self.contains(x) {
            return false;
        }
        match self.shape {
            Shape::Box { lo, hi } => {
                (0..self.dim).any(|a| (x[a] - lo[a]).abs() <= tol || (x[a] - hi[a]).abs() <= tol)
            }
            Shape::Ball { center, radius } => (dist(x, center) - radius).abs() <= tol,
        }
    }

    /// Outward unit normal at a boundary point. At box edges and corners the
    /// normal of the face with the smallest coordinate gap is returned.
    pub fn normal(&self, x: Vec3) -> Vec3 {
        match self.shape {
            Shape::Box { lo, hi } => {
                let mut best = (f64::INFINITY, [0.0; 3]);
                for a in 0..self.dim {
                    let mut n = [0.0; 3];
                    let gl = (x[a] - lo[a]).abs();
                    if gl < best.0 {
                        n[a] = -1.0;
                        best = (gl, n);
                    }
                    let mut n = [0.0; 3];
                    let gh = (x[a] - hi[a]).abs();
                    if gh < best.0 {
                        n[a] = 1.0;
                        best = (gh, n);
                    }
                }
                best.1
            }
            Shape::Ball { center, .. } => normalize(sub(x, center)),
        }
    }

    /// Distance travelled from `x` along `d` until the boundary is reached.
    fn exit_distance(&self, x: Vec3, d: Vec3) -> f64 {
        match self.shape {
            Shape::Box { lo, hi } => {
                let mut t = f64::INFINITY;
                for a in 0..self.dim {
                    if d[a] > 0.0 {
                        t = t.min((hi[a] - x[a]) / d[a]);
                    } else if d[a] < 0.0 {
                        t = t.min((lo[a] - x[a]) / d[a]);
                    }
                }
                if t.is_finite() {
                    t.max(0.0)
                } else {
                    0.0
                }
            }
            Shape::Ball { center, radius } => {
                let r = sub(x, center);
                let b = dot(d, r);
                let c = dot(r, r) - radius * radius;
                let disc = (b * b - c).max(0.0);
                (-b + disc.sqrt()).max(0.0)
            }
        }
    }
}

fn flatten(shape: Shape, dim: usize) -> Shape {
    if dim == 3 {
        return shape;
    }
    match shape {
        Shape::Box { mut lo, mut hi } => {
            lo[2] = 0.0;
            hi[2] = 0.0;
            Shape::Box { lo, hi }
        }
        Shape::Ball { mut center, radius } => {
            center[2] = 0.0;
            Shape::Ball { center, radius }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

/// First boundary point reached from `x` travelling along `sign * theta`.
pub fn gamma(domain: &Domain, x: Vec3, theta: Vec3, sign: Sign) -> Result<Vec3> {
    if !domain.contains(x) {
        return Err(Error::OutsideDomain { point: x });
    }
    let d = match sign {
        Sign::Plus => theta,
        Sign::Minus => scale(theta, -1.0),
    };
    let t = domain.exit_distance(x, d);
    Ok(axpy(x, t, d))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayTrace {
    pub entry: Vec3,
    pub exit: Vec3,
    pub chord: f64,
    /// Distance from the entry point to `x`.
    pub depth: f64,
    pub degenerate: bool,
}

pub fn ray_trace(domain: &Domain, x: Vec3, theta: Vec3) -> Result<RayTrace> {
    let entry = gamma(domain, x, theta, Sign::Minus)?;
    let exit = gamma(domain, x, theta, Sign::Plus)?;
    let chord = dist(entry, exit);
    Ok(RayTrace {
        entry,
        exit,
        chord,
        depth: dist(entry, x),
        degenerate: chord < domain.tol(),
    })
}

/// Composite trapezoid approximation of the line integral of `sigma` over the
/// segment between `x` and `y`, using the largest uniform step not above `step`.
pub fn optical_distance<F: Fn(Vec3) -> f64 + ?Sized>(sigma: &F, x: Vec3, y: Vec3, step: f64) -> f64 {
    let len = dist(x, y);
    if len == 0.0 {
        return 0.0;
    }
    let n = (len / step).ceil().max(1.0) as usize;
    let dt = len / n as f64;
    let u = scale(sub(y, x), 1.0 / len);
    let mut acc = 0.5 * (sigma(x) + sigma(y));
    for s in 1..n {
        acc += sigma(axpy(x, s as f64 * dt, u));
    }
    acc * dt
}

/// Uniform tensor grid covering the bounding box of a domain, boundary nodes included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub dim: usize,
    pub lo: Vec3,
    pub hi: Vec3,
    pub counts: [usize; 3],
    pub spacing: Vec3,
}

/// Multilinear interpolation stencil.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub idx: [usize; 8],
    pub w: [f64; 8],
    pub len: usize,
}

impl SpatialGrid {
    pub fn new(domain: &Domain, counts: [usize; 3]) -> Result<Self> {
        let (lo, hi) = domain.bounding_box();
        let mut counts = counts;
        if domain.dim == 2 {
            counts[2] = 1;
        }
        let mut spacing = [0.0; 3];
        for a in 0..domain.dim {
            if counts[a] < 2 {
                return Err(Error::Grid(format!("axis {a} needs at least 2 nodes")));
            }
            spacing[a] = (hi[a] - lo[a]) / (counts[a] - 1) as f64;
            if spacing[a] <= 0.0 {
                return Err(Error::Grid("grid spacing must be positive".into()));
            }
        }
        Ok(SpatialGrid { dim: domain.dim, lo, hi, counts, spacing })
    }

    pub fn cubic(domain: &Domain, n: usize) -> Result<Self> {
        SpatialGrid::new(domain, [n, n, n])
    }

    pub fn len(&self) -> usize {
        self.counts[0] * self.counts[1] * self.counts[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.counts[0] * (ijk[1] + self.counts[1] * ijk[2])
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.counts[0];
        let r = idx / self.counts[0];
        [i, r % self.counts[1], r / self.counts[1]]
    }

    pub fn position(&self, idx: usize) -> Vec3 {
        self.point(self.coords(idx))
    }

    pub fn point(&self, ijk: [usize; 3]) -> Vec3 {
        let mut p = [0.0; 3];
        for a in 0..self.dim {
            p[a] = self.lo[a] + ijk[a] as f64 * self.spacing[a];
        }
        p
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing[a]).fold(f64::INFINITY, f64::min)
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing[a]).fold(0.0, f64::max)
    }

    /// Number of spacings from node `idx` to the nearest face of the bounding box.
    pub fn boundary_layer(&self, idx: usize) -> usize {
        let c = self.coords(idx);
        (0..self.dim).map(|a| c[a].min(self.counts[a] - 1 - c[a])).min().unwrap_or(0)
    }

    /// Trapezoid volume weights for the bounding box.
    pub fn volume_weights(&self) -> Vec<f64> {
        (0..self.len())
            .map(|idx| {
                let c = self.coords(idx);
                let mut w = 1.0;
                for a in 0..self.dim {
                    let end = c[a] == 0 || c[a] == self.counts[a] - 1;
                    w *= if end { 0.5 * self.spacing[a] } else { self.spacing[a] };
                }
                w
            })
            .collect()
    }

    pub fn stencil(&self, p: Vec3) -> Stencil {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..self.dim {
            let n = self.counts[a];
            let mut u = ((p[a] - self.lo[a]) / self.spacing[a]).clamp(0.0, (n - 1) as f64);
            if (u - u.round()).abs() < 1e-9 {
                u = u.round();
            }
            let i = (u.floor() as usize).min(n - 2);
            base[a] = i;
            frac[a] = u - i as f64;
        }
        let corners = 1usize << self.dim;
        let mut st = Stencil { idx: [0; 8], w: [0.0; 8], len: corners };
        for c in 0..corners {
            let mut ijk = base;
            let mut w = 1.0;
            for a in 0..self.dim {
                if c >> a & 1 == 1 {
                    ijk[a] += 1;
                    w *= frac[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            st.idx[c] = self.index(ijk);
            st.w[c] = w;
        }
        st
    }

    pub fn interpolate(&self, values: &[f64], p: Vec3) -> f64 {
        let st = self.stencil(p);
        (0..st.len).map(|c| st.w[c] * values[st.idx[c]]).sum()
    }

    /// Nearest node to `p`, with its distance.
    pub fn nearest(&self, p: Vec3) -> (usize, f64) {
        let mut ijk = [0usize; 3];
        for a in 0..self.dim {
            let u = ((p[a] - self.lo[a]) / self.spacing[a]).round();
            ijk[a] = u.clamp(0.0, (self.counts[a] - 1) as f64) as usize;
        }
        let idx = self.index(ijk);
        (idx, dist(self.point(ijk), p))
    }
}

/// Angular quadrature closed under the antipodal map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularGrid {
    pub dim: usize,
    pub nodes: Vec<Vec3>,
    pub weights: Vec<f64>,
    pub antipode: Vec<usize>,
}

impl AngularGrid {
    /// `m` equally spaced directions on the circle, starting at the +x axis.
    pub fn circle(m: usize) -> Result<Self> {
        if m < 4 || m % 2 != 0 {
            return Err(Error::Grid(format!("circle quadrature needs an even count >= 4, got {m}")));
        }
        let nodes: Vec<Vec3> = (0..m)
            .map(|j| {
                let a = 2.0 * PI * j as f64 / m as f64;
                [a.cos(), a.sin(), 0.0]
            })
            .collect();
        let weights = vec![2.0 * PI / m as f64; m];
        let antipode = (0..m).map(|j| (j + m / 2) % m).collect();
        AngularGrid::checked(2, nodes, weights, antipode)
    }

    /// Gauss-Legendre in the polar cosine times uniform azimuth.
    pub fn product(n_mu: usize, n_phi: usize) -> Result<Self> {
        if n_mu < 2 || n_mu % 2 != 0 || n_phi < 2 || n_phi % 2 != 0 {
            return Err(Error::Grid("product quadrature needs even polar and azimuthal orders".into()));
        }
        let (mu, wmu) = gauss_legendre(n_mu);
        let mut nodes = Vec::with_capacity(n_mu * n_phi);
        let mut weights = Vec::with_capacity(n_mu * n_phi);
        for i in 0..n_mu {
            let s = (1.0 - mu[i] * mu[i]).max(0.0).sqrt();
            for k in 0..n_phi {
                let phi = 2.0 * PI * (k as f64 + 0.5) / n_phi as f64;
                nodes.push([s * phi.cos(), s * phi.sin(), mu[i]]);
                weights.push(wmu[i] * 2.0 * PI / n_phi as f64);
            }
        }
        let antipode = (0..n_mu * n_phi)
            .map(|idx| {
                let (i, k) = (idx / n_phi, idx % n_phi);
                (n_mu - 1 - i) * n_phi + (k + n_phi / 2) % n_phi
            })
            .collect();
        AngularGrid::checked(3, nodes, weights, antipode)
    }

    /// Gauss-Lobatto in the cosine about `axis` times uniform azimuth, with the
    /// two poles collapsed to single nodes. Azimuth zero points along `reference`
    /// (projected orthogonal to `axis`). Both `axis` and `-axis` are nodes and
    /// each pair of opposite meridians is a great circle through the poles.
    pub fn polar(axis: Vec3, reference: Vec3, n_mu: usize, n_psi: usize) -> Result<Self> {
        if n_mu < 3 || n_psi < 2 || n_psi % 2 != 0 {
            return Err(Error::Grid("polar quadrature needs n_mu >= 3 and even n_psi".into()));
        }
        let a = normalize(axis);
        let e1 = normalize(axpy(reference, -dot(reference, a), a));
        let e2 = cross(a, e1);
        let (mu, wmu) = gauss_lobatto(n_mu);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut ring_start = Vec::with_capacity(n_mu);
        for i in 0..n_mu {
            ring_start.push(nodes.len());
            if i == 0 || i == n_mu - 1 {
                nodes.push(scale(a, mu[i].signum()));
                weights.push(wmu[i] * 2.0 * PI);
                continue;
            }
            let s = (1.0 - mu[i] * mu[i]).max(0.0).sqrt();
            for r in 0..n_psi {
                let psi = 2.0 * PI * r as f64 / n_psi as f64;
                let dir = add(scale(a, mu[i]), scale(add(scale(e1, psi.cos()), scale(e2, psi.sin())), s));
                nodes.push(dir);
                weights.push(wmu[i] * 2.0 * PI / n_psi as f64);
            }
        }
        let mut antipode = vec![0; nodes.len()];
        for i in 0..n_mu {
            let j = n_mu - 1 - i;
            if i == 0 || i == n_mu - 1 {
                antipode[ring_start[i]] = ring_start[j];
                continue;
            }
            for r in 0..n_psi {
                antipode[ring_start[i] + r] = ring_start[j] + (r + n_psi / 2) % n_psi;
            }
        }
        AngularGrid::checked(3, nodes, weights, antipode)
    }

    /// Uniformly spaced polar angles about `axis` (`n_rings` bands from pole to
    /// pole) times `n_psi` meridians. Every meridian pair `psi`, `psi + pi` is a
    /// great circle sampled every `pi / n_rings`, like the 2D circle rule.
    pub fn polar_uniform(axis: Vec3, reference: Vec3, n_rings: usize, n_psi: usize) -> Result<Self> {
        if n_rings < 2 || n_psi < 2 || n_psi % 2 != 0 {
            return Err(Error::Grid("polar quadrature needs n_rings >= 2 and even n_psi".into()));
        }
        let a = normalize(axis);
        let e1 = normalize(axpy(reference, -dot(reference, a), a));
        let e2 = cross(a, e1);
        let da = PI / n_rings as f64;
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut ring_start = Vec::with_capacity(n_rings + 1);
        for i in 0..=n_rings {
            ring_start.push(nodes.len());
            let alpha = i as f64 * da;
            let lo = (alpha - 0.5 * da).max(0.0);
            let hi = (alpha + 0.5 * da).min(PI);
            let band = 2.0 * PI * (lo.cos() - hi.cos());
            if i == 0 || i == n_rings {
                nodes.push(scale(a, if i == 0 { 1.0 } else { -1.0 }));
                weights.push(band);
                continue;
            }
            for r in 0..n_psi {
                let psi = 2.0 * PI * r as f64 / n_psi as f64;
                let side = add(scale(e1, psi.cos()), scale(e2, psi.sin()));
                nodes.push(add(scale(a, alpha.cos()), scale(side, alpha.sin())));
                weights.push(band / n_psi as f64);
            }
        }
        let mut antipode = vec![0; nodes.len()];
        for i in 0..=n_rings {
            let j = n_rings - i;
            if i == 0 || i == n_rings {
                antipode[ring_start[i]] = ring_start[j];
                continue;
            }
            for r in 0..n_psi {
                antipode[ring_start[i] + r] = ring_start[j] + (r + n_psi / 2) % n_psi;
            }
        }
        AngularGrid::checked(3, nodes, weights, antipode)
    }

    fn checked(dim: usize, nodes: Vec<Vec3>, weights: Vec<f64>, antipode: Vec<usize>) -> Result<Self> {
        let mut weights = weights;
        for j in 0..weights.len() {
            let p = antipode[j];
            if p > j {
                let w = 0.5 * (weights[j] + weights[p]);
                weights[j] = w;
                weights[p] = w;
            }
        }
        let g = AngularGrid { dim, nodes, weights, antipode };
        g.verify()?;
        Ok(g)
    }

    /// Checks antipodal closure by exact node matching and the total measure.
    pub fn verify(&self) -> Result<()> {
        for (j, &p) in self.antipode.iter().enumerate() {
            let d = norm(add(self.nodes[j], self.nodes[p]));
            if d > 1e-12 || self.weights[j] != self.weights[p] || self.antipode[p] != j {
                return Err(Error::Grid(format!("antipodal closure fails at node {j}")));
            }
        }
        let total: f64 = self.weights.iter().sum();
        if ((total - self.measure()) / self.measure()).abs() > 1e-12 {
            return Err(Error::Grid(format!("weights sum to {total}, expected {}", self.measure())));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn measure(&self) -> f64 {
        if self.dim == 2 {
            2.0 * PI
        } else {
            4.0 * PI
        }
    }

    /// Node closest to `theta`, with its chord distance.
    pub fn nearest(&self, theta: Vec3) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (j, &n) in self.nodes.iter().enumerate() {
            let d = dist(n, theta);
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    }

    pub fn index_of(&self, theta: Vec3) -> Option<usize> {
        let (j, d) = self.nearest(theta);
        (d < 1e-9).then_some(j)
    }

    /// Smallest chord distance from node `j` to any other node.
    pub fn separation(&self, j: usize) -> f64 {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, &n)| dist(n, self.nodes[j]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Gauss-Legendre nodes (ascending) and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, z);
        x[n - 1 - i] = z;
        w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Gauss-Lobatto nodes (ascending, endpoints included) and weights on [-1, 1].
pub fn gauss_lobatto(n: usize) -> (Vec<f64>, Vec<f64>) {
    let order = n - 1;
    let mut x = vec![0.0; n];
    x[0] = -1.0;
    x[n - 1] = 1.0;
    for i in 1..n - 1 {
        let mut z = -(PI * i as f64 / order as f64).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(order, z);
            let ddp = (2.0 * z * dp - (order * (order + 1)) as f64 * p) / (1.0 - z * z);
            let dz = dp / ddp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
    }
    let scale = 2.0 / (order * n) as f64;
    let w = x
        .iter()
        .map(|&z| {
            let (p, _) = legendre(order, z);
            scale / (p * p)
        })
        .collect();
    (x, w)
}

/// Legendre polynomial `P_n(z)` and its derivative.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, z);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = if (1.0 - z * z).abs() < 1e-300 {
        let s = if z > 0.0 || n % 2 == 0 { 1.0 } else { -1.0 };
        s * (n * (n + 1)) as f64 / 2.0
    } else {
        n as f64 * (z * p1 - p0) / (z * z - 1.0)
    };
    (p1, dp)
}

/// A point on the boundary with its outward normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub x: Vec3,
    pub normal: Vec3,
    /// Surface quadrature weight.
    pub weight: f64,
    /// Grid node coinciding with `x`, if any.
    pub node: Option<usize>,
}

/// One phase-space boundary sample `(x, theta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySample {
    pub x: Vec3,
    pub theta: Vec3,
    pub normal: Vec3,
    /// Sign of `theta . normal`: negative on the incoming boundary.
    pub sign: f64,
}

impl BoundarySample {
    pub fn new(domain: &Domain, x: Vec3, theta: Vec3) -> Result<Self> {
        if !domain.on_boundary(x) {
            return Err(Error::OutsideDomain { point: x });
        }
        let normal = domain.normal(x);
        let c = dot(theta, normal);
        Ok(BoundarySample { x, theta, normal, sign: if c > 0.0 { 1.0 } else if c < 0.0 { -1.0 } else { 0.0 } })
    }

    pub fn incoming(&self) -> bool {
        self.sign < 0.0
    }
}

/// Surface quadrature of the boundary. Box faces use trapezoid sampling of the
/// grid nodes on each face, refined `refine` times; a node shared by several
/// faces appears once per face with that face's normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMesh {
    pub points: Vec<BoundaryPoint>,
    pub refine: usize,
}

impl BoundaryMesh {
    pub fn new(domain: &Domain, grid: &SpatialGrid, refine: usize) -> Self {
        let refine = refine.max(1);
        let points = match domain.shape {
            Shape::Box { lo, hi } => box_faces(domain.dim, lo, hi, grid, refine),
            Shape::Ball { center, radius } => sphere_points(domain.dim, center, radius, grid, refine),
        };
        BoundaryMesh { points, refine }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn area(&self) -> f64 {
        self.points.iter().map(|p| p.weight).sum()
    }
}

fn box_faces(dim: usize, lo: Vec3, hi: Vec3, grid: &SpatialGrid, refine: usize) -> Vec<BoundaryPoint> {
    let mut out = Vec::new();
    for a in 0..dim {
        for side in 0..2 {
            let mut normal = [0.0; 3];
            normal[a] = if side == 0 { -1.0 } else { 1.0 };
            let others: Vec<usize> = (0..dim).filter(|&b| b != a).collect();
            let counts: Vec<usize> = others.iter().map(|&b| (grid.counts[b] - 1) * refine + 1).collect();
            let total: usize = counts.iter().product();
            for flat in 0..total {
                let mut x = [0.0; 3];
                x[a] = if side == 0 { lo[a] } else { hi[a] };
                let mut weight = 1.0;
                let mut rem = flat;
                let mut ijk = [0usize; 3];
                let mut on_node = true;
                ijk[a] = if side == 0 { 0 } else { grid.counts[a] - 1 };
                for (k, &b) in others.iter().enumerate() {
                    let i = rem % counts[k];
                    rem /= counts[k];
                    let h = grid.spacing[b] / refine as f64;
                    x[b] = lo[b] + i as f64 * h;
                    weight *= if i == 0 || i == counts[k] - 1 { 0.5 * h } else { h };
                    if i % refine != 0 {
                        on_node = false;
                    } else {
                        ijk[b] = i / refine;
                    }
                }
                let node = on_node.then(|| grid.index(ijk));
                out.push(BoundaryPoint { x, normal, weight, node });
            }
        }
    }
    out
}

fn sphere_points(dim: usize, center: Vec3, radius: f64, grid: &SpatialGrid, refine: usize) -> Vec<BoundaryPoint> {
    let h = grid.min_spacing() / refine as f64;
    let mut out = Vec::new();
    if dim == 2 {
        let n = ((2.0 * PI * radius / h).ceil() as usize).max(8);
        for i in 0..n {
            let a = 2.0 * PI * i as f64 / n as f64;
            let normal = [a.cos(), a.sin(), 0.0];
            out.push(BoundaryPoint {
                x: axpy(center, radius, normal),
                normal,
                weight: 2.0 * PI * radius / n as f64,
                node: None,
            });
        }
    } else {
        let n_mu = (((PI * radius / h).ceil() as usize).max(4) + 1) / 2 * 2;
        let n_phi = 2 * n_mu;
        let (mu, wmu) = gauss_legendre(n_mu);
        for i in 0..n_mu {
            let s = (1.0 - mu[i] * mu[i]).sqrt();
            for k in 0..n_phi {
                let phi = 2.0 * PI * (k as f64 + 0.5) / n_phi as f64;
                let normal = [s * phi.cos(), s * phi.sin(), mu[i]];
                out.push(BoundaryPoint {
                    x: axpy(center, radius, normal),
                    normal,
                    weight: radius * radius * wmu[i] * 2.0 * PI / n_phi as f64,
                    node: None,
                });
            }
        }
    }
    out
}

/// Spatial grid, angular grid and marching steps bundled for the solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    pub domain: Domain,
    pub grid: SpatialGrid,
    pub angles: AngularGrid,
    /// Step of the optical-distance trapezoid rule.
    pub step: f64,
    /// Step of the ray march inside the lift.
    pub lift_step: f64,
    pub inside: Vec<bool>,
}

impl Discretization {
    pub fn new(domain: Domain, grid: SpatialGrid, angles: AngularGrid) -> Result<Self> {
        if angles.dim != domain.dim || grid.dim != domain.dim {
            return Err(Error::Grid("grid dimensions disagree with the domain".into()));
        }
        let step = domain.diameter() / 256.0;
        let lift_step = 0.5 * grid.min_spacing();
        let inside = (0..grid.len()).map(|i| domain.contains(grid.position(i))).collect();
        Ok(Discretization { domain, grid, angles, step, lift_step, inside })
    }

    pub fn with_steps(mut self, step: f64, lift_step: f64) -> Result<Self> {
        if !(step > 0.0 && lift_step > 0.0) {
            return Err(Error::Parameter("marching steps must be positive".into()));
        }
        self.step = step;
        self.lift_step = lift_step;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    pub fn nodes(&self) -> usize {
        self.grid.len()
    }

    pub fn directions(&self) -> usize {
        self.angles.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn gamma_axis_ray_in_box() {
        let d = Domain::unit_box(3);
        let p = gamma(&d, [0.5, 0.5, 0.5], [1.0, 0.0, 0.0], Sign::Plus).unwrap();
        assert_eq!(p, [1.0, 0.5, 0.5]);
    }

    #[test]
    fn gamma_ball_center_backwards() {
        let d = Domain::unit_ball(3);
        let th = normalize([0.3, -0.4, 0.5]);
        let p = gamma(&d, [0.0; 3], th, Sign::Minus).unwrap();
        for a in 0..3 {
            assert_abs_diff_eq!(p[a], -th[a], epsilon = 1e-14);
        }
    }

    #[test]
    fn gamma_diagonal_slab_exit() {
        let d = Domain::unit_box(3);
        let s = 0.5f64.sqrt();
        let p = gamma(&d, [0.25, 0.5, 0.5], [s, s, 0.0], Sign::Plus).unwrap();
        // x-slab exit at t = 0.75/s, y-slab exit at t = 0.5/s; the y face wins.
        assert_abs_diff_eq!(p[0], 0.75, epsilon = 1e-14);
        assert_abs_diff_eq!(p[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p[2], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn gamma_rejects_outside_points() {
        let d = Domain::unit_box(2);
        assert!(matches!(
            gamma(&d, [1.5, 0.5, 0.0], [1.0, 0.0, 0.0], Sign::Plus),
            Err(Error::OutsideDomain { .. })
        ));
    }

    #[test]
    fn constant_sigma_distance() {
        let tau = optical_distance(&|_| 1.7, [0.1, 0.2, 0.3], [0.9, 0.4, 0.0], 0.01);
        assert_abs_diff_eq!(tau, 1.7 * dist([0.1, 0.2, 0.3], [0.9, 0.4, 0.0]), epsilon = 1e-13);
    }

    fn bump(x: Vec3) -> f64 {
        1.0 + 0.8 * (-(dist(x, [0.4, 0.6, 0.5]).powi(2)) / 0.05).exp()
    }

    #[test]
    fn optical_distance_second_order() {
        let (x, y) = ([0.05, 0.1, 0.2], [0.95, 0.8, 0.7]);
        let exact = optical_distance(&bump, x, y, 1e-5);
        let steps = [0.1, 0.05, 0.025, 0.0125];
        let errs: Vec<f64> = steps.iter().map(|&h| (optical_distance(&bump, x, y, h) - exact).abs()).collect();
        let slope = crate::stats::loglog_slope(&steps, &errs);
        assert!(slope >= 1.8, "slope {slope}");
    }

    #[test]
    fn ray_trace_ball_diameter() {
        let d = Domain::unit_ball(3);
        let x = [1.0, 0.0, 0.0];
        let r = ray_trace(&d, x, [-1.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(r.chord, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn ray_trace_box_opposing_faces() {
        let d = Domain::unit_box(3);
        let r = ray_trace(&d, [0.3, 0.6, 0.2], [0.0, 1.0, 0.0]).unwrap();
        assert_eq!(r.entry, [0.3, 0.0, 0.2]);
        assert_eq!(r.exit, [0.3, 1.0, 0.2]);
        assert!(!r.degenerate);
    }

    #[test]
    fn tangential_ray_is_flagged() {
        let d = Domain::unit_ball(2);
        let r = ray_trace(&d, [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]).unwrap();
        assert!(r.degenerate);
    }

    #[test]
    fn quadratures_are_antipodal_and_normalized() {
        for g in [
            AngularGrid::circle(32).unwrap(),
            AngularGrid::product(8, 16).unwrap(),
            AngularGrid::polar([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 18, 8).unwrap(),
            AngularGrid::polar_uniform([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 16, 8).unwrap(),
        ] {
            g.verify().unwrap();
            for j in 0..g.len() {
                assert_abs_diff_eq!(norm(g.nodes[j]), 1.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn polar_grid_meridians_are_great_circles() {
        let g = AngularGrid::polar([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 10, 8).unwrap();
        assert!(g.index_of([1.0, 0.0, 0.0]).is_some());
        assert!(g.index_of([-1.0, 0.0, 0.0]).is_some());
        let in_plane = g.nodes.iter().filter(|n| n[2].abs() < 1e-14).count();
        assert_eq!(in_plane, 2 + 2 * 8);
    }

    #[test]
    fn uniform_polar_grid_contains_lattice_directions() {
        let g = AngularGrid::polar_uniform([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 16, 8).unwrap();
        let s = 0.5f64.sqrt();
        for d in [[0.0, 1.0, 0.0], [-s, s, 0.0], [0.0, 0.0, 1.0], [s, 0.0, -s]] {
            assert!(g.index_of(d).is_some(), "{d:?}");
        }
        assert_eq!(g.len(), 2 + 15 * 8);
    }

    #[test]
    fn gauss_rules_integrate_polynomials() {
        let (x, w) = gauss_legendre(6);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert_abs_diff_eq!(i, 2.0 / 11.0, epsilon = 1e-14);
        let (x, w) = gauss_lobatto(6);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert_abs_diff_eq!(i, 2.0 / 9.0, epsilon = 1e-14);
    }

    #[test]
    fn boundary_mesh_area() {
        let d = Domain::unit_box(3);
        let g = SpatialGrid::cubic(&d, 5).unwrap();
        assert_abs_diff_eq!(BoundaryMesh::new(&d, &g, 1).area(), 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(BoundaryMesh::new(&d, &g, 3).area(), 6.0, epsilon = 1e-12);
        let b = Domain::unit_ball(3);
        let g = SpatialGrid::cubic(&b, 9).unwrap();
        assert_abs_diff_eq!(BoundaryMesh::new(&b, &g, 1).area(), 4.0 * PI, epsilon = 1e-10);
    }

    #[test]
    fn interpolation_reproduces_linear_functions() {
        let d = Domain::unit_box(3);
        let g = SpatialGrid::new(&d, [5, 7, 4]).unwrap();
        let f = |p: Vec3| 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[2];
        let vals: Vec<f64> = (0..g.len()).map(|i| f(g.position(i))).collect();
        let p = [0.37, 0.81, 0.12];
        assert_abs_diff_eq!(g.interpolate(&vals, p), f(p), epsilon = 1e-13);
    }

    proptest! {
        #[test]
        fn exit_equals_reverse_entry(x in 0.0..1.0f64, y in 0.0..1.0f64, z in 0.0..1.0f64, a in 0.0..6.28f64, b in -1.0..1.0f64) {
            let d = Domain::unit_box(3);
            let s = (1.0 - b * b).sqrt();
            let th = [s * a.cos(), s * a.sin(), b];
            let p = [x, y, z];
            let plus = gamma(&d, p, th, Sign::Plus).unwrap();
            let minus = gamma(&d, p, scale(th, -1.0), Sign::Minus).unwrap();
            prop_assert!(dist(plus, minus) < 1e-12);
        }

        #[test]
        fn ray_endpoints_are_collinear(x in 0.0..1.0f64, y in 0.0..1.0f64, a in 0.0..6.28f64) {
            let d = Domain::unit_box(2);
            let th = [a.cos(), a.sin(), 0.0];
            let p = [x, y, 0.0];
            let r = ray_trace(&d, p, th).unwrap();
            let t = dot(sub(p, r.entry), th);
            prop_assert!(t >= -1e-12 && t <= r.chord + 1e-12);
            prop_assert!(dist(axpy(r.entry, t, th), p) < 1e-10);
        }

        #[test]
        fn optical_distance_symmetric_and_additive(x in 0.0..1.0f64, y in 0.0..1.0f64, u in 0.0..1.0f64, v in 0.0..1.0f64, t in 0.1..0.9f64) {
            let p = [x, y, 0.3];
            let q = [u, v, 0.7];
            let h = 1e-3;
            let a = optical_distance(&bump, p, q, h);
            let b = optical_distance(&bump, q, p, h);
            prop_assert!((a - b).abs() < 1e-12);
            let m = axpy(p, t, sub(q, p));
            let parts = optical_distance(&bump, p, m, 1e-5) + optical_distance(&bump, m, q, 1e-5);
            let whole = optical_distance(&bump, p, q, 1e-5);
            prop_assert!((parts - whole).abs() < 1e-8);
        }
    }
}
