//! Radiance and boundary fields, and the binary field format.

use std::io::{Read, Write};
use std::ops::{Add, AddAssign, Mul, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Component, Error, Result};
use crate::geometry::{dist, dot, BoundaryMesh, Discretization, Vec3};

/// Real or complex field values.
pub trait Scalar:
    Copy
    + Default
    + Send
    + Sync
    + std::fmt::Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Mul<f64, Output = Self>
    + AddAssign
    + 'static
{
    const COMPLEX: bool;
    fn abs(self) -> f64;
    fn from_complex(c: Complex64) -> Self;
    fn to_complex(self) -> Complex64;
    fn from_real(r: f64) -> Self;
    fn is_zero(self) -> bool {
        self == Self::default()
    }
}

impl Scalar for f64 {
    const COMPLEX: bool = false;
    fn abs(self) -> f64 {
        f64::abs(self)
    }
    /// Keeps the real part.
    fn from_complex(c: Complex64) -> Self {
        c.re
    }
    fn to_complex(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
    fn from_real(r: f64) -> Self {
        r
    }
}

impl Scalar for Complex64 {
    const COMPLEX: bool = true;
    fn abs(self) -> f64 {
        self.norm()
    }
    fn from_complex(c: Complex64) -> Self {
        c
    }
    fn to_complex(self) -> Complex64 {
        self
    }
    fn from_real(r: f64) -> Self {
        Complex64::new(r, 0.0)
    }
}

/// `u(x, theta)` on the spatial grid times the angular grid, stored as one
/// contiguous slab of spatial values per direction.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceField<T> {
    pub disc: Arc<Discretization>,
    pub values: Vec<T>,
}

impl<T: Scalar> RadianceField<T> {
    pub fn zeros(disc: &Arc<Discretization>) -> Self {
        RadianceField { disc: disc.clone(), values: vec![T::default(); disc.nodes() * disc.directions()] }
    }

    pub fn from_fn(disc: &Arc<Discretization>, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let n = disc.nodes();
        let values = (0..n * disc.directions()).map(|k| f(k % n, k / n)).collect();
        RadianceField { disc: disc.clone(), values }
    }

    pub fn nodes(&self) -> usize {
        self.disc.nodes()
    }

    pub fn directions(&self) -> usize {
        self.disc.directions()
    }

    pub fn get(&self, node: usize, dir: usize) -> T {
        self.values[dir * self.nodes() + node]
    }

    pub fn set(&mut self, node: usize, dir: usize, v: T) {
        let n = self.nodes();
        self.values[dir * n + node] = v;
    }

    pub fn slab(&self, dir: usize) -> &[T] {
        let n = self.nodes();
        &self.values[dir * n..(dir + 1) * n]
    }

    pub fn slab_mut(&mut self, dir: usize) -> &mut [T] {
        let n = self.nodes();
        &mut self.values[dir * n..(dir + 1) * n]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `int |u(x, theta)| d theta` at a node.
    pub fn angular_l1(&self, node: usize) -> f64 {
        let w = &self.disc.angles.weights;
        (0..self.directions()).map(|j| w[j] * self.get(node, j).abs()).sum()
    }

    /// `int u(x, theta) d theta` at every node.
    pub fn angular_integral(&self) -> Vec<T> {
        let n = self.nodes();
        let mut out = vec![T::default(); n];
        for (j, w) in self.disc.angles.weights.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(self.slab(j)) {
                *o += *v * *w;
            }
        }
        out
    }

    /// `v(x, theta) = u(x, -theta)`.
    pub fn relabel(&self) -> Self {
        let n = self.nodes();
        let mut values = Vec::with_capacity(self.values.len());
        for j in 0..self.directions() {
            let a = self.disc.angles.antipode[j];
            values.extend_from_slice(&self.values[a * n..(a + 1) * n]);
        }
        RadianceField { disc: self.disc.clone(), values }
    }

    pub fn scaled(&self, s: f64) -> Self {
        RadianceField { disc: self.disc.clone(), values: self.values.iter().map(|v| *v * s).collect() }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += *b;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| *a - *b).collect();
        RadianceField { disc: self.disc.clone(), values }
    }

    pub fn to_complex(&self) -> RadianceField<Complex64> {
        RadianceField { disc: self.disc.clone(), values: self.values.iter().map(|v| v.to_complex()).collect() }
    }

    /// `int u v d theta` at every node.
    pub fn pair_integral<U: Scalar>(&self, other: &RadianceField<U>) -> Vec<Complex64> {
        let n = self.nodes();
        let mut out = vec![Complex64::default(); n];
        for (j, w) in self.disc.angles.weights.iter().enumerate() {
            for ((o, a), b) in out.iter_mut().zip(self.slab(j)).zip(other.slab(j)) {
                *o += a.to_complex() * b.to_complex() * *w;
            }
        }
        out
    }

    /// Values in spatial-major order: all directions of node 0, then node 1, ...
    pub fn spatial_major(&self) -> Vec<T> {
        let (n, m) = (self.nodes(), self.directions());
        let mut out = Vec::with_capacity(n * m);
        for node in 0..n {
            for j in 0..m {
                out.push(self.values[j * n + node]);
            }
        }
        out
    }
}

impl RadianceField<Complex64> {
    pub fn re(&self) -> RadianceField<f64> {
        RadianceField { disc: self.disc.clone(), values: self.values.iter().map(|v| v.re).collect() }
    }

    pub fn im(&self) -> RadianceField<f64> {
        RadianceField { disc: self.disc.clone(), values: self.values.iter().map(|v| v.im).collect() }
    }
}

/// Spatial factor of a separable boundary field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SpatialProfile {
    Uniform,
    /// Indicator of the union of boundary disks, scaled by `height`.
    Disks { centers: Vec<Vec3>, radius: f64, height: f64 },
    /// `exp(i (k . x + phase))`; real fields keep the cosine.
    Wave { wavevector: Vec3, phase: f64 },
    Gaussian { center: Vec3, width: f64 },
}

impl SpatialProfile {
    pub fn eval(&self, x: Vec3) -> Complex64 {
        match self {
            SpatialProfile::Uniform => Complex64::new(1.0, 0.0),
            SpatialProfile::Disks { centers, radius, height } => {
                if centers.iter().any(|c| dist(*c, x) < *radius) {
                    Complex64::new(*height, 0.0)
                } else {
                    Complex64::default()
                }
            }
            SpatialProfile::Wave { wavevector, phase } => Complex64::from_polar(1.0, dot(*wavevector, x) + phase),
            SpatialProfile::Gaussian { center, width } => {
                let r = dist(*center, x);
                Complex64::new((-0.5 * r * r / (width * width)).exp(), 0.0)
            }
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            SpatialProfile::Disks { height, .. } => height.abs(),
            _ => 1.0,
        }
    }
}

/// Data on the incoming or outgoing part of the phase-space boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryField<T> {
    /// `angular[j] * spatial(x)`, restricted to `component`.
    Separable { component: Component, angular: Vec<T>, spatial: SpatialProfile },
    /// Values at mesh points, `values[p * M + j]`, zero off `component`.
    Sampled { component: Component, mesh: Arc<BoundaryMesh>, values: Vec<T> },
}

impl<T: Scalar> BoundaryField<T> {
    pub fn component(&self) -> Component {
        match self {
            BoundaryField::Separable { component, .. } | BoundaryField::Sampled { component, .. } => *component,
        }
    }

    /// Uniform isotropic field of value `c` on a component.
    pub fn uniform(disc: &Discretization, component: Component, c: T) -> Self {
        BoundaryField::Separable { component, angular: vec![c; disc.directions()], spatial: SpatialProfile::Uniform }
    }

    pub fn zero(disc: &Discretization, component: Component) -> Self {
        BoundaryField::uniform(disc, component, T::default())
    }

    /// Directions on which the field can be nonzero.
    pub fn angular_support(&self, m: usize) -> Vec<usize> {
        match self {
            BoundaryField::Separable { angular, spatial, .. } => {
                if let SpatialProfile::Disks { centers, .. } = spatial {
                    if centers.is_empty() {
                        return Vec::new();
                    }
                }
                (0..m).filter(|&j| !angular[j].is_zero()).collect()
            }
            BoundaryField::Sampled { values, .. } => {
                (0..m).filter(|&j| values.chunks(m).any(|row| !row[j].is_zero())).collect()
            }
        }
    }

    /// Value at boundary point `x` in direction `dir`, without a component check.
    pub fn eval(&self, x: Vec3, dir: usize) -> T {
        match self {
            BoundaryField::Separable { angular, spatial, .. } => {
                let a = angular[dir];
                if a.is_zero() {
                    return a;
                }
                a * T::from_complex(spatial.eval(x))
            }
            BoundaryField::Sampled { mesh, values, .. } => {
                let m = values.len() / mesh.len().max(1);
                let mut best = (usize::MAX, f64::INFINITY);
                for (p, bp) in mesh.points.iter().enumerate() {
                    let d = dist(bp.x, x);
                    if d < best.1 {
                        best = (p, d);
                    }
                }
                if best.0 == usize::MAX {
                    T::default()
                } else {
                    values[best.0 * m + dir]
                }
            }
        }
    }

    /// The field seen under `theta -> -theta`, which swaps the components.
    pub fn relabel(&self, disc: &Discretization) -> Self {
        let anti = &disc.angles.antipode;
        match self {
            BoundaryField::Separable { component, angular, spatial } => BoundaryField::Separable {
                component: component.flipped(),
                angular: anti.iter().map(|&a| angular[a]).collect(),
                spatial: spatial.clone(),
            },
            BoundaryField::Sampled { component, mesh, values } => {
                let m = anti.len();
                let mut out = vec![T::default(); values.len()];
                for p in 0..mesh.len() {
                    for j in 0..m {
                        out[p * m + j] = values[p * m + anti[j]];
                    }
                }
                BoundaryField::Sampled { component: component.flipped(), mesh: mesh.clone(), values: out }
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        match self {
            BoundaryField::Separable { component, angular, spatial } => BoundaryField::Separable {
                component: *component,
                angular: angular.iter().map(|a| *a * s).collect(),
                spatial: spatial.clone(),
            },
            BoundaryField::Sampled { component, mesh, values } => BoundaryField::Sampled {
                component: *component,
                mesh: mesh.clone(),
                values: values.iter().map(|a| *a * s).collect(),
            },
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            BoundaryField::Separable { angular, spatial, .. } => {
                angular.iter().fold(0.0f64, |m, a| m.max(a.abs())) * spatial.sup()
            }
            BoundaryField::Sampled { values, .. } => values.iter().fold(0.0f64, |m, a| m.max(a.abs())),
        }
    }

    /// Sampled values at every mesh point and direction on the field's component.
    pub fn sample_on(&self, disc: &Discretization, mesh: &Arc<BoundaryMesh>) -> BoundaryField<T> {
        let m = disc.directions();
        let comp = self.component();
        let mut values = vec![T::default(); mesh.len() * m];
        for (p, bp) in mesh.points.iter().enumerate() {
            for j in 0..m {
                let c = dot(disc.angles.nodes[j], bp.normal);
                let on = match comp {
                    Component::Incoming => c < 0.0,
                    Component::Outgoing => c > 0.0,
                };
                if on {
                    values[p * m + j] = self.eval(bp.x, j);
                }
            }
        }
        BoundaryField::Sampled { component: comp, mesh: mesh.clone(), values }
    }
}

impl BoundaryField<f64> {
    pub fn to_complex(&self) -> BoundaryField<Complex64> {
        match self {
            BoundaryField::Separable { component, angular, spatial } => BoundaryField::Separable {
                component: *component,
                angular: angular.iter().map(|a| Complex64::new(*a, 0.0)).collect(),
                spatial: match spatial {
                    SpatialProfile::Wave { .. } => {
                        panic!("a real wave profile has no unique complex extension")
                    }
                    s => s.clone(),
                },
            },
            BoundaryField::Sampled { component, mesh, values } => BoundaryField::Sampled {
                component: *component,
                mesh: mesh.clone(),
                values: values.iter().map(|a| Complex64::new(*a, 0.0)).collect(),
            },
        }
    }
}

impl BoundaryField<Complex64> {
    /// Real and imaginary parts as separate real fields.
    pub fn split(&self, disc: &Discretization, mesh: &Arc<BoundaryMesh>) -> (BoundaryField<f64>, BoundaryField<f64>) {
        let sampled = self.sample_on(disc, mesh);
        match sampled {
            BoundaryField::Sampled { component, mesh, values } => (
                BoundaryField::Sampled { component, mesh: mesh.clone(), values: values.iter().map(|v| v.re).collect() },
                BoundaryField::Sampled { component, mesh, values: values.iter().map(|v| v.im).collect() },
            ),
            _ => unreachable!(),
        }
    }
}

/// Provenance byte stored in field files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Radiance = 0,
    Oracle = 1,
    FourierRecovered = 2,
    Reconstructed = 3,
    Phantom = 4,
}

impl Provenance {
    pub fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            0 => Provenance::Radiance,
            1 => Provenance::Oracle,
            2 => Provenance::FourierRecovered,
            3 => Provenance::Reconstructed,
            4 => Provenance::Phantom,
            _ => return Err(Error::Format(format!("unknown provenance byte {b}"))),
        })
    }
}

pub const MAGIC: &[u8; 4] = b"MFAO";
pub const FORMAT_VERSION: u16 = 1;

/// Header of the binary field format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldHeader {
    pub dim: u8,
    pub counts: [u32; 3],
    /// Zero for purely spatial fields.
    pub directions: u32,
    pub complex: bool,
    pub provenance: Provenance,
}

impl FieldHeader {
    pub fn for_disc(disc: &Discretization, directions: usize, complex: bool, provenance: Provenance) -> Self {
        let c = disc.grid.counts;
        FieldHeader {
            dim: disc.dim() as u8,
            counts: [c[0] as u32, c[1] as u32, c[2] as u32],
            directions: directions as u32,
            complex,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        let spatial = self.counts.iter().map(|&c| c as usize).product::<usize>();
        spatial * (self.directions as usize).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

/// Writes a header and little-endian values. Complex values are interleaved
/// `re, im`; radiance values are spatial-major.
pub fn write_field<W: Write>(w: &mut W, header: &FieldHeader, data: &FieldData) -> Result<()> {
    let io = |e: std::io::Error| Error::Format(e.to_string());
    let len = match data {
        FieldData::Real(v) => v.len(),
        FieldData::Complex(v) => v.len(),
    };
    if len != header.len() || header.complex != matches!(data, FieldData::Complex(_)) {
        return Err(Error::Format("field data does not match its header".into()));
    }
    let mut buf = Vec::with_capacity(24 + len * 16);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(header.dim);
    buf.push(header.complex as u8);
    buf.push(header.provenance as u8);
    buf.push(0);
    for c in header.counts {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    buf.extend_from_slice(&header.directions.to_le_bytes());
    match data {
        FieldData::Real(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        FieldData::Complex(v) => v.iter().for_each(|x| {
            buf.extend_from_slice(&x.re.to_le_bytes());
            buf.extend_from_slice(&x.im.to_le_bytes());
        }),
    }
    w.write_all(&buf).map_err(io)
}

pub fn read_field<R: Read>(r: &mut R) -> Result<(FieldHeader, FieldData)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::Format(e.to_string()))?;
    if bytes.len() < 26 || &bytes[0..4] != MAGIC {
        return Err(Error::Format("missing MFAO magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let header = FieldHeader {
        dim: bytes[6],
        complex: bytes[7] != 0,
        provenance: Provenance::from_byte(bytes[8])?,
        counts: [u32_at(10), u32_at(14), u32_at(18)],
        directions: u32_at(22),
    };
    let body = &bytes[26..];
    let width = if header.complex { 16 } else { 8 };
    if body.len() != header.len() * width {
        return Err(Error::Format(format!("expected {} value bytes, found {}", header.len() * width, body.len())));
    }
    let f = |o: usize| f64::from_le_bytes(body[o..o + 8].try_into().unwrap());
    let data = if header.complex {
        FieldData::Complex((0..header.len()).map(|i| Complex64::new(f(16 * i), f(16 * i + 8))).collect())
    } else {
        FieldData::Real((0..header.len()).map(|i| f(8 * i)).collect())
    };
    Ok((header, data))
}

/// Serializes a radiance field spatial-major.
pub fn write_radiance<W: Write, T: Scalar>(w: &mut W, u: &RadianceField<T>) -> Result<()> {
    let header = FieldHeader::for_disc(&u.disc, u.directions(), T::COMPLEX, Provenance::Radiance);
    let vals = u.spatial_major();
    let data = if T::COMPLEX {
        FieldData::Complex(vals.iter().map(|v| v.to_complex()).collect())
    } else {
        FieldData::Real(vals.iter().map(|v| v.to_complex().re).collect())
    };
    write_field(w, &header, &data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AngularGrid, Domain, SpatialGrid};

    fn disc() -> Arc<Discretization> {
        let d = Domain::unit_box(2);
        Arc::new(Discretization::new(d, SpatialGrid::cubic(&d, 4).unwrap(), AngularGrid::circle(8).unwrap()).unwrap())
    }

    #[test]
    fn relabel_is_an_involution() {
        let d = disc();
        let u = RadianceField::<f64>::from_fn(&d, |n, j| (n * 10 + j) as f64);
        assert_eq!(u.relabel().relabel(), u);
        assert_eq!(u.relabel().get(3, 0), u.get(3, 4));
    }

    #[test]
    fn binary_round_trip() {
        let d = disc();
        let u = RadianceField::<Complex64>::from_fn(&d, |n, j| Complex64::new(n as f64, -(j as f64)));
        let mut buf = Vec::new();
        write_radiance(&mut buf, &u).unwrap();
        assert_eq!(&buf[0..4], b"MFAO");
        let (h, data) = read_field(&mut buf.as_slice()).unwrap();
        assert_eq!(h.directions, 8);
        assert!(h.complex);
        match data {
            FieldData::Complex(v) => {
                assert_eq!(v.len(), 16 * 8);
                // spatial-major: node 1, direction 2 sits at 1 * 8 + 2
                assert_eq!(v[10], Complex64::new(1.0, -2.0));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let d = disc();
        let u = RadianceField::<f64>::zeros(&d);
        let mut buf = Vec::new();
        write_radiance(&mut buf, &u).unwrap();
        buf.pop();
        assert!(read_field(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn wave_profile_real_part() {
        let f: BoundaryField<f64> = BoundaryField::Separable {
            component: Component::Incoming,
            angular: vec![2.0; 8],
            spatial: SpatialProfile::Wave { wavevector: [0.0, 3.0, 0.0], phase: 0.0 },
        };
        assert!((f.eval([0.0, 0.5, 0.0], 1) - 2.0 * 1.5f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn boundary_relabel_flips_component() {
        let d = disc();
        let mut ang = vec![0.0; 8];
        ang[1] = 1.0;
        let g = BoundaryField::Separable { component: Component::Outgoing, angular: ang, spatial: SpatialProfile::Uniform };
        let r = g.relabel(&d);
        assert_eq!(r.component(), Component::Incoming);
        assert_eq!(r.angular_support(8), vec![5]);
    }
}
