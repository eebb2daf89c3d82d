//! The lift `T^{-1}`: integration of a source along backward characteristics.
//!
//! Each row integrates `exp(-tau) S` from a node back to the inflow boundary.
//! The source is interpolated multilinearly at march samples and `sigma` is
//! treated as piecewise linear between samples, so attenuation inside each
//! segment is integrated exactly against the linear source.

use rayon::prelude::*;

use crate::geometry::{axpy, dist, gamma, Discretization, Sign, Vec3};

use super::field::{RadianceField, Scalar};

/// `int_0^1 exp(-u s) (1 - s) ds` and `int_0^1 exp(-u s) s ds`.
pub(crate) fn segment_weights(u: f64) -> (f64, f64) {
    if u < 1e-2 {
        let u2 = u * u;
        let p1 = 0.5 - u / 3.0 + u2 / 8.0 - u2 * u / 30.0 + u2 * u2 / 144.0;
        let p0 = 0.5 - u / 6.0 + u2 / 24.0 - u2 * u / 120.0 + u2 * u2 / 720.0;
        (p0, p1)
    } else {
        let one_minus = -(-u).exp_m1();
        let p1 = (one_minus - u * (-u).exp()) / (u * u);
        (one_minus / u - p1, p1)
    }
}

/// Marches from `x` along `-theta` for `len`, calling `emit(point, weight)`
/// for each sample so that `sum weight * S(point)` approximates
/// `int_0^len exp(-tau(x, x - t theta)) S(x - t theta) dt`.
pub(crate) fn march(
    sigma: &(dyn Fn(Vec3) -> f64 + Sync),
    x: Vec3,
    theta: Vec3,
    len: f64,
    step: f64,
    mut emit: impl FnMut(Vec3, f64),
) {
    if len <= 0.0 {
        return;
    }
    let n = (len / step).ceil().max(1.0) as usize;
    let dt = len / n as f64;
    let mut tau: f64 = 0.0;
    let mut p_prev = x;
    let mut s_prev = sigma(x);
    let mut carry = 0.0;
    for i in 0..n {
        let p_next = axpy(x, -((i + 1) as f64) * dt, theta);
        let s_next = sigma(p_next);
        let u = 0.5 * (s_prev + s_next) * dt;
        let (w0, w1) = segment_weights(u);
        let e = (-tau).exp() * dt;
        emit(p_prev, carry + e * w0);
        carry = e * w1;
        tau += u;
        p_prev = p_next;
        s_prev = s_next;
    }
    emit(p_prev, carry);
}

/// Length of the backward characteristic from node `n` along `theta`.
fn backward_length(disc: &Discretization, node: usize, theta: Vec3) -> Option<(Vec3, f64)> {
    if !disc.inside[node] {
        return None;
    }
    let x = disc.grid.position(node);
    let entry = gamma(&disc.domain, x, theta, Sign::Minus).ok()?;
    Some((x, dist(x, entry)))
}

/// Sparse row of node weights for one `(node, direction)` pair.
pub(crate) fn lift_row(
    disc: &Discretization,
    sigma: &(dyn Fn(Vec3) -> f64 + Sync),
    node: usize,
    dir: usize,
    buf: &mut Vec<(u32, f64)>,
) {
    buf.clear();
    let theta = disc.angles.nodes[dir];
    let Some((x, len)) = backward_length(disc, node, theta) else { return };
    march(sigma, x, theta, len, disc.lift_step, |p, w| {
        let st = disc.grid.stencil(p);
        for c in 0..st.len {
            if st.w[c] != 0.0 {
                buf.push((st.idx[c] as u32, w * st.w[c]));
            }
        }
    });
    buf.sort_unstable_by_key(|e| e.0);
    let mut k = 0;
    for i in 0..buf.len() {
        if k > 0 && buf[k - 1].0 == buf[i].0 {
            buf[k - 1].1 += buf[i].1;
        } else {
            buf[k] = buf[i];
            k += 1;
        }
    }
    buf.truncate(k);
}

#[derive(Debug, Clone, Default)]
pub struct AngleRows {
    ptr: Vec<u32>,
    cols: Vec<u32>,
    vals: Vec<f32>,
}

impl AngleRows {
    fn build(disc: &Discretization, sigma: &(dyn Fn(Vec3) -> f64 + Sync), dir: usize) -> Self {
        let n = disc.nodes();
        let mut rows = AngleRows { ptr: Vec::with_capacity(n + 1), ..Default::default() };
        rows.ptr.push(0);
        let mut buf = Vec::new();
        for node in 0..n {
            lift_row(disc, sigma, node, dir, &mut buf);
            for &(c, w) in &buf {
                rows.cols.push(c);
                rows.vals.push(w as f32);
            }
            rows.ptr.push(rows.cols.len() as u32);
        }
        rows.cols.shrink_to_fit();
        rows.vals.shrink_to_fit();
        rows
    }

    fn row(&self, node: usize) -> (&[u32], &[f32]) {
        let (a, b) = (self.ptr[node] as usize, self.ptr[node + 1] as usize);
        (&self.cols[a..b], &self.vals[a..b])
    }
}

/// Precomputed lift weights, or on-the-fly marching when they would not fit
/// the memory budget.
pub enum LiftPlan {
    Stored(Vec<AngleRows>),
    Streaming,
}

impl std::fmt::Debug for LiftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LiftPlan::Stored(r) => write!(f, "LiftPlan::Stored({} entries)", r.iter().map(|a| a.cols.len()).sum::<usize>()),
            LiftPlan::Streaming => f.write_str("LiftPlan::Streaming"),
        }
    }
}

/// Bytes per stored entry.
const ENTRY_BYTES: usize = 8;

impl LiftPlan {
    /// Estimated stored size in bytes, from a sample of rows.
    pub fn estimate_bytes(disc: &Discretization, sigma: &(dyn Fn(Vec3) -> f64 + Sync)) -> usize {
        let (n, m) = (disc.nodes(), disc.directions());
        let stride = 37;
        let mut buf = Vec::new();
        let (mut entries, mut rows) = (0usize, 0usize);
        let mut k = 0;
        while k < n * m {
            lift_row(disc, sigma, k % n, k / n, &mut buf);
            entries += buf.len();
            rows += 1;
            k += stride;
        }
        entries * n * m / rows.max(1) * ENTRY_BYTES
    }

    pub fn build(disc: &Discretization, sigma: &(dyn Fn(Vec3) -> f64 + Sync), budget: usize) -> Self {
        if LiftPlan::estimate_bytes(disc, sigma) > budget {
            return LiftPlan::Streaming;
        }
        LiftPlan::Stored((0..disc.directions()).into_par_iter().map(|j| AngleRows::build(disc, sigma, j)).collect())
    }

    pub fn is_stored(&self) -> bool {
        matches!(self, LiftPlan::Stored(_))
    }

    pub fn entries(&self) -> usize {
        match self {
            LiftPlan::Stored(r) => r.iter().map(|a| a.cols.len()).sum(),
            LiftPlan::Streaming => 0,
        }
    }

    /// `T^{-1} s` for a nodal source.
    pub fn apply<T: Scalar>(
        &self,
        disc: &Discretization,
        sigma: &(dyn Fn(Vec3) -> f64 + Sync),
        s: &RadianceField<T>,
    ) -> RadianceField<T> {
        let n = disc.nodes();
        let mut out = RadianceField::zeros(&s.disc);
        out.values.par_chunks_mut(n).enumerate().for_each(|(j, slab)| {
            let src = s.slab(j);
            if src.iter().all(|v| v.is_zero()) {
                return;
            }
            match self {
                LiftPlan::Stored(rows) => {
                    let r = &rows[j];
                    for (node, o) in slab.iter_mut().enumerate() {
                        let (cols, vals) = r.row(node);
                        let mut acc = T::default();
                        for (c, w) in cols.iter().zip(vals) {
                            acc += src[*c as usize] * (*w as f64);
                        }
                        *o = acc;
                    }
                }
                LiftPlan::Streaming => {
                    let mut buf = Vec::new();
                    for (node, o) in slab.iter_mut().enumerate() {
                        lift_row(disc, sigma, node, j, &mut buf);
                        let mut acc = T::default();
                        for &(c, w) in &buf {
                            acc += src[c as usize] * (w as f32 as f64);
                        }
                        *o = acc;
                    }
                }
            }
        });
        out
    }

    /// Transpose of [`LiftPlan::apply`] in the plain Euclidean pairing.
    pub fn apply_transpose<T: Scalar>(
        &self,
        disc: &Discretization,
        sigma: &(dyn Fn(Vec3) -> f64 + Sync),
        r: &RadianceField<T>,
    ) -> RadianceField<T> {
        let n = disc.nodes();
        let mut out = RadianceField::zeros(&r.disc);
        out.values.par_chunks_mut(n).enumerate().for_each(|(j, slab)| {
            let src = r.slab(j);
            let mut buf = Vec::new();
            for (node, v) in src.iter().enumerate() {
                if v.is_zero() {
                    continue;
                }
                match self {
                    LiftPlan::Stored(rows) => {
                        let (cols, vals) = rows[j].row(node);
                        for (c, w) in cols.iter().zip(vals) {
                            slab[*c as usize] += *v * (*w as f64);
                        }
                    }
                    LiftPlan::Streaming => {
                        lift_row(disc, sigma, node, j, &mut buf);
                        for &(c, w) in &buf {
                            slab[c as usize] += *v * (w as f32 as f64);
                        }
                    }
                }
            }
        });
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AngularGrid, Domain, SpatialGrid};
    use proptest::prelude::*;
    use std::sync::Arc;

    proptest! {
        #[test]
        fn segment_weights_match_quadrature(u in 0.0f64..4.0) {
            let (p0, p1) = segment_weights(u);
            let n = 4000;
            let (mut q0, mut q1) = (0.0, 0.0);
            for i in 0..n {
                let s = (i as f64 + 0.5) / n as f64;
                let e = (-u * s).exp() / n as f64;
                q0 += e * (1.0 - s);
                q1 += e * s;
            }
            prop_assert!((p0 - q0).abs() < 1e-7);
            prop_assert!((p1 - q1).abs() < 1e-7);
        }
    }

    #[test]
    fn series_and_closed_form_agree_at_switch() {
        let a = segment_weights(0.01 - 1e-12);
        let b = segment_weights(0.01 + 1e-12);
        assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
    }

    #[test]
    fn march_integrates_constant_source_exactly() {
        // int_0^L exp(-s t) dt for constant sigma
        let sigma = |_: Vec3| 1.7;
        let mut total = 0.0;
        march(&sigma, [0.9, 0.5, 0.0], [1.0, 0.0, 0.0], 0.9, 0.013, |_, w| total += w);
        let exact = (1.0 - (-1.7f64 * 0.9).exp()) / 1.7;
        assert!((total - exact).abs() < 1e-13);
    }

    #[test]
    fn streaming_matches_stored() {
        let d = Domain::unit_box(2);
        let disc = Arc::new(
            Discretization::new(d, SpatialGrid::cubic(&d, 9).unwrap(), AngularGrid::circle(8).unwrap()).unwrap(),
        );
        let sigma = |x: Vec3| 1.0 + x[0];
        let stored = LiftPlan::build(&disc, &sigma, usize::MAX);
        assert!(stored.is_stored());
        let s = RadianceField::<f64>::from_fn(&disc, |n, j| ((n * 7 + j * 3) % 11) as f64);
        let a = stored.apply(&disc, &sigma, &s);
        let b = LiftPlan::Streaming.apply(&disc, &sigma, &s);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_pairs_with_apply() {
        let d = Domain::unit_box(2);
        let disc = Arc::new(
            Discretization::new(d, SpatialGrid::cubic(&d, 7).unwrap(), AngularGrid::circle(12).unwrap()).unwrap(),
        );
        let sigma = |x: Vec3| 0.5 + x[1];
        for plan in [LiftPlan::build(&disc, &sigma, usize::MAX), LiftPlan::Streaming] {
            let s = RadianceField::<f64>::from_fn(&disc, |n, j| ((n * 5 + j) % 13) as f64 - 6.0);
            let r = RadianceField::<f64>::from_fn(&disc, |n, j| ((n * 3 + 2 * j) % 7) as f64 - 3.0);
            let lhs: f64 = plan.apply(&disc, &sigma, &s).values.iter().zip(&r.values).map(|(a, b)| a * b).sum();
            let rhs: f64 = plan.apply_transpose(&disc, &sigma, &r).values.iter().zip(&s.values).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        }
    }
}
