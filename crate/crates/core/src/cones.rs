//! Barrier calculus for the supported cones.
//!
//! Every cone point lives in a flat real vector. Blocks are laid out in
//! order; a second-order block of order `d` occupies `d + 1` coordinates
//! `(u_1, .., u_d, t)` and a PSD block of order `d` occupies `d(d+1)/2`
//! coordinates in [`svec`](crate::linalg::svec) layout.
//!
//! Barriers:
//!
//! | cone          | `B(x)`                 | `theta` |
//! |---------------|------------------------|---------|
//! | orthant `R^n_+` | `-sum ln x_i`        | `n`     |
//! | second-order  | `-ln(t^2 - |u|^2)`     | `2`     |
//! | PSD `S^d_+`   | `-ln det X`            | `d`     |
//! | free `R^n`    | `0` (identity metric)  | `0`     |
//!
//! The free block is not a pointed cone. It exists so that unconstrained
//! variables can share a product with barrier-equipped blocks; its local
//! metric is the Euclidean one.

use std::ops::Range;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{self, smat, svec_into, svec_len};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConeError {
    #[error("point is not interior to block {block} ({kind}): {reason}")]
    NotInterior {
        block: usize,
        kind: &'static str,
        reason: String,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("local quadratic form is negative ({value:e}); the Hessian implementation is inconsistent")]
    IndefiniteForm { value: f64 },
}

/// A convex cone equipped with a logarithmically homogeneous self-concordant barrier.
#[derive(Debug, Clone, PartialEq)]
pub enum Cone {
    /// Nonnegative orthant of the given dimension.
    Orthant(usize),
    /// Second-order cone `{(u, t) in R^d x R : |u| <= t}` for the given `d`.
    SecondOrder(usize),
    /// Positive semidefinite `d x d` matrices.
    Psd(usize),
    /// Unconstrained block with a zero barrier.
    Free(usize),
    Product(Vec<Cone>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LeafKind {
    Orthant,
    SecondOrder,
    Psd(usize),
    Free,
}

impl LeafKind {
    fn name(self) -> &'static str {
        match self {
            LeafKind::Orthant => "orthant",
            LeafKind::SecondOrder => "second-order",
            LeafKind::Psd(_) => "psd",
            LeafKind::Free => "free",
        }
    }
}

impl Cone {
    /// Ambient dimension of the flat vector representation.
    pub fn dim(&self) -> usize {
        match self {
            Cone::Orthant(n) | Cone::Free(n) => *n,
            Cone::SecondOrder(d) => d + 1,
            Cone::Psd(d) => svec_len(*d),
            Cone::Product(parts) => parts.iter().map(Cone::dim).sum(),
        }
    }

    /// The barrier parameter `theta`.
    pub fn complexity_parameter(&self) -> f64 {
        match self {
            Cone::Orthant(n) => *n as f64,
            Cone::SecondOrder(_) => 2.0,
            Cone::Psd(d) => *d as f64,
            Cone::Free(_) => 0.0,
            Cone::Product(parts) => parts.iter().map(Cone::complexity_parameter).sum(),
        }
    }

    /// Whether the cone contains an unconstrained block.
    pub fn has_free_block(&self) -> bool {
        self.leaves().iter().any(|(k, _)| *k == LeafKind::Free)
    }

    fn leaves(&self) -> Vec<(LeafKind, Range<usize>)> {
        fn walk(cone: &Cone, offset: &mut usize, out: &mut Vec<(LeafKind, Range<usize>)>) {
            let kind = match cone {
                Cone::Product(parts) => {
                    for p in parts {
                        walk(p, offset, out);
                    }
                    return;
                }
                Cone::Orthant(_) => LeafKind::Orthant,
                Cone::SecondOrder(_) => LeafKind::SecondOrder,
                Cone::Psd(d) => LeafKind::Psd(*d),
                Cone::Free(_) => LeafKind::Free,
            };
            let n = cone.dim();
            out.push((kind, *offset..*offset + n));
            *offset += n;
        }
        let mut out = Vec::new();
        walk(self, &mut 0, &mut out);
        out
    }

    /// Strict interiority test with zero margin.
    pub fn contains_interior(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && self
                .leaves()
                .into_iter()
                .enumerate()
                .all(|(i, (kind, r))| certify_block(i, kind, r, x).is_ok())
    }

    /// Certifies `x` as interior and caches the per-block factorizations
    /// needed by the barrier derivatives.
    pub fn point(&self, x: Vec<f64>) -> Result<InteriorPoint, ConeError> {
        if x.len() != self.dim() {
            return Err(ConeError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let blocks = self
            .leaves()
            .into_iter()
            .enumerate()
            .map(|(i, (kind, r))| certify_block(i, kind, r, &x))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(InteriorPoint { x, blocks })
    }

    pub fn barrier_value(&self, x: &[f64]) -> Result<f64, ConeError> {
        Ok(self.point(x.to_vec())?.barrier_value())
    }

    pub fn barrier_gradient(&self, x: &[f64]) -> Result<Vec<f64>, ConeError> {
        Ok(self.point(x.to_vec())?.barrier_gradient())
    }

    pub fn hessian_apply(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>, ConeError> {
        self.point(x.to_vec())?.hessian_apply(v)
    }

    pub fn inverse_hessian_apply(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>, ConeError> {
        self.point(x.to_vec())?.inverse_hessian_apply(v)
    }

    pub fn local_norm(&self, x: &[f64], v: &[f64]) -> Result<f64, ConeError> {
        self.point(x.to_vec())?.local_norm(v)
    }

    pub fn dual_local_norm(&self, x: &[f64], v: &[f64]) -> Result<f64, ConeError> {
        self.point(x.to_vec())?.dual_local_norm(v)
    }
}

#[derive(Debug, Clone)]
enum Block {
    Orthant {
        range: Range<usize>,
    },
    SecondOrder {
        range: Range<usize>,
        /// `t^2 - |u|^2`, computed as `(t - |u|)(t + |u|)`.
        gap: f64,
    },
    Psd {
        range: Range<usize>,
        x: DMatrix<f64>,
        inv: DMatrix<f64>,
        log_det: f64,
    },
    Free {
        range: Range<usize>,
    },
}

fn not_interior(block: usize, kind: LeafKind, reason: String) -> ConeError {
    ConeError::NotInterior {
        block,
        kind: kind.name(),
        reason,
    }
}

fn certify_block(
    index: usize,
    kind: LeafKind,
    range: Range<usize>,
    x: &[f64],
) -> Result<Block, ConeError> {
    let xs = &x[range.clone()];
    if let Some(j) = xs.iter().position(|v| !v.is_finite()) {
        return Err(not_interior(index, kind, format!("coordinate {j} is not finite")));
    }
    match kind {
        LeafKind::Orthant => match xs.iter().position(|&v| v <= 0.0) {
            Some(j) => Err(not_interior(index, kind, format!("x[{j}] = {} <= 0", xs[j]))),
            None => Ok(Block::Orthant { range }),
        },
        LeafKind::SecondOrder => {
            let (u, t) = xs.split_at(xs.len() - 1);
            let t = t[0];
            let nu = linalg::norm2(u);
            let gap = (t - nu) * (t + nu);
            if t > 0.0 && t > nu && gap > 0.0 {
                Ok(Block::SecondOrder { range, gap })
            } else {
                Err(not_interior(index, kind, format!("t = {t}, |u| = {nu}")))
            }
        }
        LeafKind::Psd(d) => {
            let m = smat(xs, d);
            let eig = linalg::sym_eigen(&m);
            let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            if !(min > 0.0) {
                return Err(not_interior(
                    index,
                    kind,
                    format!("smallest eigenvalue {min:e}"),
                ));
            }
            let log_det = eig.eigenvalues.iter().map(|l| l.ln()).sum();
            let inv = linalg::spectral_apply(&eig, |l| 1.0 / l);
            Ok(Block::Psd {
                range,
                x: m,
                inv,
                log_det,
            })
        }
        LeafKind::Free => Ok(Block::Free { range }),
    }
}

/// A point certified to lie in the interior of its cone.
///
/// Construction goes through [`Cone::point`]. The point keeps the
/// factorizations (second-order gaps, PSD inverses) so that repeated
/// Hessian applications at the same iterate are cheap.
#[derive(Debug, Clone)]
pub struct InteriorPoint {
    x: Vec<f64>,
    blocks: Vec<Block>,
}

impl InteriorPoint {
    pub fn as_slice(&self) -> &[f64] {
        &self.x
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.x
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    fn check_dim(&self, v: &[f64]) -> Result<(), ConeError> {
        if v.len() == self.x.len() {
            Ok(())
        } else {
            Err(ConeError::DimensionMismatch {
                expected: self.x.len(),
                found: v.len(),
            })
        }
    }

    pub fn barrier_value(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| match b {
                Block::Orthant { range } => -self.x[range.clone()].iter().map(|v| v.ln()).sum::<f64>(),
                Block::SecondOrder { gap, .. } => -gap.ln(),
                Block::Psd { log_det, .. } => -log_det,
                Block::Free { .. } => 0.0,
            })
            .sum()
    }

    pub fn barrier_gradient(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.x.len()];
        for b in &self.blocks {
            match b {
                Block::Orthant { range } => {
                    for i in range.clone() {
                        g[i] = -1.0 / self.x[i];
                    }
                }
                Block::SecondOrder { range, gap } => {
                    // grad = -2 J s / gap with J = diag(-I, 1)
                    let last = range.end - 1;
                    for i in range.start..last {
                        g[i] = 2.0 * self.x[i] / gap;
                    }
                    g[last] = -2.0 * self.x[last] / gap;
                }
                Block::Psd { range, inv, .. } => {
                    svec_into(inv, &mut g[range.clone()]);
                    for v in &mut g[range.clone()] {
                        *v = -*v;
                    }
                }
                Block::Free { .. } => {}
            }
        }
        g
    }

    /// `out = hess B(x) v`
    pub(crate) fn hessian_apply_into(&self, v: &[f64], out: &mut [f64]) {
        for b in &self.blocks {
            match b {
                Block::Orthant { range } => {
                    for i in range.clone() {
                        out[i] = v[i] / (self.x[i] * self.x[i]);
                    }
                }
                Block::SecondOrder { range, gap } => {
                    // H = -2J/g + 4 (Js)(Js)^T / g^2
                    let s = &self.x[range.clone()];
                    let w = &v[range.clone()];
                    let last = s.len() - 1;
                    let js_dot_w: f64 = -linalg::dot(&s[..last], &w[..last]) + s[last] * w[last];
                    let c = 4.0 * js_dot_w / (gap * gap);
                    let o = &mut out[range.clone()];
                    for i in 0..last {
                        o[i] = 2.0 * w[i] / gap - c * s[i];
                    }
                    o[last] = -2.0 * w[last] / gap + c * s[last];
                }
                Block::Psd { range, inv, .. } => {
                    let d = inv.nrows();
                    let vm = smat(&v[range.clone()], d);
                    let r = inv * vm * inv;
                    svec_into(&r, &mut out[range.clone()]);
                }
                Block::Free { range } => out[range.clone()].copy_from_slice(&v[range.clone()]),
            }
        }
    }

    /// `out = hess B(x)^{-1} v`
    pub(crate) fn inverse_hessian_apply_into(&self, v: &[f64], out: &mut [f64]) {
        for b in &self.blocks {
            match b {
                Block::Orthant { range } => {
                    for i in range.clone() {
                        out[i] = v[i] * self.x[i] * self.x[i];
                    }
                }
                Block::SecondOrder { range, gap } => {
                    // H^{-1} = -(g/2) J + s s^T
                    let s = &self.x[range.clone()];
                    let w = &v[range.clone()];
                    let last = s.len() - 1;
                    let sw = linalg::dot(s, w);
                    let o = &mut out[range.clone()];
                    for i in 0..last {
                        o[i] = 0.5 * gap * w[i] + sw * s[i];
                    }
                    o[last] = -0.5 * gap * w[last] + sw * s[last];
                }
                Block::Psd { range, x, .. } => {
                    let d = x.nrows();
                    let vm = smat(&v[range.clone()], d);
                    let r = x * vm * x;
                    svec_into(&r, &mut out[range.clone()]);
                }
                Block::Free { range } => out[range.clone()].copy_from_slice(&v[range.clone()]),
            }
        }
    }

    pub fn hessian_apply(&self, v: &[f64]) -> Result<Vec<f64>, ConeError> {
        self.check_dim(v)?;
        let mut out = vec![0.0; v.len()];
        self.hessian_apply_into(v, &mut out);
        Ok(out)
    }

    pub fn inverse_hessian_apply(&self, v: &[f64]) -> Result<Vec<f64>, ConeError> {
        self.check_dim(v)?;
        let mut out = vec![0.0; v.len()];
        self.inverse_hessian_apply_into(v, &mut out);
        Ok(out)
    }

    /// `|v|_x = (v^T hess B(x) v)^{1/2}`
    pub fn local_norm(&self, v: &[f64]) -> Result<f64, ConeError> {
        let hv = self.hessian_apply(v)?;
        quadratic_form_sqrt(v, &hv)
    }

    /// `|v|_x^* = (v^T hess B(x)^{-1} v)^{1/2}`
    pub fn dual_local_norm(&self, v: &[f64]) -> Result<f64, ConeError> {
        let hv = self.inverse_hessian_apply(v)?;
        quadratic_form_sqrt(v, &hv)
    }
}

pub(crate) fn quadratic_form_sqrt(v: &[f64], hv: &[f64]) -> Result<f64, ConeError> {
    let q = linalg::dot(v, hv);
    if q >= 0.0 {
        Ok(q.sqrt())
    } else if q > -1e-12 * (1.0 + linalg::norm2(v) * linalg::norm2(hv)) {
        Ok(0.0)
    } else {
        Err(ConeError::IndefiniteForm { value: q })
    }
}
