//! Dense reference forward pass for every model kind, written against the
//! layer equations directly and generic over the scalar type. Evaluated in
//! double-double precision it serves as a central-difference oracle whose
//! roundoff floor sits far below the gradients being checked.

#![allow(dead_code)]

use std::ops::{Add, Div, Mul, Neg, Sub};

use ndgg::dataset::Dataset;
use ndgg::model::{ModelConfig, ModelKind};
use ndgg::Tensor;
use twofloat::TwoFloat;

pub trait Real:
    Copy + PartialOrd + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn of(v: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Double-double scalar. Addition, multiplication and square root come from
/// `twofloat`; division, `exp` and `ln` are computed here because the crate's
/// versions stop near f64 accuracy.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Dd(pub TwoFloat);

macro_rules! dd_op {
    ($tr:ident, $f:ident, $op:tt) => {
        impl $tr for Dd {
            type Output = Dd;
            fn $f(self, rhs: Dd) -> Dd {
                Dd(self.0 $op rhs.0)
            }
        }
    };
}
dd_op!(Add, add, +);
dd_op!(Sub, sub, -);
dd_op!(Mul, mul, *);

impl Div for Dd {
    type Output = Dd;
    /// Long division with two correction steps; the crate's quotient is
    /// only accurate to about f64 precision.
    fn div(self, rhs: Dd) -> Dd {
        let b = rhs.0;
        let q1 = self.0.hi() / b.hi();
        let r = self.0 - b * q1;
        let q2 = r.hi() / b.hi();
        let r = r - b * q2;
        let q3 = r.hi() / b.hi();
        Dd(TwoFloat::from(q1) + q2 + q3)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd(-self.0)
    }
}

impl Real for Dd {
    fn of(v: f64) -> Self {
        Dd(TwoFloat::from(v))
    }

    fn exp(self) -> Self {
        let x = self.0;
        if x.hi() < -740.0 {
            return Dd::of(0.0);
        }
        let ln2 = twofloat::consts::LN_2;
        let k = (x.hi() / ln2.hi()).round();
        let r = (x - ln2 * k) * (1.0 / 1024.0);
        let mut term = TwoFloat::from(1.0);
        let mut sum = term;
        for n in 1..=14 {
            term = (Dd(term * r) / Dd::of(f64::from(n))).0;
            sum += term;
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        Dd(sum * 2f64.powi(k as i32))
    }

    fn ln(self) -> Self {
        let mut y = Dd::of(self.0.hi().ln());
        for _ in 0..3 {
            y = y + self * (-y).exp() - Dd::of(1.0);
        }
        y
    }

    fn sqrt(self) -> Self {
        Dd(self.0.sqrt())
    }

    fn to_f64(self) -> f64 {
        self.0.hi() + self.0.lo()
    }
}

#[derive(Clone, Debug)]
pub struct Mat<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Real> Mat<S> {
    pub fn from_tensor(t: &Tensor) -> Self {
        Mat {
            rows: t.rows(),
            cols: t.cols(),
            data: t.data().iter().map(|&v| S::of(v)).collect(),
        }
    }

    fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![S::of(0.0); rows * cols],
        }
    }

    fn at(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    fn mul(&self, b: &Mat<S>) -> Mat<S> {
        assert_eq!(self.cols, b.rows);
        let mut out = Mat::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            for j in 0..b.cols {
                let mut acc = S::of(0.0);
                for k in 0..self.cols {
                    acc = acc + self.at(i, k) * b.at(k, j);
                }
                out.data[i * b.cols + j] = acc;
            }
        }
        out
    }

    fn map(&self, f: impl Fn(S) -> S) -> Mat<S> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, o: &Mat<S>, f: impl Fn(S, S) -> S) -> Mat<S> {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&o.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    fn add_row(&self, b: &Mat<S>) -> Mat<S> {
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[i * self.cols + j] = out.data[i * self.cols + j] + b.data[j];
            }
        }
        out
    }

    fn hcat(parts: &[&Mat<S>]) -> Mat<S> {
        let rows = parts[0].rows;
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for p in parts {
                for j in 0..p.cols {
                    out.data[i * cols + off + j] = p.at(i, j);
                }
                off += p.cols;
            }
        }
        out
    }
}

fn relu<S: Real>(v: S) -> S {
    if v > S::of(0.0) {
        v
    } else {
        S::of(0.0)
    }
}

fn logistic<S: Real>(v: S) -> S {
    S::of(1.0) / (S::of(1.0) + (-v).exp())
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2} m`, straight from the edge lists.
fn propagate<S: Real>(d: &Dataset, m: &Mat<S>) -> Mat<S> {
    let g = d.graph();
    let dt = |i: usize| S::of((g.degree(i) + 1) as f64);
    let mut out = Mat::zeros(m.rows, m.cols);
    for i in 0..m.rows {
        let nbrs = g.neighbors(i).iter().copied().chain(std::iter::once(i));
        for j in nbrs {
            let w = S::of(1.0) / (dt(i) * dt(j)).sqrt();
            for c in 0..m.cols {
                out.data[i * m.cols + c] = out.data[i * m.cols + c] + w * m.at(j, c);
            }
        }
    }
    out
}

/// Mean masked softmax cross-entropy of the model in evaluation mode.
/// `params` follow the canonical parameter order.
pub fn loss<S: Real>(cfg: &ModelConfig, d: &Dataset, params: &[Mat<S>], mask: &[usize]) -> S {
    let mut x = Mat::<S>::from_tensor(d.features());
    if cfg.row_normalize {
        for i in 0..x.rows {
            let mut s = S::of(0.0);
            for j in 0..x.cols {
                s = s + x.at(i, j);
            }
            if s < S::of(1.0) {
                s = S::of(1.0);
            }
            for j in 0..x.cols {
                x.data[i * x.cols + j] = x.data[i * x.cols + j] / s;
            }
        }
    }
    let mut next = params.iter();
    let logits = if cfg.kind == ModelKind::Sgc {
        let mut p = x;
        for _ in 0..cfg.layers {
            p = propagate(d, &p);
        }
        p.mul(next.next().unwrap())
    } else {
        let w0 = next.next().unwrap();
        let h0 = propagate(d, &x.mul(w0)).map(relu);
        let gated = cfg.kind == ModelKind::Ndggnet;
        let emb = gated.then(|| {
            let table = next.next().unwrap();
            let mut e = Mat::zeros(d.num_nodes(), table.cols);
            for i in 0..d.num_nodes() {
                let row = d.graph().degree(i).min(cfg.degree_cap);
                for j in 0..table.cols {
                    e.data[i * table.cols + j] = table.at(row, j);
                }
            }
            e
        });
        let mut h = h0.clone();
        for _ in 1..cfg.layers {
            let w = next.next().unwrap();
            let cand = propagate(d, &h.mul(w)).map(relu);
            h = match cfg.kind {
                ModelKind::Gcn => cand,
                ModelKind::NdggnetStar => cand.zip(&h, |a, b| a + b),
                _ => {
                    let anchor = if cfg.gate_uses_raw_x { &x } else { &h0 };
                    let mut z = Mat::hcat(&[emb.as_ref().unwrap(), anchor, &cand, &h]);
                    for _ in 0..cfg.gate_hidden_layers {
                        let (gw, gb) = (next.next().unwrap(), next.next().unwrap());
                        z = z.mul(gw).add_row(gb).map(relu);
                    }
                    let (gw, gb) = (next.next().unwrap(), next.next().unwrap());
                    let alpha = z.mul(gw).add_row(gb).map(logistic);
                    let keep = alpha.map(|a| S::of(1.0) - a);
                    keep.zip(&cand, |k, c| k * c).zip(&alpha.zip(&h, |a, p| a * p), |u, v| u + v)
                }
            };
        }
        h.mul(next.next().unwrap())
    };
    assert!(next.next().is_none(), "parameter list longer than the model");

    let mut total = S::of(0.0);
    for &i in mask {
        let label = d.labels()[i].unwrap();
        let mut m = logits.at(i, 0);
        for j in 1..logits.cols {
            if logits.at(i, j) > m {
                m = logits.at(i, j);
            }
        }
        let mut s = S::of(0.0);
        for j in 0..logits.cols {
            s = s + (logits.at(i, j) - m).exp();
        }
        total = total + m + s.ln() - logits.at(i, label);
    }
    total / S::of(mask.len() as f64)
}

/// Central differences of the double-double loss with step `h`.
pub fn central_differences(cfg: &ModelConfig, d: &Dataset, params: &[Tensor], mask: &[usize], h: f64) -> Vec<Tensor> {
    let base: Vec<Mat<Dd>> = params.iter().map(Mat::from_tensor).collect();
    let mut out = Vec::with_capacity(params.len());
    for (p, t) in params.iter().enumerate() {
        let mut grad = Tensor::zeros(t.rows(), t.cols());
        for k in 0..t.data().len() {
            let mut plus = base.clone();
            plus[p].data[k] = plus[p].data[k] + Dd::of(h);
            let mut minus = base.clone();
            minus[p].data[k] = minus[p].data[k] - Dd::of(h);
            let diff = loss(cfg, d, &plus, mask) - loss(cfg, d, &minus, mask);
            grad.data_mut()[k] = (diff / Dd::of(2.0 * h)).to_f64();
        }
        out.push(grad);
    }
    out
}

/// `max |a - b| / max(1e-8, |a| + |b|)` over all entries.
pub fn max_relative_error(a: &[Tensor], b: &[Tensor]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(x, y)| (x - y).abs() / (x.abs() + y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}
