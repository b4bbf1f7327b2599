//! Dense building blocks shared by the encoders, attention and network code.

use serde::{Deserialize, Serialize};

use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    #[default]
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn code(self) -> f64 {
        match self {
            Activation::Identity => 0.0,
            Activation::Tanh => 1.0,
        }
    }

    pub fn from_code(code: f64) -> Option<Self> {
        match code as i64 {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// `y = W x + b` with `W` stored row-major as `out x inp`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub inp: usize,
    pub out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(inp: usize, out: usize) -> Self {
        Self { inp, out, weight: vec![0.0; inp * out], bias: vec![0.0; out] }
    }

    /// Gaussian weights scaled by `1/sqrt(fan_in)`, zero bias.
    pub fn init(inp: usize, out: usize, s: &mut Stream) -> Self {
        let scale = 1.0 / (inp.max(1) as f64).sqrt();
        let weight = (0..inp * out).map(|_| s.normal() * scale).collect();
        Self { inp, out, weight, bias: vec![0.0; out] }
    }

    /// `[I | 0]` (or its truncation) with zero bias.
    pub fn identity(inp: usize, out: usize) -> Self {
        let mut a = Self::zeros(inp, out);
        for i in 0..inp.min(out) {
            a.weight[i * inp + i] = 1.0;
        }
        a
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inp, self.out)
    }

    #[inline]
    pub fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inp);
        debug_assert_eq!(y.len(), self.out);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weight[o * self.inp..(o + 1) * self.inp];
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            *yo = acc;
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.out];
        self.forward_into(x, &mut y);
        y
    }

    /// Applies the map to every `inp`-wide row of `x`.
    pub fn forward_rows(&self, x: &[f64]) -> Vec<f64> {
        let rows = if self.inp == 0 { 0 } else { x.len() / self.inp };
        let mut y = vec![0.0; rows * self.out];
        for r in 0..rows {
            self.forward_into(&x[r * self.inp..(r + 1) * self.inp], &mut y[r * self.out..(r + 1) * self.out]);
        }
        y
    }

    /// Accumulates `dW += dy x^T`, `db += dy` into `grad` and, when given,
    /// `dx += W^T dy`.
    #[inline]
    pub fn backward_accumulate(&self, x: &[f64], dy: &[f64], grad: &mut Affine, dx: Option<&mut [f64]>) {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = &mut grad.weight[o * self.inp..(o + 1) * self.inp];
            for (w, xi) in row.iter_mut().zip(x) {
                *w += g * xi;
            }
        }
        if let Some(dx) = dx {
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &self.weight[o * self.inp..(o + 1) * self.inp];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Named, shaped parameter tensors. Visiting order is fixed and defines both
/// the checkpoint layout and the flattened vector used by optimizers and
/// finite-difference checks.
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64]));

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit("", &mut |_, _, data| out.extend_from_slice(data));
        out
    }

    fn load_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        self.visit_mut("", &mut |_, data| {
            data.copy_from_slice(&flat[pos..pos + data.len()]);
            pos += data.len();
        });
        assert_eq!(pos, flat.len(), "flat parameter length mismatch");
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, data| n += data.len());
        n
    }

    /// Tensor names paired with their flattened element ranges.
    fn layout(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        let mut pos = 0;
        self.visit("", &mut |name, _, data| {
            out.push((name.to_string(), pos..pos + data.len()));
            pos += data.len();
        });
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Parameters for Affine {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "weight"), &[self.out, self.inp], &self.weight);
        f(&join(prefix, "bias"), &[self.out], &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

impl<T: Parameters> Parameters for Option<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        if let Some(inner) = self {
            inner.visit(prefix, f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        if let Some(inner) = self {
            inner.visit_mut(prefix, f);
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_matches_finite_differences() {
        let mut s = Stream::new(4, 0);
        let mut a = Affine::init(4, 3, &mut s);
        a.bias = vec![0.1, -0.2, 0.3];
        let x: Vec<f64> = (0..4).map(|_| s.normal()).collect();
        let dy: Vec<f64> = (0..3).map(|_| s.normal()).collect();
        let loss = |a: &Affine, x: &[f64]| dot(&a.forward(x), &dy);
        let mut grad = a.zeros_like();
        let mut dx = vec![0.0; 4];
        a.backward_accumulate(&x, &dy, &mut grad, Some(&mut dx));
        let h = 1e-6;
        for i in 0..4 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            assert!(((loss(&a, &xp) - loss(&a, &xm)) / (2.0 * h) - dx[i]).abs() < 1e-8);
        }
        let flat = a.flatten();
        let g = grad.flatten();
        for k in 0..flat.len() {
            let mut ap = a.clone();
            let mut p = flat.clone();
            p[k] += h;
            ap.load_flat(&p);
            let mut am = a.clone();
            p[k] -= 2.0 * h;
            am.load_flat(&p);
            assert!(((loss(&ap, &x) - loss(&am, &x)) / (2.0 * h) - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn identity_affine_copies_prefix() {
        let a = Affine::identity(3, 2);
        assert_eq!(a.forward(&[5.0, 6.0, 7.0]), vec![5.0, 6.0]);
    }
}
