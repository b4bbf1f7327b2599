//! Learned positional encoders and the devoxelization perceptron.

use crate::nn::{join, Activation, Affine, Parameters};
use crate::rng::Stream;

/// `x -> act(W x + b)` from a 3-D offset to a feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PosEncoder {
    pub affine: Affine,
    pub activation: Activation,
}

/// Encodes a point's offset from its voxel centroid.
pub type CentroidEncoderParams = PosEncoder;
/// Encodes a centroid's offset from its voxel anchor.
pub type AbsEncoderParams = PosEncoder;

impl PosEncoder {
    pub fn init(dim: usize, s: &mut Stream) -> Self {
        Self { affine: Affine::init(3, dim, s), activation: Activation::Tanh }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { affine: Affine::zeros(3, dim), activation: Activation::Tanh }
    }

    pub fn dim(&self) -> usize {
        self.affine.out
    }

    pub fn encode_into(&self, offset: &[f64; 3], out: &mut [f64]) {
        self.affine.forward_into(offset, out);
        for v in out.iter_mut() {
            *v = self.activation.apply(*v);
        }
    }

    pub fn encode(&self, offset: &[f64; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.encode_into(offset, &mut out);
        out
    }

    /// Accumulates parameter gradients given the encoder output `y` and the
    /// upstream gradient `dy`.
    pub fn backward_accumulate(&self, offset: &[f64; 3], y: &[f64], dy: &[f64], grad: &mut PosEncoder) {
        let pre: Vec<f64> = y.iter().zip(dy).map(|(&yi, &g)| g * self.activation.grad_from_output(yi)).collect();
        self.affine.backward_accumulate(offset, &pre, &mut grad.affine, None);
    }

    pub fn zeros_like(&self) -> Self {
        Self { affine: self.affine.zeros_like(), activation: self.activation }
    }
}

impl Parameters for PosEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.affine.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.affine.visit_mut(prefix, f);
    }
}

/// Two-layer perceptron `(D_out + D_enc) -> D_out -> D_out` used to map voxel
/// outputs back onto points.
#[derive(Debug, Clone, PartialEq)]
pub struct DevoxMlp {
    pub first: Affine,
    pub activation: Activation,
    pub second: Affine,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct DevoxTrace {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl DevoxMlp {
    pub fn init(d_out: usize, d_enc: usize, s: &mut Stream) -> Self {
        Self {
            first: Affine::init(d_out + d_enc, d_out, s),
            activation: Activation::Tanh,
            second: Affine::init(d_out, d_out, s),
        }
    }

    /// Passes the voxel block straight through: `[I | 0]`, no activation, `I`.
    pub fn identity(d_out: usize, d_enc: usize) -> Self {
        Self {
            first: Affine::identity(d_out + d_enc, d_out),
            activation: Activation::Identity,
            second: Affine::identity(d_out, d_out),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.second.out
    }

    pub fn forward_traced(&self, input: Vec<f64>) -> (Vec<f64>, DevoxTrace) {
        let mut hidden = self.first.forward(&input);
        for v in &mut hidden {
            *v = self.activation.apply(*v);
        }
        let out = self.second.forward(&hidden);
        (out, DevoxTrace { input, hidden })
    }

    /// Returns the gradient w.r.t. the concatenated input.
    pub fn backward_accumulate(&self, trace: &DevoxTrace, dout: &[f64], grad: &mut DevoxMlp) -> Vec<f64> {
        let mut dhidden = vec![0.0; self.first.out];
        self.second.backward_accumulate(&trace.hidden, dout, &mut grad.second, Some(&mut dhidden));
        for (d, &h) in dhidden.iter_mut().zip(&trace.hidden) {
            *d *= self.activation.grad_from_output(h);
        }
        let mut dinput = vec![0.0; self.first.inp];
        self.first.backward_accumulate(&trace.input, &dhidden, &mut grad.first, Some(&mut dinput));
        dinput
    }

    pub fn zeros_like(&self) -> Self {
        Self { first: self.first.zeros_like(), activation: self.activation, second: self.second.zeros_like() }
    }
}

impl Parameters for DevoxMlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.first.visit(&join(prefix, "first"), f);
        self.second.visit(&join(prefix, "second"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.first.visit_mut(&join(prefix, "first"), f);
        self.second.visit_mut(&join(prefix, "second"), f);
    }
}
