//! Fully connected layers with leaky-ReLU activations and manual backprop.

use rand::Rng;

pub const LEAKY_SLOPE: f64 = 0.01;

#[inline]
pub fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

#[inline]
fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Affine layer `y = W x + b`, `W` stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn uniform<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let weights = draw(inputs * outputs);
        let bias = draw(outputs);
        Self {
            inputs,
            outputs,
            weights,
            bias,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dout: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (o, &d) in dout.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad.bias[o] += d;
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += d * x[i];
                dx[i] += row[i] * d;
            }
        }
        dx
    }
}

/// Activations kept from a trunk forward pass.
#[derive(Debug, Clone)]
pub struct TrunkTrace {
    /// `inputs[i]` feeds layer `i`; the last entry is the trunk output.
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl TrunkTrace {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().expect("non-empty")
    }
}

/// Leaky-ReLU after every layer of `layers`.
pub fn trunk_forward(layers: &[Dense], x: &[f64]) -> TrunkTrace {
    let mut inputs = Vec::with_capacity(layers.len() + 1);
    let mut pre = Vec::with_capacity(layers.len());
    inputs.push(x.to_vec());
    for l in layers {
        let z = l.forward(inputs.last().unwrap());
        inputs.push(z.iter().map(|&v| leaky(v)).collect());
        pre.push(z);
    }
    TrunkTrace { inputs, pre }
}

/// Backpropagates `d_out` (gradient w.r.t. the trunk output) into `grads`.
pub fn trunk_backward(layers: &[Dense], trace: &TrunkTrace, d_out: Vec<f64>, grads: &mut [Dense]) {
    let mut d = d_out;
    for i in (0..layers.len()).rev() {
        for (g, &z) in d.iter_mut().zip(&trace.pre[i]) {
            *g *= leaky_grad(z);
        }
        d = layers[i].backward(&trace.inputs[i], &d, &mut grads[i]);
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}
