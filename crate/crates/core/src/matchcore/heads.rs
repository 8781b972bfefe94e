//! Alignment heads: small MLPs with analytic backprop.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::MatchError;

pub const HIDDEN_SIZE: usize = 1536;
pub const OUTPUT_SIZE: usize = 3072;

/// Nonlinearity between layers (never after the last one).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    /// tanh approximation of GELU.
    #[default]
    Gelu,
    Tanh,
    Identity,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }
}

/// `y = x·w + b` with `w` stored in × out.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear {
            w: Array2::zeros((d_in, d_out)),
            b: Array1::zeros(d_out),
        }
    }

    pub fn identity(d: usize) -> Self {
        Linear {
            w: Array2::eye(d),
            b: Array1::zeros(d),
        }
    }

    /// Gaussian weights with variance 1/d_in, zero bias.
    pub fn random(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let n = Normal::new(0.0, (1.0 / d_in as f64).sqrt()).expect("positive std");
        Linear {
            w: Array2::from_shape_fn((d_in, d_out), |_| n.sample(rng)),
            b: Array1::zeros(d_out),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.w.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Activation,
}

/// Per-layer inputs and pre-activations saved by the forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Mlp {
    pub fn new(layers: Vec<Linear>, act: Activation) -> Result<Self, MatchError> {
        if layers.is_empty() {
            return Err(MatchError::ShapeMismatch(
                "an MLP needs at least one layer".into(),
            ));
        }
        for w in layers.windows(2) {
            if w[0].d_out() != w[1].d_in() {
                return Err(MatchError::ShapeMismatch(format!(
                    "layer output {} feeds input {}",
                    w[0].d_out(),
                    w[1].d_in()
                )));
            }
        }
        if layers.iter().any(|l| l.b.len() != l.d_out()) {
            return Err(MatchError::ShapeMismatch(
                "bias length differs from layer width".into(),
            ));
        }
        Ok(Mlp { layers, act })
    }

    /// Two layers `d_in → hidden → d_out`, randomly initialized.
    pub fn two_layer(
        d_in: usize,
        hidden: usize,
        d_out: usize,
        act: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Mlp {
            layers: vec![
                Linear::random(d_in, hidden, rng),
                Linear::random(hidden, d_out, rng),
            ],
            act,
        }
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().expect("non-empty").d_out()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, MatchError> {
        self.forward_cached(x).map(|(y, _)| y)
    }

    pub fn forward_cached(
        &self,
        x: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, MlpCache), MatchError> {
        if x.ncols() != self.d_in() {
            return Err(MatchError::ShapeMismatch(format!(
                "input width {} for an MLP expecting {}",
                x.ncols(),
                self.d_in()
            )));
        }
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let z = h.dot(&l.w) + &l.b;
            cache.inputs.push(h);
            h = if i < last {
                z.mapv(|v| self.act.apply(v))
            } else {
                z.clone()
            };
            cache.pre.push(z);
        }
        Ok((h, cache))
    }

    /// Given dL/d(output), returns per-layer gradients and dL/d(input).
    pub fn backward(
        &self,
        cache: &MlpCache,
        grad_out: Array2<f64>,
    ) -> (Vec<LinearGrad>, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out;
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            let dz = if i < last {
                let act = self.act;
                g * &cache.pre[i].mapv(|v| act.derivative(v))
            } else {
                g
            };
            grads.push(LinearGrad {
                w: cache.inputs[i].t().dot(&dz),
                b: dz.sum_axis(Axis(0)),
            });
            g = dz.dot(&self.layers[i].w.t());
        }
        grads.reverse();
        (grads, g)
    }
}

/// The two projections into the shared alignment space.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentHeads {
    pub vid: Mlp,
    pub frm: Mlp,
}

impl AlignmentHeads {
    pub fn new(vid: Mlp, frm: Mlp) -> Result<Self, MatchError> {
        if vid.d_out() != frm.d_out() || vid.d_in() != frm.d_in() {
            return Err(MatchError::ShapeMismatch(format!(
                "heads map {}→{} and {}→{}",
                vid.d_in(),
                vid.d_out(),
                frm.d_in(),
                frm.d_out()
            )));
        }
        Ok(AlignmentHeads { vid, frm })
    }

    /// Independent random two-layer heads.
    pub fn random(d: usize, hidden: usize, out: usize, act: Activation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vid = Mlp::two_layer(d, hidden, out, act, &mut rng);
        let frm = Mlp::two_layer(d, hidden, out, act, &mut rng);
        AlignmentHeads { vid, frm }
    }

    /// Full-size heads with the default hidden and output widths.
    pub fn default_sized(d: usize, seed: u64) -> Self {
        Self::random(d, HIDDEN_SIZE, OUTPUT_SIZE, Activation::Gelu, seed)
    }

    pub fn num_params(&self) -> usize {
        self.vid.num_params() + self.frm.num_params()
    }
}

/// `g_vid = E_vid(h_vid)` (1 × out) and `g_frm = E_frm(h_frm)` (T × out).
pub fn project_align(
    h_vid: ArrayView2<f64>,
    h_frm: ArrayView2<f64>,
    heads: &AlignmentHeads,
) -> Result<(Array2<f64>, Array2<f64>), MatchError> {
    if h_vid.nrows() != 1 {
        return Err(MatchError::ShapeMismatch(format!(
            "h_vid has {} rows, expected 1",
            h_vid.nrows()
        )));
    }
    Ok((heads.vid.forward(h_vid)?, heads.frm.forward(h_frm)?))
}
