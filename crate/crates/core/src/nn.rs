//! Small shared pieces for the hand-written networks: parameter traversal,
//! initialization, Adam, softmax and a finite-difference checker.

use ndarray::{Array1, Array2, ArrayD, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::Rng as _;

use crate::rng::Rng;

/// A fixed, ordered list of weight tensors. Gradients use the same type.
pub trait Parameters {
    fn tensors(&self) -> Vec<ArrayViewD<'_, f64>>;
    fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>>;

    fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn fill(&mut self, value: f64) {
        for mut t in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// `self += scale · other`.
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (mut a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            Zip::from(&mut a).and(&b).for_each(|x, &y| *x += scale * y);
        }
    }

    fn flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.iter().copied().collect::<Vec<_>>()).collect()
    }
}

/// Uniform in `[−1/√fan_in, 1/√fan_in]`, drawn row-major.
pub fn init_uniform(rng: &mut Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..=bound))
}

pub fn init_bias(rng: &mut Rng, fan_in: usize, len: usize) -> Array1<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array1::from_shape_simple_fn(len, || rng.gen_range(-bound..=bound))
}

/// Numerically stable softmax of a slice.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let s = softmax(row.as_slice().expect("standard layout"));
        row.iter_mut().zip(s).for_each(|(d, v)| *d = v);
    }
    out
}

/// Backward of a row-wise softmax: given `s = softmax(z)` and `ds`, returns `dz`.
pub fn softmax_rows_backward(s: &Array2<f64>, ds: &Array2<f64>) -> Array2<f64> {
    let dot = (s * ds).sum_axis(Axis(1)).insert_axis(Axis(1));
    s * &(ds - &dot)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment state for one parameter set.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
    t: i32,
}

impl Adam {
    pub fn new<P: Parameters>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<ArrayD<f64>> = params.tensors().iter().map(|t| ArrayD::zeros(t.raw_dim())).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One descent step along `grads`.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (((mut p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            Zip::from(&mut p).and(&g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *p -= c.lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            });
        }
    }
}

/// Result of comparing an analytic gradient to central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_tensor: usize,
    /// Analytic and numeric values at the worst entry.
    pub worst_pair: (f64, f64),
    pub checked: usize,
}

/// Central differences of `loss` for every scalar of every tensor (or every
/// `stride`-th one), compared to `analytic` with relative error
/// `|a − n| / max(|a| + |n|, floor)`.
pub fn grad_check<P: Parameters + Clone>(
    params: &P,
    analytic: &P,
    step: f64,
    stride: usize,
    mut loss: impl FnMut(&P) -> f64,
) -> GradCheck {
    let mut probe = params.clone();
    let analytic = analytic.flat();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_tensor: 0,
        worst_pair: (0.0, 0.0),
        checked: 0,
    };
    let mut offset = 0;
    let n_tensors = params.tensors().len();
    for t in 0..n_tensors {
        let len = params.tensors()[t].len();
        for j in (0..len).step_by(stride.max(1)) {
            let original = params.tensors()[t].iter().nth(j).copied().expect("in range");
            let set = |p: &mut P, v: f64| {
                let mut ts = p.tensors_mut();
                *ts[t].iter_mut().nth(j).expect("in range") = v;
            };
            set(&mut probe, original + step);
            let up = loss(&probe);
            set(&mut probe, original - step);
            let down = loss(&probe);
            set(&mut probe, original);
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[offset + j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            if rel > worst.max_rel_error {
                worst.max_rel_error = rel;
                worst.worst_tensor = t;
                worst.worst_pair = (a, numeric);
            }
            worst.checked += 1;
        }
        offset += len;
    }
    worst
}
