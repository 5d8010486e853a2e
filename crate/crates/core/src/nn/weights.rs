use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{CellKind, ModelConfig};

/// Full parameter set of the memory layer and the dense head. Also used as
/// the gradient accumulator, since gradients share every shape.
///
/// Kernels are row-major with gates laid out side by side: `kernel` is
/// `input × (gates·hidden)`, `recurrent` is `hidden × (gates·hidden)`, and
/// `dense_kernel` is `hidden × classes`. Gate order is `z, r, h` for GRU
/// and `i, f, c, o` for LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub kernel: Vec<f64>,
    pub recurrent: Vec<f64>,
    pub bias: Vec<f64>,
    pub dense_kernel: Vec<f64>,
    pub dense_bias: Vec<f64>,
}

pub const TENSOR_NAMES: [&str; 5] =
    ["memory.kernel", "memory.recurrent_kernel", "memory.bias", "dense.kernel", "dense.bias"];

impl Weights {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let gn = cfg.cell.gates() * cfg.hidden;
        Self {
            kernel: vec![0.0; cfg.input_channels * gn],
            recurrent: vec![0.0; cfg.hidden * gn],
            bias: vec![0.0; gn],
            dense_kernel: vec![0.0; cfg.hidden * cfg.classes],
            dense_bias: vec![0.0; cfg.classes],
        }
    }

    /// Glorot-uniform input and dense kernels, orthogonal recurrent kernel,
    /// zero biases except an LSTM forget-gate bias of one.
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = cfg.hidden;
        let gn = cfg.cell.gates() * n;
        let mut w = Self::zeros(cfg);
        glorot_uniform(&mut rng, &mut w.kernel, cfg.input_channels, gn);
        w.recurrent = orthogonal_rows(&mut rng, n, gn);
        if cfg.cell == CellKind::Lstm {
            w.bias[n..2 * n].fill(1.0);
        }
        glorot_uniform(&mut rng, &mut w.dense_kernel, n, cfg.classes);
        w
    }

    /// Tensor shapes in manifest order.
    pub fn shapes(cfg: &ModelConfig) -> [Vec<usize>; 5] {
        let gn = cfg.cell.gates() * cfg.hidden;
        [vec![cfg.input_channels, gn], vec![cfg.hidden, gn], vec![gn], vec![cfg.hidden, cfg.classes], vec![cfg.classes]]
    }

    pub fn tensors(&self) -> [&[f64]; 5] {
        [&self.kernel, &self.recurrent, &self.bias, &self.dense_kernel, &self.dense_bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [&mut self.kernel, &mut self.recurrent, &mut self.bias, &mut self.dense_kernel, &mut self.dense_bias]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        let [a, b, c, d, e] = self.tensors();
        a.iter().chain(b).chain(c).chain(d).chain(e)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        let [a, b, c, d, e] = self.tensors_mut();
        a.iter_mut().chain(b.iter_mut()).chain(c.iter_mut()).chain(d.iter_mut()).chain(e.iter_mut())
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`, element-wise.
    pub fn add_scaled(&mut self, other: &Weights, scale: f64) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }

    pub fn matches(&self, cfg: &ModelConfig) -> bool {
        self.tensors().iter().zip(Self::shapes(cfg)).all(|(t, s)| t.len() == s.iter().product::<usize>())
    }
}

fn glorot_uniform(rng: &mut ChaCha8Rng, out: &mut [f64], fan_in: usize, fan_out: usize) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in out {
        *v = rng.random_range(-limit..limit);
    }
}

/// `rows × cols` matrix (rows ≤ cols) with orthonormal rows, from
/// Gram-Schmidt on Gaussian rows.
fn orthogonal_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    assert!(rows <= cols, "orthogonal init needs rows <= cols");
    let mut m: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    for r in 0..rows {
        let (done, rest) = m.split_at_mut(r * cols);
        let row = &mut rest[..cols];
        // two passes of projection removal for numerical orthogonality
        for _ in 0..2 {
            for prev in done.chunks_exact(cols) {
                let d: f64 = prev.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
                for (x, p) in row.iter_mut().zip(prev) {
                    *x -= d * p;
                }
            }
        }
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in row.iter_mut() {
            *x /= norm;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recurrent_rows_are_orthonormal() {
        let cfg = ModelConfig::new(CellKind::Gru, 16);
        let w = Weights::init(&cfg);
        let cols = 48;
        for i in 0..16 {
            for j in 0..16 {
                let d: f64 = (0..cols).map(|k| w.recurrent[i * cols + k] * w.recurrent[j * cols + k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::new(CellKind::Lstm, 8);
        assert_eq!(Weights::init(&cfg), Weights::init(&cfg));
        let other = ModelConfig { seed: cfg.seed + 1, ..cfg };
        assert_ne!(Weights::init(&cfg), Weights::init(&other));
        let w = Weights::init(&cfg);
        assert!(w.bias[8..16].iter().all(|&b| b == 1.0));
        assert!(w.bias[..8].iter().chain(&w.bias[16..]).all(|&b| b == 0.0));
        let limit = (6.0f64 / (2 + 32) as f64).sqrt();
        assert!(w.kernel.iter().all(|v| v.abs() <= limit));
    }
}
