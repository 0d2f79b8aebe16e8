//! Two-hidden-layer tanh perceptron with hand-written reverse mode.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Matrix;
use crate::scalar::{all_finite, Scalar};

/// Width of both hidden layers.
pub const HIDDEN: usize = 64;

/// `out = W_out · tanh(W2 · tanh(W1 · x + b1) + b2) + b_out`
///
/// The same struct doubles as the gradient record for its own parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
    pub w_out: Matrix<T>,
    pub b_out: Vec<T>,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace<T> {
    pub input: Vec<T>,
    pub pre1: Vec<T>,
    pub h1: Vec<T>,
    pub pre2: Vec<T>,
    pub h2: Vec<T>,
    pub output: Vec<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            w1: Matrix::zeros(HIDDEN, in_dim),
            b1: vec![T::zero(); HIDDEN],
            w2: Matrix::zeros(HIDDEN, HIDDEN),
            b2: vec![T::zero(); HIDDEN],
            w_out: Matrix::zeros(out_dim, HIDDEN),
            b_out: vec![T::zero(); out_dim],
        }
    }

    /// Gaussian fan-in initialisation; the output layer is scaled by `out_gain`.
    pub fn random<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, out_gain: f64, rng: &mut R) -> Self {
        let mut layer = |rows: usize, cols: usize, gain: f64| {
            let scale = gain / (cols as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                T::lit(z * scale)
            })
        };
        Self {
            w1: layer(HIDDEN, in_dim, 1.0),
            b1: vec![T::zero(); HIDDEN],
            w2: layer(HIDDEN, HIDDEN, 1.0),
            b2: vec![T::zero(); HIDDEN],
            w_out: layer(out_dim, HIDDEN, out_gain),
            b_out: vec![T::zero(); out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w_out.rows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim(), self.out_dim())
    }

    pub fn forward(&self, x: &[T]) -> MlpTrace<T> {
        let mut pre1 = vec![T::zero(); HIDDEN];
        self.w1.affine_into(x, &self.b1, &mut pre1);
        let h1: Vec<T> = pre1.iter().map(|v| v.tanh()).collect();
        let mut pre2 = vec![T::zero(); HIDDEN];
        self.w2.affine_into(&h1, &self.b2, &mut pre2);
        let h2: Vec<T> = pre2.iter().map(|v| v.tanh()).collect();
        let mut output = vec![T::zero(); self.out_dim()];
        self.w_out.affine_into(&h2, &self.b_out, &mut output);
        MlpTrace {
            input: x.to_vec(),
            pre1,
            h1,
            pre2,
            h2,
            output,
        }
    }

    fn hidden_deltas(&self, trace: &MlpTrace<T>, d_out: &[T]) -> (Vec<T>, Vec<T>) {
        let mut dh2 = vec![T::zero(); HIDDEN];
        self.w_out.transpose_mul_into(d_out, &mut dh2);
        let dpre2: Vec<T> = dh2
            .iter()
            .zip(&trace.h2)
            .map(|(g, h)| *g * (T::one() - *h * *h))
            .collect();
        let mut dh1 = vec![T::zero(); HIDDEN];
        self.w2.transpose_mul_into(&dpre2, &mut dh1);
        let dpre1: Vec<T> = dh1
            .iter()
            .zip(&trace.h1)
            .map(|(g, h)| *g * (T::one() - *h * *h))
            .collect();
        (dpre1, dpre2)
    }

    /// Gradient of `d_out · output` with respect to the input.
    pub fn backprop_input(&self, trace: &MlpTrace<T>, d_out: &[T]) -> Vec<T> {
        let (dpre1, _) = self.hidden_deltas(trace, d_out);
        let mut dx = vec![T::zero(); self.in_dim()];
        self.w1.transpose_mul_into(&dpre1, &mut dx);
        dx
    }

    /// Accumulates the parameter gradient of `d_out · output` into `grad`.
    pub fn backprop_params(&self, trace: &MlpTrace<T>, d_out: &[T], grad: &mut Mlp<T>) {
        let (dpre1, dpre2) = self.hidden_deltas(trace, d_out);
        grad.w_out.add_outer(T::one(), d_out, &trace.h2);
        add_into(&mut grad.b_out, d_out);
        grad.w2.add_outer(T::one(), &dpre2, &trace.h1);
        add_into(&mut grad.b2, &dpre2);
        grad.w1.add_outer(T::one(), &dpre1, &trace.input);
        add_into(&mut grad.b1, &dpre1);
    }

    /// Parameter blocks in a fixed order (W1, b1, W2, b2, W_out, b_out).
    pub fn blocks(&self) -> [&[T]; 6] {
        [
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
            self.w_out.as_slice(),
            &self.b_out,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [T]; 6] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
            self.w_out.as_mut_slice(),
            &mut self.b_out,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| all_finite(b))
    }

    pub fn scale(&mut self, s: T) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn sum_squares(&self) -> T {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| *v * *v)
            .sum()
    }
}

fn add_into<T: Scalar>(acc: &mut [T], v: &[T]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += *b);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_bias() {
        let mut m = Mlp::<f64>::zeros(3, 2);
        m.b_out = vec![0.3, -0.2];
        assert_eq!(m.forward(&[1.0, 2.0, 3.0]).output, vec![0.3, -0.2]);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Mlp::<f64>::random(5, 3, 1.0, &mut rng);
        let x = [0.1, -0.4, 0.7, 0.0, 0.25];
        let w = [0.5, -1.0, 2.0];
        let f = |x: &[f64]| -> f64 { m.forward(x).output.iter().zip(&w).map(|(a, b)| a * b).sum() };
        let g = m.backprop_input(&m.forward(&x), &w);
        for i in 0..5 {
            let h = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn f32_forward_tracks_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m64 = Mlp::<f64>::random(4, 2, 1.0, &mut rng);
        let cast = |m: &Matrix<f64>| Matrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c) as f32);
        let m32 = Mlp::<f32> {
            w1: cast(&m64.w1),
            b1: m64.b1.iter().map(|v| *v as f32).collect(),
            w2: cast(&m64.w2),
            b2: m64.b2.iter().map(|v| *v as f32).collect(),
            w_out: cast(&m64.w_out),
            b_out: m64.b_out.iter().map(|v| *v as f32).collect(),
        };
        let a = m64.forward(&[0.3, 0.1, -0.2, 0.9]).output;
        let b = m32.forward(&[0.3, 0.1, -0.2, 0.9]).output;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - *y as f64).abs() < 1e-5);
        }
    }
}
