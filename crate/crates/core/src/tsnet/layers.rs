use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::scalar::Real;

fn uniform<T: Real, R: Rng>(rows: usize, cols: usize, limit: f64, rng: &mut R) -> Array2<T> {
    Array2::from_shape_simple_fn((rows, cols), || T::of(rng.random_range(-limit..limit)))
}

/// Affine map `y = x Wᵀ + b` applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `outputs x inputs`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Dense<T> {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Self { weight: uniform(outputs, inputs, limit, rng), bias: Array1::zeros(outputs) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { weight: Array2::zeros(self.weight.raw_dim()), bias: Array1::zeros(self.bias.raw_dim()) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    pub fn backward(&self, x: ArrayView2<'_, T>, gy: ArrayView2<'_, T>, grad: &mut Self) -> Array2<T> {
        grad.weight += &gy.t().dot(&x);
        grad.bias += &gy.sum_axis(Axis(0));
        gy.dot(&self.weight)
    }
}

/// Elman recurrence `h_t = tanh(W_in x_t + W_rec h_prev + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rnn<T> {
    pub w_in: Array2<T>,
    pub w_rec: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Rnn<T> {
    pub fn new<R: Rng>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let limit_in = (1.0 / inputs as f64).sqrt();
        let limit_rec = (1.0 / hidden as f64).sqrt();
        Self {
            w_in: uniform(hidden, inputs, limit_in, rng),
            w_rec: uniform(hidden, hidden, limit_rec, rng),
            bias: Array1::zeros(hidden),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_in: Array2::zeros(self.w_in.raw_dim()),
            w_rec: Array2::zeros(self.w_rec.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_rec.nrows()
    }

    fn order(frames: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
        if reverse {
            Box::new((0..frames).rev())
        } else {
            Box::new(0..frames)
        }
    }

    /// Hidden states in natural frame order; `reverse` runs the recursion backwards in time.
    pub fn forward(&self, x: ArrayView2<'_, T>, reverse: bool) -> Array2<T> {
        let frames = x.nrows();
        let drive = x.dot(&self.w_in.t()) + &self.bias;
        let mut h = Array2::zeros((frames, self.hidden()));
        let mut prev = Array1::<T>::zeros(self.hidden());
        for t in Self::order(frames, reverse) {
            let pre = &drive.row(t) + &self.w_rec.dot(&prev);
            let cur = pre.mapv(T::tanh);
            h.row_mut(t).assign(&cur);
            prev = cur;
        }
        h
    }

    /// Backpropagation through time; `h` are the states returned by `forward`.
    pub fn backward(
        &self,
        x: ArrayView2<'_, T>,
        h: ArrayView2<'_, T>,
        gh: ArrayView2<'_, T>,
        reverse: bool,
        grad: &mut Self,
    ) -> Array2<T> {
        let frames = x.nrows();
        let hidden = self.hidden();
        let mut gpre_all = Array2::<T>::zeros((frames, hidden));
        let mut carry = Array1::<T>::zeros(hidden);
        let steps: Vec<usize> = Self::order(frames, reverse).collect();
        for (i, &t) in steps.iter().enumerate().rev() {
            let ht = h.row(t);
            let gpre = (&gh.row(t) + &carry) * &ht.mapv(|v| T::one() - v * v);
            if i > 0 {
                let prev = h.row(steps[i - 1]);
                for a in 0..hidden {
                    let ga = gpre[a];
                    for b in 0..hidden {
                        grad.w_rec[[a, b]] += ga * prev[b];
                    }
                }
            }
            carry = gpre.dot(&self.w_rec);
            gpre_all.row_mut(t).assign(&gpre);
        }
        grad.w_in += &gpre_all.t().dot(&x);
        grad.bias += &gpre_all.sum_axis(Axis(0));
        gpre_all.dot(&self.w_in)
    }
}

/// Forward and backward Elman layers with concatenated outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BiRnn<T> {
    pub forward: Rnn<T>,
    pub backward: Rnn<T>,
}

impl<T: Real> BiRnn<T> {
    pub fn new<R: Rng>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        Self { forward: Rnn::new(inputs, hidden, rng), backward: Rnn::new(inputs, hidden, rng) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { forward: self.forward.zeros_like(), backward: self.backward.zeros_like() }
    }

    pub fn outputs(&self) -> usize {
        2 * self.forward.hidden()
    }

    pub fn run(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let f = self.forward.forward(x, false);
        let b = self.backward.forward(x, true);
        ndarray::concatenate(Axis(1), &[f.view(), b.view()]).expect("equal frame counts")
    }

    pub fn backprop(&self, x: ArrayView2<'_, T>, y: ArrayView2<'_, T>, gy: ArrayView2<'_, T>, grad: &mut Self) -> Array2<T> {
        let h = self.forward.hidden();
        let gf = self.forward.backward(x, y.slice(s![.., ..h]), gy.slice(s![.., ..h]), false, &mut grad.forward);
        let gb = self.backward.backward(x, y.slice(s![.., h..]), gy.slice(s![.., h..]), true, &mut grad.backward);
        gf + gb
    }
}
