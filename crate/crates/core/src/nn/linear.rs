use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// Dense layer `y = x Wᵀ + b`, weight stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Uniform(−1/√in, 1/√in) initialization for weights and biases.
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Linear {
            weight: Array2::from_shape_fn((output, input), |_| dist.sample(rng)),
            bias: Array1::from_shape_fn(output, |_| dist.sample(rng)),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = matmul_t(x, &self.weight);
        let bias = self.bias.as_slice().expect("standard layout");
        for mut row in y.rows_mut() {
            for (v, &b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        y
    }

    /// Returns `(dW, db)` and optionally the input gradient.
    pub fn backward(
        &self,
        input: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        need_input_grad: bool,
    ) -> (Array2<f64>, Array1<f64>, Option<Array2<f64>>) {
        let mut dw = dy.t().dot(&input);
        if !dw.is_standard_layout() {
            dw = dw.as_standard_layout().into_owned();
        }
        let db = dy.sum_axis(Axis(0));
        let dx = need_input_grad.then(|| dy.dot(&self.weight));
        (dw, db, dx)
    }

    pub(crate) fn slices(&self) -> [&[f64]; 2] {
        [
            self.weight.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    pub(crate) fn slices_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.weight.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// `a · bᵀ`. The GEMM kernel packs a row-major right operand much faster
/// than a transposed view, so `bᵀ` is materialized first.
pub fn matmul_t(a: ArrayView2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let bt = b.t().as_standard_layout().into_owned();
    a.dot(&bt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_closed_form_gradient() {
        // y = W x + b on a 2x2 case, loss = sum(y * c)
        let layer = Linear { weight: array![[1.0, 2.0], [3.0, 4.0]], bias: array![0.5, -0.5] };
        let x = array![[1.0, -1.0]];
        let y = layer.forward(x.view());
        assert_eq!(y, array![[-0.5, -1.5]]);
        let c = array![[2.0, 3.0]];
        let (dw, db, dx) = layer.backward(x.view(), c.view(), true);
        assert_eq!(dw, array![[2.0, -2.0], [3.0, -3.0]]);
        assert_eq!(db, array![2.0, 3.0]);
        assert_eq!(dx.unwrap(), array![[11.0, 16.0]]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = rand::rng();
        let layer = Linear::new(3, 4, &mut rng);
        let x = Array2::from_elem((5, 3), 0.7);
        let (dw, db, dx) = layer.backward(x.view(), Array2::zeros((5, 4)).view(), true);
        assert!(dw.iter().chain(db.iter()).chain(dx.unwrap().iter()).all(|&v| v == 0.0));
    }
}
