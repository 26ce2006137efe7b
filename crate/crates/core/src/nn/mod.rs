//! A small dense network engine with hand-derived gradients: linear layers,
//! batch norm, LeakyReLU/ReLU/tanh, Gumbel-softmax heads, Adam, and the
//! discriminator input gradient (plus its parameter derivative) needed by the
//! Wasserstein gradient penalty.

pub mod adam;
pub mod batchnorm;
pub mod codec;
pub mod discriminator;
pub mod functional;
pub mod generator;
pub mod linear;

pub use adam::{AdamConfig, AdamState};
pub use batchnorm::BatchNorm;
pub use discriminator::{DiscCache, Discriminator, DiscriminatorConfig, DropoutMasks};
pub use generator::{Generator, GeneratorCache, GeneratorConfig, OutputSpan};
pub use linear::Linear;

/// Train mode uses batch statistics and dropout; eval mode uses running
/// statistics and no dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Trainable tensors exposed as flat slices in a fixed order.
pub trait Params {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn zero_grads(&self) -> Grads {
        Grads(self.param_slices().iter().map(|s| vec![0.0; s.len()]).collect())
    }
}

/// Gradients aligned with [`Params::param_slices`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.0.iter().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.0.iter_mut().flatten()
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }
}
