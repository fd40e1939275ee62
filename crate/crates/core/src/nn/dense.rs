use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::rng;

use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Tanh,
    Relu,
}

impl Activation {
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Elu => {
                if z > T::zero() {
                    z
                } else {
                    z.exp() - T::one()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(T::zero()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative<T: Scalar>(self, z: T, a: T) -> T {
        match self {
            Activation::Elu => {
                if z > T::zero() {
                    T::one()
                } else {
                    a + T::one()
                }
            }
            Activation::Tanh => T::one() - a * a,
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Fixed affine map `(x - offset) * scale` applied to the raw input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputTransform<T> {
    pub offset: Vec<T>,
    pub scale: Vec<T>,
}

/// Fully connected network, hidden layers activated, linear output.
///
/// Layer `l` stores `W_l` as an `in x out` row-major block followed by the
/// bias, all inside `params`. Batches are row-major `batch x width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet<T> {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<T>,
    pub input_transform: Option<InputTransform<T>>,
}

/// Activations kept from a forward pass for [`DenseNet::backward`].
#[derive(Debug, Clone, Default)]
pub struct ForwardCache<T> {
    pub batch: usize,
    /// Input to each layer (post-transform for layer 0).
    pub inputs: Vec<Vec<T>>,
    /// Pre-activations of hidden layers.
    pub pre: Vec<Vec<T>>,
    pub output: Vec<T>,
}

impl<T: Scalar> DenseNet<T> {
    /// Zero-initialized network.
    pub fn zeros(sizes: &[usize], activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "a network needs input and output widths");
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self { sizes: sizes.to_vec(), activation, params: vec![T::zero(); n], input_transform: None }
    }

    /// Gaussian weights with variance `1 / fan_in` (the last layer scaled by
    /// `output_gain`), zero biases.
    pub fn init(sizes: &[usize], activation: Activation, output_gain: f64, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(sizes, activation);
        let layers = net.num_layers();
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let gain = if l + 1 == layers { output_gain } else { 1.0 };
            let std = gain / (fan_in as f64).sqrt();
            let off = net.layer_offset(l);
            for w in &mut net.params[off..off + fan_in * fan_out] {
                *w = T::from_f64(std * rng::normal(rng));
            }
        }
        net
    }

    pub fn with_input_transform(mut self, offset: Vec<f64>, scale: Vec<f64>) -> Self {
        assert_eq!(offset.len(), self.input_width());
        assert_eq!(scale.len(), self.input_width());
        self.input_transform = Some(InputTransform {
            offset: offset.into_iter().map(T::from_f64).collect(),
            scale: scale.into_iter().map(T::from_f64).collect(),
        });
        self
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Offset of layer `l`'s weight block in `params`.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.sizes.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn transform_input(&self, x: &[T], batch: usize) -> Vec<T> {
        match &self.input_transform {
            None => x.to_vec(),
            Some(tr) => {
                let w = self.input_width();
                let mut out = Vec::with_capacity(x.len());
                for r in 0..batch {
                    for c in 0..w {
                        out.push((x[r * w + c] - tr.offset[c]) * tr.scale[c]);
                    }
                }
                out
            }
        }
    }

    fn check_input(&self, x: &[T], batch: usize) -> Result<(), NnError> {
        let expected = batch * self.input_width();
        if x.len() != expected {
            return Err(NnError::ShapeMismatch { expected, got: x.len() });
        }
        Ok(())
    }

    /// Batched forward pass keeping the intermediate activations.
    pub fn forward_cached(&self, x: &[T], batch: usize) -> Result<ForwardCache<T>, NnError> {
        self.check_input(x, batch)?;
        let layers = self.num_layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers - 1);
        let mut a = self.transform_input(x, batch);
        for l in 0..layers {
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.layer_offset(l);
            let w = &self.params[off..off + fi * fo];
            let b = &self.params[off + fi * fo..off + fi * fo + fo];
            let mut z = Vec::with_capacity(batch * fo);
            for _ in 0..batch {
                z.extend_from_slice(b);
            }
            T::gemm(batch, fi, fo, T::one(), &a, fi as isize, 1, w, fo as isize, 1, T::one(), &mut z, fo as isize, 1);
            inputs.push(a);
            if l + 1 < layers {
                let act: Vec<T> = z.iter().map(|&v| self.activation.apply(v)).collect();
                pre.push(z);
                a = act;
            } else {
                a = z;
            }
        }
        Ok(ForwardCache { batch, inputs, pre, output: a })
    }

    pub fn forward(&self, x: &[T], batch: usize) -> Result<Vec<T>, NnError> {
        Ok(self.forward_cached(x, batch)?.output)
    }

    /// Accumulates parameter gradients of `sum(grad_out * output)` into
    /// `grads` and returns the gradient with respect to the raw input.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &[T], grads: &mut [T]) -> Vec<T> {
        let batch = cache.batch;
        let layers = self.num_layers();
        assert_eq!(grad_out.len(), batch * self.output_width());
        assert_eq!(grads.len(), self.params.len());
        let mut dz = grad_out.to_vec();
        for l in (0..layers).rev() {
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.layer_offset(l);
            let a_in = &cache.inputs[l];
            {
                let (gw, gb) = grads[off..off + fi * fo + fo].split_at_mut(fi * fo);
                // dW += a_in^T dz
                T::gemm(
                    fi,
                    batch,
                    fo,
                    T::one(),
                    a_in,
                    1,
                    fi as isize,
                    &dz,
                    fo as isize,
                    1,
                    T::one(),
                    gw,
                    fo as isize,
                    1,
                );
                for r in 0..batch {
                    for (g, d) in gb.iter_mut().zip(&dz[r * fo..(r + 1) * fo]) {
                        *g = *g + *d;
                    }
                }
            }
            // da_in = dz W^T
            let w = &self.params[off..off + fi * fo];
            let mut da = vec![T::zero(); batch * fi];
            T::gemm(
                batch,
                fo,
                fi,
                T::one(),
                &dz,
                fo as isize,
                1,
                w,
                1,
                fo as isize,
                T::zero(),
                &mut da,
                fi as isize,
                1,
            );
            if l > 0 {
                let z = &cache.pre[l - 1];
                for ((d, &zv), &av) in da.iter_mut().zip(z).zip(a_in) {
                    *d = *d * self.activation.derivative(zv, av);
                }
            } else if let Some(tr) = &self.input_transform {
                for r in 0..batch {
                    for c in 0..fi {
                        da[r * fi + c] = da[r * fi + c] * tr.scale[c];
                    }
                }
            }
            dz = da;
        }
        dz
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}
