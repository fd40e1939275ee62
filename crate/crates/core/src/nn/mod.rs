//! Dense networks with analytic gradients, a diagonal Gaussian head and Adam.
//!
//! Parameters live in one flat buffer per network so optimizers and
//! checkpoints can treat them uniformly. Matrix products go through the
//! `matrixmultiply` kernels; everything else is plain loops.

mod adam;
mod checkpoint;
mod dense;
mod gaussian;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dense::{Activation, DenseNet, ForwardCache, InputTransform};
pub use gaussian::{GaussianHead, LOG_2PI};

use std::fmt::Debug;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::positive;

/// Floating-point element type of a network.
pub trait Scalar: num_traits::Float + Default + Debug + Send + Sync + Serialize + DeserializeOwned + 'static {
    /// Bytes per element in checkpoints.
    const WIDTH: u8;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn to_le(self, out: &mut Vec<u8>);
    fn from_le(bytes: &[u8]) -> Self;

    /// `C = alpha * A B + beta * C` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
}

macro_rules! impl_scalar {
    ($t:ty, $width:expr, $gemm:path) => {
        impl Scalar for $t {
            const WIDTH: u8 = $width;

            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }

            fn to_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn from_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("element width"))
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                // SAFETY: every operand's extent was checked against its slice.
                unsafe {
                    $gemm(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc);
                }
            }
        }
    };
}

impl_scalar!(f32, 4, matrixmultiply::sgemm);
impl_scalar!(f64, 8, matrixmultiply::dgemm);

/// Network shapes and initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub policy_hidden: Vec<usize>,
    pub estimator_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub activation: Activation,
    pub init_log_std: f64,
    /// Scale of the policy output layer at initialization.
    pub policy_output_gain: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            policy_hidden: vec![512, 256, 128],
            estimator_hidden: vec![256, 128],
            critic_hidden: vec![512, 256, 128],
            activation: Activation::Elu,
            init_log_std: -0.5,
            policy_output_gain: 0.01,
        }
    }
}

impl NetConfig {
    pub fn validate_into(&self, path: &str, errs: &mut Vec<String>) {
        for (name, h) in [
            ("policy_hidden", &self.policy_hidden),
            ("estimator_hidden", &self.estimator_hidden),
            ("critic_hidden", &self.critic_hidden),
        ] {
            if h.is_empty() || h.contains(&0) {
                errs.push(format!("{path}.{name}: needs at least one non-empty layer"));
            }
        }
        if !self.init_log_std.is_finite() {
            errs.push(format!("{path}.init_log_std: must be finite"));
        }
        positive(errs, path, "policy_output_gain", self.policy_output_gain);
    }
}
