//! Differentiable operators. Each is a method on [`Graph`](crate::Graph);
//! forward kernels that are useful on their own are exposed as free
//! functions over plain slices or tensors.

mod attention;
mod conv;
mod elementwise;
mod filter;
mod norm;
mod pool;
mod reduce;
mod resample;
mod structure;

pub use attention::{attention_forward, AttentionOutput};
pub use conv::{conv2d_forward, conv_output_size};
pub use filter::filter2d_replicate;
pub use norm::{BatchNormMode, BN_EPS, LN_EPS};
pub use pool::{adaptive_avg_pool2d_forward, adaptive_bin};
pub use resample::{bilinear_resize_forward, source_index};

use crate::error::{shape_err, Result};
use crate::{Graph, Real, Var};

impl<T: Real> Graph<T> {
    pub(crate) fn dims4(&self, x: Var) -> Result<[usize; 4]> {
        self.with_value(x, |t| t.dims4())
    }

    pub(crate) fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err!("{op}: operand shapes differ, {:?} vs {:?}", sa, sb));
        }
        Ok(())
    }
}
