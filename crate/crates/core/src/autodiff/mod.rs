//! Reverse-mode automatic differentiation over dense f64 tensors.

pub mod gradcheck;
mod tape;
mod tensor;
#[cfg(test)]
mod tests;

pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub(crate) use tensor::kernels;

use crate::error::Result;

/// Frobenius norm of the Jacobian block ∂out[rows] / ∂input[cols], computed
/// with one seeded backward pass per output entry.
pub fn jacobian_block_norm(
    tape: &mut Tape,
    input: Var,
    output: Var,
    out_indices: &[usize],
    in_indices: &[usize],
) -> Result<f64> {
    let n_out = tape.value(output).numel();
    let mut total = 0.0;
    let mut seed = vec![0.0; n_out];
    for &o in out_indices {
        tape.zero_grad();
        seed[o] = 1.0;
        tape.backward_seeded(output, &seed)?;
        seed[o] = 0.0;
        if let Some(g) = tape.grad(input) {
            total += in_indices.iter().map(|&i| g[i] * g[i]).sum::<f64>();
        }
    }
    tape.zero_grad();
    Ok(total.sqrt())
}
