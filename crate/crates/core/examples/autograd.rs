//! Reverse-mode gradients on the tape, checked against central differences.
//!
//! `cargo run --example autograd`

use c2g_kd::autograd::Tape;
use c2g_kd::linalg::Matrix;

fn loss(w: &Matrix, x: &Matrix, targets: &[usize]) -> c2g_kd::Result<(f64, Matrix)> {
    let mut tape = Tape::new();
    let wv = tape.param(w.clone());
    let xv = tape.constant(x.clone());
    let h = tape.matmul(xv, wv)?;
    let h = tape.tanh(h);
    let l = tape.softmax_cross_entropy(h, targets)?;
    tape.backward(l)?;
    Ok((tape.value(l).item(), tape.gradient(wv)))
}

fn main() -> c2g_kd::Result<()> {
    let x = Matrix::from_rows(&[[0.5, -1.0, 2.0], [1.5, 0.3, -0.7]])?;
    let w = Matrix::from_rows(&[[0.1, -0.2], [0.4, 0.3], [-0.5, 0.2]])?;
    let targets = [1, 0];
    let (value, grad) = loss(&w, &x, &targets)?;
    println!("loss {value:.6}");

    let h = 1e-6;
    for i in 0..w.len() {
        let mut plus = w.clone();
        plus.as_mut_slice()[i] += h;
        let mut minus = w.clone();
        minus.as_mut_slice()[i] -= h;
        let numeric = (loss(&plus, &x, &targets)?.0 - loss(&minus, &x, &targets)?.0) / (2.0 * h);
        println!("dW[{i}] tape {:+.8} numeric {numeric:+.8}", grad.as_slice()[i]);
    }
    Ok(())
}
