//! Reverse-mode gradients of a small graph against central finite differences.
//!
//! `cargo run --example gradcheck`

use nat_lab::tensor::{grad_check, Graph, Result, Tensor, Var};

/// `sum(log_softmax(tanh(x W) + b)[:, 0])` with fixed `W`, `b`.
fn score(g: &mut Graph, x: Var) -> Result<Var> {
    let w = g.constant(Tensor::matrix(3, 2, vec![0.5, -1.0, 0.25, 0.75, -0.5, 1.5])?);
    let b = g.constant(Tensor::from_vec(vec![0.1, -0.2]));
    let h = g.matmul(x, w)?;
    let h = g.tanh(h)?;
    let h = g.add(h, b)?;
    let lp = g.log_softmax(h)?;
    let first = g.slice(lp, 1, 0, 1)?;
    g.sum(first)
}

fn main() -> Result<()> {
    let x = Tensor::matrix(2, 3, vec![0.3, -0.7, 1.1, 0.05, 0.4, -0.9])?;

    let mut g = Graph::new();
    let v = g.param(x.clone());
    let y = score(&mut g, v)?;
    let grads = g.backward(y)?;
    println!("f(x) = {:.6}", g.value(y).data()[0]);
    println!("df/dx = {:?}", grads.get(v).data());

    let err = grad_check(score, &x, 1e-5)?;
    println!("max relative error vs finite differences: {err:.2e}");
    Ok(())
}
