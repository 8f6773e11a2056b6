//! Builds a small softmax-regression loss on the tape, runs the backward
//! pass, and compares the result against central differences.

use openset3cm::autodiff::{gradient_check, Axis, Matrix, Tape};

fn main() -> openset3cm::Result<()> {
    let x = Matrix::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.3, -0.7]])?;
    let target = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])?;
    let weights: Vec<f64> = (0..6).map(|i| 0.1 * i as f64 - 0.25).collect();

    let build = |tape: &mut Tape, w: &[f64]| {
        let wv = tape.leaf(Matrix::new(3, 2, w.to_vec())?);
        let xv = tape.constant(x.clone());
        let logits = tape.matmul(xv, wv)?;
        let probs = tape.softmax(logits, Axis::Cols);
        let logp = tape.log(probs);
        let t = tape.constant(target.clone());
        let picked = tape.mul(logp, t)?;
        let nll = tape.sum(picked);
        Ok((tape.scale(nll, -0.5), vec![wv]))
    };

    let mut tape = Tape::new();
    let (loss, leaves) = build(&mut tape, &weights)?;
    tape.backward(loss)?;
    println!("loss     = {:.6}", tape.scalar(loss));
    println!("gradient = {:?}", tape.grad(leaves[0]));
    let err = gradient_check(build, &weights, 1e-5)?;
    println!("max relative error vs central differences = {err:.2e}");
    Ok(())
}
