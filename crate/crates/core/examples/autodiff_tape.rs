//! Reverse-mode gradients on the matrix tape, checked against central
//! finite differences, and a few Adam steps on a least-squares problem.

use ndarray::{array, Array2};
use paml::diffcore::gradcheck::{check_inputs, DEFAULT_STEP};
use paml::diffcore::Tape;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // f(A, x) = sum(tanh(A x)^2) + sum(softplus(x))
    let a = array![[0.3, -1.2], [0.8, 0.5], [-0.4, 0.9]];
    let x = array![[0.7], [-0.2]];
    let errors = check_inputs(&[a.clone(), x.clone()], DEFAULT_STEP, |t, v| {
        let ax = t.matmul(v[0], v[1]);
        let th = t.tanh(ax);
        let sq = t.square(th);
        let sp = t.softplus(v[1]);
        let s1 = t.sum(sq);
        let s2 = t.sum(sp);
        Ok(t.add(s1, s2))
    })?;
    let shown: Vec<String> = errors.iter().map(|e| format!("{e:.2e}")).collect();
    println!("relative errors vs finite differences: {}", shown.join(", "));
    assert!(errors.iter().all(|e| *e < 1e-6));

    // gradient descent on ||A w - b||^2 using tape gradients directly
    let b = array![[1.0], [0.0], [2.0]];
    let mut w: Array2<f64> = Array2::zeros((2, 1));
    for step in 0..200 {
        let mut t = Tape::new();
        let wv = t.leaf(w.clone());
        let av = t.constant(a.clone());
        let bv = t.constant(b.clone());
        let pred = t.matmul(av, wv);
        let r = t.sub(pred, bv);
        let sq = t.square(r);
        let loss = t.sum(sq);
        let value = t.evaluate(loss)?;
        let g = t.gradient(loss)?;
        w = &w - &(g.wrt(wv) * 0.1);
        if step % 50 == 0 {
            println!("step {step:3}: loss {value:.6}");
        }
    }
    println!("w = {:.4}", w.t());
    Ok(())
}
