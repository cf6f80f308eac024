//! Central finite-difference gradient checks against the tape.

use ndarray::Array2;

use super::{Bindings, DiffError, Parameterized, Tape, Var};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
pub fn relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    let diff = (analytic - numeric).mapv(|x| x * x).sum().sqrt();
    let na = analytic.mapv(|x| x * x).sum().sqrt();
    let nn = numeric.mapv(|x| x * x).sum().sqrt();
    let denom = na.max(nn);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

/// Compares tape gradients of `f` with central differences, one relative
/// error per input matrix.
pub fn check_inputs<F>(inputs: &[Array2<f64>], step: f64, f: F) -> Result<Vec<f64>, DiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.evaluate(out)?;
    let grads = tape.gradient(out)?;

    let eval = |xs: &[Array2<f64>]| -> Result<f64, DiffError> {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|a| t.leaf(a.clone())).collect();
        let o = f(&mut t, &vs)?;
        t.evaluate(o)
    };

    let mut errors = Vec::with_capacity(inputs.len());
    let mut work: Vec<Array2<f64>> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        let mut numeric = Array2::zeros(inputs[k].raw_dim());
        for idx in 0..inputs[k].len() {
            let (r, c) = (idx / inputs[k].ncols(), idx % inputs[k].ncols());
            let x0 = work[k][[r, c]];
            work[k][[r, c]] = x0 + step;
            let fp = eval(&work)?;
            work[k][[r, c]] = x0 - step;
            let fm = eval(&work)?;
            work[k][[r, c]] = x0;
            numeric[[r, c]] = (fp - fm) / (2.0 * step);
        }
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(errors)
}

/// Finite-difference check over every named parameter of `model`; returns
/// `(name, relative error)` pairs in visit order.
pub fn check_params<P, F>(model: &P, step: f64, f: F) -> Result<Vec<(String, f64)>, DiffError>
where
    P: Parameterized + Clone,
    F: Fn(&mut Tape, &Bindings) -> Result<Var, DiffError>,
{
    let eval = |m: &P| -> Result<f64, DiffError> {
        let mut t = Tape::new();
        let b = t.bind(m);
        let o = f(&mut t, &b)?;
        t.evaluate(o)
    };
    let mut tape = Tape::new();
    let bindings = tape.bind(model);
    let out = f(&mut tape, &bindings)?;
    tape.evaluate(out)?;
    let grads = bindings.collect(&tape.gradient(out)?);

    let mut names = Vec::new();
    model.visit_params(&mut |name, _| names.push(name.to_string()));

    let mut work = model.clone();
    let mut result = Vec::with_capacity(names.len());
    for name in names {
        let analytic = grads.get(&name).cloned().expect("bound parameter");
        let mut numeric = Array2::zeros(analytic.raw_dim());
        for idx in 0..analytic.len() {
            let (r, c) = (idx / analytic.ncols(), idx % analytic.ncols());
            let mut x0 = 0.0;
            set_entry(&mut work, &name, r, c, |x| {
                x0 = *x;
                *x += step;
            });
            let fp = eval(&work)?;
            set_entry(&mut work, &name, r, c, |x| *x = x0 - step);
            let fm = eval(&work)?;
            set_entry(&mut work, &name, r, c, |x| *x = x0);
            numeric[[r, c]] = (fp - fm) / (2.0 * step);
        }
        result.push((name, relative_error(&analytic, &numeric)));
    }
    Ok(result)
}

fn set_entry<P: Parameterized>(p: &mut P, name: &str, r: usize, c: usize, mut f: impl FnMut(&mut f64)) {
    p.visit_params_mut(&mut |n, a| {
        if n == name {
            f(&mut a[[r, c]]);
        }
    });
}
