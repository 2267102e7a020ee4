use super::{Tape, Tensor, Var};

/// `|a - b| / max(|a|, |b|, 1e-12)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Gradients smaller than this are compared absolutely; central differences
/// cannot resolve them relative to rounding noise.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// Compares tape gradients of the scalar `f` against central differences
/// `(f(θ+ε) - f(θ-ε)) / 2ε`, one coordinate at a time. Returns the largest
/// relative error over all coordinates of all `params`.
///
/// `f` receives the parameters bound as leaves, in order, and must return a
/// 1 x 1 variable. It has to be deterministic (reseed any RNG inside it).
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    grad_check_strided(f, params, eps, usize::MAX)
}

/// [`grad_check`] on at most `per_tensor` evenly strided coordinates of each
/// parameter, for networks too large to perturb coordinate by coordinate.
pub fn grad_check_strided<F>(f: F, params: &[Tensor], eps: f64, per_tensor: usize) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |ps: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out);

    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var, params[pi].shape());
        let len = params[pi].len();
        let stride = len.div_ceil(per_tensor.max(1)).max(1);
        for j in (0..len).step_by(stride) {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + eps;
            let plus = eval(&work);
            work[pi].data_mut()[j] = orig - eps;
            let minus = eval(&work);
            work[pi].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let (a, n) = (analytic.data()[j], numeric);
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(GRADIENT_FLOOR));
        }
    }
    worst
}
