//! Central-difference verification of tape gradients.

use crate::autodiff::params::Params;
use crate::autodiff::tape::{Tape, TensorId};
use crate::error::{Error, Result};

/// Compares tape gradients of a scalar function against central differences
/// for every parameter entry and returns the maximum relative error
/// (`|a - fd| / max(|a|, |fd|, 1)`).
pub fn grad_check<F>(params: &mut Params, eps: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&Params, &mut Tape) -> Result<TensorId>,
{
    params.zero_grads();
    let mut tape = Tape::new();
    let loss = f(params, &mut tape)?;
    let base = tape.value(loss)[0];
    if !base.is_finite() {
        return Err(Error::NonFinite("grad_check base loss".into()));
    }
    tape.backward(loss)?;
    tape.accumulate_param_grads(params);
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.clone()).collect();

    let mut max_rel: f64 = 0.0;
    for pi in 0..params.len() {
        for k in 0..params.item(pi).values.len() {
            let orig = params.item(pi).values[k];

            params.item_mut(pi).values[k] = orig + eps;
            let up = eval(params, &mut f)?;
            params.item_mut(pi).values[k] = orig - eps;
            let down = eval(params, &mut f)?;
            params.item_mut(pi).values[k] = orig;

            let fd = (up - down) / (2.0 * eps);
            if !fd.is_finite() {
                return Err(Error::NonFinite(format!(
                    "finite difference for {}[{k}]",
                    params.item(pi).name
                )));
            }
            let a = analytic[pi][k];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

fn eval<F>(params: &Params, f: &mut F) -> Result<f64>
where
    F: FnMut(&Params, &mut Tape) -> Result<TensorId>,
{
    let mut tape = Tape::new();
    let loss = f(params, &mut tape)?;
    let v = tape.value(loss)[0];
    if !v.is_finite() {
        return Err(Error::NonFinite("grad_check perturbed loss".into()));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::layers::{self, GruIds, LstmIds};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-5;

    fn fixed_vector(tape: &mut Tape, seed: usize, n: usize) -> TensorId {
        tape.vector((0..n).map(|i| ((seed * 31 + i * 7) as f64 * 0.13).sin()).collect())
    }

    #[test]
    fn quadratic_loss_is_near_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = Params::new();
        params.add_uniform("w", &[3, 2], &mut rng).unwrap();
        params.add_uniform("b", &[2], &mut rng).unwrap();
        let err = grad_check(&mut params, EPS, |p, tape| {
            let w = tape.param(p, "w")?;
            let b = tape.param(p, "b")?;
            let x = fixed_vector(tape, 2, 3);
            let y = layers::affine(tape, x, w, b)?;
            let sq = tape.mul(y, y)?;
            let one = tape.vector(vec![1.0, 1.0]);
            tape.dot(sq, one)
        })
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn matmul_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = Params::new();
        params.add_uniform("a", &[2, 3], &mut rng).unwrap();
        params.add_uniform("b", &[3, 2], &mut rng).unwrap();
        let err = grad_check(&mut params, EPS, |p, tape| {
            let a = tape.param(p, "a")?;
            let b = tape.param(p, "b")?;
            let m = tape.matmul(a, b)?;
            let r0 = tape.lookup(m, 0)?;
            let r1 = tape.lookup(m, 1)?;
            let joined = tape.concat(&[r0, r1])?;
            let w = fixed_vector(tape, 4, 4);
            tape.dot(joined, w)
        })
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn core_ops_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut params = Params::new();
        params.add_uniform("a", &[2, 3], &mut rng).unwrap();
        params.add_uniform("b", &[3, 2], &mut rng).unwrap();
        params.add_uniform("v", &[4], &mut rng).unwrap();
        params.add_uniform("table", &[3, 4], &mut rng).unwrap();

        // matmul, 2-D softmax on both axes, log, lookup
        let err = grad_check(&mut params, EPS, |p, tape| {
            let a = tape.param(p, "a")?;
            let b = tape.param(p, "b")?;
            let m = tape.matmul(a, b)?;
            let rows = tape.softmax(m, 1)?;
            let logged = tape.log(rows);
            let cols = tape.softmax(logged, 0)?;
            let r0 = tape.lookup(cols, 0)?;
            let r1 = tape.lookup(cols, 1)?;
            let joined = tape.concat(&[r0, r1])?;
            let w = fixed_vector(tape, 4, 4);
            tape.dot(joined, w)
        })
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");

        // lookup, max_n, masked softmax, scale, concat, sigmoid, tanh, pick
        let err = grad_check(&mut params, EPS, |p, tape| {
            let table = tape.param(p, "table")?;
            let r0 = tape.lookup(table, 0)?;
            let r1 = tape.lookup(table, 2)?;
            let mx = tape.max_n(&[r0, r1])?;
            let ms = tape.masked_softmax(mx, &[true, false, true, true])?;
            let v = tape.param(p, "v")?;
            let sig = tape.sigmoid(v);
            let d = tape.dot(ms, sig)?;
            let scaled = tape.scale(r1, d)?;
            let act = tape.tanh(scaled);
            let joined = tape.concat(&[act, ms])?;
            let w = fixed_vector(tape, 5, 8);
            let loss = tape.dot(joined, w)?;
            tape.pick(loss, 0)
        })
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn gru_cell_passes_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = Params::new();
        layers::gru_params(&mut params, "g", 3, 4, &mut rng).unwrap();
        let err = grad_check(&mut params, EPS, |p, tape| {
            let ids = GruIds::bind(tape, p, "g")?;
            let x = fixed_vector(tape, 1, 3);
            let h = fixed_vector(tape, 2, 4);
            let out = layers::gru_cell(tape, &ids, x, h)?;
            let w = fixed_vector(tape, 3, 4);
            tape.dot(out, w)
        })
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn lstm_and_birnn_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = Params::new();
        layers::lstm_params(&mut params, "f", 3, 4, &mut rng).unwrap();
        layers::lstm_params(&mut params, "b", 3, 4, &mut rng).unwrap();
        let err = grad_check(&mut params, EPS, |p, tape| {
            let fwd = LstmIds::bind(tape, p, "f")?;
            let bwd = LstmIds::bind(tape, p, "b")?;
            let xs: Vec<TensorId> = (0..3).map(|i| fixed_vector(tape, i, 3)).collect();
            let out = layers::birnn_encode(tape, &fwd, &bwd, &xs)?;
            let joined = tape.concat(&out)?;
            let w = fixed_vector(tape, 9, 24);
            tape.dot(joined, w)
        })
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn attention_passes_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = Params::new();
        params.add_uniform("q", &[4], &mut rng).unwrap();
        params.add_uniform("a.w", &[4, 4], &mut rng).unwrap();
        params.add_uniform("a.b", &[4], &mut rng).unwrap();
        let err = grad_check(&mut params, EPS, |p, tape| {
            let q = tape.param(p, "q")?;
            let w = tape.param(p, "a.w")?;
            let b = tape.param(p, "a.b")?;
            let mem: Vec<TensorId> = (0..3).map(|i| fixed_vector(tape, i + 11, 4)).collect();
            let (_, context) = layers::attention(tape, q, &mem, w, b)?;
            let probe = fixed_vector(tape, 17, 4);
            tape.dot(context, probe)
        })
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn corrupted_backward_rule_is_detected() {
        // Take the tape's correct sigmoid gradient, corrupt it by doubling
        // (a classic wrong backward rule), and run the same comparison
        // grad_check uses: the corruption must stand out.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = Params::new();
        params.add_uniform("v", &[4], &mut rng).unwrap();

        params.zero_grads();
        let mut tape = Tape::new();
        let v = tape.param(&params, "v").unwrap();
        let y = tape.sigmoid(v);
        let ones = tape.vector(vec![1.0; 4]);
        let loss = tape.dot(y, ones).unwrap();
        tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&mut params);
        let corrupted: Vec<f64> = params.get("v").unwrap().grad.iter().map(|g| 2.0 * g).collect();

        let eps = 1e-5;
        let f = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut max_rel: f64 = 0.0;
        for k in 0..4 {
            let x = params.get("v").unwrap().values[k];
            let fd = (f(x + eps) - f(x - eps)) / (2.0 * eps);
            let a = corrupted[k];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel > 1e-1, "corruption not detected: {max_rel}");
    }
}
