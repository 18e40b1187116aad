//! Neural layers assembled from tape ops: gated recurrent cell, LSTM cell,
//! bidirectional encoder, dot-product attention, affine.

use crate::autodiff::params::Params;
use crate::autodiff::tape::{Tape, TensorId};
use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;

/// Bound tape ids for the six weight matrices of the gated participant cell.
#[derive(Debug, Clone, Copy)]
pub struct GruIds {
    pub u_z: TensorId,
    pub w_z: TensorId,
    pub u_r: TensorId,
    pub w_r: TensorId,
    pub u_h: TensorId,
    pub w_h: TensorId,
}

/// Registers gated-cell parameters under `prefix`.
pub fn gru_params(
    params: &mut Params,
    prefix: &str,
    input_dim: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    for gate in ["z", "r", "h"] {
        params.add_uniform(&format!("{prefix}.u_{gate}"), &[input_dim, hidden], rng)?;
        params.add_uniform(&format!("{prefix}.w_{gate}"), &[hidden, hidden], rng)?;
    }
    Ok(())
}

impl GruIds {
    pub fn bind(tape: &mut Tape, params: &Params, prefix: &str) -> Result<GruIds> {
        Ok(GruIds {
            u_z: tape.param(params, &format!("{prefix}.u_z"))?,
            w_z: tape.param(params, &format!("{prefix}.w_z"))?,
            u_r: tape.param(params, &format!("{prefix}.u_r"))?,
            w_r: tape.param(params, &format!("{prefix}.w_r"))?,
            u_h: tape.param(params, &format!("{prefix}.u_h"))?,
            w_h: tape.param(params, &format!("{prefix}.w_h"))?,
        })
    }
}

/// One step of the gated update unit:
/// z = sigma(x U^z + h W^z), r = sigma(x U^r + h W^r),
/// h~ = tanh(x U^h + (r * h) W^h), h' = (1 - z) * h + z * h~.
pub fn gru_cell(tape: &mut Tape, ids: &GruIds, x: TensorId, h_prev: TensorId) -> Result<TensorId> {
    let xz = tape.vecmat(x, ids.u_z)?;
    let hz = tape.vecmat(h_prev, ids.w_z)?;
    let z = {
        let s = tape.add(xz, hz)?;
        tape.sigmoid(s)
    };
    let xr = tape.vecmat(x, ids.u_r)?;
    let hr = tape.vecmat(h_prev, ids.w_r)?;
    let r = {
        let s = tape.add(xr, hr)?;
        tape.sigmoid(s)
    };
    let gated = tape.mul(r, h_prev)?;
    let xh = tape.vecmat(x, ids.u_h)?;
    let hh = tape.vecmat(gated, ids.w_h)?;
    let candidate = {
        let s = tape.add(xh, hh)?;
        tape.tanh(s)
    };
    let keep = {
        let nz = tape.neg(z);
        tape.add_scalar(nz, 1.0)
    };
    let old_part = tape.mul(keep, h_prev)?;
    let new_part = tape.mul(z, candidate)?;
    tape.add(old_part, new_part)
}

/// Bound tape ids for a standard LSTM cell with biases.
#[derive(Debug, Clone, Copy)]
pub struct LstmIds {
    pub u_i: TensorId,
    pub w_i: TensorId,
    pub b_i: TensorId,
    pub u_f: TensorId,
    pub w_f: TensorId,
    pub b_f: TensorId,
    pub u_g: TensorId,
    pub w_g: TensorId,
    pub b_g: TensorId,
    pub u_o: TensorId,
    pub w_o: TensorId,
    pub b_o: TensorId,
    pub hidden: usize,
}

pub fn lstm_params(
    params: &mut Params,
    prefix: &str,
    input_dim: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    for gate in ["i", "f", "g", "o"] {
        params.add_uniform(&format!("{prefix}.u_{gate}"), &[input_dim, hidden], rng)?;
        params.add_uniform(&format!("{prefix}.w_{gate}"), &[hidden, hidden], rng)?;
        params.add_zeros(&format!("{prefix}.b_{gate}"), &[hidden])?;
    }
    Ok(())
}

impl LstmIds {
    pub fn bind(tape: &mut Tape, params: &Params, prefix: &str) -> Result<LstmIds> {
        let hidden = params
            .get(&format!("{prefix}.b_i"))
            .ok_or_else(|| Error::validation(format!("missing LSTM parameters '{prefix}'")))?
            .shape[0];
        Ok(LstmIds {
            u_i: tape.param(params, &format!("{prefix}.u_i"))?,
            w_i: tape.param(params, &format!("{prefix}.w_i"))?,
            b_i: tape.param(params, &format!("{prefix}.b_i"))?,
            u_f: tape.param(params, &format!("{prefix}.u_f"))?,
            w_f: tape.param(params, &format!("{prefix}.w_f"))?,
            b_f: tape.param(params, &format!("{prefix}.b_f"))?,
            u_g: tape.param(params, &format!("{prefix}.u_g"))?,
            w_g: tape.param(params, &format!("{prefix}.w_g"))?,
            b_g: tape.param(params, &format!("{prefix}.b_g"))?,
            u_o: tape.param(params, &format!("{prefix}.u_o"))?,
            w_o: tape.param(params, &format!("{prefix}.w_o"))?,
            b_o: tape.param(params, &format!("{prefix}.b_o"))?,
            hidden,
        })
    }
}

fn lstm_gate(
    tape: &mut Tape,
    x: TensorId,
    h: TensorId,
    u: TensorId,
    w: TensorId,
    b: TensorId,
) -> Result<TensorId> {
    let xu = tape.vecmat(x, u)?;
    let hw = tape.vecmat(h, w)?;
    let s = tape.add(xu, hw)?;
    tape.add(s, b)
}

/// One LSTM step; returns `(h, c)`.
pub fn lstm_cell(
    tape: &mut Tape,
    ids: &LstmIds,
    x: TensorId,
    h_prev: TensorId,
    c_prev: TensorId,
) -> Result<(TensorId, TensorId)> {
    let i_pre = lstm_gate(tape, x, h_prev, ids.u_i, ids.w_i, ids.b_i)?;
    let i = tape.sigmoid(i_pre);
    let f_pre = lstm_gate(tape, x, h_prev, ids.u_f, ids.w_f, ids.b_f)?;
    let f = tape.sigmoid(f_pre);
    let g_pre = lstm_gate(tape, x, h_prev, ids.u_g, ids.w_g, ids.b_g)?;
    let g = tape.tanh(g_pre);
    let o_pre = lstm_gate(tape, x, h_prev, ids.u_o, ids.w_o, ids.b_o)?;
    let o = tape.sigmoid(o_pre);
    let fc = tape.mul(f, c_prev)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Unidirectional LSTM pass over a sequence, starting from zero state.
pub fn lstm_pass(tape: &mut Tape, ids: &LstmIds, inputs: &[TensorId]) -> Result<Vec<TensorId>> {
    let mut h = tape.zeros(ids.hidden);
    let mut c = tape.zeros(ids.hidden);
    let mut out = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (nh, nc) = lstm_cell(tape, ids, *x, h, c)?;
        h = nh;
        c = nc;
        out.push(h);
    }
    Ok(out)
}

/// Bidirectional encoding: a forward and a backward LSTM pass, outputs
/// concatenated per position. Output dim is twice the hidden size.
pub fn birnn_encode(
    tape: &mut Tape,
    fwd: &LstmIds,
    bwd: &LstmIds,
    inputs: &[TensorId],
) -> Result<Vec<TensorId>> {
    if inputs.is_empty() {
        return Err(Error::shape("birnn_encode", "empty sequence"));
    }
    let fwd_out = lstm_pass(tape, fwd, inputs)?;
    let reversed: Vec<TensorId> = inputs.iter().rev().copied().collect();
    let mut bwd_out = lstm_pass(tape, bwd, &reversed)?;
    bwd_out.reverse();
    fwd_out
        .into_iter()
        .zip(bwd_out)
        .map(|(f, b)| tape.concat(&[f, b]))
        .collect()
}

/// Dot-product attention: weights are a softmax over query-memory dot
/// products, the weighted sum is passed through one affine layer and tanh.
/// Returns `(weights, context)`.
pub fn attention(
    tape: &mut Tape,
    query: TensorId,
    memory: &[TensorId],
    w: TensorId,
    b: TensorId,
) -> Result<(TensorId, TensorId)> {
    if memory.is_empty() {
        return Err(Error::shape("attention", "empty memory"));
    }
    let scores: Result<Vec<TensorId>> = memory.iter().map(|m| tape.dot(query, *m)).collect();
    let stacked = tape.concat(&scores?)?;
    let weights = tape.softmax(stacked, 0)?;
    let weighted: Result<Vec<TensorId>> = memory
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let wi = tape.pick(weights, i)?;
            tape.scale(*m, wi)
        })
        .collect();
    let pooled = tape.add_n(&weighted?)?;
    let projected = affine(tape, pooled, w, b)?;
    let context = tape.tanh(projected);
    Ok((weights, context))
}

/// `x W + b`.
pub fn affine(tape: &mut Tape, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
    let xw = tape.vecmat(x, w)?;
    tape.add(xw, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn zero_gru(input_dim: usize, hidden: usize) -> Params {
        let mut params = Params::new();
        for gate in ["z", "r", "h"] {
            params
                .add_zeros(&format!("g.u_{gate}"), &[input_dim, hidden])
                .unwrap();
            params
                .add_zeros(&format!("g.w_{gate}"), &[hidden, hidden])
                .unwrap();
        }
        params
    }

    #[test]
    fn gru_with_zero_params_halves_hidden() {
        let params = zero_gru(2, 3);
        let mut tape = Tape::new();
        let ids = GruIds::bind(&mut tape, &params, "g").unwrap();
        let x = tape.vector(vec![0.7, -1.3]);
        let h = tape.vector(vec![2.0, -4.0, 6.0]);
        let out = gru_cell(&mut tape, &ids, x, h).unwrap();
        let v = tape.value(out);
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!((v[1] + 2.0).abs() < 1e-12);
        assert!((v[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gru_with_zero_hidden_stays_zero() {
        let params = zero_gru(2, 3);
        let mut tape = Tape::new();
        let ids = GruIds::bind(&mut tape, &params, "g").unwrap();
        let x = tape.vector(vec![0.7, -1.3]);
        let h = tape.zeros(3);
        let out = gru_cell(&mut tape, &ids, x, h).unwrap();
        assert!(tape.value(out).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gru_output_is_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = Params::new();
        gru_params(&mut params, "g", 4, 5, &mut rng).unwrap();
        for trial in 0..20 {
            let mut tape = Tape::new();
            let ids = GruIds::bind(&mut tape, &params, "g").unwrap();
            let x = tape.vector((0..4).map(|i| ((trial * 4 + i) as f64).sin()).collect());
            let hv: Vec<f64> = (0..5).map(|i| ((trial * 5 + i) as f64).cos()).collect();
            let h = tape.vector(hv.clone());
            let out = gru_cell(&mut tape, &ids, x, h).unwrap();
            // Recompute the candidate to check the convex-combination bound.
            let xh = tape.value(out).to_vec();
            for (k, o) in xh.iter().enumerate() {
                // o lies between h_prev[k] and some value in [-1, 1].
                let lo = hv[k].min(-1.0) - 1e-9;
                let hi = hv[k].max(1.0) + 1e-9;
                assert!(*o >= lo && *o <= hi, "coordinate {k}: {o} outside [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn birnn_single_element() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = Params::new();
        lstm_params(&mut params, "f", 3, 4, &mut rng).unwrap();
        lstm_params(&mut params, "b", 3, 4, &mut rng).unwrap();
        let mut tape = Tape::new();
        let fwd = LstmIds::bind(&mut tape, &params, "f").unwrap();
        let bwd = LstmIds::bind(&mut tape, &params, "b").unwrap();
        let x = tape.vector(vec![1.0, -1.0, 0.5]);
        let out = birnn_encode(&mut tape, &fwd, &bwd, &[x]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(tape.shape(out[0]), &[8]);
    }

    #[test]
    fn birnn_empty_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = Params::new();
        lstm_params(&mut params, "f", 3, 4, &mut rng).unwrap();
        lstm_params(&mut params, "b", 3, 4, &mut rng).unwrap();
        let mut tape = Tape::new();
        let fwd = LstmIds::bind(&mut tape, &params, "f").unwrap();
        let bwd = LstmIds::bind(&mut tape, &params, "b").unwrap();
        assert!(birnn_encode(&mut tape, &fwd, &bwd, &[]).is_err());
    }

    #[test]
    fn birnn_reversal_symmetry_with_tied_directions() {
        // With identical forward/backward parameters, reversing the input
        // reverses the outputs with their halves swapped.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = Params::new();
        lstm_params(&mut params, "f", 2, 3, &mut rng).unwrap();
        let mut tape = Tape::new();
        let ids = LstmIds::bind(&mut tape, &params, "f").unwrap();
        let xs: Vec<TensorId> = (0..4)
            .map(|i| tape.vector(vec![(i as f64).sin(), (i as f64).cos()]))
            .collect();
        let fwd_order = birnn_encode(&mut tape, &ids, &ids, &xs).unwrap();
        let rev: Vec<TensorId> = xs.iter().rev().copied().collect();
        let rev_order = birnn_encode(&mut tape, &ids, &ids, &rev).unwrap();
        for (i, out) in fwd_order.iter().enumerate() {
            let v = tape.value(*out);
            let r = tape.value(rev_order[rev_order.len() - 1 - i]);
            let h = v.len() / 2;
            for k in 0..h {
                assert!((v[k] - r[h + k]).abs() < 1e-12);
                assert!((v[h + k] - r[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_single_cell_weight_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = Params::new();
        params.add_uniform("a.w", &[3, 3], &mut rng).unwrap();
        params.add_zeros("a.b", &[3]).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&params, "a.w").unwrap();
        let b = tape.param(&params, "a.b").unwrap();
        let q = tape.vector(vec![0.3, -0.2, 0.9]);
        let m0 = tape.vector(vec![1.0, 0.5, -0.5]);
        let (weights, context) = attention(&mut tape, q, &[m0], w, b).unwrap();
        assert_eq!(tape.value(weights), &[1.0]);
        // context = tanh(affine(m0))
        let xw = tape.vecmat(m0, w).unwrap();
        let aff = tape.add(xw, b).unwrap();
        let expect = tape.tanh(aff);
        for (a, e) in tape.value(context).iter().zip(tape.value(expect)) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_identical_cells_split_evenly() {
        let mut params = Params::new();
        params.add_zeros("a.w", &[2, 2]).unwrap();
        params.add_zeros("a.b", &[2]).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&params, "a.w").unwrap();
        let b = tape.param(&params, "a.b").unwrap();
        let q = tape.vector(vec![0.4, 0.6]);
        let m0 = tape.vector(vec![1.0, 2.0]);
        let m1 = tape.vector(vec![1.0, 2.0]);
        let (weights, _) = attention(&mut tape, q, &[m0, m1], w, b).unwrap();
        assert_eq!(tape.value(weights), &[0.5, 0.5]);
    }

    #[test]
    fn attention_weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut params = Params::new();
        params.add_uniform("a.w", &[3, 3], &mut rng).unwrap();
        params.add_zeros("a.b", &[3]).unwrap();
        for trial in 0..30 {
            let mut tape = Tape::new();
            let w = tape.param(&params, "a.w").unwrap();
            let b = tape.param(&params, "a.b").unwrap();
            let q = tape.vector((0..3).map(|i| ((trial * 3 + i) as f64).sin() * 2.0).collect());
            let mem: Vec<TensorId> = (0..4)
                .map(|j| tape.vector((0..3).map(|i| ((trial + j * 7 + i) as f64).cos()).collect()))
                .collect();
            let (weights, _) = attention(&mut tape, q, &mem, w, b).unwrap();
            let sum: f64 = tape.value(weights).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(tape.value(weights).iter().all(|x| *x > 0.0));
        }
    }
}
