//! Gated recurrent sentence classifier: the per-step cell update, a
//! length-masked final-state readout, and the linear softmax head.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// Gate weights and biases. Each weight is `[(hidden + input_dim), hidden]`
/// and multiplies the concatenation `[h_{t-1}, x_t]` from the left.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_forget: Tensor,
    pub w_input: Tensor,
    pub w_cell: Tensor,
    pub w_output: Tensor,
    pub b_forget: Tensor,
    pub b_input: Tensor,
    pub b_cell: Tensor,
    pub b_output: Tensor,
    pub hidden: usize,
}

impl LstmParams {
    /// Seeded uniform `[-0.08, 0.08]` weights; forget bias starts at +1 to
    /// keep the carry path open early in training, other biases at zero.
    pub fn random<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let shape = vec![hidden + input_dim, hidden];
        let w = |rng: &mut R| Tensor::uniform(shape.clone(), -0.08, 0.08, rng);
        LstmParams {
            w_forget: w(rng),
            w_input: w(rng),
            w_cell: w(rng),
            w_output: w(rng),
            b_forget: Tensor::new(vec![hidden], vec![1.0; hidden]).expect("static shape"),
            b_input: Tensor::zeros(vec![hidden]),
            b_cell: Tensor::zeros(vec![hidden]),
            b_output: Tensor::zeros(vec![hidden]),
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_forget.shape()[0] - self.hidden
    }
}

/// Final linear layer mapping the masked hidden state to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl OutputHead {
    pub fn random<R: Rng>(hidden: usize, classes: usize, rng: &mut R) -> Self {
        OutputHead {
            weight: Tensor::uniform(vec![hidden, classes], -0.08, 0.08, rng),
            bias: Tensor::zeros(vec![classes]),
        }
    }

    pub fn classes(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Tape handles for one model's LSTM parameters.
#[derive(Debug, Clone, Copy)]
pub struct LstmParamIds {
    pub w_forget: TensorId,
    pub w_input: TensorId,
    pub w_cell: TensorId,
    pub w_output: TensorId,
    pub b_forget: TensorId,
    pub b_input: TensorId,
    pub b_cell: TensorId,
    pub b_output: TensorId,
}

impl LstmParamIds {
    pub fn insert(tape: &mut Tape, params: &LstmParams) -> Self {
        LstmParamIds {
            w_forget: tape.parameter(&params.w_forget),
            w_input: tape.parameter(&params.w_input),
            w_cell: tape.parameter(&params.w_cell),
            w_output: tape.parameter(&params.w_output),
            b_forget: tape.parameter(&params.b_forget),
            b_input: tape.parameter(&params.b_input),
            b_cell: tape.parameter(&params.b_cell),
            b_output: tape.parameter(&params.b_output),
        }
    }
}

/// One timestep's outputs, gates included for inspection.
#[derive(Debug, Clone, Copy)]
pub struct LstmStep {
    pub hidden: TensorId,
    pub cell: TensorId,
    pub forget_gate: TensorId,
    pub input_gate: TensorId,
    pub output_gate: TensorId,
    pub candidate: TensorId,
}

/// Advances the cell one step:
/// `f = σ(W_f·[h,x]+b_f)`, `i = σ(W_i·[h,x]+b_i)`,
/// `c' = f∘c + i∘tanh(W_c·[h,x]+b_c)`, `o = σ(W_o·[h,x]+b_o)`,
/// `h' = o∘tanh(c')`. The concatenation puts `h` first.
pub fn lstm_step(
    tape: &mut Tape,
    input_t: TensorId,
    h_prev: TensorId,
    c_prev: TensorId,
    params: &LstmParamIds,
) -> Result<LstmStep> {
    let joined = tape.concat_cols(h_prev, input_t)?;

    let gate = |tape: &mut Tape, w: TensorId, b: TensorId| -> Result<TensorId> {
        let z = tape.matmul(joined, w)?;
        let z = tape.add_bias(z, b)?;
        tape.sigmoid(z)
    };
    let forget_gate = gate(tape, params.w_forget, params.b_forget)?;
    let input_gate = gate(tape, params.w_input, params.b_input)?;

    let candidate = {
        let z = tape.matmul(joined, params.w_cell)?;
        let z = tape.add_bias(z, params.b_cell)?;
        tape.tanh(z)?
    };

    let kept = tape.mul(forget_gate, c_prev)?;
    let written = tape.mul(input_gate, candidate)?;
    let cell = tape.add(kept, written)?;

    let output_gate = gate(tape, params.w_output, params.b_output)?;
    let cell_tanh = tape.tanh(cell)?;
    let hidden = tape.mul(output_gate, cell_tanh)?;

    Ok(LstmStep { hidden, cell, forget_gate, input_gate, output_gate, candidate })
}

/// Result of running the classifier over a batch.
#[derive(Debug, Clone, Copy)]
pub struct ClassifyOut {
    /// `[S, hidden]`: each row is the hidden state at that sentence's true
    /// length.
    pub final_hidden: TensorId,
    /// `[S, K]` pre-softmax scores.
    pub logits: TensorId,
    /// `[S, K]` row-normalized probabilities.
    pub probabilities: TensorId,
}

/// Runs the cell over `integrated` (`[S, M, d]`), reads each sentence's
/// hidden state at `t = true_length` so padding cannot influence the
/// prediction, and applies the linear softmax head.
pub fn classify(
    tape: &mut Tape,
    integrated: TensorId,
    true_lengths: &[usize],
    lstm: &LstmParamIds,
    head_weight: TensorId,
    head_bias: TensorId,
) -> Result<ClassifyOut> {
    let shape = tape.shape(integrated).to_vec();
    if shape.len() != 3 || shape[0] != true_lengths.len() {
        return Err(Error::DimensionMismatch {
            op: "classify",
            left: shape,
            right: vec![true_lengths.len()],
        });
    }
    let (sentences, max_steps) = (shape[0], shape[1]);
    let hidden = tape.shape(lstm.b_forget)[0];
    for (row, &len) in true_lengths.iter().enumerate() {
        if len == 0 || len > max_steps {
            return Err(Error::Data(format!(
                "true_length {len} at row {row} out of range 1..={max_steps}"
            )));
        }
    }

    let zeros = Tensor::zeros(vec![sentences, hidden]);
    let mut h = tape.constant(&zeros);
    let mut c = tape.constant(&zeros);
    let mut h_final = tape.constant(&zeros);

    // Running past the longest sentence cannot change any masked readout,
    // so stop there.
    let steps = *true_lengths.iter().max().expect("non-empty batch");
    for t in 0..steps {
        let x_t = tape.time_slice(integrated, t)?;
        let step = lstm_step(tape, x_t, h, c, lstm)?;
        h = step.hidden;
        c = step.cell;

        if true_lengths.contains(&(t + 1)) {
            let mut mask = vec![0.0; sentences * hidden];
            for (row, &len) in true_lengths.iter().enumerate() {
                if len == t + 1 {
                    mask[row * hidden..(row + 1) * hidden].fill(1.0);
                }
            }
            let mask = tape.constant_from(vec![sentences, hidden], mask)?;
            let contribution = tape.mul(h, mask)?;
            h_final = tape.add(h_final, contribution)?;
        }
    }

    let scores = tape.matmul(h_final, head_weight)?;
    let logits = tape.add_bias(scores, head_bias)?;
    let probabilities = tape.softmax(logits)?;
    Ok(ClassifyOut { final_hidden: h_final, logits, probabilities })
}

/// Per-row argmax over a `[S, K]` probability matrix; ties break toward the
/// lowest class id.
pub fn predict(probabilities: &Tensor) -> Vec<usize> {
    let shape = probabilities.shape();
    debug_assert_eq!(shape.len(), 2);
    let (rows, cols) = (shape[0], shape[1]);
    let data = probabilities.data();
    (0..rows)
        .map(|r| {
            let row = &data[r * cols..(r + 1) * cols];
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn insert_zero_params(tape: &mut Tape, input_dim: usize, hidden: usize) -> LstmParamIds {
        let zero_w = Tensor::zeros(vec![hidden + input_dim, hidden]);
        let zero_b = Tensor::zeros(vec![hidden]);
        LstmParamIds {
            w_forget: tape.parameter(&zero_w),
            w_input: tape.parameter(&zero_w),
            w_cell: tape.parameter(&zero_w),
            w_output: tape.parameter(&zero_w),
            b_forget: tape.parameter(&zero_b),
            b_input: tape.parameter(&zero_b),
            b_cell: tape.parameter(&zero_b),
            b_output: tape.parameter(&zero_b),
        }
    }

    #[test]
    fn zero_parameters_keep_state_at_zero() {
        let (input_dim, hidden) = (3, 4);
        let mut tape = Tape::new();
        let params = insert_zero_params(&mut tape, input_dim, hidden);
        let x = tape.constant(&Tensor::uniform(
            vec![2, input_dim],
            -1.0,
            1.0,
            &mut ChaCha8Rng::seed_from_u64(1),
        ));
        let h0 = tape.constant(&Tensor::zeros(vec![2, hidden]));
        let c0 = tape.constant(&Tensor::zeros(vec![2, hidden]));
        let step = lstm_step(&mut tape, x, h0, c0, &params).unwrap();
        assert!(tape.value(step.cell).iter().all(|&v| v == 0.0));
        assert!(tape.value(step.hidden).iter().all(|&v| v == 0.0));
        // gates sit at sigma(0) = 0.5
        assert!(tape.value(step.forget_gate).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn saturated_forget_open_input_closed_carries_cell_state() {
        let (input_dim, hidden) = (2, 3);
        let mut tape = Tape::new();
        let zero_w = Tensor::zeros(vec![hidden + input_dim, hidden]);
        let params = LstmParamIds {
            w_forget: tape.parameter(&zero_w),
            w_input: tape.parameter(&zero_w),
            w_cell: tape.parameter(&zero_w),
            w_output: tape.parameter(&zero_w),
            // +40 saturates sigma to ~1, -40 to ~0
            b_forget: tape.parameter(&Tensor::new(vec![hidden], vec![40.0; hidden]).unwrap()),
            b_input: tape.parameter(&Tensor::new(vec![hidden], vec![-40.0; hidden]).unwrap()),
            b_cell: tape.parameter(&Tensor::zeros(vec![hidden])),
            b_output: tape.parameter(&Tensor::zeros(vec![hidden])),
        };
        let c_prev_data = vec![0.3, -0.7, 1.5];
        let x = tape.constant(&Tensor::zeros(vec![1, input_dim]));
        let h0 = tape.constant(&Tensor::zeros(vec![1, hidden]));
        let c0 = tape.constant(&Tensor::new(vec![1, hidden], c_prev_data.clone()).unwrap());
        let step = lstm_step(&mut tape, x, h0, c0, &params).unwrap();
        for (got, want) in tape.value(step.cell).iter().zip(&c_prev_data) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    /// Direct evaluation of the gate equations for one sentence, two steps.
    #[test]
    fn two_steps_match_direct_formula_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (input_dim, hidden) = (rng.gen_range(1..4), rng.gen_range(1..4));
            let joined_dim = hidden + input_dim;
            let mk = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> {
                (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
            };
            let w_f = mk(&mut rng, joined_dim * hidden);
            let w_i = mk(&mut rng, joined_dim * hidden);
            let w_c = mk(&mut rng, joined_dim * hidden);
            let w_o = mk(&mut rng, joined_dim * hidden);
            let b_f = mk(&mut rng, hidden);
            let b_i = mk(&mut rng, hidden);
            let b_c = mk(&mut rng, hidden);
            let b_o = mk(&mut rng, hidden);
            let x1 = mk(&mut rng, input_dim);
            let x2 = mk(&mut rng, input_dim);

            // oracle: plain vector-matrix products on [h, x]
            let affine = |w: &[f64], b: &[f64], h: &[f64], x: &[f64]| -> Vec<f64> {
                let joined: Vec<f64> = h.iter().chain(x.iter()).copied().collect();
                (0..hidden)
                    .map(|k| {
                        let mut acc = b[k];
                        for (idx, &v) in joined.iter().enumerate() {
                            acc += v * w[idx * hidden + k];
                        }
                        acc
                    })
                    .collect()
            };
            let mut h_ref = vec![0.0; hidden];
            let mut c_ref = vec![0.0; hidden];
            for x in [&x1, &x2] {
                let f: Vec<f64> =
                    affine(&w_f, &b_f, &h_ref, x).iter().map(|&z| sigmoid(z)).collect();
                let i: Vec<f64> =
                    affine(&w_i, &b_i, &h_ref, x).iter().map(|&z| sigmoid(z)).collect();
                let g: Vec<f64> =
                    affine(&w_c, &b_c, &h_ref, x).iter().map(|&z| z.tanh()).collect();
                let o: Vec<f64> =
                    affine(&w_o, &b_o, &h_ref, x).iter().map(|&z| sigmoid(z)).collect();
                let mut c_new = vec![0.0; hidden];
                let mut h_new = vec![0.0; hidden];
                for k in 0..hidden {
                    c_new[k] = f[k] * c_ref[k] + i[k] * g[k];
                    h_new[k] = o[k] * c_new[k].tanh();
                }
                c_ref = c_new;
                h_ref = h_new;
            }

            let mut tape = Tape::new();
            let shape_w = vec![joined_dim, hidden];
            let params = LstmParamIds {
                w_forget: tape.constant_from(shape_w.clone(), w_f).unwrap(),
                w_input: tape.constant_from(shape_w.clone(), w_i).unwrap(),
                w_cell: tape.constant_from(shape_w.clone(), w_c).unwrap(),
                w_output: tape.constant_from(shape_w, w_o).unwrap(),
                b_forget: tape.constant_from(vec![hidden], b_f).unwrap(),
                b_input: tape.constant_from(vec![hidden], b_i).unwrap(),
                b_cell: tape.constant_from(vec![hidden], b_c).unwrap(),
                b_output: tape.constant_from(vec![hidden], b_o).unwrap(),
            };
            let mut h = tape.constant(&Tensor::zeros(vec![1, hidden]));
            let mut c = tape.constant(&Tensor::zeros(vec![1, hidden]));
            for x in [&x1, &x2] {
                let xt = tape.constant_from(vec![1, input_dim], x.clone()).unwrap();
                let step = lstm_step(&mut tape, xt, h, c, &params).unwrap();
                h = step.hidden;
                c = step.cell;
            }
            for (got, want) in tape.value(h).iter().zip(&h_ref) {
                assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
            }
            for (got, want) in tape.value(c).iter().zip(&c_ref) {
                assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn gate_outputs_stay_in_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..25 {
            let (input_dim, hidden, s_n) = (3, 4, 2);
            let params = LstmParams::random(input_dim, hidden, &mut rng);
            let mut tape = Tape::new();
            let ids = LstmParamIds::insert(&mut tape, &params);
            let x = tape.constant(&Tensor::uniform(vec![s_n, input_dim], -5.0, 5.0, &mut rng));
            let h0 = tape.constant(&Tensor::zeros(vec![s_n, hidden]));
            let c0 = tape.constant(&Tensor::zeros(vec![s_n, hidden]));
            let step = lstm_step(&mut tape, x, h0, c0, &ids).unwrap();
            for gate in [step.forget_gate, step.input_gate, step.output_gate] {
                assert!(tape.value(gate).iter().all(|&v| v > 0.0 && v < 1.0));
            }
            assert!(tape.value(step.candidate).iter().all(|&v| v > -1.0 && v < 1.0));
            // |h| < 1 because it is a product of a gate and a tanh
            assert!(tape.value(step.hidden).iter().all(|&v| v.abs() < 1.0));
            // |c after one step from zero state| <= 1
            assert!(tape.value(step.cell).iter().all(|&v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn cell_state_grows_at_most_linearly_in_steps() {
        // |C_t| <= t: each step adds at most 1 in magnitude through the
        // gated candidate, and the forget gate only shrinks the carry
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (input_dim, hidden, s_n, steps) = (3, 5, 2, 7);
        let params = LstmParams::random(input_dim, hidden, &mut rng);
        let mut tape = Tape::new();
        let ids = LstmParamIds::insert(&mut tape, &params);
        let mut h = tape.constant(&Tensor::zeros(vec![s_n, hidden]));
        let mut c = tape.constant(&Tensor::zeros(vec![s_n, hidden]));
        for t in 1..=steps {
            let x = tape.constant(&Tensor::uniform(vec![s_n, input_dim], -4.0, 4.0, &mut rng));
            let step = lstm_step(&mut tape, x, h, c, &ids).unwrap();
            h = step.hidden;
            c = step.cell;
            assert!(tape.value(c).iter().all(|&v| v.abs() <= t as f64));
            assert!(tape.value(h).iter().all(|&v| v.abs() < 1.0));
        }
    }

    fn run_classify(
        integrated: &Tensor,
        true_lengths: &[usize],
        params: &LstmParams,
        head: &OutputHead,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let ids = LstmParamIds::insert(&mut tape, params);
        let hw = tape.parameter(&head.weight);
        let hb = tape.parameter(&head.bias);
        let x = tape.constant(integrated);
        let out = classify(&mut tape, x, true_lengths, &ids, hw, hb).unwrap();
        (tape.value(out.probabilities).to_vec(), tape.value(out.logits).to_vec())
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (hidden, classes, d) = (3, 2, 2);
        let params = LstmParams::random(d, hidden, &mut rng);
        let head = OutputHead {
            weight: Tensor::zeros(vec![hidden, classes]),
            bias: Tensor::zeros(vec![classes]),
        };
        let x = Tensor::uniform(vec![2, 3, d], -1.0, 1.0, &mut rng);
        let (probs, _) = run_classify(&x, &[2, 3], &params, &head);
        assert!(probs.iter().all(|&p| (p - 0.5).abs() < 1e-12));
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (hidden, classes, d) = (4, 5, 3);
        let params = LstmParams::random(d, hidden, &mut rng);
        let head = OutputHead::random(hidden, classes, &mut rng);
        let x = Tensor::uniform(vec![3, 4, d], -1.0, 1.0, &mut rng);
        let (probs, _) = run_classify(&x, &[4, 1, 2], &params, &head);
        for r in 0..3 {
            let sum: f64 = probs[r * classes..(r + 1) * classes].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn padding_beyond_true_length_never_changes_the_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (hidden, classes, d) = (4, 3, 2);
        let params = LstmParams::random(d, hidden, &mut rng);
        let head = OutputHead::random(hidden, classes, &mut rng);

        let content = Tensor::uniform(vec![1, 2, d], -1.0, 1.0, &mut rng);
        // same two real steps, extra columns of arbitrary padding rows
        let mut widened = vec![0.0; 5 * d];
        widened[..2 * d].copy_from_slice(content.data());
        for v in widened[2 * d..].iter_mut() {
            *v = rng.gen_range(-9.0..9.0);
        }
        let widened = Tensor::new(vec![1, 5, d], widened).unwrap();

        let (probs_a, logits_a) = run_classify(&content, &[2], &params, &head);
        let (probs_b, logits_b) = run_classify(&widened, &[2], &params, &head);
        assert_eq!(probs_a, probs_b, "padding must be invisible");
        assert_eq!(logits_a, logits_b);
    }

    #[test]
    fn classify_rejects_bad_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = LstmParams::random(2, 3, &mut rng);
        let head = OutputHead::random(3, 2, &mut rng);
        let x = Tensor::uniform(vec![1, 2, 2], -1.0, 1.0, &mut rng);

        let mut tape = Tape::new();
        let ids = LstmParamIds::insert(&mut tape, &params);
        let hw = tape.parameter(&head.weight);
        let hb = tape.parameter(&head.bias);
        let xt = tape.constant(&x);
        assert!(matches!(
            classify(&mut tape, xt, &[0], &ids, hw, hb),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            classify(&mut tape, xt, &[3], &ids, hw, hb),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn predict_takes_argmax_with_low_id_ties() {
        let probs = Tensor::new(vec![3, 3], vec![
            0.1, 0.7, 0.2, //
            0.5, 0.5, 0.0, //
            0.2, 0.2, 0.6,
        ])
        .unwrap();
        assert_eq!(predict(&probs), vec![1, 0, 2]);
    }

    #[test]
    fn predict_is_invariant_under_monotone_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let data: Vec<f64> = (0..12).map(|_| rng.gen_range(0.01..1.0)).collect();
            let probs = Tensor::new(vec![3, 4], data.clone()).unwrap();
            let transformed =
                Tensor::new(vec![3, 4], data.iter().map(|&v| (v * 3.0).exp()).collect()).unwrap();
            assert_eq!(predict(&probs), predict(&transformed));
        }
    }

    #[test]
    fn full_backward_matches_finite_differences_on_tiny_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (s_n, m, d, hidden, classes) = (2, 3, 2, 4, 3);
        let true_lengths = [3usize, 2];
        let labels = [1usize, 0];
        let x = Tensor::uniform(vec![s_n, m, d], -1.0, 1.0, &mut rng);
        let params = LstmParams::random(d, hidden, &mut rng);
        let head = OutputHead::random(hidden, classes, &mut rng);

        let build = |tape: &mut Tape, p: &LstmParams, h: &OutputHead| {
            let ids = LstmParamIds::insert(tape, p);
            let hw = tape.parameter(&h.weight);
            let hb = tape.parameter(&h.bias);
            let xt = tape.constant(&x);
            let out = classify(tape, xt, &true_lengths, &ids, hw, hb).unwrap();
            let loss = tape.softmax_cross_entropy(out.logits, &labels).unwrap();
            (loss, ids, hw, hb)
        };

        let mut tape = Tape::new();
        let (loss, ids, hw, hb) = build(&mut tape, &params, &head);
        tape.backward(loss).unwrap();

        let eps = 1e-5;
        // probe a representative scatter of coordinates in every tensor
        let probes: Vec<(&str, usize)> = vec![
            ("w_forget", 0),
            ("w_forget", 7),
            ("w_input", 3),
            ("w_cell", 5),
            ("w_output", 9),
            ("b_forget", 1),
            ("b_input", 2),
            ("b_cell", 0),
            ("b_output", 3),
            ("head_w", 4),
            ("head_b", 2),
        ];
        for (name, idx) in probes {
            let analytic = match name {
                "w_forget" => tape.grad(ids.w_forget).unwrap()[idx],
                "w_input" => tape.grad(ids.w_input).unwrap()[idx],
                "w_cell" => tape.grad(ids.w_cell).unwrap()[idx],
                "w_output" => tape.grad(ids.w_output).unwrap()[idx],
                "b_forget" => tape.grad(ids.b_forget).unwrap()[idx],
                "b_input" => tape.grad(ids.b_input).unwrap()[idx],
                "b_cell" => tape.grad(ids.b_cell).unwrap()[idx],
                "b_output" => tape.grad(ids.b_output).unwrap()[idx],
                "head_w" => tape.grad(hw).unwrap()[idx],
                "head_b" => tape.grad(hb).unwrap()[idx],
                _ => unreachable!(),
            };
            let probe = |delta: f64| {
                let mut p = params.clone();
                let mut h = head.clone();
                let slot = match name {
                    "w_forget" => &mut p.w_forget,
                    "w_input" => &mut p.w_input,
                    "w_cell" => &mut p.w_cell,
                    "w_output" => &mut p.w_output,
                    "b_forget" => &mut p.b_forget,
                    "b_input" => &mut p.b_input,
                    "b_cell" => &mut p.b_cell,
                    "b_output" => &mut p.b_output,
                    "head_w" => &mut h.weight,
                    "head_b" => &mut h.bias,
                    _ => unreachable!(),
                };
                slot.data_mut()[idx] += delta;
                let mut tape = Tape::new();
                let (loss, ..) = build(&mut tape, &p, &h);
                tape.scalar_value(loss)
            };
            let numeric = (probe(eps) - probe(-eps)) / (2.0 * eps);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-4, "{name}[{idx}]: analytic={analytic} numeric={numeric}");
        }
    }
}
