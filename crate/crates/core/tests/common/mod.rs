#![allow(dead_code)]

use rand::Rng;

use tiny_lm::model::{build_model, Batch, ConvLayerSpec, Graph, Model, ModelConfig};
use tiny_lm::numerics::{Tape, Tensor, Var};
use tiny_lm::rng::seeded;
use tiny_lm::tokenizer::TokenId;

pub const STEP: f64 = 1e-5;
/// Denominator floor: gradients smaller than this are compared absolutely.
pub const FLOOR: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = seeded(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

type Build<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Var + 'a;

/// Reduces any output to a scalar with fixed random weights.
fn scalar_loss(tape: &mut Tape<f64>, out: Var) -> Var {
    if tape.shape(out).is_empty() {
        return out;
    }
    let w = random_tensor(tape.shape(out), 99);
    let w = tape.constant(w).unwrap();
    let p = tape.mul(out, w).unwrap();
    tape.sum(p).unwrap()
}

fn loss_value(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone()).unwrap()).collect();
    let out = build(&mut tape, &vars);
    let loss = scalar_loss(&mut tape, out);
    tape.value(loss).item()
}

/// Largest relative error between backpropagated and central-difference
/// gradients over every input element.
pub fn op_gradient_error(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone()).unwrap()).collect();
    let out = build(&mut tape, &vars);
    let loss = scalar_loss(&mut tape, out);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let g = grads.wrt(*v);
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (loss_value(&plus, build) - loss_value(&minus, build)) / (2.0 * STEP);
            worst = worst.max(rel_err(g.data()[j], numeric));
        }
    }
    worst
}

/// Every primitive on small random inputs, by name.
pub fn primitive_gradient_errors() -> Vec<(&'static str, f64)> {
    let t = random_tensor;
    let mut out: Vec<(&'static str, f64)> = Vec::new();
    let mut check = |name, inputs: Vec<Tensor<f64>>, build: &Build| out.push((name, op_gradient_error(&inputs, build)));

    check("add", vec![t(&[3, 4], 1), t(&[3, 4], 2)], &|tp, v| tp.add(v[0], v[1]).unwrap());
    check("add_bias", vec![t(&[3, 4], 3), t(&[4], 4)], &|tp, v| tp.add_bias(v[0], v[1]).unwrap());
    check("mul", vec![t(&[3, 4], 5), t(&[3, 4], 6)], &|tp, v| tp.mul(v[0], v[1]).unwrap());
    check("scale", vec![t(&[5], 7)], &|tp, v| tp.scale(v[0], -1.7).unwrap());
    check("matmul", vec![t(&[3, 4], 8), t(&[4, 5], 9)], &|tp, v| tp.matmul(v[0], v[1], false).unwrap());
    check("matmul_bt", vec![t(&[3, 4], 10), t(&[5, 4], 11)], &|tp, v| tp.matmul(v[0], v[1], true).unwrap());
    check("batched_matmul", vec![t(&[2, 3, 4], 12), t(&[2, 4, 2], 13)], &|tp, v| {
        tp.batched_matmul(v[0], v[1], false).unwrap()
    });
    check("batched_matmul_bt", vec![t(&[2, 3, 4], 14), t(&[2, 5, 4], 15)], &|tp, v| {
        tp.batched_matmul(v[0], v[1], true).unwrap()
    });
    check("reshape", vec![t(&[2, 6], 16)], &|tp, v| tp.reshape(v[0], vec![3, 4]).unwrap());
    check("permute", vec![t(&[2, 3, 4], 17)], &|tp, v| tp.permute(v[0], &[1, 2, 0]).unwrap());
    check("gather_rows", vec![t(&[5, 3], 18)], &|tp, v| tp.gather_rows(v[0], &[4, 0, 4, 2]).unwrap());
    check("gelu", vec![t(&[7], 19).map(|x| 3.0 * x)], &|tp, v| tp.gelu(v[0]).unwrap());
    check("layer_norm", vec![t(&[3, 6], 20), t(&[6], 21), t(&[6], 22)], &|tp, v| {
        tp.layer_norm(v[0], v[1], v[2], 1e-12).unwrap()
    });
    check("softmax_last", vec![t(&[3, 5], 23)], &|tp, v| tp.softmax(v[0], 1).unwrap());
    check("softmax_first", vec![t(&[3, 5], 24)], &|tp, v| tp.softmax(v[0], 0).unwrap());
    check("masked_softmax", vec![t(&[2, 3, 4], 25)], &|tp, v| {
        tp.masked_softmax(v[0], &[true, true, false, true, true, false, false, false]).unwrap()
    });
    check("dropout", vec![t(&[4, 5], 26)], &|tp, v| tp.dropout(v[0], 0.3, &mut seeded(5)).unwrap());
    check("conv2d", vec![t(&[2, 2, 5, 4], 27), t(&[3, 2, 3, 3], 28), t(&[3], 29)], &|tp, v| {
        tp.conv2d(v[0], v[1], v[2]).unwrap()
    });
    check("conv2d_tall", vec![t(&[1, 1, 6, 3], 30), t(&[2, 1, 4, 1], 31), t(&[2], 32)], &|tp, v| {
        tp.conv2d(v[0], v[1], v[2]).unwrap()
    });
    check("sum", vec![t(&[3, 2], 33)], &|tp, v| tp.sum(v[0]).unwrap());
    check("cross_entropy", vec![t(&[4, 3], 34)], &|tp, v| {
        tp.cross_entropy(v[0], &[Some(2), None, Some(0), Some(2)]).unwrap().0
    });
    out
}

/// BERT-1 with vocabulary 50, hidden 16 (two heads), sequence 16 and one
/// 3x3 conv layer.
pub fn micro_bert1() -> ModelConfig {
    ModelConfig {
        blocks: 1,
        heads: 2,
        head_dim: 8,
        ffn_mult: 4,
        conv_layers: vec![ConvLayerSpec::new(2, 3, 3)],
        vocab_size: 50,
        max_positions: 16,
        num_labels: 3,
        dropout: 0.1,
    }
}

fn micro_batch() -> Batch {
    let mut rng = seeded(11);
    let lens = [16, 11];
    let mut ids = Vec::new();
    let mut keep = Vec::new();
    for &len in &lens {
        for i in 0..16 {
            let real = i < len;
            ids.push(if real { rng.random_range(5..50) as TokenId } else { 0 });
            keep.push(real);
        }
    }
    Batch::new(ids, keep, lens.len(), 16).unwrap()
}

/// Classification plus masked-token loss, with a dropout mask fixed by
/// its seed.
fn model_loss(model: &Model<f64>, tape: &mut Tape<f64>, batch: &Batch) -> (Var, Vec<Var>) {
    let g = Graph::bind(model, tape, true).unwrap();
    let mut rng = seeded(3);
    let h = g.encode(tape, batch, Some(&mut rng)).unwrap();
    let logits = g.classify_logits(tape, h, batch).unwrap();
    let (cls, _) = tape.cross_entropy(logits, &[Some(1), Some(2)]).unwrap();
    let rows = [2, 5, 20, 26];
    let mlm = g.mlm_logits(tape, h, &rows).unwrap();
    let (mlm, _) = tape.cross_entropy(mlm, &[Some(7), Some(30), Some(49), Some(5)]).unwrap();
    (tape.add(cls, mlm).unwrap(), g.param_vars().to_vec())
}

/// Largest relative gradient error over every parameter of the micro
/// BERT-1, with the number of scalars checked.
pub fn model_gradient_error() -> (f64, usize) {
    let config = micro_bert1();
    let model = build_model::<f64>(&config, 17).unwrap();
    let batch = micro_batch();
    let mut tape = Tape::new();
    let (loss, vars) = model_loss(&model, &mut tape, &batch);
    let grads = tape.backward(loss).unwrap();
    let value = |m: &Model<f64>| {
        let mut tape = Tape::new();
        let (loss, _) = model_loss(m, &mut tape, &batch);
        tape.value(loss).item()
    };
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (p, v) in vars.iter().enumerate() {
        let g = grads.wrt(*v);
        for j in 0..g.len() {
            let mut plus = model.clone();
            plus.params_mut().iter_mut().nth(p).unwrap().value.data_mut()[j] += STEP;
            let mut minus = model.clone();
            minus.params_mut().iter_mut().nth(p).unwrap().value.data_mut()[j] -= STEP;
            let numeric = (value(&plus) - value(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(g.data()[j], numeric));
            checked += 1;
        }
    }
    (worst, checked)
}
