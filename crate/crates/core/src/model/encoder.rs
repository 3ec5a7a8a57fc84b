//! Forward graph construction on a tape.

use crate::model::{Batch, Model, ModelError};
use crate::numerics::{Tape, Tensor, Var, LAYER_NORM_EPS};
use crate::rng::SeededRng;
use crate::scalar::Scalar;

/// A model's parameters recorded on one tape.
pub struct Graph<'m, T> {
    model: &'m Model<T>,
    vars: Vec<Var>,
}

type Result<T> = std::result::Result<T, ModelError>;

impl<'m, T: Scalar> Graph<'m, T> {
    /// Records every parameter; `trainable` decides whether they receive
    /// gradients.
    pub fn bind(model: &'m Model<T>, tape: &mut Tape<T>, trainable: bool) -> Result<Self> {
        let mut vars = Vec::with_capacity(model.params().len());
        for p in model.params().iter() {
            let v = if trainable { tape.param(p.value.clone())? } else { tape.constant(p.value.clone())? };
            vars.push(v);
        }
        Ok(Self { model, vars })
    }

    /// Tape handles in parameter-store order.
    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    fn p(&self, name: &str) -> Var {
        let i = self.model.params().position(name).unwrap_or_else(|| panic!("no parameter {name}"));
        self.vars[i]
    }

    fn linear(&self, tape: &mut Tape<T>, x: Var, prefix: &str) -> Result<Var> {
        let y = tape.matmul(x, self.p(&format!("{prefix}.weight")), false)?;
        Ok(tape.add_bias(y, self.p(&format!("{prefix}.bias")))?)
    }

    fn norm(&self, tape: &mut Tape<T>, x: Var, prefix: &str) -> Result<Var> {
        let gain = self.p(&format!("{prefix}.gain"));
        let bias = self.p(&format!("{prefix}.bias"));
        Ok(tape.layer_norm(x, gain, bias, T::lit(LAYER_NORM_EPS))?)
    }

    fn dropout(&self, tape: &mut Tape<T>, x: Var, rng: Option<&mut SeededRng>) -> Result<Var> {
        match rng {
            Some(r) => Ok(tape.dropout(x, self.model.config().dropout, r)?),
            None => Ok(x),
        }
    }

    /// Final hidden states `[batch * seq, hidden]`. Dropout is active only
    /// when `rng` is given.
    pub fn encode(&self, tape: &mut Tape<T>, batch: &Batch, mut rng: Option<&mut SeededRng>) -> Result<Var> {
        self.model.check_batch(batch)?;
        let rows: Vec<usize> = batch.ids.iter().map(|&id| id as usize).collect();
        let tok = tape.gather_rows(self.p("embeddings.token"), &rows)?;
        let positions: Vec<usize> = (0..batch.size).flat_map(|_| 0..batch.seq).collect();
        let pos = tape.gather_rows(self.p("embeddings.position"), &positions)?;
        let x = tape.add(tok, pos)?;
        let x = self.norm(tape, x, "embeddings.norm")?;
        let mut x = self.dropout(tape, x, rng.as_deref_mut())?;
        if !self.model.config().conv_layers.is_empty() {
            x = self.conv_frontend(tape, x, batch)?;
        }
        for b in 0..self.model.config().blocks {
            x = self.block(tape, x, batch, b, rng.as_deref_mut())?;
        }
        Ok(x)
    }

    /// Treats each sequence's `[seq, hidden]` embedding matrix as a
    /// one-channel image, runs the conv stack, projects back to one channel
    /// and adds the input. Pad rows are zeroed first so their ids cannot
    /// reach real positions through the kernel footprint.
    pub fn conv_frontend(&self, tape: &mut Tape<T>, x: Var, batch: &Batch) -> Result<Var> {
        let h = self.model.config().hidden();
        let mask: Vec<T> = batch.keep.iter().flat_map(|&k| std::iter::repeat_n(if k { T::one() } else { T::zero() }, h)).collect();
        let mask = tape.constant(Tensor::new(vec![batch.size * batch.seq, h], mask)?)?;
        let masked = tape.mul(x, mask)?;
        let mut y = tape.reshape(masked, vec![batch.size, 1, batch.seq, h])?;
        for i in 0..self.model.config().conv_layers.len() {
            y = tape.conv2d(y, self.p(&format!("conv.{i}.filters")), self.p(&format!("conv.{i}.bias")))?;
            y = tape.gelu(y)?;
        }
        let y = tape.conv2d(y, self.p("conv.proj.filters"), self.p("conv.proj.bias"))?;
        let y = tape.reshape(y, vec![batch.size * batch.seq, h])?;
        Ok(tape.add(x, y)?)
    }

    fn split_heads(&self, tape: &mut Tape<T>, x: Var, batch: &Batch) -> Result<Var> {
        let c = self.model.config();
        let y = tape.reshape(x, vec![batch.size, batch.seq, c.heads, c.head_dim])?;
        let y = tape.permute(y, &[0, 2, 1, 3])?;
        Ok(tape.reshape(y, vec![batch.size * c.heads, batch.seq, c.head_dim])?)
    }

    fn block(&self, tape: &mut Tape<T>, x: Var, batch: &Batch, b: usize, mut rng: Option<&mut SeededRng>) -> Result<Var> {
        let c = self.model.config();
        let pre = format!("block.{b}");
        let q = self.linear(tape, x, &format!("{pre}.attention.query"))?;
        let k = self.linear(tape, x, &format!("{pre}.attention.key"))?;
        let v = self.linear(tape, x, &format!("{pre}.attention.value"))?;
        let (q, k, v) = (self.split_heads(tape, q, batch)?, self.split_heads(tape, k, batch)?, self.split_heads(tape, v, batch)?);

        let scores = tape.batched_matmul(q, k, true)?;
        let scores = tape.scale(scores, T::one() / T::lit(c.head_dim as f64).sqrt())?;
        let keep: Vec<bool> = (0..batch.size)
            .flat_map(|s| std::iter::repeat_n(&batch.keep[s * batch.seq..(s + 1) * batch.seq], c.heads).flatten().copied())
            .collect();
        let probs = tape.masked_softmax(scores, &keep)?;
        let probs = self.dropout(tape, probs, rng.as_deref_mut())?;
        let ctx = tape.batched_matmul(probs, v, false)?;
        let ctx = tape.reshape(ctx, vec![batch.size, c.heads, batch.seq, c.head_dim])?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, vec![batch.size * batch.seq, c.hidden()])?;
        let attn = self.linear(tape, ctx, &format!("{pre}.attention.output"))?;
        let attn = self.dropout(tape, attn, rng.as_deref_mut())?;
        let x = tape.add(x, attn)?;
        let x = self.norm(tape, x, &format!("{pre}.attention.norm"))?;

        let inner = self.linear(tape, x, &format!("{pre}.ffn.inner"))?;
        let inner = tape.gelu(inner)?;
        let outer = self.linear(tape, inner, &format!("{pre}.ffn.outer"))?;
        let outer = self.dropout(tape, outer, rng)?;
        let x = tape.add(x, outer)?;
        self.norm(tape, x, &format!("{pre}.ffn.norm"))
    }

    /// Vocabulary logits `[rows.len(), vocab]` for the selected rows of the
    /// encoder output. The decoder shares the token embedding matrix.
    pub fn mlm_logits(&self, tape: &mut Tape<T>, hidden: Var, rows: &[usize]) -> Result<Var> {
        let x = tape.gather_rows(hidden, rows)?;
        let x = self.linear(tape, x, "mlm.transform")?;
        let x = tape.gelu(x)?;
        let x = self.norm(tape, x, "mlm.norm")?;
        let logits = tape.matmul(x, self.p("embeddings.token"), true)?;
        Ok(tape.add_bias(logits, self.p("mlm.decoder.bias"))?)
    }

    /// Raw label logits `[batch, num_labels]` from each `[CLS]` row.
    pub fn classify_logits(&self, tape: &mut Tape<T>, hidden: Var, batch: &Batch) -> Result<Var> {
        if self.model.config().num_labels == 0 {
            return Err(ModelError::NoClassifier);
        }
        let cls = tape.gather_rows(hidden, &batch.cls_rows())?;
        self.linear(tape, cls, "classifier")
    }
}
