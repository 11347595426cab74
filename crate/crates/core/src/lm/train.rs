use crate::autodiff::{Adam, Tape, Var};
use crate::error::{Error, Result};
use crate::lm::model::TransformerLM;
use crate::lm::tokenizer::Vocabulary;

/// `<bos> text <eos>`, truncated to `context_len` tokens.
pub fn training_sequence(vocab: &Vocabulary, text: &str, context_len: usize) -> Vec<usize> {
    let mut seq = Vec::with_capacity(context_len);
    seq.push(vocab.bos());
    seq.extend(vocab.encode(text));
    seq.push(vocab.eos());
    seq.truncate(context_len);
    seq
}

/// Mean next-token negative log-likelihood over positions `1..len` of one sequence.
pub fn clm_loss(model: &TransformerLM, tape: &mut Tape, tokens: &[usize]) -> Result<Var> {
    clm_batch_loss(model, tape, &[tokens])
}

/// Token-weighted mean next-token NLL over a packed batch.
pub fn clm_batch_loss(model: &TransformerLM, tape: &mut Tape, batch: &[&[usize]]) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Input("empty CLM batch".into()));
    }
    if let Some(s) = batch.iter().find(|s| s.len() < 2) {
        return Err(Error::Contract(format!("CLM needs at least 2 tokens, got {}", s.len())));
    }
    let h = model.hidden(tape, batch)?;
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (seg, seq) in h.segments.iter().zip(batch) {
        rows.extend(seg.start..seg.end - 1);
        targets.extend_from_slice(&seq[1..]);
    }
    let sel = tape.select_rows(h.states, &rows)?;
    let logits = model.lm_logits(tape, sel)?;
    tape.softmax_cross_entropy(logits, &targets)
}

/// One optimizer step on the mean batch loss; returns the pre-step loss.
pub fn clm_step(model: &mut TransformerLM, opt: &mut Adam, batch: &[Vec<usize>]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Input("empty CLM batch".into()));
    }
    let refs: Vec<&[usize]> = batch.iter().map(Vec::as_slice).collect();
    let mut tape = Tape::new();
    let loss = clm_batch_loss(model, &mut tape, &refs)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Training(format!("non-finite CLM loss {value}")));
    }
    tape.backward(loss)?;
    let params = model.params_mut();
    params.zero_grad();
    tape.flush_into(params)?;
    opt.step(params)?;
    params.zero_grad();
    Ok(value)
}

/// Mean CLM loss without gradients.
pub fn eval_loss(model: &TransformerLM, batch: &[Vec<usize>]) -> Result<f64> {
    let refs: Vec<&[usize]> = batch.iter().map(Vec::as_slice).collect();
    let mut tape = Tape::new();
    let loss = clm_batch_loss(model, &mut tape, &refs)?;
    Ok(tape.scalar(loss))
}
