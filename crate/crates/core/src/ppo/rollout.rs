use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::lm::model::TransformerLM;
use crate::lm::sample::Sampler;
use crate::lm::tokenizer::Vocabulary;
use crate::reward::{compute_reward, AgePredictor, Reward};

pub const PROMPT_TOKENS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RolloutSource {
    Trial,
    Demonstration,
}

/// One scored sentence in a PPO batch.
///
/// `generated` includes a sampled `<eos>`, which is trained like any other
/// action. `behavior_logprobs` and `values` are always the student's, even for
/// teacher-written demonstrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub prompt: Vec<usize>,
    pub generated: Vec<usize>,
    pub behavior_logprobs: Vec<f64>,
    pub values: Vec<f64>,
    pub terminal_reward: f64,
    pub reward: Reward,
    pub source: RolloutSource,
    /// Decoded prompt + continuation (what the predictor scored).
    pub text: String,
    /// Decoded continuation only.
    pub continuation: String,
}

impl Rollout {
    /// `<bos>` + prompt + generated.
    pub fn sequence(&self, bos: usize) -> Vec<usize> {
        let mut s = Vec::with_capacity(1 + self.prompt.len() + self.generated.len());
        s.push(bos);
        s.extend_from_slice(&self.prompt);
        s.extend_from_slice(&self.generated);
        s
    }

    /// Rows of the packed sequence whose outputs predict each generated token.
    pub fn action_rows(&self) -> std::ops::Range<usize> {
        let first = self.prompt.len();
        first..first + self.generated.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.generated.len();
        if self.behavior_logprobs.len() != n || self.values.len() != n {
            return Err(Error::Contract(format!(
                "rollout lengths disagree: {} tokens, {} log-probs, {} values",
                n,
                self.behavior_logprobs.len(),
                self.values.len()
            )));
        }
        if let Some(lp) = self.behavior_logprobs.iter().find(|lp| !(**lp <= 0.0)) {
            return Err(Error::Contract(format!("behavior log-prob {lp} is not <= 0")));
        }
        Ok(())
    }
}

/// Student log-probs and values at every generated position, one packed pass.
pub fn score_with_student(
    student: &TransformerLM,
    bos: usize,
    pairs: &[(&[usize], &[usize])],
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let seqs: Vec<Vec<usize>> = pairs
        .iter()
        .map(|(p, g)| std::iter::once(bos).chain(p.iter().copied()).chain(g.iter().copied()).collect())
        .collect();
    let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
    let mut tape = Tape::new();
    let h = student.hidden(&mut tape, &refs)?;
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (seg, (p, g)) in h.segments.iter().zip(pairs) {
        let first = seg.start + p.len();
        rows.extend(first..first + g.len());
        targets.extend_from_slice(g);
    }
    if rows.is_empty() {
        return Ok(pairs.iter().map(|_| (Vec::new(), Vec::new())).collect());
    }
    let sel = tape.select_rows(h.states, &rows)?;
    let logits = student.lm_logits(&mut tape, sel)?;
    let lp = tape.log_softmax_gather(logits, &targets)?;
    let vals = student.values(&mut tape, sel)?;
    let (lp, vals) = (tape.value(lp), tape.value(vals));
    let mut out = Vec::with_capacity(pairs.len());
    let mut at = 0;
    for (_, g) in pairs {
        out.push((lp[at..at + g.len()].to_vec(), vals[at..at + g.len()].to_vec()));
        at += g.len();
    }
    Ok(out)
}

fn build(
    student: &TransformerLM,
    vocab: &Vocabulary,
    predictor: &AgePredictor,
    step: u64,
    source: RolloutSource,
    prompts: &[Vec<usize>],
    full: Vec<Vec<usize>>,
) -> Result<Vec<Rollout>> {
    let generated: Vec<Vec<usize>> = full.iter().zip(prompts).map(|(f, p)| f[p.len()..].to_vec()).collect();
    let pairs: Vec<(&[usize], &[usize])> = prompts.iter().zip(&generated).map(|(p, g)| (p.as_slice(), g.as_slice())).collect();
    let scores = score_with_student(student, vocab.bos(), &pairs)?;
    let mut out = Vec::with_capacity(prompts.len());
    for ((prompt, gen), (lp, values)) in prompts.iter().zip(generated).zip(scores) {
        let text = vocab.decode(&[prompt.as_slice(), gen.as_slice()].concat());
        let continuation = vocab.decode(&gen);
        let reward = compute_reward(predictor, &text, step)?;
        let r = Rollout {
            prompt: prompt.clone(),
            generated: gen,
            behavior_logprobs: lp,
            values,
            terminal_reward: reward.value,
            reward,
            source,
            text,
            continuation,
        };
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

fn check_prompts(prompts: &[Vec<usize>]) -> Result<()> {
    if let Some(p) = prompts.iter().find(|p| p.len() != PROMPT_TOKENS) {
        return Err(Error::Contract(format!("prompt must have {PROMPT_TOKENS} tokens, got {}", p.len())));
    }
    Ok(())
}

/// Student continues each prompt; rollouts carry its own log-probs and values.
pub fn collect_trials<R: Rng + ?Sized>(
    student: &TransformerLM,
    sampler: &Sampler,
    vocab: &Vocabulary,
    prompts: &[Vec<usize>],
    predictor: &AgePredictor,
    step: u64,
    rng: &mut R,
) -> Result<Vec<Rollout>> {
    check_prompts(prompts)?;
    let full = sampler.generate(student, prompts, rng)?;
    build(student, vocab, predictor, step, RolloutSource::Trial, prompts, full)
}

/// Teacher continues each prompt (optionally under a masking sampler); the
/// student scores the teacher's tokens.
#[allow(clippy::too_many_arguments)]
pub fn collect_demonstrations<R: Rng + ?Sized>(
    teacher: &TransformerLM,
    student: &TransformerLM,
    sampler: &Sampler,
    vocab: &Vocabulary,
    prompts: &[Vec<usize>],
    predictor: &AgePredictor,
    step: u64,
    rng: &mut R,
) -> Result<Vec<Rollout>> {
    check_prompts(prompts)?;
    let full = sampler.generate(teacher, prompts, rng)?;
    build(student, vocab, predictor, step, RolloutSource::Demonstration, prompts, full)
}

pub fn collect_trial<R: Rng + ?Sized>(
    student: &TransformerLM,
    sampler: &Sampler,
    vocab: &Vocabulary,
    prompt: &[usize],
    predictor: &AgePredictor,
    step: u64,
    rng: &mut R,
) -> Result<Rollout> {
    Ok(collect_trials(student, sampler, vocab, &[prompt.to_vec()], predictor, step, rng)?.remove(0))
}

#[allow(clippy::too_many_arguments)]
pub fn collect_demonstration<R: Rng + ?Sized>(
    teacher: &TransformerLM,
    student: &TransformerLM,
    sampler: &Sampler,
    vocab: &Vocabulary,
    prompt: &[usize],
    predictor: &AgePredictor,
    step: u64,
    rng: &mut R,
) -> Result<Rollout> {
    Ok(collect_demonstrations(teacher, student, sampler, vocab, &[prompt.to_vec()], predictor, step, rng)?.remove(0))
}
