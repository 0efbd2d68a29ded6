//! Contrastive reasoning head.
//!
//! For a problem with context features `O` (8 panels) and candidate features
//! `A` (8 panels) the head builds one embedding `F_{O∪a}` per candidate,
//! adds a rule embedding inferred from the context, subtracts the shared term
//! `h(Σ_{a'} F_{O∪a'})` from every candidate and scores the result with two
//! heads, `s_a = f(c_a) − b(c_a)`.
//!
//! All tape functions take a batch of `problems`; panel features are laid out
//! as `[problems·16 × D]` with the 8 context rows first, then the 8
//! candidates. Candidate-indexed outputs are `[problems·8 × ·]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{truncated_normal, Bound, ParamStore, INIT_STD};
use crate::tensor::{kernels, Tape, Tensor, Var};

pub const CONTEXT_PANELS: usize = 8;
pub const CANDIDATES: usize = 8;
pub const PANELS_PER_PROBLEM: usize = CONTEXT_PANELS + CANDIDATES;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContrastConfig {
    /// Panel feature width coming out of the encoder.
    pub feature_dim: usize,
    /// Width of `F_{O∪a}`.
    pub embed_dim: usize,
    /// Rows of the rule codebook.
    pub num_rules: usize,
    /// Hidden width of the `f` and `b` score heads.
    pub score_hidden: usize,
}

impl ContrastConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.feature_dim, self.embed_dim, self.num_rules, self.score_hidden].contains(&0) {
            return Err(Error::Config(format!("contrast sizes must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Normalisation applied inside `h` before its linear map.
#[derive(Debug, Clone, Copy)]
pub enum Normalization<'a> {
    /// Statistics of the current batch (training).
    Batch,
    /// Fixed running mean and variance (evaluation).
    Running { mean: &'a [f64], var: &'a [f64] },
    /// No normalisation; `h` is just its linear map.
    Identity,
}

pub fn init_params<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ContrastConfig, rng: &mut R) {
    let (dp, df) = (cfg.feature_dim, cfg.embed_dim);
    store.insert(
        "cn.assemble.w",
        truncated_normal(rng, &[(CONTEXT_PANELS + 1) * dp, df], INIT_STD),
    );
    store.insert("cn.assemble.b", Tensor::zeros([df]));
    store.insert("cn.rule.w", truncated_normal(rng, &[dp, cfg.num_rules], INIT_STD));
    store.insert("cn.rule.b", Tensor::zeros([cfg.num_rules]));
    store.insert("cn.rule.codebook", truncated_normal(rng, &[cfg.num_rules, df], INIT_STD));
    store.insert("cn.h.bn.gamma", Tensor::full([df], 1.0));
    store.insert("cn.h.bn.beta", Tensor::zeros([df]));
    store.insert("cn.h.w", truncated_normal(rng, &[df, df], INIT_STD));
    store.insert("cn.h.b", Tensor::zeros([df]));
    // f starts at the 1/8 sigmoid prior. Cross-entropy ignores the shift; the
    // contrast loss otherwise spends its first steps moving the score level
    // and stalls.
    let prior = -((CANDIDATES - 1) as f64).ln();
    for (head, bias) in [("f", prior), ("b", 0.0)] {
        store.insert(format!("cn.{head}.w1"), truncated_normal(rng, &[df, cfg.score_hidden], INIT_STD));
        store.insert(format!("cn.{head}.b1"), Tensor::zeros([cfg.score_hidden]));
        store.insert(format!("cn.{head}.w2"), truncated_normal(rng, &[cfg.score_hidden, 1], INIT_STD));
        store.insert(format!("cn.{head}.b2"), Tensor::full([1], bias));
    }
}

fn check_features(tape: &Tape, feats: Var, problems: usize) -> Result<()> {
    let (rows, _) = tape.value(feats).dims2()?;
    if problems == 0 || rows != problems * PANELS_PER_PROBLEM {
        return Err(Error::shape(
            "contrast",
            format!("{rows} panel features for {problems} problems"),
        ));
    }
    Ok(())
}

/// `F_{O∪a} = g(concat(o₁, …, o₈, a))` for every candidate, `[problems·8 × D_f]`.
pub fn assemble_candidate_embeddings(tape: &mut Tape, p: &Bound<'_>, feats: Var, problems: usize) -> Result<Var> {
    check_features(tape, feats, problems)?;
    let (_, dp) = tape.value(feats).dims2()?;
    let mut rows = Vec::with_capacity(problems * CANDIDATES * (CONTEXT_PANELS + 1));
    for b in 0..problems {
        let base = b * PANELS_PER_PROBLEM;
        for a in 0..CANDIDATES {
            rows.extend(base..base + CONTEXT_PANELS);
            rows.push(base + CONTEXT_PANELS + a);
        }
    }
    let stacked = tape.gather_rows(feats, rows)?;
    let joined = tape.reshape(stacked, [problems * CANDIDATES, (CONTEXT_PANELS + 1) * dp])?;
    tape.linear(joined, p.var("cn.assemble.w")?, Some(p.var("cn.assemble.b")?))
}

/// Output of the inference branch.
#[derive(Debug, Clone, Copy)]
pub struct RuleEmbedding {
    /// Attention over the codebook, `[problems × K]`.
    pub weights: Var,
    /// Convex combination of codebook rows, `[problems × D_f]`.
    pub rule: Var,
}

/// Soft attention over the rule codebook driven by the mean context feature.
pub fn infer_rule_embedding(tape: &mut Tape, p: &Bound<'_>, feats: Var, problems: usize) -> Result<RuleEmbedding> {
    check_features(tape, feats, problems)?;
    let rows = (0..problems)
        .flat_map(|b| (0..CONTEXT_PANELS).map(move |c| b * PANELS_PER_PROBLEM + c))
        .collect();
    let context = tape.gather_rows(feats, rows)?;
    let pooled = tape.group_mean(context, CONTEXT_PANELS)?;
    let logits = tape.linear(pooled, p.var("cn.rule.w")?, Some(p.var("cn.rule.b")?))?;
    let weights = tape.softmax(logits, 1)?;
    let rule = tape.matmul(weights, p.var("cn.rule.codebook")?)?;
    Ok(RuleEmbedding { weights, rule })
}

/// Output of the contrast module.
#[derive(Debug, Clone, Copy)]
pub struct Contrasted {
    /// `F_{O∪a} − h(Σ)`, `[problems·8 × D_f]`.
    pub output: Var,
    /// `Σ_{a'} F_{O∪a'}`, `[problems × D_f]`.
    pub aggregate: Var,
    /// `h(Σ)`, `[problems × D_f]`.
    pub shared: Var,
    /// The normalisation node inside `h` (absent for [`Normalization::Identity`]).
    pub norm: Option<Var>,
}

/// `Contrast(F_{O∪a}) = F_{O∪a} − h(Σ_{a'∈A} F_{O∪a'})`.
///
/// The aggregate and `h` of it are computed once per problem and the same
/// row is subtracted from all eight candidates.
pub fn contrast(
    tape: &mut Tape,
    p: &Bound<'_>,
    embeddings: Var,
    problems: usize,
    norm: Normalization<'_>,
) -> Result<Contrasted> {
    let (rows, _) = tape.value(embeddings).dims2()?;
    if rows != problems * CANDIDATES {
        return Err(Error::shape("contrast", format!("{rows} embeddings for {problems} problems")));
    }
    let aggregate = tape.group_sum(embeddings, CANDIDATES)?;
    let (gamma, beta) = (p.var("cn.h.bn.gamma")?, p.var("cn.h.bn.beta")?);
    let norm_node = match norm {
        Normalization::Batch => Some(tape.batch_norm(aggregate, gamma, beta, BN_EPS, None)?),
        Normalization::Running { mean, var } => {
            Some(tape.batch_norm(aggregate, gamma, beta, BN_EPS, Some((mean, var)))?)
        }
        Normalization::Identity => None,
    };
    let shared = tape.linear(norm_node.unwrap_or(aggregate), p.var("cn.h.w")?, Some(p.var("cn.h.b")?))?;
    let spread = tape.repeat_rows(shared, CANDIDATES)?;
    let output = tape.sub(embeddings, spread)?;
    Ok(Contrasted {
        output,
        aggregate,
        shared,
        norm: norm_node,
    })
}

fn head(tape: &mut Tape, p: &Bound<'_>, name: &str, x: Var) -> Result<Var> {
    let h = tape.linear(x, p.var(&format!("cn.{name}.w1"))?, Some(p.var(&format!("cn.{name}.b1"))?))?;
    let h = tape.gelu(h);
    tape.linear(h, p.var(&format!("cn.{name}.w2"))?, Some(p.var(&format!("cn.{name}.b2"))?))
}

/// `s_a = f(c_a) − b(c_a)` per candidate, reshaped to `[problems × 8]`.
pub fn score(tape: &mut Tape, p: &Bound<'_>, contrasted: Var, problems: usize) -> Result<Var> {
    let f = head(tape, p, "f", contrasted)?;
    let b = head(tape, p, "b", contrasted)?;
    let s = tape.sub(f, b)?;
    tape.reshape(s, [problems, CANDIDATES])
}

/// Intermediate handles of a full reasoning pass.
#[derive(Debug, Clone, Copy)]
pub struct Reasoning {
    pub embeddings: Var,
    pub rule: RuleEmbedding,
    pub contrasted: Contrasted,
    pub scores: Var,
}

/// Assembly, rule feedback, contrast and scoring in one pass.
pub fn reason(tape: &mut Tape, p: &Bound<'_>, feats: Var, problems: usize, norm: Normalization<'_>) -> Result<Reasoning> {
    let embeddings = assemble_candidate_embeddings(tape, p, feats, problems)?;
    let rule = infer_rule_embedding(tape, p, feats, problems)?;
    let spread = tape.repeat_rows(rule.rule, CANDIDATES)?;
    let informed = tape.add(embeddings, spread)?;
    let contrasted = contrast(tape, p, informed, problems, norm)?;
    let scores = score(tape, p, contrasted.output, problems)?;
    Ok(Reasoning {
        embeddings,
        rule,
        contrasted,
        scores,
    })
}

fn check_answer(scores: &[f64], answer: usize) -> Result<()> {
    if answer >= scores.len() {
        return Err(Error::Contract(format!(
            "answer index {answer} outside [0, {})",
            scores.len()
        )));
    }
    Ok(())
}

/// `−log σ(s⋆) − Σ_{a≠⋆} log(1 − σ(s_a))` for one problem.
pub fn contrast_loss(scores: &[f64], answer: usize) -> Result<f64> {
    check_answer(scores, answer)?;
    Ok(crate::tensor::contrast_row(scores, answer))
}

/// `−log softmax(scores)[answer]` for one problem.
pub fn cross_entropy_loss(scores: &[f64], answer: usize) -> Result<f64> {
    check_answer(scores, answer)?;
    Ok(kernels::log_sum_exp(scores) - scores[answer])
}

/// Index of the highest score; ties go to the lowest index.
pub fn predict(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
