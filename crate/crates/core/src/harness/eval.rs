use std::collections::BTreeMap;

use crate::contrast::{self, CANDIDATES};
use crate::error::{Error, Result};
use crate::model::{LossKind, Model};
use crate::rpm::{Configuration, RpmProblem};

/// Expected accuracy of guessing uniformly among the candidates.
pub const RANDOM_BASELINE: f64 = 1.0 / CANDIDATES as f64;

/// Problems scored per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 32;

/// Correct and total counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub overall: Tally,
    pub per_config: BTreeMap<Configuration, Tally>,
    /// Mean loss in evaluation mode.
    pub loss: f64,
    pub predictions: Vec<usize>,
}

impl Evaluation {
    /// Accuracy bookkeeping for given predictions; `loss` is left at zero.
    pub fn from_predictions(problems: &[&RpmProblem], predictions: Vec<usize>) -> Result<Self> {
        if problems.len() != predictions.len() {
            return Err(Error::Contract(format!(
                "{} predictions for {} problems",
                predictions.len(),
                problems.len()
            )));
        }
        let mut overall = Tally::default();
        let mut per_config: BTreeMap<Configuration, Tally> = BTreeMap::new();
        for (p, &pred) in problems.iter().zip(&predictions) {
            let hit = usize::from(p.answer) == pred;
            for t in [&mut overall, per_config.entry(p.config).or_default()] {
                t.total += 1;
                t.correct += usize::from(hit);
            }
        }
        Ok(Evaluation {
            overall,
            per_config,
            loss: 0.0,
            predictions,
        })
    }

    pub fn accuracy(&self) -> f64 {
        self.overall.accuracy()
    }
}

/// Scores every problem with fixed parameters and running statistics.
pub fn evaluate(model: &Model, problems: &[&RpmProblem], loss: LossKind) -> Result<Evaluation> {
    if problems.is_empty() {
        return Err(Error::Contract("evaluation on an empty dataset".into()));
    }
    let mut predictions = Vec::with_capacity(problems.len());
    let mut total_loss = 0.0;
    for chunk in problems.chunks(EVAL_CHUNK) {
        for (p, scores) in chunk.iter().zip(model.scores(chunk)?) {
            let answer = usize::from(p.answer);
            total_loss += match loss {
                LossKind::CrossEntropy => contrast::cross_entropy_loss(&scores, answer)?,
                LossKind::Contrast => contrast::contrast_loss(&scores, answer)?,
            };
            predictions.push(contrast::predict(&scores));
        }
    }
    let mut eval = Evaluation::from_predictions(problems, predictions)?;
    eval.loss = total_loss / problems.len() as f64;
    Ok(eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rpm::generate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn oracle_predictions_score_perfectly_and_weights_add_up() {
        let mut ps = generate(6, Configuration::Center, 1);
        ps.extend(generate(4, Configuration::Grid2x2, 2));
        let refs: Vec<&RpmProblem> = ps.iter().collect();
        let oracle: Vec<usize> = ps.iter().map(|p| p.satisfying_candidates()[0]).collect();
        let e = Evaluation::from_predictions(&refs, oracle).unwrap();
        assert_eq!(e.accuracy(), 1.0);

        let wrong: Vec<usize> = ps.iter().enumerate().map(|(i, p)| if i % 3 == 0 { usize::from(p.answer) } else { (usize::from(p.answer) + 1) % 8 }).collect();
        let e = Evaluation::from_predictions(&refs, wrong).unwrap();
        let weighted: f64 = e.per_config.values().map(|t| t.accuracy() * t.total as f64).sum::<f64>() / ps.len() as f64;
        assert!((weighted - e.accuracy()).abs() < 1e-12);
    }

    #[test]
    fn random_guessing_is_near_baseline() {
        let ps = generate(100, Configuration::Center, 11);
        let refs: Vec<&RpmProblem> = ps.iter().cycle().take(5000).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let guesses = (0..refs.len()).map(|_| rng.random_range(0..8)).collect();
        let acc = Evaluation::from_predictions(&refs, guesses).unwrap().accuracy();
        assert!((acc - RANDOM_BASELINE).abs() < 0.02, "{acc}");
    }
}
