//! Finite-difference check of the whole model, from pixels to loss.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::model::{loss_node, LossKind, Mode, Model, ModelConfig};
use crate::params::Bound;
use crate::rpm::{generate, Configuration, RpmProblem};
use crate::tensor::gradcheck::{check_coords, Report, DEFAULT_STEP};
use crate::tensor::{Tensor, Var};

/// Largest relative error tolerated by the whole-model check.
pub const MODEL_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct ModelCheck {
    pub report: Report,
    /// Name of every checked input; the last one is the pixel tokens.
    pub names: Vec<String>,
    /// Draw and loss of the worst coordinate.
    pub worst_draw: Option<(usize, LossKind)>,
}

impl ModelCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.report.max_rel_error()
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < MODEL_TOLERANCE
    }

    pub fn describe_worst(&self) -> String {
        match (&self.report.worst, self.worst_draw) {
            (Some(w), Some((draw, loss))) => format!(
                "{}[{}] in draw {draw} with {loss} loss: analytic {:.12e}, numeric {:.12e}, relative error {:.3e}",
                self.names[w.input], w.index, w.analytic, w.numeric, w.rel_error
            ),
            _ => "nothing checked".into(),
        }
    }
}

/// Parameters spread wider than the initialisation so every nonlinearity is
/// exercised away from its linear regime.
fn perturbed_model(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Model> {
    let mut model = Model::init(config, rng.random())?;
    let noise = Normal::new(0.0, 0.3).expect("positive std");
    for t in model.params.tensors_mut() {
        for v in t.data_mut() {
            *v += noise.sample(rng);
        }
    }
    Ok(model)
}

/// `draws` random parameter/input draws of two problems each, both loss
/// variants, `per_tensor` sampled coordinates of every parameter tensor and
/// of the pixel input.
pub fn check_model(config: ModelConfig, seed: u64, draws: usize, per_tensor: usize) -> Result<ModelCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ModelCheck {
        report: Report::default(),
        names: Vec::new(),
        worst_draw: None,
    };
    for draw in 0..draws {
        let model = perturbed_model(config, &mut rng)?;
        let config_kind = if draw % 2 == 0 { Configuration::Center } else { Configuration::Grid2x2 };
        let problems = generate(2, config_kind, rng.random());
        let refs: Vec<&RpmProblem> = problems.iter().collect();
        let targets: Vec<usize> = problems.iter().map(|p| usize::from(p.answer)).collect();
        let tokens = model.tokens(&refs)?;

        let mut inputs: Vec<Tensor> = model.params.tensors().cloned().collect();
        inputs.push(tokens);
        if out.names.is_empty() {
            out.names = model.params.iter().map(|(n, _)| n.to_string()).collect();
            out.names.push("pixels".into());
        }
        let mut coords = Vec::new();
        for (i, t) in inputs.iter().enumerate() {
            let k = per_tensor.min(t.numel());
            coords.extend(sample(&mut rng, t.numel(), k).into_iter().map(|j| (i, j)));
        }
        let n_params = model.params.len();
        for loss in [LossKind::CrossEntropy, LossKind::Contrast] {
            let report = check_coords(&inputs, &coords, DEFAULT_STEP, |tape, vars: &[Var]| {
                let bound = Bound::from_vars(&model.params, vars[..n_params].to_vec())?;
                let fwd = model.forward_bound(tape, &bound, vars[n_params], 2, Mode::Train)?;
                loss_node(tape, fwd.scores(), &targets, loss)
            })?;
            if report.max_rel_error() > out.report.max_rel_error() || out.worst_draw.is_none() {
                out.worst_draw = Some((draw, loss));
            }
            out.report.merge(report);
        }
    }
    Ok(out)
}
