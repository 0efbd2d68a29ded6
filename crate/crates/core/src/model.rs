//! The full solver: panel encoder followed by the contrastive head.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::contrast::{self, ContrastConfig, Normalization, Reasoning, BN_MOMENTUM, PANELS_PER_PROBLEM};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::rpm::RpmProblem;
use crate::tensor::{Tape, Var};
use crate::vit::{self, EncoderConfig, Readout};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Tiny,
    Desk,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Tiny => "tiny",
            Preset::Desk => "desk",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Contrast,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(LossKind::CrossEntropy),
            "contrast" => Ok(LossKind::Contrast),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "ce",
            LossKind::Contrast => "contrast",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub contrast: ContrastConfig,
}

impl ModelConfig {
    pub fn preset(preset: Preset) -> Self {
        let (patch_side, d, layers, heads, mlp) = match preset {
            Preset::Tiny => (48, 16, 2, 2, 32),
            Preset::Desk => (16, 64, 4, 4, 128),
        };
        let encoder = EncoderConfig {
            image_side: crate::rpm::PANEL_SIDE,
            patch_side,
            channels: 1,
            embed_dim: d,
            num_layers: layers,
            num_heads: heads,
            mlp_hidden: mlp,
            readout: Readout::ClassToken,
        };
        ModelConfig {
            encoder,
            contrast: ContrastConfig {
                feature_dim: encoder.feature_dim(),
                embed_dim: d,
                num_rules: 8,
                score_hidden: d,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.contrast.validate()?;
        if self.contrast.feature_dim != self.encoder.feature_dim() {
            return Err(Error::Config(format!(
                "head expects {} features, encoder gives {}",
                self.contrast.feature_dim,
                self.encoder.feature_dim()
            )));
        }
        Ok(())
    }

    /// Flat integer encoding stored in checkpoints.
    pub fn to_values(&self) -> Vec<f64> {
        let e = &self.encoder;
        let c = &self.contrast;
        let readout = match e.readout {
            Readout::ClassToken => 0,
            Readout::Flatten => 1,
        };
        [
            e.image_side,
            e.patch_side,
            e.channels,
            e.embed_dim,
            e.num_layers,
            e.num_heads,
            e.mlp_hidden,
            readout,
            c.feature_dim,
            c.embed_dim,
            c.num_rules,
            c.score_hidden,
        ]
        .iter()
        .map(|&v| v as f64)
        .collect()
    }

    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.len() != 12 || v.iter().any(|x| x.fract() != 0.0 || *x < 0.0) {
            return Err(Error::Malformed(format!("model description {v:?}")));
        }
        let u: Vec<usize> = v.iter().map(|&x| x as usize).collect();
        let readout = match u[7] {
            0 => Readout::ClassToken,
            1 => Readout::Flatten,
            r => return Err(Error::Malformed(format!("readout code {r}"))),
        };
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                image_side: u[0],
                patch_side: u[1],
                channels: u[2],
                embed_dim: u[3],
                num_layers: u[4],
                num_heads: u[5],
                mlp_hidden: u[6],
                readout,
            },
            contrast: ContrastConfig {
                feature_dim: u[8],
                embed_dim: u[9],
                num_rules: u[10],
                score_hidden: u[11],
            },
        };
        cfg.validate().map_err(|e| Error::Malformed(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics inside `h`.
    Train,
    /// Running statistics inside `h`.
    Eval,
}

/// Parameters plus the running statistics of the batch norm inside `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub features: Var,
    pub reasoning: Reasoning,
}

impl Forward {
    pub fn scores(&self) -> Var {
        self.reasoning.scores
    }
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        vit::init_params(&mut params, &config.encoder, &mut rng);
        contrast::init_params(&mut params, &config.contrast, &mut rng);
        let df = config.contrast.embed_dim;
        Ok(Model {
            config,
            params,
            running_mean: vec![0.0; df],
            running_var: vec![1.0; df],
        })
    }

    /// Patch tokens of all 16 panels of every problem, `[B·16·T × patch_len]`.
    pub fn tokens(&self, problems: &[&RpmProblem]) -> Result<crate::Tensor> {
        let panels: Vec<Vec<f64>> = problems
            .iter()
            .flat_map(|p| (0..PANELS_PER_PROBLEM).map(move |i| p.panel_values(i)))
            .collect();
        vit::patchify_batch(panels.iter().map(Vec::as_slice), &self.config.encoder)
    }

    /// Records the full model on `tape` with already-bound parameters.
    pub fn forward_bound(
        &self,
        tape: &mut Tape,
        p: &Bound<'_>,
        tokens: Var,
        problems: usize,
        mode: Mode,
    ) -> Result<Forward> {
        if problems == 0 {
            return Err(Error::Contract("forward on an empty batch".into()));
        }
        let features = vit::encode_panels(tape, p, &self.config.encoder, tokens, problems * PANELS_PER_PROBLEM)?;
        let norm = match mode {
            Mode::Train => Normalization::Batch,
            Mode::Eval => Normalization::Running {
                mean: &self.running_mean,
                var: &self.running_var,
            },
        };
        let reasoning = contrast::reason(tape, p, features, problems, norm)?;
        Ok(Forward { features, reasoning })
    }

    /// Scores `[B × 8]` in evaluation mode, one row per problem.
    pub fn scores(&self, problems: &[&RpmProblem]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let p = self.params.bind_constant(&mut tape);
        let tokens = tape.constant(self.tokens(problems)?);
        let fwd = self.forward_bound(&mut tape, &p, tokens, problems.len(), Mode::Eval)?;
        let s = tape.value(fwd.scores());
        Ok(s.data().chunks(contrast::CANDIDATES).map(<[f64]>::to_vec).collect())
    }

    /// Mean loss over `problems` and the gradient of every parameter, in
    /// store order. Also returns the batch statistics seen by `h`.
    pub fn loss_and_grads(&self, problems: &[&RpmProblem], loss: LossKind) -> Result<Step> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let tokens = tape.constant(self.tokens(problems)?);
        let fwd = self.forward_bound(&mut tape, &p, tokens, problems.len(), Mode::Train)?;
        let targets: Vec<usize> = problems.iter().map(|q| usize::from(q.answer)).collect();
        let l = loss_node(&mut tape, fwd.scores(), &targets, loss)?;
        let value = tape.value(l).item()?;
        let scores = tape.value(fwd.scores()).data().to_vec();
        let batch_stats = fwd
            .reasoning
            .contrasted
            .norm
            .and_then(|n| tape.batch_stats(n))
            .map(|(m, v)| (m.to_vec(), v.to_vec()));
        let grads = tape.backward(l)?;
        let grads = p
            .vars()
            .iter()
            .zip(self.params.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
            .collect();
        Ok(Step {
            loss: value,
            scores,
            grads,
            batch_stats,
        })
    }

    /// Exponential moving average of the batch statistics.
    pub fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        for (r, &m) in self.running_mean.iter_mut().zip(mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, &v) in self.running_var.iter_mut().zip(var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
}

/// Result of one training-mode pass.
#[derive(Debug, Clone)]
pub struct Step {
    pub loss: f64,
    /// Row-major `[B × 8]`.
    pub scores: Vec<f64>,
    pub grads: Vec<crate::Tensor>,
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

/// Mean loss of the chosen kind over a batch of score rows.
pub fn loss_node(tape: &mut Tape, scores: Var, targets: &[usize], loss: LossKind) -> Result<Var> {
    match loss {
        LossKind::CrossEntropy => tape.cross_entropy(scores, targets),
        LossKind::Contrast => tape.contrast_loss(scores, targets),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rpm::{generate, Configuration};

    #[test]
    fn presets_are_valid() {
        for preset in [Preset::Tiny, Preset::Desk] {
            let cfg = ModelConfig::preset(preset);
            cfg.validate().unwrap();
            assert_eq!(ModelConfig::from_values(&cfg.to_values()).unwrap(), cfg);
        }
        assert_eq!(ModelConfig::preset(Preset::Tiny).encoder.num_patches(), 4);
        assert_eq!(ModelConfig::preset(Preset::Desk).encoder.num_patches(), 36);
    }

    #[test]
    fn tiny_forward_gives_finite_scores() {
        let model = Model::init(ModelConfig::preset(Preset::Tiny), 1).unwrap();
        let probs = generate(3, Configuration::Center, 2);
        let refs: Vec<&RpmProblem> = probs.iter().collect();
        let scores = model.scores(&refs).unwrap();
        assert_eq!(scores.len(), 3);
        assert!(scores.iter().flatten().all(|s| s.is_finite()));
        let step = model.loss_and_grads(&refs, LossKind::Contrast).unwrap();
        assert!(step.loss.is_finite());
        assert_eq!(step.grads.len(), model.params.len());
        assert!(step.batch_stats.is_some());
    }

    #[test]
    fn eval_scores_do_not_depend_on_batch_company() {
        let model = Model::init(ModelConfig::preset(Preset::Tiny), 4).unwrap();
        let probs = generate(3, Configuration::Grid2x2, 8);
        let all: Vec<&RpmProblem> = probs.iter().collect();
        let together = model.scores(&all).unwrap();
        let alone = model.scores(&all[1..2]).unwrap();
        for (a, b) in together[1].iter().zip(&alone[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
