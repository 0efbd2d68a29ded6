//! Browser bindings: generate a puzzle, inspect its panels and rules, and
//! score it with a randomly initialised tiny model.

use wasm_bindgen::prelude::*;

use vitcn::contrast::predict;
use vitcn::model::{Model, ModelConfig, Preset};
use vitcn::rpm::{rule_check, sample_problem, Configuration, RpmProblem, PANEL_PIXELS, PANEL_SIDE};

fn js_err(e: vitcn::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn panel_side() -> usize {
    PANEL_SIDE
}

/// One generated problem plus an optional scorer.
#[wasm_bindgen]
pub struct Puzzle {
    problem: RpmProblem,
    model: Option<Model>,
}

#[wasm_bindgen]
impl Puzzle {
    /// `config` is `center` or `grid2`.
    #[wasm_bindgen(constructor)]
    pub fn new(config: &str, seed: u64) -> Result<Puzzle, JsError> {
        let config = Configuration::parse(config).map_err(js_err)?;
        let problem = sample_problem(seed, config).map_err(js_err)?;
        Ok(Puzzle { problem, model: None })
    }

    pub fn answer(&self) -> usize {
        usize::from(self.problem.answer)
    }

    /// Panels 0..8 are the context (the ninth cell is missing), 8..16 the
    /// candidates. RGBA bytes, ready for `ImageData`.
    pub fn panel_rgba(&self, index: usize) -> Result<Vec<u8>, JsError> {
        if index >= 16 {
            return Err(JsError::new(&format!("panel {index} out of range")));
        }
        let mut out = Vec::with_capacity(PANEL_PIXELS * 4);
        for &g in self.problem.panel(index) {
            out.extend_from_slice(&[g, g, g, 255]);
        }
        Ok(out)
    }

    /// Rule per attribute, e.g. `shape progression(+1), size constant, color distribute_three`.
    pub fn rules(&self) -> String {
        let r = self.problem.rules;
        format!("shape {}, size {}, color {}", r.shape, r.size, r.color)
    }

    /// Whether the matrix completed with `candidate` follows every rule.
    pub fn satisfies(&self, candidate: usize) -> bool {
        candidate < 8 && rule_check(&self.problem.completed(candidate), &self.problem.rules)
    }

    /// Reorder the candidates: new slot `i` shows old candidate `perm[i]`.
    pub fn permute(&mut self, perm: Vec<usize>) -> Result<(), JsError> {
        let mut seen = [false; 8];
        if perm.len() != 8 || perm.iter().any(|&p| p >= 8 || std::mem::replace(&mut seen[p], true)) {
            return Err(JsError::new("expected a permutation of 0..8"));
        }
        self.problem = self.problem.permute_candidates(&perm);
        Ok(())
    }

    /// Load a fresh untrained tiny model.
    pub fn init_model(&mut self, seed: u64) -> Result<(), JsError> {
        self.model = Some(Model::init(ModelConfig::preset(Preset::Tiny), seed).map_err(js_err)?);
        Ok(())
    }

    /// Eight candidate scores from the loaded model.
    pub fn scores(&self) -> Result<Vec<f64>, JsError> {
        let model = self.model.as_ref().ok_or_else(|| JsError::new("no model loaded"))?;
        let mut s = model.scores(&[&self.problem]).map_err(js_err)?;
        Ok(s.remove(0))
    }

    /// Candidate the model would pick.
    pub fn prediction(&self) -> Result<usize, JsError> {
        Ok(predict(&self.scores()?))
    }
}
