//! Procedural Raven-style matrix problems.

pub mod dataset;
pub mod generate;
pub mod render;
pub mod spec;

pub use dataset::{read_dataset, write_dataset};
pub use generate::{generate, sample_problem};
pub use render::{render, render_bytes};
pub use spec::{rule_check, Attribute, Configuration, Entity, PanelSpec, Rule, RuleSpec, Shape, PANEL_SIDE};

pub const PANEL_PIXELS: usize = PANEL_SIDE * PANEL_SIDE;
pub const CANDIDATES: usize = 8;

/// A rendered problem with its latent description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RpmProblem {
    pub config: Configuration,
    /// Position of the correct candidate.
    pub answer: u8,
    pub rules: RuleSpec,
    /// The full 3×3 matrix, row-major; cell 8 is the hidden answer.
    pub matrix: Vec<PanelSpec>,
    pub candidates: Vec<PanelSpec>,
    /// 16 panels of `PANEL_PIXELS` bytes: 8 context, then 8 candidates.
    pub rasters: Vec<u8>,
}

impl RpmProblem {
    /// Bytes of panel `i` in `0..16`.
    pub fn panel(&self, i: usize) -> &[u8] {
        &self.rasters[i * PANEL_PIXELS..(i + 1) * PANEL_PIXELS]
    }

    /// Panel `i` scaled to `[0, 1]`.
    pub fn panel_values(&self, i: usize) -> Vec<f64> {
        self.panel(i).iter().map(|&b| f64::from(b) / 255.0).collect()
    }

    /// Matrix with candidate `c` placed in the missing cell.
    pub fn completed(&self, c: usize) -> Vec<PanelSpec> {
        let mut m = self.matrix[..8].to_vec();
        m.push(self.candidates[c].clone());
        m
    }

    /// Candidates whose completion satisfies the rules.
    pub fn satisfying_candidates(&self) -> Vec<usize> {
        (0..self.candidates.len())
            .filter(|&c| rule_check(&self.completed(c), &self.rules))
            .collect()
    }

    /// Reorders candidates so new position `i` holds old candidate `perm[i]`.
    pub fn permute_candidates(&self, perm: &[usize]) -> RpmProblem {
        assert_eq!(perm.len(), CANDIDATES);
        let mut out = self.clone();
        for (i, &src) in perm.iter().enumerate() {
            out.candidates[i] = self.candidates[src].clone();
            out.rasters[(8 + i) * PANEL_PIXELS..(9 + i) * PANEL_PIXELS].copy_from_slice(self.panel(8 + src));
        }
        out.answer = perm.iter().position(|&s| s == usize::from(self.answer)).expect("perm is a permutation") as u8;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exactly_one_candidate_satisfies() {
        for config in Configuration::ALL {
            for p in generate(40, config, 5) {
                assert_eq!(p.satisfying_candidates(), vec![usize::from(p.answer)]);
            }
        }
    }

    #[test]
    fn permutation_moves_the_answer() {
        let p = sample_problem(4, Configuration::Center).unwrap();
        let perm = [7, 6, 5, 4, 3, 2, 1, 0];
        let q = p.permute_candidates(&perm);
        assert_eq!(usize::from(q.answer), 7 - usize::from(p.answer));
        assert_eq!(q.satisfying_candidates(), vec![usize::from(q.answer)]);
        assert_eq!(q.panel(8), p.panel(15));
    }
}
