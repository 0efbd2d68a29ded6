use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::render::render_bytes;
use super::spec::{rule_check, Attribute, Configuration, Entity, PanelSpec, Rule, RuleSpec, Shape};
use super::{RpmProblem, CANDIDATES};
use crate::error::{Error, Result};

/// Distractor proposals allowed per problem before giving up.
pub const MAX_ATTEMPTS: usize = 100;

const ALL_RULES: [Rule; 6] = [
    Rule::Constant,
    Rule::Progression(1),
    Rule::Progression(-1),
    Rule::Progression(2),
    Rule::Progression(-2),
    Rule::DistributeThree,
];

fn draw_rule(rng: &mut impl Rng, attr: Attribute) -> Rule {
    let feasible: Vec<Rule> = ALL_RULES.iter().copied().filter(|r| r.feasible(attr)).collect();
    *feasible.choose(rng).expect("constant is always feasible")
}

/// Three rows of three levels for one attribute.
fn draw_levels(rng: &mut impl Rng, attr: Attribute, rule: Rule) -> [[u8; 3]; 3] {
    let (lo, hi) = attr.range();
    let mut rows = [[0u8; 3]; 3];
    match rule {
        Rule::Constant => {
            for row in &mut rows {
                *row = [rng.random_range(lo..=hi); 3];
            }
        }
        Rule::Progression(d) => {
            let span = 2 * i16::from(d);
            let (lo, hi) = (i16::from(lo), i16::from(hi));
            let (first, last) = if span > 0 { (lo, hi - span) } else { (lo - span, hi) };
            for row in &mut rows {
                let a = rng.random_range(first..=last);
                *row = [0, 1, 2].map(|i| (a + i * i16::from(d)) as u8);
            }
        }
        Rule::DistributeThree => {
            let values: Vec<u8> = (lo..=hi).collect();
            let mut picked: Vec<u8> = values.choose_multiple(rng, 3).copied().collect();
            picked.shuffle(rng);
            for (r, row) in rows.iter_mut().enumerate() {
                *row = [0, 1, 2].map(|i| picked[(r + i) % 3]);
            }
        }
    }
    rows
}

fn draw_layout(rng: &mut impl Rng, config: Configuration) -> Vec<u8> {
    match config {
        Configuration::Center => vec![0],
        Configuration::Grid2x2 => {
            let n = rng.random_range(1..=4);
            let mut slots: Vec<u8> = [0u8, 1, 2, 3].choose_multiple(rng, n).copied().collect();
            slots.sort_unstable();
            slots
        }
    }
}

/// Copy of `answer` with one or two attributes moved to other levels.
fn perturb(rng: &mut impl Rng, answer: &PanelSpec) -> PanelSpec {
    let k = rng.random_range(1..=2);
    let mut out = answer.clone();
    for &attr in Attribute::ALL.choose_multiple(rng, k) {
        let (lo, hi) = attr.range();
        let current = answer.attribute(attr).expect("entities share attributes");
        let others: Vec<u8> = (lo..=hi).filter(|&v| v != current).collect();
        out.set_attribute(attr, *others.choose(rng).expect("ranges hold several levels"));
    }
    out
}

/// Draws one problem from a seeded generator.
pub fn sample_problem(seed: u64, config: Configuration) -> Result<RpmProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rules = RuleSpec {
        shape: draw_rule(&mut rng, Attribute::Shape),
        size: draw_rule(&mut rng, Attribute::Size),
        color: draw_rule(&mut rng, Attribute::Color),
    };
    let shapes = draw_levels(&mut rng, Attribute::Shape, rules.shape);
    let sizes = draw_levels(&mut rng, Attribute::Size, rules.size);
    let colors = draw_levels(&mut rng, Attribute::Color, rules.color);
    let layout = draw_layout(&mut rng, config);

    let matrix: Vec<PanelSpec> = (0..9)
        .map(|cell| {
            let (r, c) = (cell / 3, cell % 3);
            PanelSpec {
                config,
                entities: layout
                    .iter()
                    .map(|&slot| Entity {
                        shape: Shape::from_level(shapes[r][c]).expect("shape level in range"),
                        size: sizes[r][c],
                        color: colors[r][c],
                        slot,
                    })
                    .collect(),
            }
        })
        .collect();
    debug_assert!(rule_check(&matrix, &rules));
    let answer = matrix[8].clone();

    let mut distractors: Vec<PanelSpec> = Vec::with_capacity(CANDIDATES - 1);
    let mut attempts = 0;
    let mut trial = matrix.clone();
    while distractors.len() < CANDIDATES - 1 {
        if attempts == MAX_ATTEMPTS {
            return Err(Error::Generation { attempts });
        }
        attempts += 1;
        let d = perturb(&mut rng, &answer);
        if d == answer || distractors.contains(&d) {
            continue;
        }
        trial[8] = d.clone();
        if rule_check(&trial, &rules) {
            continue;
        }
        distractors.push(d);
    }

    let answer_index = rng.random_range(0..CANDIDATES);
    let mut candidates = distractors;
    candidates.insert(answer_index, answer);

    let mut rasters = Vec::with_capacity(16 * super::PANEL_PIXELS);
    for panel in matrix[..8].iter().chain(&candidates) {
        rasters.extend_from_slice(&render_bytes(panel));
    }
    Ok(RpmProblem {
        config,
        answer: answer_index as u8,
        rules,
        matrix,
        candidates,
        rasters,
    })
}

/// `count` problems from one master seed. A problem whose distractor search
/// fails is replaced by one drawn from the next derived seed.
pub fn generate(count: usize, config: Configuration, seed: u64) -> Vec<RpmProblem> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if let Ok(p) = sample_problem(master.next_u64(), config) {
            out.push(p);
        }
    }
    out
}
