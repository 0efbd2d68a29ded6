use std::fmt;

use crate::error::{Error, Result};

/// Side length of a rendered panel in pixels.
pub const PANEL_SIDE: usize = 96;

/// Spatial layout family of a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Configuration {
    /// One entity in the middle of the panel.
    Center,
    /// Up to four entities in a 2×2 grid of cells.
    Grid2x2,
}

impl Configuration {
    pub const ALL: [Configuration; 2] = [Configuration::Center, Configuration::Grid2x2];

    pub fn tag(self) -> u8 {
        match self {
            Configuration::Center => 0,
            Configuration::Grid2x2 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Configuration::Center),
            1 => Ok(Configuration::Grid2x2),
            t => Err(Error::Malformed(format!("configuration tag {t}"))),
        }
    }

    /// Short name used on the command line.
    pub fn name(self) -> &'static str {
        match self {
            Configuration::Center => "center",
            Configuration::Grid2x2 => "grid2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(Configuration::Center),
            "grid2" => Ok(Configuration::Grid2x2),
            other => Err(Error::Config(format!("unknown configuration `{other}`"))),
        }
    }

    pub fn slots(self) -> usize {
        match self {
            Configuration::Center => 1,
            Configuration::Grid2x2 => 4,
        }
    }

    /// `(x0, y0, side)` of a slot's cell.
    pub fn cell(self, slot: u8) -> (i64, i64, i64) {
        match self {
            Configuration::Center => (0, 0, PANEL_SIDE as i64),
            Configuration::Grid2x2 => {
                let side = PANEL_SIDE as i64 / 2;
                (i64::from(slot % 2) * side, i64::from(slot / 2) * side, side)
            }
        }
    }

    /// Circumradius in pixels for a size level.
    pub fn radius(self, size: u8) -> i64 {
        match self {
            Configuration::Center => 8 * i64::from(size),
            Configuration::Grid2x2 => 4 * i64::from(size),
        }
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Shape {
    Triangle,
    Square,
    Pentagon,
    Hexagon,
    Circle,
}

impl Shape {
    pub const ALL: [Shape; 5] = [Shape::Triangle, Shape::Square, Shape::Pentagon, Shape::Hexagon, Shape::Circle];

    pub fn level(self) -> u8 {
        self as u8
    }

    pub fn from_level(level: u8) -> Option<Shape> {
        Shape::ALL.get(usize::from(level)).copied()
    }

    /// Number of polygon sides, `None` for the circle.
    pub fn sides(self) -> Option<usize> {
        match self {
            Shape::Triangle => Some(3),
            Shape::Square => Some(4),
            Shape::Pentagon => Some(5),
            Shape::Hexagon => Some(6),
            Shape::Circle => None,
        }
    }
}

/// Attribute governed by a row rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Attribute {
    Shape,
    Size,
    Color,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Shape, Attribute::Size, Attribute::Color];

    /// Inclusive range of levels.
    pub fn range(self) -> (u8, u8) {
        match self {
            Attribute::Shape => (0, 4),
            Attribute::Size | Attribute::Color => (1, 4),
        }
    }

    pub fn contains(self, v: u8) -> bool {
        let (lo, hi) = self.range();
        (lo..=hi).contains(&v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Entity {
    pub shape: Shape,
    /// Size level 1..=4.
    pub size: u8,
    /// Darkness level 1..=4; the fill is `1 − level/5`.
    pub color: u8,
    /// Cell index; always 0 for [`Configuration::Center`].
    pub slot: u8,
}

impl Entity {
    pub fn get(&self, attr: Attribute) -> u8 {
        match attr {
            Attribute::Shape => self.shape.level(),
            Attribute::Size => self.size,
            Attribute::Color => self.color,
        }
    }

    pub fn set(&mut self, attr: Attribute, v: u8) {
        match attr {
            Attribute::Shape => self.shape = Shape::from_level(v).expect("shape level in range"),
            Attribute::Size => self.size = v,
            Attribute::Color => self.color = v,
        }
    }
}

/// Latent description of one panel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PanelSpec {
    pub config: Configuration,
    pub entities: Vec<Entity>,
}

impl PanelSpec {
    pub fn blank(config: Configuration) -> Self {
        PanelSpec {
            config,
            entities: Vec::new(),
        }
    }

    /// The level shared by every entity, or `None` if empty or mixed.
    pub fn attribute(&self, attr: Attribute) -> Option<u8> {
        let first = self.entities.first()?.get(attr);
        self.entities.iter().all(|e| e.get(attr) == first).then_some(first)
    }

    pub fn set_attribute(&mut self, attr: Attribute, v: u8) {
        for e in &mut self.entities {
            e.set(attr, v);
        }
    }

    /// Sorted occupied slots.
    pub fn layout(&self) -> Vec<u8> {
        let mut s: Vec<u8> = self.entities.iter().map(|e| e.slot).collect();
        s.sort_unstable();
        s
    }

    /// Levels in range, slots unique and valid, and every entity clear of its
    /// cell border (`radius ≤ side/2 − 2`).
    pub fn validate(&self) -> Result<()> {
        let slots = self.config.slots();
        if self.entities.len() > slots {
            return Err(Error::Contract(format!("{} entities in {slots} slots", self.entities.len())));
        }
        let layout = self.layout();
        if layout.windows(2).any(|w| w[0] == w[1]) || layout.iter().any(|&s| usize::from(s) >= slots) {
            return Err(Error::Contract(format!("invalid slot layout {layout:?}")));
        }
        for e in &self.entities {
            if !Attribute::Size.contains(e.size) || !Attribute::Color.contains(e.color) {
                return Err(Error::Contract(format!("attribute level out of range in {e:?}")));
            }
            let (_, _, side) = self.config.cell(e.slot);
            if self.config.radius(e.size) > side / 2 - 2 {
                return Err(Error::Contract(format!("entity {e:?} does not fit its cell")));
            }
        }
        Ok(())
    }
}

/// Row rule for one attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    /// All three panels in a row share the value.
    Constant,
    /// Arithmetic sequence with the given step (±1 or ±2).
    Progression(i8),
    /// Each row is a permutation of the same three distinct values.
    DistributeThree,
}

impl Rule {
    pub fn code(self) -> u8 {
        match self {
            Rule::Constant => 0,
            Rule::Progression(1) => 1,
            Rule::Progression(-1) => 2,
            Rule::Progression(2) => 3,
            Rule::Progression(-2) => 4,
            Rule::Progression(d) => panic!("unsupported progression step {d}"),
            Rule::DistributeThree => 5,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Rule::Constant,
            1 => Rule::Progression(1),
            2 => Rule::Progression(-1),
            3 => Rule::Progression(2),
            4 => Rule::Progression(-2),
            5 => Rule::DistributeThree,
            c => return Err(Error::Malformed(format!("rule code {c}"))),
        })
    }

    /// Whether three levels of `attr` can follow this rule at all.
    pub fn feasible(self, attr: Attribute) -> bool {
        let (lo, hi) = attr.range();
        let span = i32::from(hi - lo);
        match self {
            Rule::Constant => true,
            Rule::Progression(d) => 2 * i32::from(d).abs() <= span,
            Rule::DistributeThree => span >= 2,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::Constant => write!(f, "constant"),
            Rule::Progression(d) => write!(f, "progression({d:+})"),
            Rule::DistributeThree => write!(f, "distribute_three"),
        }
    }
}

/// One rule per attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RuleSpec {
    pub shape: Rule,
    pub size: Rule,
    pub color: Rule,
}

impl RuleSpec {
    pub fn get(&self, attr: Attribute) -> Rule {
        match attr {
            Attribute::Shape => self.shape,
            Attribute::Size => self.size,
            Attribute::Color => self.color,
        }
    }

    pub fn all_constant() -> Self {
        RuleSpec {
            shape: Rule::Constant,
            size: Rule::Constant,
            color: Rule::Constant,
        }
    }
}

/// Whether three levels satisfy `rule`. `reference` is the value set of the
/// first row, used by `DistributeThree`.
fn row_follows(rule: Rule, row: [u8; 3], reference: [u8; 3]) -> bool {
    match rule {
        Rule::Constant => row[0] == row[1] && row[1] == row[2],
        Rule::Progression(d) => {
            let d = i16::from(d);
            let [a, b, c] = row.map(i16::from);
            b - a == d && c - b == d
        }
        Rule::DistributeThree => {
            let mut r = row;
            let mut s = reference;
            r.sort_unstable();
            s.sort_unstable();
            r[0] != r[1] && r[1] != r[2] && r == s
        }
    }
}

/// True iff every row of the 3×3 `matrix` satisfies every attribute rule and
/// keeps one slot layout across the row.
pub fn rule_check(matrix: &[PanelSpec], rules: &RuleSpec) -> bool {
    if matrix.len() != 9 {
        return false;
    }
    let rows: Vec<&[PanelSpec]> = matrix.chunks_exact(3).collect();
    for row in &rows {
        let layout = row[0].layout();
        if layout.is_empty() || row.iter().any(|p| p.layout() != layout) {
            return false;
        }
    }
    for attr in Attribute::ALL {
        let mut levels = Vec::with_capacity(3);
        for row in &rows {
            let vals: Option<Vec<u8>> = row.iter().map(|p| p.attribute(attr)).collect();
            match vals {
                Some(v) => levels.push([v[0], v[1], v[2]]),
                None => return false,
            }
        }
        let rule = rules.get(attr);
        if !levels.iter().all(|&row| row_follows(rule, row, levels[0])) {
            return false;
        }
    }
    true
}
