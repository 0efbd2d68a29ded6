//! Integer scan conversion of panel specs.
//!
//! Coordinates are doubled so pixel centres sit on integers, then polygon
//! vertices are scaled by [`FIXED`] and rounded once. Every inside test after
//! that is exact integer arithmetic.

use super::spec::{Configuration, Entity, PanelSpec, PANEL_SIDE};
use super::PANEL_PIXELS;

const FIXED: i64 = 1024;
const WHITE: u8 = 255;
const BLACK: u8 = 0;

/// Byte for a colour level: fill `1 − level/5`, so level 1 is the lightest.
pub fn fill_byte(color: u8) -> u8 {
    255 - 51 * color
}

struct Region {
    /// Centre in doubled coordinates times `FIXED`.
    cx: i64,
    cy: i64,
    /// Radius in doubled coordinates.
    r2: i64,
    vertices: Option<Vec<(i64, i64)>>,
}

impl Region {
    fn new(config: Configuration, e: &Entity) -> Self {
        let (x0, y0, side) = config.cell(e.slot);
        let cx = (2 * x0 + side) * FIXED;
        let cy = (2 * y0 + side) * FIXED;
        let r2 = 2 * config.radius(e.size);
        let vertices = e.shape.sides().map(|n| {
            let offset = if n % 2 == 0 { std::f64::consts::PI / n as f64 } else { 0.0 };
            (0..n)
                .map(|k| {
                    let theta = -std::f64::consts::FRAC_PI_2 + offset + 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                    let rf = (r2 * FIXED) as f64;
                    (
                        cx + libm::round(rf * libm::cos(theta)) as i64,
                        cy + libm::round(rf * libm::sin(theta)) as i64,
                    )
                })
                .collect()
        });
        Region { cx, cy, r2, vertices }
    }

    fn contains(&self, x: i64, y: i64) -> bool {
        let px = (2 * x + 1) * FIXED;
        let py = (2 * y + 1) * FIXED;
        match &self.vertices {
            None => {
                let (dx, dy) = ((px - self.cx) / FIXED, (py - self.cy) / FIXED);
                dx * dx + dy * dy <= self.r2 * self.r2
            }
            Some(vs) => {
                let n = vs.len();
                (0..n).all(|i| {
                    let (ax, ay) = vs[i];
                    let (bx, by) = vs[(i + 1) % n];
                    (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0
                })
            }
        }
    }
}

/// Renders a panel as bytes, `round(value·255)` per pixel.
pub fn render_bytes(panel: &PanelSpec) -> Vec<u8> {
    let side = PANEL_SIDE as i64;
    let mut out = vec![WHITE; PANEL_PIXELS];
    for e in &panel.entities {
        let region = Region::new(panel.config, e);
        let (x0, y0, cell) = panel.config.cell(e.slot);
        let fill = fill_byte(e.color);
        // Pixels beyond the circumradius plus one cannot be inside.
        let reach = panel.config.radius(e.size) + 1;
        let (mx, my) = (x0 + cell / 2, y0 + cell / 2);
        let (xs, ys) = ((mx - reach).max(x0), (my - reach).max(y0));
        let (xe, ye) = ((mx + reach).min(x0 + cell), (my + reach).min(y0 + cell));
        for y in ys..ye {
            for x in xs..xe {
                if !region.contains(x, y) {
                    continue;
                }
                let edge = [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
                    .iter()
                    .any(|&(nx, ny)| !region.contains(nx, ny));
                out[(y * side + x) as usize] = if edge { BLACK } else { fill };
            }
        }
    }
    out
}

/// Renders a panel with values in `[0, 1]`.
pub fn render(panel: &PanelSpec) -> Vec<f64> {
    render_bytes(panel).into_iter().map(|b| f64::from(b) / 255.0).collect()
}
