//! The `RPMS` binary dataset format.
//!
//! ```text
//! "RPMS" · version u16 · count u32
//! per problem:
//!   config tag u8 · answer u8 · rule codes 3×u8 (shape, size, color)
//!   17 panel records (9 matrix cells, then 8 candidates), each
//!     entity count u8 · 4 × (slot, shape, size, color), unused entries zero
//!   16 rasters (8 context, 8 candidates), 96·96 bytes each
//! ```
//! Multi-byte integers are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::spec::{Configuration, Entity, PanelSpec, Rule, RuleSpec, Shape};
use super::{RpmProblem, PANEL_PIXELS};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RPMS";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 10;
const MAX_ENTITIES: usize = 4;
pub const PANEL_RECORD_BYTES: usize = 1 + 4 * MAX_ENTITIES;
pub const PROBLEM_BYTES: usize = 5 + 17 * PANEL_RECORD_BYTES + 16 * PANEL_PIXELS;

/// Exact file size for `count` problems.
pub fn file_size(count: usize) -> usize {
    HEADER_BYTES + count * PROBLEM_BYTES
}

fn encode_panel(out: &mut Vec<u8>, panel: &PanelSpec) {
    out.push(panel.entities.len() as u8);
    for i in 0..MAX_ENTITIES {
        match panel.entities.get(i) {
            Some(e) => out.extend_from_slice(&[e.slot, e.shape.level(), e.size, e.color]),
            None => out.extend_from_slice(&[0; 4]),
        }
    }
}

pub fn encode(problems: &[RpmProblem]) -> Result<Vec<u8>> {
    if problems.is_empty() {
        return Err(Error::Contract("refusing to write an empty dataset".into()));
    }
    let mut out = Vec::with_capacity(file_size(problems.len()));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(problems.len() as u32).to_le_bytes());
    for p in problems {
        if p.matrix.len() != 9 || p.candidates.len() != 8 || p.rasters.len() != 16 * PANEL_PIXELS {
            return Err(Error::Contract("problem has the wrong number of panels".into()));
        }
        if p.matrix.iter().chain(&p.candidates).any(|s| s.entities.len() > MAX_ENTITIES) {
            return Err(Error::Contract("panel has more than four entities".into()));
        }
        out.push(p.config.tag());
        out.push(p.answer);
        out.extend_from_slice(&[p.rules.shape.code(), p.rules.size.code(), p.rules.color.code()]);
        for panel in p.matrix.iter().chain(&p.candidates) {
            encode_panel(&mut out, panel);
        }
        out.extend_from_slice(&p.rasters);
    }
    Ok(out)
}

fn decode_panel(config: Configuration, rec: &[u8]) -> Result<PanelSpec> {
    let n = usize::from(rec[0]);
    if n > MAX_ENTITIES {
        return Err(Error::Malformed(format!("panel with {n} entities")));
    }
    let entities = rec[1..]
        .chunks_exact(4)
        .take(n)
        .map(|e| {
            let shape = Shape::from_level(e[1]).ok_or_else(|| Error::Malformed(format!("shape level {}", e[1])))?;
            Ok(Entity {
                shape,
                size: e[2],
                color: e[3],
                slot: e[0],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let panel = PanelSpec { config, entities };
    panel.validate().map_err(|e| Error::Malformed(e.to_string()))?;
    Ok(panel)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<RpmProblem>> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Truncated(format!("header needs {HEADER_BYTES} bytes, file has {}", bytes.len())));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Version {
            expected: VERSION,
            found: version,
        });
    }
    let count = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let expected = file_size(count);
    if bytes.len() < expected {
        return Err(Error::Truncated(format!(
            "{count} problems need {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - expected)));
    }
    let mut problems = Vec::with_capacity(count);
    for chunk in bytes[HEADER_BYTES..].chunks_exact(PROBLEM_BYTES) {
        let config = Configuration::from_tag(chunk[0])?;
        let answer = chunk[1];
        if answer >= 8 {
            return Err(Error::Malformed(format!("answer index {answer}")));
        }
        let rules = RuleSpec {
            shape: Rule::from_code(chunk[2])?,
            size: Rule::from_code(chunk[3])?,
            color: Rule::from_code(chunk[4])?,
        };
        let specs_end = 5 + 17 * PANEL_RECORD_BYTES;
        let panels = chunk[5..specs_end]
            .chunks_exact(PANEL_RECORD_BYTES)
            .map(|rec| decode_panel(config, rec))
            .collect::<Result<Vec<_>>>()?;
        let (matrix, candidates) = panels.split_at(9);
        problems.push(RpmProblem {
            config,
            answer,
            rules,
            matrix: matrix.to_vec(),
            candidates: candidates.to_vec(),
            rasters: chunk[specs_end..].to_vec(),
        });
    }
    Ok(problems)
}

pub fn write_dataset(problems: &[RpmProblem], path: &Path) -> Result<()> {
    let bytes = encode(problems)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<RpmProblem>> {
    decode(&fs::read(path)?)
}
