//! Line grammars for model-backed distillation.
//!
//! Extraction replies have three blocks, in this order:
//!
//! ```text
//! ENTITIES:
//! - pot
//! KNOWLEDGE:
//! - pot | located_in | stove
//! REFLECTIONS:
//! - Heating only starts once the stove is on.
//! ```
//!
//! Segmentation replies have one `SEGMENT <first>-<last>: <name>` line per
//! segment, with 1-based inclusive action numbers.

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExtractionReply {
    pub entities: Vec<String>,
    pub knowledge: Vec<String>,
    pub reflections: Vec<String>,
}

const BLOCKS: [&str; 3] = ["ENTITIES:", "KNOWLEDGE:", "REFLECTIONS:"];

pub fn parse_extraction(text: &str) -> Result<ExtractionReply, String> {
    let mut reply = ExtractionReply::default();
    let mut block: Option<usize> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(i) = BLOCKS.iter().position(|b| line.eq_ignore_ascii_case(b)) {
            let expected = block.map_or(0, |b| b + 1);
            if i != expected {
                return Err(format!("line {}: block `{line}` out of order", n + 1));
            }
            block = Some(i);
            continue;
        }
        let Some(item) = line.strip_prefix('-').map(str::trim) else {
            return Err(format!("line {}: expected `- item`, got `{line}`", n + 1));
        };
        let target = match block {
            Some(0) => &mut reply.entities,
            Some(1) => &mut reply.knowledge,
            Some(2) => &mut reply.reflections,
            _ => return Err(format!("line {}: item before any block header", n + 1)),
        };
        if !item.is_empty() {
            target.push(item.to_string());
        }
    }
    if block != Some(2) {
        return Err("missing one or more of ENTITIES, KNOWLEDGE, REFLECTIONS".into());
    }
    Ok(reply)
}

/// Parses segment lines into `(start, end_exclusive, name)`, checking that
/// they tile `0..len` exactly.
pub fn parse_segments(text: &str, len: usize) -> Result<Vec<(usize, usize, String)>, String> {
    let mut out = Vec::new();
    let mut next = 0;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || format!("line {}: expected `SEGMENT a-b: name`, got `{line}`", n + 1);
        let rest = line.strip_prefix("SEGMENT ").ok_or_else(bad)?;
        let (range, name) = rest.split_once(':').ok_or_else(bad)?;
        let (a, b) = range.trim().split_once('-').ok_or_else(bad)?;
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        let name = name.trim();
        if a != next + 1 || b < a || b > len || name.is_empty() {
            return Err(format!("line {}: segment {a}-{b} does not continue at {}", n + 1, next + 1));
        }
        out.push((a - 1, b, name.to_string()));
        next = b;
    }
    if next != len {
        return Err(format!("segments cover {next} of {len} actions"));
    }
    Ok(out)
}
