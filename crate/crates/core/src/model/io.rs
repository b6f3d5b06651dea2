//! Line-oriented text format for instances.
//!
//! ```text
//! GD v1
//! D <id> <demand> <penalty> <priority>
//! S <id> <weight>
//! A <supply_id> <demand_id>
//! ```
//!
//! `#` starts a comment. Nodes must be declared before arcs use them.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{ArcStorage, DemandNode, Instance, InstanceBuilder, SupplyNode};
use crate::error::{Error, NodeKind, Result};

pub const INSTANCE_HEADER: &str = "GD v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InstanceFormat {
    #[default]
    Text,
}

/// Splits off a trailing `#` comment and surrounding whitespace.
pub(crate) fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(k) => line[..k].trim(),
        None => line.trim(),
    }
}

pub(crate) fn parse_f64(field: Option<&str>, line: usize, what: &str) -> Result<f64> {
    let raw = field.ok_or_else(|| Error::parse(line, format!("missing {what}")))?;
    let v: f64 = raw
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid {what} `{raw}`")))?;
    if v.is_nan() {
        return Err(Error::parse(line, format!("invalid {what} `{raw}`")));
    }
    Ok(v)
}

pub(crate) fn expect_end<'a>(mut fields: impl Iterator<Item = &'a str>, line: usize) -> Result<()> {
    match fields.next() {
        None => Ok(()),
        Some(extra) => Err(Error::parse(line, format!("unexpected field `{extra}`"))),
    }
}

/// Reads an instance from a file.
pub fn read_instance(path: &Path, format: InstanceFormat, storage: ArcStorage) -> Result<Instance> {
    match format {
        InstanceFormat::Text => {
            let reader = BufReader::new(File::open(path)?);
            parse_instance(reader, storage)
        }
    }
}

/// Parses the text format from any reader in a single streaming pass.
pub fn parse_instance(reader: impl BufRead, storage: ArcStorage) -> Result<Instance> {
    let mut builder = InstanceBuilder::new(storage);
    let mut seen_header = false;
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        let body = strip_comment(&line);
        if body.is_empty() {
            continue;
        }
        if !seen_header {
            if body != INSTANCE_HEADER {
                return Err(Error::parse(
                    lineno,
                    format!("expected header `{INSTANCE_HEADER}`"),
                ));
            }
            seen_header = true;
            continue;
        }
        let mut fields = body.split_whitespace();
        let tag = fields.next().unwrap();
        let wrap = |e: Error| match e {
            Error::Io(_) => e,
            other => Error::parse(lineno, other.to_string()),
        };
        match tag {
            "D" => {
                let id = fields
                    .next()
                    .ok_or_else(|| Error::parse(lineno, "missing demand id"))?;
                let demand = parse_f64(fields.next(), lineno, "demand")?;
                let penalty = parse_f64(fields.next(), lineno, "penalty")?;
                let priority = parse_f64(fields.next(), lineno, "priority")?;
                expect_end(fields, lineno)?;
                builder
                    .add_demand(DemandNode::new(id, demand, penalty, priority))
                    .map_err(wrap)?;
            }
            "S" => {
                let id = fields
                    .next()
                    .ok_or_else(|| Error::parse(lineno, "missing supply id"))?;
                let weight = parse_f64(fields.next(), lineno, "weight")?;
                expect_end(fields, lineno)?;
                builder
                    .add_supply(SupplyNode::new(id, weight))
                    .map_err(wrap)?;
            }
            "A" => {
                let sid = fields
                    .next()
                    .ok_or_else(|| Error::parse(lineno, "missing supply id"))?;
                let did = fields
                    .next()
                    .ok_or_else(|| Error::parse(lineno, "missing demand id"))?;
                expect_end(fields, lineno)?;
                let i = builder
                    .supply_index(sid)
                    .ok_or_else(|| Error::UnknownArcEndpoint {
                        line: lineno,
                        kind: NodeKind::Supply,
                        id: sid.to_string(),
                    })?;
                let j = builder
                    .demand_index(did)
                    .ok_or_else(|| Error::UnknownArcEndpoint {
                        line: lineno,
                        kind: NodeKind::Demand,
                        id: did.to_string(),
                    })?;
                builder.add_arc(i, j).map_err(wrap)?;
            }
            other => {
                return Err(Error::parse(lineno, format!("unknown record `{other}`")));
            }
        }
    }
    if !seen_header {
        return Err(Error::parse(1, format!("expected header `{INSTANCE_HEADER}`")));
    }
    builder.finish()
}

/// Writes the text format; arcs keep their original order.
pub fn write_instance(instance: &Instance, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "{INSTANCE_HEADER}")?;
    for d in instance.demand() {
        writeln!(w, "D {} {} {} {}", d.id, d.demand, d.penalty, d.priority)?;
    }
    for s in instance.supply() {
        writeln!(w, "S {} {}", s.id, s.weight)?;
    }
    let supply = instance.supply();
    let demand = instance.demand();
    instance.arcs().for_each_original(|i, j| {
        writeln!(w, "A {} {}", supply[i as usize].id, demand[j as usize].id)?;
        Ok(())
    })?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Instance> {
        parse_instance(text.as_bytes(), ArcStorage::Memory)
    }

    #[test]
    fn single_arc() {
        let inst = parse("GD v1\nD c 25 1 1\nS a 100\nA a c\n").unwrap();
        assert_eq!(inst.eligible_supplies(), &[100.0]);
        assert_eq!(inst.thetas(), &[0.25]);
    }

    #[test]
    fn two_supply_nodes() {
        let inst = parse("GD v1\n# two impressions\nD c 50 1 1\nS a 60\nS b 40 # heavy\nA a c\nA b c\n")
            .unwrap();
        assert_eq!(inst.eligible_supply("c").unwrap(), 100.0);
        assert_eq!(inst.thetas(), &[0.5]);
    }

    #[test]
    fn unknown_demand_is_named() {
        let err = parse("GD v1\nD c 25 1 1\nS a 100\nA a ghost\n").unwrap_err();
        match err {
            Error::UnknownArcEndpoint { line, kind, id } => {
                assert_eq!(line, 4);
                assert_eq!(kind, NodeKind::Demand);
                assert_eq!(id, "ghost");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_text("GD v1\nD c 25 1 1\nS a 100\nA a ghost\n").contains("ghost"));
    }

    fn err_text(text: &str) -> String {
        parse(text).unwrap_err().to_string()
    }

    #[test]
    fn malformed_lines_report_numbers() {
        assert!(err_text("GD v1\nD c x 1 1\n").starts_with("line 2"));
        assert!(err_text("GD v1\nS a\n").starts_with("line 2"));
        assert!(err_text("GD v1\nQ a\n").contains("unknown record"));
        assert!(err_text("GD v2\n").contains("header"));
        assert!(err_text("").contains("header"));
        assert!(err_text("GD v1\nS a 1 2\n").contains("unexpected field"));
        assert!(err_text("GD v1\nS a 1\nS a 2\n").starts_with("line 3"));
    }

    #[test]
    fn zero_eligible_supply_rejected() {
        let err = parse("GD v1\nD c 25 1 1\nD d 5 1 1\nS a 100\nA a c\n").unwrap_err();
        assert!(matches!(err, Error::NoEligibleSupply { ref id } if id == "d"));
    }

    #[test]
    fn round_trip_preserves_arc_order() {
        let text = "GD v1\nD c 25.5 0.015 1\nD e 3 2 0.5\nS a 100\nS b 0.1\nA b e\nA a c\nA a e\n";
        for storage in [ArcStorage::Memory, ArcStorage::temp_disk()] {
            let inst = parse_instance(text.as_bytes(), storage.clone()).unwrap();
            let mut out = Vec::new();
            write_instance(&inst, &mut out).unwrap();
            assert_eq!(String::from_utf8(out.clone()).unwrap(), text);
            let again = parse_instance(out.as_slice(), storage).unwrap();
            assert_eq!(inst, again);
        }
    }
}
