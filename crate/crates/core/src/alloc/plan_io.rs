//! Plan file: `PLAN v1 <HWM|SHALE>` followed by one
//! `P <id> <alpha> <zeta|inf> <order_index> <pass_tag>` line per contract.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{AllocationPlan, PlanEntry, Variant};
use crate::error::{Error, Result};
use crate::model::io::{expect_end, parse_f64, strip_comment};

pub const PLAN_HEADER: &str = "PLAN v1";

pub fn write_plan(plan: &AllocationPlan, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "{PLAN_HEADER} {}", plan.variant.as_str())?;
    for e in &plan.entries {
        let zeta = if e.zeta.is_infinite() {
            "inf".to_string()
        } else {
            e.zeta.to_string()
        };
        writeln!(
            w,
            "P {} {} {} {} {}",
            e.id, e.alpha, zeta, e.order_index, e.pass
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_plan(path: &Path) -> Result<AllocationPlan> {
    parse_plan(BufReader::new(File::open(path)?))
}

pub fn parse_plan(reader: impl BufRead) -> Result<AllocationPlan> {
    let mut variant = None;
    let mut entries = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        let body = strip_comment(&line);
        if body.is_empty() {
            continue;
        }
        if variant.is_none() {
            let rest = body
                .strip_prefix(PLAN_HEADER)
                .ok_or_else(|| Error::parse(lineno, format!("expected header `{PLAN_HEADER}`")))?;
            variant = Some(
                rest.trim()
                    .parse::<Variant>()
                    .map_err(|m| Error::parse(lineno, m))?,
            );
            continue;
        }
        let mut fields = body.split_whitespace();
        match fields.next() {
            Some("P") => {}
            Some(other) => {
                return Err(Error::parse(lineno, format!("unknown record `{other}`")));
            }
            None => unreachable!(),
        }
        let id = fields
            .next()
            .ok_or_else(|| Error::parse(lineno, "missing contract id"))?
            .to_string();
        let alpha = parse_f64(fields.next(), lineno, "alpha")?;
        let zeta = parse_f64(fields.next(), lineno, "zeta")?;
        let order_index = fields
            .next()
            .and_then(|f| f.parse::<usize>().ok())
            .ok_or_else(|| Error::parse(lineno, "invalid order index"))?;
        let pass = fields
            .next()
            .and_then(|f| f.parse::<u8>().ok())
            .ok_or_else(|| Error::parse(lineno, "invalid pass tag"))?;
        expect_end(fields, lineno)?;
        entries.push(PlanEntry {
            id,
            alpha,
            zeta,
            order_index,
            pass,
        });
    }
    let variant = variant.ok_or_else(|| Error::parse(1, format!("expected header `{PLAN_HEADER}`")))?;
    let plan = AllocationPlan { variant, entries };
    plan.validate().map_err(|m| Error::parse(0, m))?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let plan = AllocationPlan {
            variant: Variant::Shale,
            entries: vec![
                PlanEntry {
                    id: "b".into(),
                    alpha: 0.1 + 0.2,
                    zeta: f64::INFINITY,
                    order_index: 1,
                    pass: 2,
                },
                PlanEntry {
                    id: "a".into(),
                    alpha: 0.0,
                    zeta: 1.0 / 3.0,
                    order_index: 0,
                    pass: 1,
                },
            ],
        };
        let mut out = Vec::new();
        write_plan(&plan, &mut out).unwrap();
        let text = String::from_utf8(out.clone()).unwrap();
        assert!(text.starts_with("PLAN v1 SHALE\nP b 0.30000000000000004 inf 1 2\n"));
        assert_eq!(parse_plan(out.as_slice()).unwrap(), plan);
    }

    #[test]
    fn rejects_bad_plans() {
        assert!(parse_plan("PLAN v1 XYZ\n".as_bytes()).is_err());
        assert!(parse_plan("P a 0 0 0 1\n".as_bytes()).is_err());
        assert!(parse_plan("PLAN v1 HWM\nP a 0 0 1 1\n".as_bytes()).is_err());
        assert!(parse_plan("PLAN v1 HWM\nP a 0 x 0 1\n".as_bytes()).is_err());
        assert!(parse_plan("PLAN v1 HWM\nP a 0 0 0 1 9\n".as_bytes()).is_err());
        let ok = parse_plan("PLAN v1 HWM\n# comment\nP a 0 inf 0 1\n".as_bytes()).unwrap();
        assert_eq!(ok.variant, Variant::Hwm);
        assert_eq!(ok.entries[0].zeta, f64::INFINITY);
    }
}
