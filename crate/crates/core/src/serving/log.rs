//! Impression log: `LOG v1` header, then `I <timestamp> <weight> <ids>`
//! lines where `<ids>` is a comma-separated list of contract ids (`-` when
//! empty).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::io::{expect_end, parse_f64, strip_comment};
use crate::model::{Instance, Side};

pub const LOG_HEADER: &str = "LOG v1";

#[derive(Debug, Clone, PartialEq)]
pub struct ImpressionEvent {
    pub timestamp: f64,
    /// Real impressions this event stands for.
    pub weight: f64,
    pub eligible: Vec<String>,
}

pub fn read_log(path: &Path) -> Result<Vec<ImpressionEvent>> {
    parse_log(BufReader::new(File::open(path)?))
}

pub fn parse_log(reader: impl BufRead) -> Result<Vec<ImpressionEvent>> {
    let mut seen_header = false;
    let mut events = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        let body = strip_comment(&line);
        if body.is_empty() {
            continue;
        }
        if !seen_header {
            if body != LOG_HEADER {
                return Err(Error::parse(lineno, format!("expected header `{LOG_HEADER}`")));
            }
            seen_header = true;
            continue;
        }
        let mut fields = body.split_whitespace();
        if fields.next() != Some("I") {
            return Err(Error::parse(lineno, "expected an `I` record"));
        }
        let timestamp = parse_f64(fields.next(), lineno, "timestamp")?;
        let weight = parse_f64(fields.next(), lineno, "weight")?;
        if !(timestamp >= 0.0) || !timestamp.is_finite() {
            return Err(Error::parse(lineno, "timestamp must be a non-negative number"));
        }
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::parse(lineno, "weight must be positive"));
        }
        let ids = fields
            .next()
            .ok_or_else(|| Error::parse(lineno, "missing eligible list"))?;
        expect_end(fields, lineno)?;
        let eligible = if ids == "-" {
            Vec::new()
        } else {
            ids.split(',').map(str::to_string).collect()
        };
        if eligible.iter().any(String::is_empty) {
            return Err(Error::parse(lineno, "empty id in eligible list"));
        }
        events.push(ImpressionEvent {
            timestamp,
            weight,
            eligible,
        });
    }
    if !seen_header {
        return Err(Error::parse(1, format!("expected header `{LOG_HEADER}`")));
    }
    Ok(events)
}

pub fn write_log(events: &[ImpressionEvent], writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "{LOG_HEADER}")?;
    for e in events {
        let ids = if e.eligible.is_empty() {
            "-".to_string()
        } else {
            e.eligible.join(",")
        };
        writeln!(w, "I {} {} {}", e.timestamp, e.weight, ids)?;
    }
    w.flush()?;
    Ok(())
}

/// A log that realizes the instance's supply exactly: supply node `i`
/// becomes `round(s_i / unit)` (at least one) events of equal weight
/// summing to `s_i`, at uniform random times in `[start, end)`, sorted.
pub fn synthesize_log(
    instance: &Instance,
    start: f64,
    end: f64,
    unit: f64,
    seed: u64,
) -> Result<Vec<ImpressionEvent>> {
    if !(unit > 0.0) || !(end >= start) || !(start >= 0.0) {
        return Err(Error::InvalidParameter(
            "log synthesis needs unit > 0 and 0 <= start <= end".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let demand = instance.demand();
    let supply = instance.supply();
    let mut events = Vec::new();
    instance.arcs().scan(Side::Supply, |batch| {
        for (i, _, dem) in batch.iter() {
            let eligible: Vec<String> = dem.iter().map(|&j| demand[j as usize].id.clone()).collect();
            let s = supply[i].weight;
            let n = ((s / unit).round() as usize).max(1);
            let weight = s / n as f64;
            for _ in 0..n {
                let t = if end > start { rng.gen_range(start..end) } else { start };
                events.push(ImpressionEvent {
                    timestamp: t,
                    weight,
                    eligible: eligible.clone(),
                });
            }
        }
        Ok(())
    })?;
    events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(events)
}

/// Keeps each event independently with probability `keep`.
pub fn thin_log(events: &[ImpressionEvent], keep: f64, seed: u64) -> Vec<ImpressionEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    events
        .iter()
        .filter(|_| rng.gen::<f64>() < keep)
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DemandNode, SupplyNode};

    #[test]
    fn round_trip() {
        let events = vec![
            ImpressionEvent {
                timestamp: 0.5,
                weight: 2.0,
                eligible: vec!["a".into(), "b".into()],
            },
            ImpressionEvent {
                timestamp: 1.0,
                weight: 1.0,
                eligible: vec![],
            },
        ];
        let mut out = Vec::new();
        write_log(&events, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out.clone()).unwrap(),
            "LOG v1\nI 0.5 2 a,b\nI 1 1 -\n"
        );
        assert_eq!(parse_log(out.as_slice()).unwrap(), events);
    }

    #[test]
    fn malformed_lines() {
        for bad in [
            "I 0 1 a\n",
            "LOG v1\nI -1 1 a\n",
            "LOG v1\nI 0 0 a\n",
            "LOG v1\nI 0 1\n",
            "LOG v1\nI 0 1 a,,b\n",
            "LOG v1\nX 0 1 a\n",
            "",
        ] {
            assert!(parse_log(bad.as_bytes()).is_err(), "{bad:?}");
        }
        let err = parse_log("LOG v1\nI 0 1 a\nI 0 z a\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn synthesized_log_preserves_supply() {
        let inst = Instance::from_parts(
            vec![SupplyNode::new("s0", 10.0), SupplyNode::new("s1", 3.3)],
            vec![DemandNode::new("a", 5.0, 1.0, 1.0)],
            [(0, 0), (1, 0)],
        )
        .unwrap();
        let log = synthesize_log(&inst, 0.0, 10.0, 1.0, 4).unwrap();
        assert_eq!(log.len(), 13);
        let total: f64 = log.iter().map(|e| e.weight).sum();
        assert!((total - 13.3).abs() < 1e-12);
        assert!(log.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        let thinned = thin_log(&log, 0.5, 1);
        assert!(thinned.len() < log.len());
    }
}
