use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::{DataError, Result, RunToFailureCycle, CMAPSS_FEATURES};
use crate::tensor::Tensor;

/// Unit id, cycle index, 3 settings, 21 sensors.
pub const CMAPSS_COLUMNS: usize = 26;

/// Parses whitespace-separated C-MAPSS rows into one cycle per unit,
/// ordered by unit id. Blank lines are skipped; line numbers in errors are
/// 1-based.
pub fn parse_cmapss<R: BufRead>(reader: R) -> Result<Vec<RunToFailureCycle>> {
    let mut units: BTreeMap<u32, (u32, Vec<f64>)> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != CMAPSS_COLUMNS {
            return Err(DataError::ColumnCount {
                line: lineno,
                expected: CMAPSS_COLUMNS,
                found: tokens.len(),
            });
        }
        let mut row = Vec::with_capacity(CMAPSS_COLUMNS);
        for tok in &tokens {
            let v: f64 = tok.parse().map_err(|_| DataError::Number {
                line: lineno,
                token: tok.to_string(),
            })?;
            row.push(v);
        }
        let id_of = |v: f64, tok: &str| -> Result<u32> {
            if v.fract() == 0.0 && v >= 0.0 && v <= u32::MAX as f64 {
                Ok(v as u32)
            } else {
                Err(DataError::Number {
                    line: lineno,
                    token: tok.to_string(),
                })
            }
        };
        let unit = id_of(row[0], tokens[0])?;
        let cycle = id_of(row[1], tokens[1])?;
        let entry = units.entry(unit).or_insert((0, Vec::new()));
        if !entry.1.is_empty() && cycle <= entry.0 {
            return Err(DataError::NonMonotone {
                line: lineno,
                unit,
                cycle,
            });
        }
        entry.0 = cycle;
        entry.1.extend_from_slice(&row[2..]);
    }
    units
        .into_iter()
        .map(|(unit, (_, data))| {
            let t = data.len() / CMAPSS_FEATURES;
            RunToFailureCycle::new(unit, Tensor::new(vec![t, CMAPSS_FEATURES], data)?)
        })
        .collect()
}

/// One nonnegative RUL value per line, in unit order.
pub fn parse_rul_file<R: BufRead>(reader: R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let tok = line.trim();
        if tok.is_empty() {
            continue;
        }
        let v: f64 = tok.parse().map_err(|_| DataError::Number {
            line: idx + 1,
            token: tok.to_string(),
        })?;
        if v < 0.0 {
            return Err(DataError::NegativeRul(v));
        }
        out.push(v);
    }
    Ok(out)
}

/// Extends the labels of a test cycle that stops `rul_at_last` steps before
/// failure: `rul[t] = rul_at_last + (T - 1 - t)`.
pub fn attach_test_rul(cycle: RunToFailureCycle, rul_at_last: f64) -> Result<RunToFailureCycle> {
    if rul_at_last < 0.0 || rul_at_last.is_nan() {
        return Err(DataError::NegativeRul(rul_at_last));
    }
    let t = cycle.len();
    Ok(RunToFailureCycle {
        rul: Tensor::from_vec((0..t).map(|i| rul_at_last + (t - 1 - i) as f64).collect()),
        truncated: rul_at_last > 0.0,
        ..cycle
    })
}

/// Writes cycles in the 26-column text format, cycles numbered from 1.
/// Values use the shortest representation that parses back exactly.
pub fn write_cmapss<W: Write>(cycles: &[RunToFailureCycle], mut w: W) -> Result<()> {
    for c in cycles {
        if c.num_features() != CMAPSS_FEATURES {
            return Err(DataError::FeatureMismatch {
                expected: CMAPSS_FEATURES,
                found: c.num_features(),
            });
        }
        for (t, row) in c.features.data().chunks_exact(CMAPSS_FEATURES).enumerate() {
            write!(w, "{} {}", c.unit_id, t + 1)?;
            for v in row {
                write!(w, " {v:?}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Writes the final-row RUL of each cycle, one per line.
pub fn write_rul_file<W: Write>(cycles: &[RunToFailureCycle], mut w: W) -> Result<()> {
    for c in cycles {
        let last = c.rul.data().last().copied().unwrap_or(0.0);
        writeln!(w, "{last:?}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(unit: u32, cycle: u32, base: f64) -> String {
        let mut s = format!("{unit} {cycle}");
        for k in 0..CMAPSS_FEATURES {
            s.push_str(&format!(" {}", base + k as f64));
        }
        s
    }

    #[test]
    fn two_rows_one_unit() {
        let text = format!("{}\n{}\n", row(1, 1, 0.0), row(1, 2, 100.0));
        let cycles = parse_cmapss(text.as_bytes()).unwrap();
        assert_eq!(cycles.len(), 1);
        assert_eq!(cycles[0].len(), 2);
        assert_eq!(cycles[0].rul.data(), &[1.0, 0.0]);
        assert_eq!(cycles[0].features.data()[CMAPSS_FEATURES], 100.0);
    }

    #[test]
    fn interleaved_units_grouped() {
        let text = [
            row(2, 1, 0.0),
            row(1, 1, 1.0),
            row(2, 2, 2.0),
            row(1, 2, 3.0),
            row(1, 3, 4.0),
        ]
        .join("\n");
        let cycles = parse_cmapss(text.as_bytes()).unwrap();
        assert_eq!(
            cycles.iter().map(|c| c.unit_id).collect::<Vec<_>>(),
            vec![1, 2]
        );
        assert_eq!(cycles[0].len(), 3);
        assert_eq!(cycles[1].len(), 2);
        assert_eq!(cycles[0].features.data()[2 * CMAPSS_FEATURES], 4.0);
    }

    #[test]
    fn short_row_reports_line() {
        let mut bad = row(1, 2, 0.0);
        bad.truncate(bad.rfind(' ').unwrap());
        let text = format!("{}\n{}\n", row(1, 1, 0.0), bad);
        match parse_cmapss(text.as_bytes()).unwrap_err() {
            DataError::ColumnCount { line, found, .. } => {
                assert_eq!(line, 2);
                assert_eq!(found, 25);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn non_monotone_cycle_rejected() {
        let text = format!("{}\n{}\n", row(1, 2, 0.0), row(1, 1, 0.0));
        assert!(matches!(
            parse_cmapss(text.as_bytes()).unwrap_err(),
            DataError::NonMonotone { line: 2, .. }
        ));
    }

    #[test]
    fn test_rul_extension() {
        let c = RunToFailureCycle::new(1, Tensor::zeros(&[3, 2])).unwrap();
        let t = attach_test_rul(c.clone(), 5.0).unwrap();
        assert_eq!(t.rul.data(), &[7.0, 6.0, 5.0]);
        assert!(t.truncated);
        let z = attach_test_rul(c.clone(), 0.0).unwrap();
        assert_eq!(z.rul, c.rul);
        assert!(!z.truncated);
        let one = attach_test_rul(
            RunToFailureCycle::new(1, Tensor::zeros(&[1, 2])).unwrap(),
            10.0,
        )
        .unwrap();
        assert_eq!(one.rul.data(), &[10.0]);
        assert!(attach_test_rul(c, -1.0).is_err());
    }

    #[test]
    fn write_then_parse_is_exact() {
        let feats: Vec<f64> = (0..2 * CMAPSS_FEATURES)
            .map(|i| (i as f64 * 0.123).sin() * 1e3)
            .collect();
        let c = RunToFailureCycle::new(7, Tensor::new(vec![2, CMAPSS_FEATURES], feats).unwrap())
            .unwrap();
        let mut buf = Vec::new();
        write_cmapss(std::slice::from_ref(&c), &mut buf).unwrap();
        let back = parse_cmapss(buf.as_slice()).unwrap();
        assert_eq!(back, vec![c.clone()]);
        let mut rul = Vec::new();
        write_rul_file(&[attach_test_rul(c, 12.0).unwrap()], &mut rul).unwrap();
        assert_eq!(parse_rul_file(rul.as_slice()).unwrap(), vec![12.0]);
    }
}
