use std::io::{BufRead, Write};

use super::SweepRecord;
use crate::error::{Error, Result};

pub const RECORD_TSV_VERSION: u32 = 1;

const HEADER: &str = "sweep_index\tM_AFM\tH_diag\tis_logical_count\tslices_scanned\tabs_M_AFM\tM2_AFM\tM4_AFM";

/// Writes one row per record. Magnetization and energy columns are means over
/// the logical slices of that measurement, `NaN` when there were none.
pub fn write_records_tsv<W: Write>(mut w: W, records: &[SweepRecord]) -> Result<()> {
    writeln!(w, "# embedqmc records v{RECORD_TSV_VERSION}")?;
    writeln!(w, "{HEADER}")?;
    for r in records {
        let c = f64::from(r.logical_count);
        let mean = |s: f64| if r.logical_count == 0 { f64::NAN } else { s / c };
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.sweep,
            mean(r.sum_m),
            mean(r.sum_energy),
            r.logical_count,
            r.slices_scanned,
            mean(r.sum_abs_m),
            mean(r.sum_m2),
            mean(r.sum_m4)
        )?;
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(field: &str, line: usize) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("line {line}: cannot parse {field:?}")))
}

/// Reads records written by [`write_records_tsv`]. Sums are rebuilt as
/// `mean × count`.
pub fn read_records_tsv<R: BufRead>(r: R) -> Result<Vec<SweepRecord>> {
    let mut out = Vec::new();
    let mut saw_header = false;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line != HEADER {
                return Err(Error::InvalidArgument("unrecognized record header".into()));
            }
            saw_header = true;
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(Error::InvalidArgument(format!("line {}: expected 8 columns", i + 1)));
        }
        let count: u32 = parse(f[3], i + 1)?;
        let c = f64::from(count);
        let sum = |s: &str| -> Result<f64> {
            let v: f64 = parse(s, i + 1)?;
            Ok(if count == 0 { 0.0 } else { v * c })
        };
        out.push(SweepRecord {
            sweep: parse(f[0], i + 1)?,
            logical_count: count,
            slices_scanned: parse(f[4], i + 1)?,
            sum_m: sum(f[1])?,
            sum_energy: sum(f[2])?,
            sum_abs_m: sum(f[5])?,
            sum_m2: sum(f[6])?,
            sum_m4: sum(f[7])?,
        });
    }
    Ok(out)
}
