//! Workload trace CSV: `interval,workload_id,cpu_ips,ram_gb,disk_gb`.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use cilp_core::domain::{DemandVector, WorkloadTemplate};

pub const TRACE_COLUMNS: [&str; 5] = ["interval", "workload_id", "cpu_ips", "ram_gb", "disk_gb"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TraceError {
    #[error("cannot read traces: {0}")]
    Io(String),
    #[error("missing column {0:?}")]
    MissingColumn(&'static str),
    #[error("line {line}, column {column}: {message}")]
    Field {
        line: u64,
        column: &'static str,
        message: String,
    },
    #[error("workload {id}: interval {interval} appears twice")]
    DuplicateInterval { id: u64, interval: usize },
    #[error("workload {id}: intervals jump from {from} to {to}")]
    Gap { id: u64, from: usize, to: usize },
}

/// One template per workload id, ascending id, rows ordered by interval.
pub fn parse_traces<R: Read>(reader: R) -> Result<Vec<WorkloadTemplate>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| TraceError::Io(e.to_string()))?.clone();
    let mut index = [0usize; 5];
    for (slot, name) in index.iter_mut().zip(TRACE_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or(TraceError::MissingColumn(name))?;
    }

    let mut rows: BTreeMap<u64, Vec<(usize, DemandVector)>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| TraceError::Io(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize| -> Result<&str, TraceError> {
            record.get(index[k]).ok_or(TraceError::Field {
                line,
                column: TRACE_COLUMNS[k],
                message: "missing value".into(),
            })
        };
        let integer = |k: usize| -> Result<u64, TraceError> {
            field(k)?.parse().map_err(|e: std::num::ParseIntError| TraceError::Field {
                line,
                column: TRACE_COLUMNS[k],
                message: e.to_string(),
            })
        };
        let amount = |k: usize| -> Result<f64, TraceError> {
            let bad = |message: String| TraceError::Field {
                line,
                column: TRACE_COLUMNS[k],
                message,
            };
            let v: f64 = field(k)?.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
            if !v.is_finite() || v < 0.0 {
                return Err(bad(format!("demand must be finite and non-negative, got {v}")));
            }
            Ok(v)
        };
        let interval = integer(0)? as usize;
        let id = integer(1)?;
        let d = DemandVector::new(amount(2)?, amount(3)?, amount(4)?);
        rows.entry(id).or_default().push((interval, d));
    }

    let mut out = Vec::with_capacity(rows.len());
    for (id, mut series) in rows {
        series.sort_by_key(|(t, _)| *t);
        for w in series.windows(2) {
            if w[1].0 == w[0].0 {
                return Err(TraceError::DuplicateInterval { id, interval: w[0].0 });
            }
            if w[1].0 != w[0].0 + 1 {
                return Err(TraceError::Gap {
                    id,
                    from: w[0].0,
                    to: w[1].0,
                });
            }
        }
        out.push(WorkloadTemplate {
            source_id: id,
            first_interval: series[0].0,
            trace: series.into_iter().map(|(_, d)| d).collect(),
        });
    }
    Ok(out)
}

pub fn load_traces(path: &Path) -> Result<Vec<WorkloadTemplate>, crate::error::CliError> {
    let file = std::fs::File::open(path).map_err(|e| crate::error::CliError::read(path, e))?;
    Ok(parse_traces(std::io::BufReader::new(file))?)
}

/// Writes templates back in the trace schema.
pub fn write_traces<W: std::io::Write>(templates: &[WorkloadTemplate], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_COLUMNS)?;
    for tpl in templates {
        for (k, d) in tpl.trace.iter().enumerate() {
            w.write_record([
                (tpl.first_interval + k).to_string(),
                tpl.source_id.to_string(),
                d.cpu.to_string(),
                d.ram.to_string(),
                d.disk.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use cilp_core::domain::{synthetic_templates, SyntheticTraceSpec};

    #[test]
    fn two_rows_for_one_workload() {
        let csv = "interval,workload_id,cpu_ips,ram_gb,disk_gb\n1,7,1200,1,2\n0,7,1000,1,2\n";
        let t = parse_traces(csv.as_bytes()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].source_id, 7);
        assert_eq!(t[0].first_interval, 0);
        assert_eq!(t[0].trace.iter().map(|d| d.cpu).collect::<Vec<_>>(), vec![1000.0, 1200.0]);
    }

    #[test]
    fn negative_ram_names_line_and_column() {
        let csv = "interval,workload_id,cpu_ips,ram_gb,disk_gb\n0,1,10,1,1\n1,1,10,-1,1\n";
        let err = parse_traces(csv.as_bytes()).unwrap_err();
        assert!(matches!(err, TraceError::Field { line: 3, column: "ram_gb", .. }), "{err}");
    }

    #[test]
    fn missing_column_rejected() {
        let csv = "interval,workload_id,cpu_ips,ram_gb\n0,1,10,1\n";
        assert_eq!(parse_traces(csv.as_bytes()), Err(TraceError::MissingColumn("disk_gb")));
    }

    #[test]
    fn gaps_and_duplicates_rejected() {
        let gap = "interval,workload_id,cpu_ips,ram_gb,disk_gb\n0,1,10,1,1\n2,1,10,1,1\n";
        assert_eq!(parse_traces(gap.as_bytes()), Err(TraceError::Gap { id: 1, from: 0, to: 2 }));
        let dup = "interval,workload_id,cpu_ips,ram_gb,disk_gb\n0,1,10,1,1\n0,1,11,1,1\n";
        assert_eq!(
            parse_traces(dup.as_bytes()),
            Err(TraceError::DuplicateInterval { id: 1, interval: 0 })
        );
    }

    #[test]
    fn column_order_is_free() {
        let csv = "workload_id,disk_gb,interval,ram_gb,cpu_ips\n3,5,4,2,100\n";
        let t = parse_traces(csv.as_bytes()).unwrap();
        assert_eq!(t[0].first_interval, 4);
        assert_eq!(t[0].trace[0], DemandVector::new(100.0, 2.0, 5.0));
    }

    #[test]
    fn many_workloads_round_trip() {
        let spec = SyntheticTraceSpec {
            workloads: 1750,
            ..SyntheticTraceSpec::default()
        };
        let templates: Vec<_> = synthetic_templates(&spec)
            .into_iter()
            .enumerate()
            .map(|(i, mut t)| {
                t.source_id = i as u64;
                t
            })
            .collect();
        let mut buf = Vec::new();
        write_traces(&templates, &mut buf).unwrap();
        let back = parse_traces(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 1750);
        assert_eq!(back, templates);
    }
}
