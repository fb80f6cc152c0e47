use std::fmt;
use std::sync::Arc;

use crate::config::RouterConfig;
use crate::packet::Packet;

use super::metrics::{run, MetricsReport, PipelineKind, CSV_HEADER};
use super::trace::{generate_packets, TraceSpec, TraceSpecError};

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub report: MetricsReport,
    pub repetition: usize,
    /// Median wall time among this pipeline's repetitions.
    pub median: bool,
}

impl BenchRow {
    pub fn label(&self) -> String {
        if self.median {
            format!("{}:median", self.report.pipeline)
        } else {
            self.report.pipeline.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn median(&self, kind: PipelineKind) -> &MetricsReport {
        &self
            .rows
            .iter()
            .find(|r| r.median && r.report.pipeline == kind.name())
            .expect("every pipeline has a median row")
            .report
    }

    /// Baseline over integrated table lookups.
    pub fn lookup_ratio(&self) -> f64 {
        let b = self.median(PipelineKind::Baseline).lookups.total();
        let i = self.median(PipelineKind::Integrated).lookups.total();
        b as f64 / i.max(1) as f64
    }

    /// Baseline over integrated median wall time.
    pub fn time_ratio(&self) -> f64 {
        let b = self.median(PipelineKind::Baseline).wall_ns;
        let i = self.median(PipelineKind::Integrated).wall_ns;
        b as f64 / i.max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.report.csv_row(&row.label()));
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for kind in PipelineKind::ALL {
            let m = self.median(kind);
            writeln!(
                f,
                "{:<11} median {} ns, {} lookups",
                kind.name(),
                m.wall_ns,
                m.lookups.total()
            )?;
        }
        write!(
            f,
            "lookup ratio {:.3}, time ratio {:.3}",
            self.lookup_ratio(),
            self.time_ratio()
        )
    }
}

/// Run each pipeline `reps` times over fresh state, alternating pipelines so
/// drift in machine load hits both alike.
pub fn bench_packets(cfg: Arc<RouterConfig>, packets: &[Packet], reps: usize) -> BenchReport {
    let reps = reps.max(1);
    let mut rows = Vec::with_capacity(reps * 2);
    for repetition in 0..reps {
        for kind in PipelineKind::ALL {
            let (report, _) = run(kind, cfg.clone(), packets);
            rows.push(BenchRow {
                report,
                repetition,
                median: false,
            });
        }
    }
    for kind in PipelineKind::ALL {
        let mut idx: Vec<usize> = (0..rows.len())
            .filter(|&i| rows[i].report.pipeline == kind.name())
            .collect();
        idx.sort_by_key(|&i| rows[i].report.wall_ns);
        rows[idx[(idx.len() - 1) / 2]].median = true;
    }
    BenchReport { rows }
}

pub fn bench(
    cfg: Arc<RouterConfig>,
    spec: &TraceSpec,
    reps: usize,
) -> Result<BenchReport, TraceSpecError> {
    let packets = generate_packets(spec)?;
    Ok(bench_packets(cfg, &packets, reps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_median_per_pipeline_and_stable_counters() {
        let spec = TraceSpec {
            session_count: 5,
            packets_per_session: 50,
            ..TraceSpec::default()
        };
        let report = bench(Arc::new(RouterConfig::default()), &spec, 3).unwrap();
        assert_eq!(report.rows.len(), 6);
        assert_eq!(report.rows.iter().filter(|r| r.median).count(), 2);
        for kind in PipelineKind::ALL {
            let mut lookups = report
                .rows
                .iter()
                .filter(|r| r.report.pipeline == kind.name())
                .map(|r| r.report.lookups);
            let first = lookups.next().unwrap();
            assert!(lookups.all(|l| l == first));
        }
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.lines().all(|l| l.split(',').count() == 13));
        assert!(report.lookup_ratio() > 1.0);
    }
}
