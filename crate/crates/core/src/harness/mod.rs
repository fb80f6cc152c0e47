//! Trace generation and the measurement harness: single runs, differential
//! comparison and repeated benchmarking.

mod bench;
mod compare;
mod metrics;
mod trace;

pub use bench::{bench, bench_packets, BenchReport, BenchRow};
pub use compare::{compare, compare_pipelines, Divergence, EquivalenceReport};
pub use metrics::{render_verdicts, run, run_pipeline, MetricsReport, PipelineKind, CSV_HEADER};
pub use trace::{generate_packets, generate_trace, TraceSpec, TraceSpecError};
