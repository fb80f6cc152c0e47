use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use crate::config::RouterConfig;
use crate::packet::Packet;
use crate::pipeline::{
    BaselinePipeline, DropReason, IntegratedPipeline, LookupAccounting, Outcome, Pipeline,
    SessionProbe, Verdict,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineKind {
    Baseline,
    Integrated,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 2] = [PipelineKind::Baseline, PipelineKind::Integrated];

    pub fn build(self, cfg: Arc<RouterConfig>) -> Box<dyn Pipeline> {
        match self {
            PipelineKind::Baseline => Box::new(BaselinePipeline::new(cfg)),
            PipelineKind::Integrated => Box::new(IntegratedPipeline::new(cfg)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PipelineKind::Baseline => "baseline",
            PipelineKind::Integrated => "integrated",
        }
    }
}

pub const CSV_HEADER: &str = "pipeline,packets,forwarded,dropped,session_hits,session_misses,\
nat_lookups,session_lookups,rule_evals,rules_scanned,qos_classifications,route_lookups,wall_ns";

/// Totals for one pass of a trace through one pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsReport {
    pub pipeline: String,
    pub packets: u64,
    pub forwarded: u64,
    /// Indexed like [`DropReason::ALL`].
    pub dropped_by: [u64; 7],
    pub session_hits: u64,
    pub session_misses: u64,
    pub lookups: LookupAccounting,
    /// Time spent in the packet loop only.
    pub wall_ns: u64,
}

impl MetricsReport {
    pub fn new(pipeline: &str) -> Self {
        MetricsReport {
            pipeline: pipeline.to_string(),
            packets: 0,
            forwarded: 0,
            dropped_by: [0; 7],
            session_hits: 0,
            session_misses: 0,
            lookups: LookupAccounting::default(),
            wall_ns: 0,
        }
    }

    pub fn record(&mut self, v: &Verdict) {
        self.packets += 1;
        match v.outcome {
            Outcome::Forwarded { .. } => self.forwarded += 1,
            Outcome::Dropped(r) => {
                let i = DropReason::ALL.iter().position(|x| *x == r).unwrap();
                self.dropped_by[i] += 1;
            }
        }
        match v.session {
            SessionProbe::Hit => self.session_hits += 1,
            SessionProbe::Miss => self.session_misses += 1,
            SessionProbe::NotProbed => {}
        }
        self.lookups += v.lookups;
    }

    pub fn dropped(&self) -> u64 {
        self.dropped_by.iter().sum()
    }

    pub fn dropped_for(&self, reason: DropReason) -> u64 {
        let i = DropReason::ALL.iter().position(|x| *x == reason).unwrap();
        self.dropped_by[i]
    }

    /// One row under [`CSV_HEADER`]; `label` replaces the pipeline column.
    pub fn csv_row(&self, label: &str) -> String {
        let l = &self.lookups;
        format!(
            "{label},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.packets,
            self.forwarded,
            self.dropped(),
            self.session_hits,
            self.session_misses,
            l.nat_lookups,
            l.session_lookups,
            l.rule_evals,
            l.rules_scanned,
            l.qos_classifications,
            l.route_lookups,
            self.wall_ns
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.lookups;
        writeln!(f, "pipeline             {}", self.pipeline)?;
        writeln!(f, "packets              {}", self.packets)?;
        writeln!(f, "forwarded            {}", self.forwarded)?;
        writeln!(f, "dropped              {}", self.dropped())?;
        for (reason, n) in DropReason::ALL.iter().zip(self.dropped_by) {
            if n > 0 {
                writeln!(f, "  {:<18} {n}", reason.to_string())?;
            }
        }
        writeln!(f, "session hits         {}", self.session_hits)?;
        writeln!(f, "session misses       {}", self.session_misses)?;
        writeln!(f, "nat lookups          {}", l.nat_lookups)?;
        writeln!(f, "session lookups      {}", l.session_lookups)?;
        writeln!(f, "rule evaluations     {}", l.rule_evals)?;
        writeln!(f, "rules scanned        {}", l.rules_scanned)?;
        writeln!(f, "qos classifications  {}", l.qos_classifications)?;
        writeln!(f, "route lookups        {}", l.route_lookups)?;
        writeln!(f, "total lookups        {}", l.total())?;
        write!(f, "wall time ns         {}", self.wall_ns)
    }
}

/// Feed `packets` through `pipeline`, collecting every verdict.
pub fn run_pipeline(
    pipeline: &mut dyn Pipeline,
    packets: &[Packet],
) -> (MetricsReport, Vec<Verdict>) {
    let mut verdicts = Vec::with_capacity(packets.len());
    let start = Instant::now();
    for p in packets {
        verdicts.push(pipeline.process(p));
    }
    let wall_ns = start.elapsed().as_nanos() as u64;

    let mut report = MetricsReport::new(pipeline.name());
    for v in &verdicts {
        report.record(v);
    }
    report.wall_ns = wall_ns;
    (report, verdicts)
}

pub fn run(
    kind: PipelineKind,
    cfg: Arc<RouterConfig>,
    packets: &[Packet],
) -> (MetricsReport, Vec<Verdict>) {
    let mut pipeline = kind.build(cfg);
    run_pipeline(pipeline.as_mut(), packets)
}

/// One line per packet, `<index> <outcome>`. Accounting is left out so the
/// streams of the two pipelines can be compared byte for byte.
pub fn render_verdicts(verdicts: &[Verdict]) -> String {
    let mut out = String::new();
    for (i, v) in verdicts.iter().enumerate() {
        out.push_str(&format!("{i} {}\n", v.outcome));
    }
    out
}
