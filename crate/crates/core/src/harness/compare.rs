use std::fmt;
use std::sync::Arc;

use crate::config::RouterConfig;
use crate::packet::{render_trace_record, Packet};
use crate::pipeline::{BaselinePipeline, IntegratedPipeline, Pipeline, Verdict};

use super::metrics::{run_pipeline, MetricsReport};

#[derive(Debug, Clone)]
pub struct Divergence {
    pub index: usize,
    pub packet: Packet,
    pub left: Verdict,
    pub right: Verdict,
}

#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub packets: usize,
    pub divergence: Option<Divergence>,
    pub left: MetricsReport,
    pub right: MetricsReport,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.divergence.is_none()
    }
}

impl fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.divergence {
            None => writeln!(f, "PASS {} packets, verdicts identical", self.packets)?,
            Some(d) => {
                writeln!(f, "FAIL at packet {}", d.index)?;
                writeln!(f, "  packet      {}", render_trace_record(&d.packet))?;
                writeln!(f, "  {:<11} {}", self.left.pipeline, d.left.outcome)?;
                writeln!(f, "  {:<11} {}", self.right.pipeline, d.right.outcome)?;
            }
        }
        let (a, b) = (self.left.lookups.total(), self.right.lookups.total());
        write!(
            f,
            "lookups {} {a}, {} {b}",
            self.left.pipeline, self.right.pipeline
        )?;
        if b > 0 {
            write!(f, ", ratio {:.3}", a as f64 / b as f64)?;
        }
        Ok(())
    }
}

/// Run both pipelines over the same packets and report the first packet on
/// which their outcomes differ.
pub fn compare_pipelines(
    left: &mut dyn Pipeline,
    right: &mut dyn Pipeline,
    packets: &[Packet],
) -> EquivalenceReport {
    let (left_report, lv) = run_pipeline(left, packets);
    let (right_report, rv) = run_pipeline(right, packets);
    let divergence = lv
        .iter()
        .zip(&rv)
        .position(|(a, b)| !a.same_outcome(b))
        .map(|index| Divergence {
            index,
            packet: packets[index],
            left: lv[index],
            right: rv[index],
        });
    EquivalenceReport {
        packets: packets.len(),
        divergence,
        left: left_report,
        right: right_report,
    }
}

/// Baseline on the left, integrated on the right.
pub fn compare(cfg: Arc<RouterConfig>, packets: &[Packet]) -> EquivalenceReport {
    let mut baseline = BaselinePipeline::new(cfg.clone());
    let mut integrated = IntegratedPipeline::new(cfg);
    compare_pipelines(&mut baseline, &mut integrated, packets)
}
