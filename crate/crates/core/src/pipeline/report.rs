//! CSV writers for pipeline outputs.

use std::io::Write;

use super::{CycleRecord, RobustnessRow, StageId};
use crate::error::Result;
use crate::optimizer::SolveReport;
use crate::topology::TopologicalGraph;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadderRow {
    pub stage: StageId,
    pub seed: u64,
    pub ate: f64,
}

pub fn write_ladder_csv<W: Write>(rows: &[LadderRow], mut out: W) -> Result<()> {
    writeln!(out, "stage,seed,ate_rmse")?;
    for r in rows {
        writeln!(out, "{},{},{:.6}", r.stage, r.seed, r.ate)?;
    }
    Ok(())
}

/// Rows are `(seed, stage, cycle record)`.
pub fn write_feedback_csv<W: Write>(rows: &[(u64, StageId, CycleRecord)], mut out: W) -> Result<()> {
    writeln!(
        out,
        "seed,stage,cycle,proposals,tp,fp,accuracy,loops_accepted,loops_rejected,manhattan_edges,chi2,ate_rmse"
    )?;
    for (seed, stage, c) in rows {
        writeln!(
            out,
            "{seed},{stage},{},{},{},{},{:.6},{},{},{},{:.6},{:.6}",
            c.cycle,
            c.proposals,
            c.true_positives,
            c.false_positives,
            c.accuracy(),
            c.loops_accepted,
            c.loops_rejected,
            c.manhattan_edges,
            c.chi2,
            c.ate
        )?;
    }
    Ok(())
}

pub fn write_robustness_csv<W: Write>(rows: &[RobustnessRow], mut out: W) -> Result<()> {
    writeln!(out, "seed,fraction,true_loops,false_positives,false_negatives,ate_dcs,ate_nonrobust")?;
    for r in rows {
        writeln!(
            out,
            "{},{:.3},{},{},{},{:.6},{:.6}",
            r.seed, r.fraction, r.true_loops, r.false_positives, r.false_negatives, r.ate_dcs, r.ate_nonrobust
        )?;
    }
    Ok(())
}

pub fn write_regions_csv<W: Write>(tg: &TopologicalGraph, mut out: W) -> Result<()> {
    writeln!(out, "region_id,label,pg_start,pg_end")?;
    for (k, r) in tg.regions.iter().enumerate() {
        writeln!(out, "{k},{},{},{}", r.label, r.pg_start, r.pg_end)?;
    }
    Ok(())
}

/// Rows are `(seed, stage, report)`.
pub fn write_report_csv<W: Write>(rows: &[(u64, StageId, &SolveReport)], mut out: W) -> Result<()> {
    writeln!(out, "seed,stage,initial_chi2,final_chi2,iterations,converged,downweighted_edges")?;
    for (seed, stage, r) in rows {
        let down = r.scales.iter().filter(|s| **s < 1.0).count();
        writeln!(
            out,
            "{seed},{stage},{:.6},{:.6},{},{},{down}",
            r.initial_chi2, r.final_chi2, r.iterations, r.converged
        )?;
    }
    Ok(())
}
