use std::path::Path;

use super::manifest::Stage;
use super::run::{init_run, Gateways, Run};
use super::stages::{plan_resume, run_stage, Limits, StageReport};
use super::{HarnessConfig, HarnessError};
use crate::artifact::read_json;
use crate::evaluator::EvaluationReport;

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum PipelineOutcome {
    Complete {
        report: EvaluationReport,
        stages: Vec<StageReport>,
    },
    /// A stage stopped at its item budget; `resume` picks it up.
    Interrupted {
        stage: Stage,
        remaining: usize,
        stages: Vec<StageReport>,
    },
}

async fn drive(run: &mut Run, limits: Limits) -> Result<PipelineOutcome, HarnessError> {
    let gateways = Gateways::build(run, limits.concurrency)?;
    let mut stages = Vec::new();
    while let Some(stage) = plan_resume(run)?.next {
        let report = run_stage(run, &gateways, stage, limits).await?;
        let (complete, remaining) = (report.complete, report.remaining);
        stages.push(report);
        if !complete {
            return Ok(PipelineOutcome::Interrupted {
                stage,
                remaining,
                stages,
            });
        }
    }
    let path = run.dir.report_json();
    let report = read_json(&path)
        .map_err(|e| HarnessError::Inconsistent(format!("{}: {e}", path.display())))?;
    Ok(PipelineOutcome::Complete { report, stages })
}

/// Initializes `dir` from `config` and runs every stage in order.
pub async fn full_pipeline(
    config: &HarnessConfig,
    dir: &Path,
    limits: Limits,
) -> Result<PipelineOutcome, HarnessError> {
    let mut run = init_run(config, dir)?;
    drive(&mut run, limits).await
}

/// Continues an existing run from its earliest incomplete stage.
pub async fn resume(dir: &Path, limits: Limits) -> Result<PipelineOutcome, HarnessError> {
    let mut run = Run::open(dir)?;
    drive(&mut run, limits).await
}
