//! End-to-end runs of a loaded scenario and the files they write.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::metrics::{savings_for_delivered, savings_report, PaperConversion, SavingsSummary};
use crate::pidctl::{
    run_proactive, run_stepped, DeliveryReport, PidError, StepConfig, StepFile, StepGate,
    StepReport,
};
use crate::scenario::{FileSource, Mode, Scenario};
use crate::simnet::SimError;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Pid(#[from] PidError),
    #[error("cannot read {path}: {source}")]
    ReadFile {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Clone, Debug)]
pub enum RunReport {
    Stepped(StepReport),
    Proactive(DeliveryReport),
}

impl RunReport {
    pub fn render(&self) -> String {
        match self {
            RunReport::Stepped(r) => r.render(),
            RunReport::Proactive(r) => r.render(),
        }
    }

    pub fn delivered_count(&self) -> u64 {
        match self {
            RunReport::Stepped(r) => u64::from(r.delivered_to.is_some()),
            RunReport::Proactive(r) => r.totals.delivered as u64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub seed: u64,
    pub scenario_echo: String,
    pub log: String,
    pub report: RunReport,
    pub summary: SavingsSummary,
    /// 0 unless an internal error occurred; undelivered members do not count.
    pub exit_code: i32,
}

impl RunArtifacts {
    /// Everything printed to stdout after the version banner.
    pub fn stdout_text(&self) -> String {
        format!(
            "{}\n{}\n{}",
            self.scenario_echo,
            self.report.render(),
            self.summary
        )
    }
}

/// Runs the scenario in its configured mode. `seed` overrides the scenario
/// seed when set.
pub fn run(
    scenario: &Scenario,
    seed: Option<u64>,
    gate: &mut dyn StepGate,
) -> Result<RunArtifacts, RunError> {
    let seed = seed.unwrap_or(scenario.seed);
    let mut world = scenario.build_world(seed)?;
    let conversion = PaperConversion::default();

    let (report, summary) = match scenario.mode {
        Mode::Stepped => {
            let file = match &scenario.file {
                FileSource::Inline(f) => StepFile::Inline(f.clone()),
                FileSource::Path(p) => StepFile::Path(p.clone()),
            };
            let config = StepConfig {
                local: scenario.local.mac,
                file,
                target: scenario.step_target,
            };
            let report = run_stepped(&mut world, &config, gate)?;
            let summary = savings_for_delivered(
                u64::from(report.delivered_to.is_some()),
                &scenario.usage,
                &conversion,
            );
            (RunReport::Stepped(report), summary)
        }
        Mode::Proactive => {
            let roster = scenario
                .roster
                .as_ref()
                .expect("validated proactive scenario has a roster");
            let file = match &scenario.file {
                FileSource::Inline(f) => f.clone(),
                FileSource::Path(p) => crate::pidctl::FilePayload::new(
                    p.to_string_lossy(),
                    fs::read(p).map_err(|source| RunError::ReadFile {
                        path: p.display().to_string(),
                        source,
                    })?,
                ),
            };
            let report = run_proactive(
                &mut world,
                scenario.local.mac,
                roster,
                &file,
                scenario.inquiry_interval,
            )?;
            let summary = savings_report(&report, &scenario.usage, &conversion);
            (RunReport::Proactive(report), summary)
        }
    };

    let mut echo = scenario.describe();
    if seed != scenario.seed {
        echo.push_str(&format!("seed_override seed={seed}\n"));
    }
    Ok(RunArtifacts {
        seed,
        scenario_echo: echo,
        log: world.render_log(),
        report,
        summary,
        exit_code: 0,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), RunError> {
    fs::write(path, contents).map_err(|source| RunError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `events.log`, `report.txt` and `summary.txt` into `dir`.
pub fn write_report_dir(artifacts: &RunArtifacts, dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(|source| RunError::Write {
        path: dir.display().to_string(),
        source,
    })?;
    write(&dir.join("events.log"), &artifacts.log)?;
    write(&dir.join("report.txt"), &artifacts.report.render())?;
    write(&dir.join("summary.txt"), &artifacts.summary.to_string())
}

pub fn write_log(artifacts: &RunArtifacts, path: &Path) -> Result<(), RunError> {
    write(path, &artifacts.log)
}
