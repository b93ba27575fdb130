use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::{Deserialize, Serialize};

use super::eval::{eval_budgeted, FeatureMap, FeatureSampler};
use super::{evaluate, parse, RewardProgram};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Syntax,
    Sandbox,
    Safety,
    Passed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub samples: usize,
    pub bound: f64,
    /// Node evaluations allowed per sample.
    pub eval_budget: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig { samples: 100, bound: 10.0, eval_budget: 4096 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputSummary {
    pub min: f64,
    pub max: f64,
    pub non_finite: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Failing stage, or `Passed`.
    pub stage: Stage,
    pub passed: bool,
    pub detail: String,
    pub sampled_outputs: Option<OutputSummary>,
    pub first_failing_input: Option<FeatureMap>,
}

impl ValidationReport {
    fn fail(stage: Stage, detail: String) -> Self {
        ValidationReport { stage, passed: false, detail, sampled_outputs: None, first_failing_input: None }
    }
}

/// A program that passed all three stages. Only [`gate`] constructs one.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidatedProgram {
    program: RewardProgram,
    report: ValidationReport,
}

impl ValidatedProgram {
    pub fn program(&self) -> &RewardProgram {
        &self.program
    }

    pub fn report(&self) -> &ValidationReport {
        &self.report
    }

    pub fn source(&self) -> &str {
        &self.program.source
    }

    pub fn evaluate(&self, features: &FeatureMap) -> f64 {
        evaluate(&self.program, features)
    }
}

/// Sandbox and safety stages for an already parsed program.
pub fn validate(program: &RewardProgram, sampler: &mut dyn FeatureSampler, cfg: &ValidationConfig) -> ValidationReport {
    let inputs = sampler.sample(cfg.samples);
    if inputs.len() != cfg.samples {
        return ValidationReport::fail(Stage::Sandbox, format!("sampler produced {} of {} feature maps", inputs.len(), cfg.samples));
    }
    if let Some(bad) = inputs.iter().find(|m| !m.is_finite()) {
        return ValidationReport {
            first_failing_input: Some(*bad),
            ..ValidationReport::fail(Stage::Sandbox, "sampler produced a non-finite feature".into())
        };
    }

    let mut outputs = Vec::with_capacity(inputs.len());
    for input in &inputs {
        let mut budget = cfg.eval_budget;
        let run = catch_unwind(AssertUnwindSafe(|| eval_budgeted(&program.ast, input, &mut budget)));
        match run {
            Ok(Ok(v)) => outputs.push(v),
            Ok(Err(_)) => {
                return ValidationReport {
                    first_failing_input: Some(*input),
                    ..ValidationReport::fail(Stage::Sandbox, format!("evaluation exceeded {} node budget", cfg.eval_budget))
                }
            }
            Err(_) => {
                return ValidationReport {
                    first_failing_input: Some(*input),
                    ..ValidationReport::fail(Stage::Sandbox, "evaluation aborted".into())
                }
            }
        }
    }

    let finite: Vec<f64> = outputs.iter().copied().filter(|v| v.is_finite()).collect();
    let summary = OutputSummary {
        min: finite.iter().copied().fold(f64::INFINITY, f64::min),
        max: finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        non_finite: outputs.len() - finite.len(),
    };
    let offending = outputs.iter().position(|v| !v.is_finite() || v.abs() > cfg.bound);
    match offending {
        Some(i) => {
            let detail = if summary.non_finite > 0 {
                format!("{} of {} outputs non-finite", summary.non_finite, outputs.len())
            } else {
                format!("output {} exceeds bound {}", outputs[i], cfg.bound)
            };
            ValidationReport {
                stage: Stage::Safety,
                passed: false,
                detail,
                sampled_outputs: Some(summary),
                first_failing_input: Some(inputs[i]),
            }
        }
        None => ValidationReport {
            stage: Stage::Passed,
            passed: true,
            detail: format!("{} samples within [-{b}, {b}]", outputs.len(), b = cfg.bound),
            sampled_outputs: Some(summary),
            first_failing_input: None,
        },
    }
}

/// Runs all three stages on source text.
pub fn gate(source: &str, sampler: &mut dyn FeatureSampler, cfg: &ValidationConfig) -> (ValidationReport, Option<ValidatedProgram>) {
    let program = match parse(source) {
        Ok(p) => p,
        Err(e) => return (ValidationReport::fail(Stage::Syntax, e.to_string()), None),
    };
    let report = validate(&program, sampler, cfg);
    if report.passed {
        (report.clone(), Some(ValidatedProgram { program, report }))
    } else {
        (report, None)
    }
}
