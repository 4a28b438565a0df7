//! Pass composition.

use thiserror::Error;

use crate::lang::{has_errors, validate, Diagnostic, Program, Severity};
use crate::passes::aggregate::apply_aggregate;
use crate::passes::coarsen::apply_coarsen;
use crate::passes::threshold::apply_threshold;
use crate::passes::*;

#[derive(Debug, Clone, PartialEq)]
pub struct PassConfig {
    pub threshold: Option<ThresholdConfig>,
    pub coarsen: Option<CoarsenConfig>,
    pub aggregate: Option<AggConfig>,
    /// Order in which enabled passes run.
    pub order: Vec<PassKind>,
}

impl Default for PassConfig {
    fn default() -> Self {
        PassConfig {
            threshold: None,
            coarsen: None,
            aggregate: None,
            order: PassKind::CANONICAL.to_vec(),
        }
    }
}

impl PassConfig {
    pub fn enabled(&self, p: PassKind) -> bool {
        match p {
            PassKind::Threshold => self.threshold.is_some(),
            PassKind::Coarsen => self.coarsen.is_some(),
            PassKind::Aggregate => self
                .aggregate
                .is_some_and(|a| a.granularity != AggGranularity::None),
        }
    }

    /// Short label such as `T+C+A`, or `none`.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = self
            .order
            .iter()
            .filter(|p| self.enabled(**p))
            .map(|p| match p {
                PassKind::Threshold => "T",
                PassKind::Coarsen => "C",
                PassKind::Aggregate => "A",
            })
            .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }

    fn check(&self) -> Result<(), PipelineError> {
        let mut seen = Vec::new();
        for p in &self.order {
            if seen.contains(p) {
                return Err(PipelineError::Config(format!("pass `{}` listed twice", p.name())));
            }
            seen.push(*p);
        }
        for p in PassKind::CANONICAL {
            if self.enabled(p) && !seen.contains(&p) {
                return Err(PipelineError::Config(format!("pass `{}` enabled but not ordered", p.name())));
            }
        }
        if let Some(a) = &self.aggregate {
            a.check()?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Pass(#[from] PassError),
    #[error("{stage} produced an invalid program ({} errors)", .diagnostics.iter().filter(|d| d.severity == Severity::Error).count())]
    Invalid {
        stage: String,
        diagnostics: Vec<Diagnostic>,
    },
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOutput {
    pub program: Program,
    pub manifest: Vec<ManifestEntry>,
    pub diagnostics: Vec<Diagnostic>,
}

impl PipelineOutput {
    pub fn manifest_text(&self) -> String {
        self.manifest.iter().map(|m| format!("{m}\n")).collect()
    }
}

fn check_valid(stage: &str, p: &Program) -> Result<(), PipelineError> {
    let diags = validate(p);
    if has_errors(&diags) {
        return Err(PipelineError::Invalid {
            stage: stage.to_string(),
            diagnostics: diags,
        });
    }
    Ok(())
}

/// Apply the enabled passes in `cfg.order`. Each pass works on a copy, so
/// an error leaves no partial result.
pub fn run_pipeline(program: &Program, cfg: &PassConfig) -> Result<PipelineOutput, PipelineError> {
    cfg.check()?;
    check_valid("input", program)?;
    let mut out = PipelineOutput {
        program: program.clone(),
        ..Default::default()
    };
    for &pass in &cfg.order {
        if !cfg.enabled(pass) {
            continue;
        }
        let step = match pass {
            PassKind::Threshold => apply_threshold(&out.program, cfg.threshold.as_ref().expect("enabled")),
            PassKind::Coarsen => apply_coarsen(&out.program, cfg.coarsen.as_ref().expect("enabled")),
            PassKind::Aggregate => apply_aggregate(&out.program, cfg.aggregate.as_ref().expect("enabled"))?,
        };
        check_valid(pass.name(), &step.program)?;
        out.program = step.program;
        out.manifest.extend(step.manifest);
        out.diagnostics.extend(step.diagnostics);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse;

    #[test]
    fn empty_pipeline_is_identity() {
        let p = parse("kernel c() {}\nkernel k() { launch c<<<1, 1>>>(); }\nhost main() { launch k<<<1, 1>>>(); }").unwrap();
        let out = run_pipeline(&p, &PassConfig::default()).unwrap();
        assert_eq!(out.program, p);
        assert!(out.manifest.is_empty());
    }

    #[test]
    fn duplicate_order_rejected() {
        let cfg = PassConfig {
            order: vec![PassKind::Threshold, PassKind::Threshold],
            ..PassConfig::default()
        };
        assert!(run_pipeline(&Program::default(), &cfg).is_err());
    }
}
