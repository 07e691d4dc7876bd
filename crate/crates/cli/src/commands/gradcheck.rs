use clap::Args;
use neotraj::objective::gradcheck::{run_gradcheck, GradcheckReport};

use super::emit;
use crate::error::CliError;

/// Largest accepted relative error between analytic and numeric gradients.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<GradcheckReport, CliError> {
    if args.trials == 0 {
        eprintln!("warning: --trials 0 checks nothing");
    }
    let report = run_gradcheck(args.trials, args.seed);
    emit(None, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    let worst = report.max_error();
    if worst > GRADCHECK_TOLERANCE {
        return Err(CliError::Runtime(format!(
            "max relative error {worst:e} exceeds {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(report)
}
