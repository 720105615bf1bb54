use std::process::ExitCode;
use std::time::Instant;

use rmtlab::config::AcceptanceScale;
use rmtlab::run_criteria;

fn main() -> ExitCode {
    let scale = match std::env::var("RMTLAB_ACCEPTANCE_SCALE").as_deref() {
        Ok("quick") => AcceptanceScale::Quick,
        _ => AcceptanceScale::Full,
    };
    let seed = std::env::var("RMTLAB_ACCEPTANCE_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(20240901);
    let dir = tempfile::tempdir().expect("temporary directory");
    println!("acceptance suite ({scale:?} scale, seed {seed})");
    let start = Instant::now();
    let outcomes = run_criteria(scale, seed, Some(dir.path()), |o| {
        println!("{}  ({:.1}s)", o.summary_line(), o.runtime_seconds);
    });
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!(
        "{} of {} criteria passed in {:.1}s",
        outcomes.len() - failed,
        outcomes.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
