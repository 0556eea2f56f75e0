//! Acceptance battery for the pendulum benchmark.
//!
//! Runs every criterion, prints one line each and exits non-zero if any
//! criterion fails or does not run. Set `MBPETC_ACCEPT_ONLY=A1,A7` to run a
//! subset.

use std::process::ExitCode;

use mbpetc::acceptance::{run_acceptance, AcceptanceOptions, Verdict, CRITERIA};

fn main() -> ExitCode {
    let only: Vec<String> = std::env::var("MBPETC_ACCEPT_ONLY")
        .map(|s| s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect())
        .unwrap_or_default();
    let dir = tempfile::tempdir().expect("temporary directory");
    let opts = AcceptanceOptions {
        only: only.clone(),
        out_dir: dir.path().to_path_buf(),
        constants: None,
    };
    let report = match run_acceptance(&opts) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("acceptance battery could not run: {e}");
            return ExitCode::FAILURE;
        }
    };
    print!("{report}");

    let expected: Vec<&str> = if only.is_empty() {
        CRITERIA.to_vec()
    } else {
        CRITERIA.iter().copied().filter(|c| only.iter().any(|o| o == c)).collect()
    };
    let mut ok = true;
    for id in expected {
        match report.get(id).map(|r| r.verdict) {
            Some(Verdict::Pass) => {}
            Some(v) => {
                println!("{id} did not pass: {v:?}");
                ok = false;
            }
            None => {
                println!("{id} missing from report");
                ok = false;
            }
        }
    }
    let passed = report.results.iter().filter(|r| r.verdict == Verdict::Pass).count();
    println!("acceptance: {passed}/{} criteria passed", report.results.len());
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
