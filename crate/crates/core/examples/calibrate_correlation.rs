//! Finds the consumption coupling that yields a target correlation, and shows a miss.
use explainmix::simulator::{calibrate_correlation, CohortConfig};
use explainmix::Error;

fn main() -> explainmix::Result<()> {
    let config = CohortConfig::default();
    let kappa = calibrate_correlation(&config, 0.17, 0.05, 7)?;
    println!("target r 0.17: kappa = {kappa:.3}");
    match calibrate_correlation(&config, 0.99, 0.05, 7) {
        Err(e @ Error::Calibration { .. }) => println!("target r 0.99: {e} (exit code {})", e.exit_code()),
        other => println!("target r 0.99: unexpected {other:?}"),
    }
    Ok(())
}
