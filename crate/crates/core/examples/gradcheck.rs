//! Finite-difference check of every op and loss, then the same suite with a
//! deliberately broken ReLU backward.

use liga::harness::{run_gradcheck, Fault, GradcheckConfig};

fn main() -> liga::Result<()> {
    let cfg = GradcheckConfig {
        points: 5,
        ..GradcheckConfig::default()
    };
    let report = run_gradcheck(&cfg)?;
    print!("{}", report.csv());
    println!("passed: {}", report.passed());
    let broken = run_gradcheck(&GradcheckConfig {
        faults: vec![Fault::ReluBackward],
        ..cfg
    })?;
    println!("with broken relu: passed {}, worst {:.3e}", broken.passed(), broken.worst());
    Ok(())
}
