//! Compare backpropagation-through-time gradients with central finite
//! differences on small random RNN and LSTM forecasters.
//!
//! cargo run --example gradient_check

use gwlcast::gradcheck::{sweep, verdict, GradcheckConfig, TOLERANCE};

fn main() -> gwlcast::Result<()> {
    let cfg = GradcheckConfig::default();
    let outcomes = sweep(&cfg, false)?;
    for o in &outcomes {
        println!("{:<4} seed {:>2}  {:.2e}", o.kind, o.seed, o.max_rel_error);
    }
    println!("worst {:.2e} (tolerance {TOLERANCE:e})", verdict(&outcomes)?);

    // A sign error in one gradient entry must be caught.
    let broken = sweep(&GradcheckConfig { seeds: 1, ..cfg }, true)?;
    println!("with one flipped entry: {:.2e}", broken[0].max_rel_error);
    Ok(())
}
