//! Expected goodput of every speculative length across batch sizes for the
//! shipped cost presets. The best length shrinks to zero once verification
//! turns compute-bound.

use nightjar::cost_model::{best_gamma, expected_goodput, CostModelParams};

fn main() {
    for name in CostModelParams::PRESETS {
        let params = CostModelParams::preset(name).expect("known preset");
        println!("{name}  (alpha = {})", params.alpha);
        println!("{:>4} {:>5}  goodput by gamma (tokens/s)", "B", "best");
        for batch in [1, 2, 4, 8, 16, 32, 64] {
            let (best, _) = best_gamma(&params, batch, 5);
            let row: Vec<String> = (0..=5).map(|g| format!("{:>7.0}", expected_goodput(&params, batch, g))).collect();
            println!("{batch:>4} {best:>5}  {}", row.join(""));
        }
        println!();
    }
}
