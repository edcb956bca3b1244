//! Picks the most dissimilar of N random sets of joint arrangements.
//!
//! cargo run --release --example select_arrangements -- [L] [N] [seed]

use std::time::Instant;

use skelvit::arrangement::{max_dissimilarity, select_best};
use skelvit::skeleton::NUM_JOINTS;

fn main() -> skelvit::Result<()> {
    let arg = |i: usize, default: u64| std::env::args().nth(i).map(|s| s.parse().expect("integer")).unwrap_or(default);
    let (l, n, seed) = (arg(1, 25) as usize, arg(2, 1000), arg(3, 0));
    let start = Instant::now();
    let sel = select_best(seed, n, l, NUM_JOINTS)?;
    println!(
        "best of {n} draws: #{} with score {} (bound {}) in {:.2}s",
        sel.draw,
        sel.score,
        max_dissimilarity(l, NUM_JOINTS),
        start.elapsed().as_secs_f64()
    );
    for a in sel.set.members().iter().take(3) {
        println!("{:?}", a.order());
    }
    print!("{}", if l > 3 { "...\n" } else { "" });
    Ok(())
}
