//! Picks the largest candidate architecture that fits a FLOPs budget.

use appeal::models::{count_flops, profile_select, ArchSpec};
use appeal::Error;

fn main() -> appeal::Result<()> {
    let pool: Vec<(String, ArchSpec)> = [("tiny", 8), ("small", 16), ("medium", 32), ("large", 64)]
        .into_iter()
        .map(|(name, w)| (name.to_string(), ArchSpec::classifier(8, vec![w], vec![w, 4])))
        .collect();
    for (name, arch) in &pool {
        println!("{name:>7} {arch}: {} FLOPs ({} without predictor)", count_flops(arch, true), count_flops(arch, false));
    }
    for budget in [100, 1000, 3000, 20_000] {
        match profile_select(&pool, budget) {
            Ok(name) => println!("budget {budget:>6} -> {name}"),
            Err(Error::NoArchitectureFits { .. }) => println!("budget {budget:>6} -> nothing fits"),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}
