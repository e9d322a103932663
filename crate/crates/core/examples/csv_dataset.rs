//! Writes a synthetic dataset to CSV, loads it back and checks the round trip.

use appeal::data::{generate, load_csv, CsvSchema, SynthKind, SynthSpec};

fn main() -> appeal::Result<()> {
    let mut spec = SynthSpec::std_synth(5);
    spec.kind = SynthKind::ConcentricRings;
    spec.d = 2;
    spec.k = 3;
    spec.n_per_class = 50;
    spec.overlapping_classes = None;
    spec.noise_std = 0.1;
    let (train, _) = generate(&spec)?;

    let dir = std::env::temp_dir().join("appeal-csv-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("rings.csv");
    train.save_csv(&path)?;
    let back = load_csv(&path, CsvSchema::Classification { d: 2, k: 3 })?;
    println!("wrote {} rows to {}", train.len(), path.display());
    println!("round trip identical: {}", back.features() == train.features() && back.labels() == train.labels());
    for line in std::fs::read_to_string(&path)?.lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}
