//! Generates a synthetic epoch dataset, balances it, and round-trips it through
//! the binary and CSV formats.

use neurograph::data::{
    balance_dataset, export_csv, generate_synthetic, import_csv, load_epochs, save_epochs, BalanceOptions, Group,
    SyntheticSpec,
};
use neurograph::ChannelLayout;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec::new(ChannelLayout::standard_12(), 64.0, 2.0, 5);
    let ds = generate_synthetic(&spec)?;
    println!("{} epochs, {} channels x {} samples at {} Hz", ds.len(), ds.n_channels(), ds.n_times(), ds.fs());

    let balanced = balance_dataset(&ds, BalanceOptions::default())?;
    for g in Group::ALL {
        let [fail, ok] = ds.group(g).class_counts();
        let [bfail, bok] = balanced.group(g).class_counts();
        println!("{:<12} failure/success {fail:>3}/{ok:<3} -> {bfail:>3}/{bok:<3}", g.name());
    }

    let dir = std::env::temp_dir();
    let bin = dir.join("synthetic.ngep");
    save_epochs(&balanced, &bin)?;
    assert_eq!(load_epochs(&bin, None)?, balanced);

    let mut text = Vec::new();
    export_csv(&balanced, &mut text)?;
    let back = import_csv(text.as_slice(), balanced.fs(), Some(balanced.layout()))?;
    println!("binary round trip exact; CSV round trip max error {:.1e}", max_error(&balanced, &back));
    Ok(())
}

fn max_error(a: &neurograph::data::EpochDataset, b: &neurograph::data::EpochDataset) -> f64 {
    a.epochs()
        .iter()
        .zip(b.epochs())
        .flat_map(|(x, y)| x.signal.data().iter().zip(y.signal.data()).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}
