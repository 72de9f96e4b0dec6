//! Exact and normal-approximation rank tests on small samples.

use neurograph::mapgeo::{mann_whitney_u, wilcoxon_signed_rank};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0])?;
    println!("Mann-Whitney {{1,2}} vs {{3,4}}: U = {}, p = {:.4} ({})", r.statistic, r.p, r.method.name());

    let a = [0.12, 0.31, 0.18, 0.40, 0.22];
    let b = [0.35, 0.52, 0.41, 0.60, 0.29, 0.48];
    let r = mann_whitney_u(&a, &b)?;
    println!("Mann-Whitney with 5 vs 6: U = {}, p = {:.4} ({})", r.statistic, r.p, r.method.name());

    let before = [0.50, 0.62, 0.48, 0.55];
    let after = [0.41, 0.60, 0.40, 0.47];
    let r = wilcoxon_signed_rank(&before, &after)?;
    println!("Wilcoxon paired n=4: W = {}, p = {:.4} ({})", r.statistic, r.p, r.method.name());

    let big_a: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
    let big_b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() + 0.3).collect();
    let r = mann_whitney_u(&big_a, &big_b)?;
    println!("Mann-Whitney with 40 vs 40: U = {}, p = {:.4} ({})", r.statistic, r.p, r.method.name());
    Ok(())
}
