//! Builds the Z and X bases, prints Charlie's detector numbering and shows
//! which parity each announced coincidence should carry.
//!
//! cargo run --example basis_and_parity -- [N]

use mdiqkd::model::{
    build_basis, classify_event, expected_parity, BasisKind, DetectionMode, ExpectedParity,
};

fn main() -> mdiqkd::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let x = build_basis(n, BasisKind::X)?;
    println!(
        "N = {n}: X basis is {} (orthonormality error {:.1e})",
        if x.real { "real Hadamard" } else { "complex Fourier" },
        x.orthonormality_error()
    );
    for (k, row) in x.vectors.iter().enumerate() {
        let signs: Vec<String> = row
            .iter()
            .map(|a| format!("{:+.3}{:+.3}i", a.re, a.im))
            .collect();
        println!("  |x{k}> = [{}]", signs.join(", "));
    }

    println!("\ndetector numbering (bin, port) -> detector");
    for bin in 0..n {
        let p0 = DetectionMode::new(bin, 0).detector_number();
        let p1 = DetectionMode::new(bin, 1).detector_number();
        println!("  bin {bin}: ports 0/1 -> detectors {p0}/{p1}");
    }

    let by_number = |d| DetectionMode::from_detector_number(d).expect("detector in range");
    let last = 2 * n;
    for pair in [[1, last - 1], [1, last], [1, 2]] {
        let clicks: Vec<_> = pair.iter().map(|&d| by_number(d)).collect();
        println!("clicks {:?} -> {:?}", pair, classify_event(&clicks));
    }

    println!("\nexpected parity for Alice |x0>, Bob |x{}>", n - 1);
    for i in 0..n {
        for j in (i + 1)..n {
            let p = expected_parity(x.state(0), x.state(n - 1), i, j);
            let tag = match p {
                ExpectedParity::Plus => "+",
                ExpectedParity::Minus => "-",
                ExpectedParity::Indeterminate => "?",
            };
            println!("  subspace {{{i},{j}}}: {tag}");
        }
    }
    Ok(())
}
