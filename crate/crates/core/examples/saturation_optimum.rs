//! Detector saturation: optimal pulse spacing, closed-form maxima and the
//! per-detector rate as a function of dimension.
//!
//! cargo run --example saturation_optimum -- [P_s] [tau_d/T_min]

use mdiqkd::saturation::{
    best_dimension, closed_form_max, dimension_sweep, optimal_dimension, optimize_pulse_spacing,
};
use mdiqkd::{Encoding, ProtocolConfig};

fn main() -> mdiqkd::Result<()> {
    let mut args = std::env::args().skip(1);
    let p_s: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.2);
    let ratio: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(100.0);
    let tau = 20e-9;
    let t_min = tau / ratio;

    println!("P_s = {p_s}, tau_d = {tau:e} s, minimum pulse separation {t_min:e} s\n");
    println!("{:>4} {:>6} {:>12} {:>14} {:>14}", "N", "enc", "T_p (s)", "numeric b/s", "closed b/s");
    for enc in [Encoding::Space, Encoding::Time] {
        for n in [2, 4, 8, 16] {
            let opt = optimize_pulse_spacing(n, p_s, tau, t_min, enc)?;
            let cf = closed_form_max(n, p_s, tau, enc)?;
            println!(
                "{n:>4} {enc:>6} {:>12.3e} {:>14.4e} {cf:>14.4e}{}",
                opt.pulse_sep_s,
                opt.n_raw / tau,
                if opt.constrained { "  (at minimum)" } else { "" }
            );
        }
    }

    let mut cfg = ProtocolConfig::reference(2, Encoding::Space);
    cfg.channel.detector_efficiency = p_s;
    cfg.detector.dark_count = 0.0;
    cfg.timing.min_pulse_sep_s = t_min;
    cfg.timing.pulse_sep_s = t_min;
    println!("\nN_opt = 2 + P_s tau_d / T_min = {:.2}", optimal_dimension(p_s, tau, t_min));
    for enc in [Encoding::Space, Encoding::Time] {
        cfg.encoding = enc;
        let sweep = dimension_sweep(&cfg, 40)?;
        println!("{enc}: R_det per dimension");
        for (n, r) in sweep.iter().filter(|(n, _)| n % 4 == 2 || *n <= 4) {
            println!("  N={n:>2}  R_det = {:.4e} bits/s", r.raw_rate_per_detector);
        }
        println!("  best N = {:?}", best_dimension(&sweep));
    }
    Ok(())
}
