//! Slot-by-slot detector dead-time simulation, compared with the
//! saturation model as the pulse spacing is scanned.
//!
//! cargo run --release --example deadtime_timeline

use mdiqkd::saturation::{alive_prob, hit_prob, raw_bits_per_deadtime};
use mdiqkd::simulator::simulate_deadtime_timeline;
use mdiqkd::{Encoding, ProtocolConfig};

fn main() -> mdiqkd::Result<()> {
    let (n, p_s, tau) = (4, 0.2, 20e-9);
    let p_hit = hit_prob(n, p_s, Encoding::Space)?;
    println!("space N={n}, P_s={p_s}: P_hit = {p_hit:.5}, model optimum T_p = {:.3e} s", tau * p_hit);
    println!("{:>10} {:>10} {:>10} {:>10} {:>10}", "T_p/opt", "N_raw sim", "N_raw mod", "dead sim", "dead mod");
    for scale in [0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 4.0] {
        let t_p = tau * p_hit * scale;
        let mut cfg = ProtocolConfig::ideal(n, Encoding::Space);
        cfg.channel.detector_efficiency = p_s;
        cfg.detector.dead_time_s = tau;
        cfg.timing.pulse_sep_s = t_p;
        cfg.timing.min_pulse_sep_s = t_p;
        let pulses = (2e4 * tau / t_p) as u64;
        let sim = simulate_deadtime_timeline(&cfg, pulses, 7)?;
        let model = raw_bits_per_deadtime(n, p_s, tau, t_p, Encoding::Space)?;
        let m = tau / t_p;
        let dead_model = m * p_hit * alive_prob(p_hit, m);
        let dead_sim =
            sim.detector_dead_fraction.iter().sum::<f64>() / sim.detector_dead_fraction.len() as f64;
        println!(
            "{scale:>10.2} {:>10.4} {model:>10.4} {dead_sim:>10.4} {dead_model:>10.4}",
            sim.raw_coincidences_per_deadtime
        );
    }
    Ok(())
}
