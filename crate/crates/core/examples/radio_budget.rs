//! Link budget and capacity as a function of distance.

use iab_sim::radio::{self, Direction, RadioParams};
use iab_sim::Carrier;

fn main() -> anyhow::Result<()> {
    let p = RadioParams::default();
    let n41 = Carrier::new("n41", 2.585e9, 20e6, 30e3)?;
    let n78 = Carrier::new("n78", 3.47e9, 30e6, 30e3)?;
    println!("{:>8} {:>10} {:>10} {:>8} {:>12}", "d (m)", "PL (dB)", "RSRP", "SNR", "DL Mbit/s");
    for d in [50.0, 100.0, 224.6, 500.0, 1000.0, 1800.0] {
        let b = radio::link_budget(&n41, 10.0, d, &p);
        let c = radio::shannon_capacity(n41.bandwidth, b.snr, Direction::Downlink, &p);
        let covered = if radio::is_covered(&n41, 10.0, d, &p) { "" } else { "  (no coverage)" };
        println!(
            "{d:>8.1} {:>10.2} {:>10.2} {:>8.2} {:>12.3}{covered}",
            b.pathloss,
            b.rx_power,
            b.snr,
            c / 1e6
        );
    }
    // the aerial DU serving UE2 from 1575 m away on n78 at 30 dBm
    let snr = radio::snr(&n78, 30.0, 1575.4, &p);
    let dl = radio::shannon_capacity(n78.bandwidth, snr, Direction::Downlink, &p);
    println!("aerial access: snr {snr:.2} dB, {:.3} Mbit/s downlink", dl / 1e6);
    Ok(())
}
