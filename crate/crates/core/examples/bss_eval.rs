//! SIR and SDR of a hand-made estimate: the target, a known amount of one
//! interferer, and uncorrelated junk.

use retm::metrics::{decompose, sir_sdr, DEFAULT_FILTER_LEN};
use retm::roomsim::synth;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 4 * 16_000;
    let target = synth::speech_like(n, 16_000, 1);
    let other = synth::speech_like(n, 16_000, 2);
    let junk = synth::noise(n, 3);

    for (g_other, g_junk) in [(0.1, 0.0), (0.1, 0.1), (0.01, 0.3)] {
        let estimate: Vec<f64> = (0..n).map(|i| target[i] + g_other * other[i] + g_junk * junk[i]).collect();
        let d = decompose(&estimate, &[&target, &other], 0, DEFAULT_FILTER_LEN)?;
        let r = sir_sdr(&d)?;
        println!(
            "interferer x{g_other:<5} junk x{g_junk:<4}  SIR {:6.2} dB  SDR {:6.2} dB",
            r.sir_db, r.sdr_db
        );
    }
    Ok(())
}
