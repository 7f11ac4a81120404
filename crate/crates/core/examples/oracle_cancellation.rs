//! With the true undesired ReTM, extraction removes every undesired source
//! to machine precision, using transfer functions of a simulated room.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use retm::linalg::Complex64;
use retm::model::TransferSet;
use retm::roomsim::{generate_rirs, Scenario};
use retm::separation::extract;
use retm::stft::SpectralFrames;

const DESK: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/desk.toml");

fn frames(set: &TransferSet, active: &[usize], count: usize, rng: &mut ChaCha8Rng) -> (SpectralFrames, SpectralFrames) {
    let w = 2 * (set.bins() - 1);
    let mut a = SpectralFrames::zeros(set.q_a(), count, 16_000, w, w / 2);
    let mut b = SpectralFrames::zeros(set.q_b(), count, 16_000, w, w / 2);
    for f in 0..set.bins() {
        for t in 0..count {
            let s: Vec<Complex64> = (0..set.sources())
                .map(|l| {
                    let on = if active.contains(&l) { 1.0 } else { 0.0 };
                    let (re, im): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
                    Complex64::new(re, im) * on
                })
                .collect();
            let (ma, mb) = set.observe(f, &s).expect("sizes match");
            ma.into_iter().enumerate().for_each(|(c, v)| a.set(c, f, t, v));
            mb.into_iter().enumerate().for_each(|(c, v)| b.set(c, f, t, v));
        }
    }
    (a, b)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sc = Scenario::load(DESK)?;
    let positions: Vec<_> = sc.sources.iter().map(|s| s.position).collect();
    let rirs = generate_rirs(&sc.room, &positions, &sc.microphones, sc.sample_rate)?;
    let set = TransferSet::from_impulse_responses(&rirs, &sc.group_a, &sc.group_b, 8192)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    for target in sc.speakers() {
        let undesired: Vec<usize> = (0..set.sources()).filter(|&i| i != target).collect();
        let r_bar = set.select_sources(&undesired).retm()?;
        let (a, b) = frames(&set, &undesired, 4, &mut rng);
        let out = extract(&a, &b, &r_bar)?;
        let worst = out.bin_energy_ratio.iter().fold(0.0f64, |m, &r| m.max(r));
        println!("speaker {target}: worst leakage {:.1} dB over {} bins", 10.0 * worst.log10(), out.bin_energy_ratio.len());

        // the target is filtered, not removed
        let (a, b) = frames(&set, &[target], 4, &mut rng);
        let kept = extract(&a, &b, &r_bar)?;
        let mean = kept.bin_energy_ratio.iter().sum::<f64>() / kept.bin_energy_ratio.len() as f64;
        println!("speaker {target}: target output/input energy {:+.1} dB on average", 10.0 * mean.log10());
    }
    Ok(())
}
