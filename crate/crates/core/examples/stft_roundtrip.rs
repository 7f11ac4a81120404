//! Analysis and resynthesis of a multichannel signal with the sqrt-Hann
//! STFT used throughout the crate.

use retm::audio::AudioBuffer;
use retm::roomsim::synth;
use retm::stft::Stft;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fs = 16_000;
    let channels = vec![synth::speech_like(3 * fs as usize, fs, 1), synth::noise(3 * fs as usize, 2)];
    let audio = AudioBuffer::new(fs, channels)?;

    let stft = Stft::new(1024, 512)?;
    let frames = stft.analyze(&audio)?;
    println!(
        "{} channels, {} bins, {} frames (COLA: {})",
        frames.channels(),
        frames.bins(),
        frames.frames(),
        stft.is_cola()
    );

    let back = stft.synthesize(&frames)?;
    let edge = stft.window_len();
    for c in 0..audio.num_channels() {
        let err = (edge..audio.len() - edge)
            .map(|t| (back.channel(c)[t] - audio.channel(c)[t]).abs())
            .fold(0.0, f64::max);
        println!("channel {c}: max round-trip error {err:.2e}");
    }
    Ok(())
}
