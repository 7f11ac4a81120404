//! Image-source impulse responses of a shoebox room, with the reverberation
//! time read back from the Schroeder decay.
//!
//! `cargo run --example room_impulse_response -- [T60] [out.wav]`

use retm::audio::{write_wav, AudioBuffer, WavFormat};
use retm::roomsim::{generate_rir, schroeder_t60, Room};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let t60: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.4);
    let fs = 16_000;
    let room = Room::new([6.0, 7.0, 3.0], t60);
    println!(
        "room {:?} m, absorption {:.3}, reflection coefficient {:.3}",
        room.dimensions,
        room.absorption(),
        room.reflection_coefficient()?
    );

    let source = [2.0, 3.5, 1.6];
    let mic = [4.1, 2.2, 1.2];
    let h = generate_rir(&room, &source, &mic, fs)?;
    let peak = h.iter().enumerate().fold((0, 0.0f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
    println!("{} taps, direct path at sample {}", h.len(), peak.0);
    match schroeder_t60(&h, fs) {
        Some(t) => println!("Schroeder T60 {t:.3} s (nominal {t60} s)"),
        None => println!("decay too short to fit"),
    }

    if let Some(path) = args.next() {
        let scale = 0.9 / peak.1;
        let buf = AudioBuffer::mono(fs, h.iter().map(|v| v * scale).collect())?;
        write_wav(&path, &buf, WavFormat::Float32)?;
        println!("wrote {path}");
    }
    Ok(())
}
