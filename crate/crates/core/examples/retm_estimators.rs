//! Every ReTM estimator on exact covariances of random transfer matrices,
//! checked against the definition `H_A H_B^+`, and the fact that ReTMs of
//! disjoint source sets do not add.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use retm::model::TransferSet;
use retm::retm::{self as est, Retm};

fn worst(got: &Retm, want: &Retm) -> f64 {
    got.relative_error_to(want).unwrap().into_iter().fold(0.0, f64::max)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // sources 0 and 1 are noise, 2 and 3 are speakers
    let set = TransferSet::random(32, 5, 8, 4, &mut rng);
    let powers = [1.0, 0.5, 2.0, 1.5];
    let cov = |idx: &[usize]| {
        let p: Vec<f64> = idx.iter().map(|&i| powers[i]).collect();
        set.select_sources(idx).covariance(&p)
    };
    let truth = |idx: &[usize]| set.select_sources(idx).retm();

    let total = cov(&[0, 1, 2, 3])?;
    let noise = cov(&[0, 1])?;
    let noise_plus = [cov(&[0, 1, 2])?, cov(&[0, 1, 3])?];

    let direct = est::estimate_direct(&total, None)?;
    println!("direct       {:.1e}", worst(&direct, &truth(&[0, 1, 2, 3])?));
    let speech = est::estimate_by_subtraction(&total, &noise, None)?;
    println!("subtraction  {:.1e}", worst(&speech, &truth(&[2, 3])?));
    let r_noise = est::estimate_noise_retm(&noise, None)?;
    println!("noise        {:.1e}", worst(&r_noise, &truth(&[0, 1])?));
    let subset = est::estimate_subset(&[cov(&[0])?, cov(&[3])?], None)?;
    println!("subset       {:.1e}", worst(&subset, &truth(&[0, 3])?));
    for (k, target) in [2, 3].into_iter().enumerate() {
        let undesired: Vec<usize> = (0..4).filter(|&i| i != target).collect();
        let r = est::estimate_undesired_for_speaker(&noise, &noise_plus, k, None)?;
        println!("training {k}   {:.1e}", worst(&r, &truth(&undesired)?));
    }

    let gaps = est::check_nonadditivity(&speech, &r_noise, &direct)?;
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    println!("||R_S + R_N - R|| / ||R|| averages {mean:.2} over bins");
    Ok(())
}
