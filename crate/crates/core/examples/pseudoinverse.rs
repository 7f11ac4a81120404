//! Pseudoinverse of a rank-deficient complex matrix and the four Penrose
//! conditions it satisfies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retm::linalg::{matmul, pseudoinverse, relative_difference, Complex64, ComplexMatrix};

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // 6x4 of rank 2
    let m = matmul(&random(&mut rng, 6, 2), &random(&mut rng, 2, 4))?;
    let sv: Vec<String> = m.singular_values().iter().map(|s| format!("{s:.3e}")).collect();
    println!("singular values: {}", sv.join(", "));

    let p = pseudoinverse(&m, None)?;
    let mp = matmul(&m, &p)?;
    let pm = matmul(&p, &m)?;
    println!("M P M = M      {:.1e}", relative_difference(&matmul(&mp, &m)?, &m)?);
    println!("P M P = P      {:.1e}", relative_difference(&matmul(&pm, &p)?, &p)?);
    println!("(M P)^H = M P  {:.1e}", relative_difference(&mp.conj_transpose(), &mp)?);
    println!("(P M)^H = P M  {:.1e}", relative_difference(&pm.conj_transpose(), &pm)?);

    // a coarse tolerance drops the weaker direction
    let coarse = pseudoinverse(&m, Some(0.9))?;
    println!("rank kept at tol 0.9: {}", coarse.singular_values().iter().filter(|&&s| s > 1e-12).count());
    Ok(())
}
