//! Weakly chained diagonal dominance as a certificate for nonsingular
//! M-matrices, and the sparse solvers used for policy evaluation.
//!
//! ```text
//! cargo run --release --example wcdd_check
//! ```

use qvi::sparsela::{is_nonsingular_m_matrix, is_wcdd, solve_iterative, solve_tridiagonal, IterativeConfig, SparseMatrix};

fn chain(n: usize, sdd_last: bool) -> SparseMatrix {
    // row i sends all its weight to i + 1; only the last row may be strict
    let mut trip = Vec::new();
    for i in 0..n {
        trip.push((i, i, 1.0));
        if i + 1 < n {
            trip.push((i, i + 1, -1.0));
        }
    }
    if !sdd_last {
        trip.push((n - 1, 0, -1.0));
    }
    SparseMatrix::from_triplets(n, trip)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (name, a) in [("chain to a strict row", chain(6, true)), ("closed cycle", chain(6, false))] {
        let d = is_wcdd(&a);
        let v = is_nonsingular_m_matrix(&a);
        println!(
            "{name}: wdd {}, sdd rows {:?}, wcdd {}, unreachable {:?}, M-matrix {} ({:?})",
            d.is_wdd, d.sdd_rows, d.is_wcdd, d.unreachable_rows, v.is_m_matrix, v.reason
        );
    }

    let a = chain(6, true);
    let x = solve_tridiagonal(&a, &[1.0; 6])?;
    println!("chain solve {x:?}");

    // 2D Laplacian plus a small shift, solved with BiCGSTAB and ILUT
    let m = 40;
    let idx = |i: usize, j: usize| i * m + j;
    let mut trip = Vec::new();
    for i in 0..m {
        for j in 0..m {
            trip.push((idx(i, j), idx(i, j), 4.01));
            for (di, dj) in [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)] {
                let (a, b) = (i as i64 + di, j as i64 + dj);
                if (0..m as i64).contains(&a) && (0..m as i64).contains(&b) {
                    trip.push((idx(i, j), idx(a as usize, b as usize), -1.0));
                }
            }
        }
    }
    let lap = SparseMatrix::from_triplets(m * m, trip);
    println!("laplacian wcdd: {}", is_wcdd(&lap).is_wcdd);
    let b = vec![1.0; m * m];
    let (u, its) = solve_iterative(&lap, &b, &vec![0.0; m * m], &IterativeConfig::default())?;
    let r = lap.mul_vec(&u).iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("BiCGSTAB: {its} iterations, residual {r:.2e}, centre value {:.4}", u[idx(m / 2, m / 2)]);
    Ok(())
}
