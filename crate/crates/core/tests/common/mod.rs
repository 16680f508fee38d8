// Dense reference routines shared by the integration tests.

#![allow(dead_code)]

fn choose(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Rate matrix written out entry by entry from the jump rates.
pub fn dense_generator(r: f64, gamma: f64, channels: &[(usize, usize, f64)], n_max: usize) -> Vec<Vec<f64>> {
    let d = n_max + 1;
    let mut a = vec![vec![0.0; d]; d];
    for j in 0..d {
        let mut jumps = Vec::new();
        if j < n_max {
            jumps.push((j + 1, r));
        }
        if j > 0 {
            jumps.push((j - 1, gamma * j as f64));
        }
        for &(rho, m, beta) in channels {
            if j >= rho {
                jumps.push((j - m, beta * choose(j, rho)));
            }
        }
        for (i, rate) in jumps {
            a[i][j] += rate;
            a[j][j] -= rate;
        }
    }
    a
}

/// Null vector by Gaussian elimination with the last balance row replaced
/// by the normalization.
pub fn dense_null_vector(a: &[Vec<f64>]) -> Vec<f64> {
    let d = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut b = vec![0.0; d];
    m[d - 1] = vec![1.0; d];
    b[d - 1] = 1.0;
    for col in 0..d {
        let piv = (col..d)
            .max_by(|&x, &y| m[x][col].abs().partial_cmp(&m[y][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..d {
            let f = m[row][col] / m[col][col];
            for k in col..d {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; d];
    for row in (0..d).rev() {
        let s: f64 = (row + 1..d).map(|k| m[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / m[row][row];
    }
    x
}
