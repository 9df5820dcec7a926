//! Reference implementations used only as test oracles.
#![allow(dead_code)]

use geocox::{Cohort, Subject};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Nelder–Mead maximisation with restarts from the best vertex.
pub fn nelder_mead_max(f: impl Fn(&[f64]) -> f64, start: &[f64], step: f64, tol: f64) -> Vec<f64> {
    let neg = |x: &[f64]| -f(x);
    let mut best = start.to_vec();
    let mut scale = step;
    for _ in 0..6 {
        best = nelder_mead_min(&neg, &best, scale, tol, 20_000);
        scale *= 0.1;
    }
    best
}

fn nelder_mead_min(f: &impl Fn(&[f64]) -> f64, start: &[f64], step: f64, tol: f64, max_evals: usize) -> Vec<f64> {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for k in 0..n {
        let mut v = start.to_vec();
        v[k] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = n + 1;
    while evals < max_evals {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        values = idx.iter().map(|&i| values[i]).collect();

        let diameter = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter < tol {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (w - c)).collect()
        };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        evals += 1;
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            evals += 1;
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let contracted = if fr < values[n] { along(-0.5) } else { along(0.5) };
            let fc = f(&contracted);
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    simplex[i] = best.iter().zip(&simplex[i]).map(|(b, v)| b + 0.5 * (v - b)).collect();
                    values[i] = f(&simplex[i]);
                }
                evals += n;
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    simplex[best].clone()
}

/// Fourth-order central difference of a scalar function.
pub fn gradient_fd(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let at = |d: f64| {
                let mut y = x.to_vec();
                y[k] += d;
                f(&y)
            };
            (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
        })
        .collect()
}

/// Fourth-order central difference Jacobian of a vector function;
/// `out[a][k] = ∂g_a/∂x_k`.
pub fn jacobian_fd(g: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for k in 0..n {
        let at = |d: f64| {
            let mut y = x.to_vec();
            y[k] += d;
            g(&y)
        };
        let (p2, p1, m1, m2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
        cols.push((0..p1.len()).map(|a| (-p2[a] + 8.0 * p1[a] - 8.0 * m1[a] + m2[a]) / (12.0 * h)).collect::<Vec<_>>());
    }
    (0..cols.first().map_or(0, Vec::len)).map(|a| (0..n).map(|k| cols[k][a]).collect()).collect()
}

/// All-pairs hop counts by Floyd–Warshall; `f64::INFINITY` when unreachable.
pub fn floyd_warshall(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for &(a, b) in edges {
        d[a][b] = 1.0;
        d[b][a] = 1.0;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

/// Synthetic single-location cohort from a Cox model with unit baseline
/// hazard and uniform censoring. `round` creates tied times.
pub fn random_cohort(seed: u64, n: usize, p: usize, round: bool) -> Cohort {
    random_multi_cohort(seed, n, p, 1, round)
}

/// As [`random_cohort`] with subjects spread round-robin over `j` locations.
pub fn random_multi_cohort(seed: u64, n: usize, p: usize, j: usize, round: bool) -> Cohort {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let subjects = (0..n)
        .map(|i| {
            let z: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
            let eta: f64 = z.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let t = -(1.0 - rng.random::<f64>()).ln() / eta.exp();
            let c = rng.random_range(0.0..3.0);
            let mut time = t.min(c);
            if round {
                time = (time * 10.0).round() / 10.0;
            }
            Subject { id: i.to_string(), time, event: t <= c, covariates: z, location: i % j }
        })
        .collect();
    Cohort::new(
        subjects,
        (0..j).map(|k| format!("L{k}")).collect(),
        (0..p).map(|k| format!("z{k}")).collect(),
    )
    .unwrap()
}

/// Random edge list on `n` vertices with edge probability `density`.
pub fn random_edges(rng: &mut impl Rng, n: usize, density: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(density) {
                edges.push((a, b));
            }
        }
    }
    edges
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}
