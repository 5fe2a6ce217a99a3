//! Test oracles and checks shared by several test targets. The oracle
//! functions share no code with the library beyond ndarray arithmetic.
#![allow(dead_code)]

use ndarray::{array, Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use udadil::barycenter::{free_support_barycenter, BarycenterConfig, BarycentricWeights};
use udadil::dictionary::{barycentric_regression, reconstruction_term, Atom, RegressionConfig, TermGradient, TermParams};
use udadil::ot::DiscreteDistribution;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, m), |_| rng.random_range(lo..hi))
}

/// All permutations of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            if k % 2 == 0 {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}

pub fn perm_cost(c: ArrayView2<f64>, p: &[usize]) -> f64 {
    p.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum()
}

/// Minimum over permutations of `sum_i c[i, p(i)]`, and one minimiser.
pub fn brute_assignment(c: ArrayView2<f64>) -> (f64, Vec<usize>) {
    permutations(c.nrows())
        .into_iter()
        .map(|p| (perm_cost(c, &p), p))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
}

/// Squared Euclidean distances between the rows of `x` and `y`.
pub fn sq_dists(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((x.nrows(), y.nrows()), |(i, j)| {
        x.row(i).iter().zip(y.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum()
    })
}

/// Log-domain Sinkhorn run for a fixed number of sweeps.
pub fn sinkhorn_plan(c: ArrayView2<f64>, a: &Array1<f64>, b: &Array1<f64>, eps: f64, sweeps: usize) -> Array2<f64> {
    let (m, n) = c.dim();
    let mut f = Array1::<f64>::zeros(m);
    let mut g = Array1::<f64>::zeros(n);
    let lse = |v: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = v.collect();
        let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
    };
    for _ in 0..sweeps {
        for i in 0..m {
            f[i] = eps * a[i].ln() - eps * lse(&mut (0..n).map(|j| (g[j] - c[[i, j]]) / eps));
        }
        for j in 0..n {
            g[j] = eps * b[j].ln() - eps * lse(&mut (0..m).map(|i| (f[i] - c[[i, j]]) / eps));
        }
    }
    Array2::from_shape_fn((m, n), |(i, j)| ((f[i] + g[j] - c[[i, j]]) / eps).exp())
}

pub fn entropic_objective(c: ArrayView2<f64>, pi: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>, eps: f64) -> f64 {
    let mut total = 0.0;
    for ((i, j), &p) in pi.indexed_iter() {
        total += p * c[[i, j]];
        if p > 0.0 {
            total += eps * p * (p / (a[i] * b[j])).ln();
        }
    }
    total
}

/// Cost with an additive penalty for differing labels.
pub fn labeled_cost(x: ArrayView2<f64>, lx: &[usize], y: ArrayView2<f64>, ly: &[usize], beta: f64) -> Array2<f64> {
    let mut c = sq_dists(x, y);
    for ((i, j), v) in c.indexed_iter_mut() {
        if lx[i] != ly[j] {
            *v += beta;
        }
    }
    c
}

/// Reconstruction loss of `target` by the barycenter of equally sized atom
/// minibatches: start at `sum_k alpha_k A_k`, take `steps` fixed-point steps
/// with brute-force optimal matchings, then an entropic cost to the target.
pub fn reconstruction_loss(
    atoms: &[Array2<f64>],
    labels: &[usize],
    alpha: &[f64],
    target: &Array2<f64>,
    target_labels: &[usize],
    eps: f64,
    beta: f64,
    steps: usize,
) -> f64 {
    let (n, d) = atoms[0].dim();
    let mut x = Array2::<f64>::zeros((n, d));
    for (a, w) in atoms.iter().zip(alpha) {
        x.scaled_add(*w, a);
    }
    for _ in 0..steps {
        let mut next = Array2::<f64>::zeros((n, d));
        for (a, w) in atoms.iter().zip(alpha) {
            let c = labeled_cost(x.view(), labels, a.view(), labels, beta);
            let (_, p) = brute_assignment(c.view());
            for (i, &j) in p.iter().enumerate() {
                next.row_mut(i).scaled_add(*w, &a.row(j));
            }
        }
        x = next;
    }
    let m = target.nrows();
    let ua = Array1::from_elem(n, 1.0 / n as f64);
    let ub = Array1::from_elem(m, 1.0 / m as f64);
    let c = labeled_cost(x.view(), labels, target.view(), target_labels, beta);
    let pi = sinkhorn_plan(c.view(), &ua, &ub, eps, 5000);
    entropic_objective(c.view(), &pi, &ua, &ub, eps)
}

/// Adjusted Rand index from explicit pair counts (O(n^2)).
pub fn ari_by_pairs(a: &[usize], b: &[usize]) -> f64 {
    let (mut n11, mut n10, mut n01, mut n00) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => n11 += 1.0,
                (true, false) => n10 += 1.0,
                (false, true) => n01 += 1.0,
                (false, false) => n00 += 1.0,
            }
        }
    }
    let den = (n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11);
    if den == 0.0 {
        return 1.0;
    }
    2.0 * (n00 * n11 - n01 * n10) / den
}

/// Best agreement fraction over all injective relabelings of `pred`.
pub fn accuracy_by_enumeration(pred: &[usize], truth: &[usize]) -> f64 {
    let k = pred.iter().chain(truth).max().map_or(1, |m| m + 1);
    permutations(k)
        .into_iter()
        .map(|p| pred.iter().zip(truth).filter(|(x, t)| p[**x] == **t).count())
        .max()
        .unwrap() as f64
        / pred.len() as f64
}

/// Points of `k` well-separated 1-D or 2-D blobs; returns features and blob ids.
pub fn blobs(rng: &mut ChaCha8Rng, centers: &[[f64; 2]], per_blob: usize, spread: f64) -> (Array2<f64>, Vec<usize>) {
    let n = centers.len() * per_blob;
    let mut x = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for i in 0..per_blob {
            let r = c * per_blob + i;
            x[[r, 0]] = center[0] + rng.random_range(-spread..spread);
            x[[r, 1]] = center[1] + rng.random_range(-spread..spread);
            labels.push(c);
        }
    }
    (x, labels)
}

pub struct GradInstance {
    atoms: Vec<Array2<f64>>,
    labels: Vec<usize>,
    domains: Vec<Array2<f64>>,
    domain_labels: Vec<Vec<usize>>,
    alphas: Vec<Vec<f64>>,
    eps: f64,
    beta: f64,
}

/// Two domains and two atoms of four labeled 2-D points each.
pub fn gradient_instance() -> GradInstance {
    GradInstance {
        atoms: vec![
            array![[0.1, 0.3], [0.9, -0.2], [2.9, 3.1], [3.4, 2.2]],
            array![[-0.4, 0.8], [0.6, 0.5], [2.2, 2.7], [3.8, 3.3]],
        ],
        labels: vec![0, 0, 1, 1],
        domains: vec![
            array![[0.0, 0.0], [1.2, 0.4], [2.6, 2.5], [3.1, 3.6]],
            array![[-0.8, 0.1], [0.5, 1.1], [1.9, 3.2], [3.3, 2.6]],
        ],
        domain_labels: vec![vec![0, 0, 1, 1], vec![0, 0, 1, 1]],
        alphas: vec![vec![0.65, 0.35], vec![0.3, 0.7]],
        eps: 0.3,
        beta: 20.0,
    }
}

fn total_oracle_loss(g: &GradInstance) -> f64 {
    (0..2)
        .map(|l| {
            reconstruction_loss(&g.atoms, &g.labels, &g.alphas[l], &g.domains[l], &g.domain_labels[l], g.eps, g.beta, 5)
        })
        .sum()
}

/// Largest relative error between analytic gradients and central
/// differences of the reference loss.
pub fn gradient_check_error(h: f64) -> f64 {
    let g = gradient_instance();
    let params = TermParams {
        epsilon: g.eps,
        beta: g.beta,
        inner_steps: 5,
        sinkhorn_tol: 1e-13,
        sinkhorn_max_iter: 100_000,
    };
    let terms: Vec<TermGradient> = (0..2)
        .map(|l| {
            reconstruction_term(
                &g.atoms,
                &g.labels,
                Array1::from(g.alphas[l].clone()).view(),
                g.domains[l].view(),
                Some(&g.domain_labels[l]),
                &params,
            )
            .unwrap()
        })
        .collect();
    let lib_loss: f64 = terms.iter().map(|t| t.loss).sum();
    let oracle = total_oracle_loss(&g);
    assert!((lib_loss - oracle).abs() < 1e-9, "library {lib_loss} oracle {oracle}");

    let rel = |an: f64, fd: f64| (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
    let mut worst = 0.0f64;
    for k in 0..2 {
        for ((i, j), _) in g.atoms[k].indexed_iter() {
            let analytic: f64 = terms.iter().map(|t| t.atom_grads[k][[i, j]]).sum();
            let mut plus = gradient_instance();
            plus.atoms[k][[i, j]] += h;
            let mut minus = gradient_instance();
            minus.atoms[k][[i, j]] -= h;
            let fd = (total_oracle_loss(&plus) - total_oracle_loss(&minus)) / (2.0 * h);
            worst = worst.max(rel(analytic, fd));
        }
    }
    for l in 0..2 {
        for k in 0..2 {
            let analytic = terms[l].alpha_grad[k];
            let mut plus = gradient_instance();
            plus.alphas[l][k] += h;
            let mut minus = gradient_instance();
            minus.alphas[l][k] -= h;
            let fd = (total_oracle_loss(&plus) - total_oracle_loss(&minus)) / (2.0 * h);
            worst = worst.max(rel(analytic, fd));
        }
    }
    worst
}

pub fn cloud_atoms(seed: u64) -> Vec<Atom> {
    let mut r = rng(seed);
    let mut make = |cx: f64, cy: f64| {
        let x = Array2::from_shape_fn((30, 2), |(_, j)| if j == 0 { cx } else { cy } + r.random_range(-1.0..1.0));
        Atom::new(x, vec![0; 30], 1).unwrap()
    };
    vec![make(0.0, 0.0), make(8.0, 3.0)]
}

pub fn regression_recovers_one_hot(seed: u64) -> f64 {
    let atoms = cloud_atoms(seed);
    let mut worst = 0.0f64;
    for k in 0..2 {
        let target = DiscreteDistribution::uniform(atoms[k].support().clone()).unwrap();
        let cfg = RegressionConfig {
            seed,
            ..RegressionConfig::default()
        };
        let alpha = barycentric_regression(&atoms, &target, &cfg).unwrap().alpha;
        let e = BarycentricWeights::one_hot(2, k).unwrap();
        let err = (alpha.as_array() - e.as_array()).mapv(f64::abs).fold(0.0f64, |m, &x| m.max(x));
        worst = worst.max(err);
    }
    worst
}

/// Whether the fixed-point objective trace never increases on a random
/// family of 2-D clouds.
pub fn objective_is_monotone(seed: u64) -> bool {
    let mut r = rng(seed);
    let k = r.random_range(2..5);
    let fam: Vec<DiscreteDistribution> = (0..k)
        .map(|_| {
            let n = r.random_range(3..12);
            DiscreteDistribution::uniform(random_matrix(&mut r, n, 2, -5.0, 5.0)).unwrap()
        })
        .collect();
    let alpha = BarycentricWeights::uniform(k).unwrap();
    let mut cfg = BarycenterConfig::new(r.random_range(2..8), seed);
    cfg.tol = 1e-12;
    let res = free_support_barycenter(&fam, &alpha, &cfg).unwrap();
    res.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9)
}
