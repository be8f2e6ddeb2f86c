//! Insertion induction: soft edges between event and mention nodes computed
//! as marginal arc probabilities of latent non-projective dependency trees
//! (Matrix-Tree Theorem), plus an exhaustive enumeration oracle.
//!
//! Index convention: `A[i][j]` is the marginal probability that node `i`
//! heads node `j`. Node 0 carries the root row of the modified Laplacian.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::autodiff::{ParamGroup, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Bilinear and root logits are clamped to `[-LOGIT_CLAMP, LOGIT_CLAMP]`
/// before exponentiation.
pub const LOGIT_CLAMP: f64 = 20.0;

/// Smallest accepted reciprocal condition estimate of the modified Laplacian.
pub const MIN_RCOND: f64 = 1e-12;

/// Largest node count accepted by [`brute_force_marginals`].
pub const BRUTE_FORCE_MAX_NODES: usize = 7;

#[derive(Clone, Copy, Debug)]
pub struct EdgeScorer {
    pub bilinear: ParamId,
    pub root: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
    pub dep_w: ParamId,
    pub dep_b: ParamId,
}

impl EdgeScorer {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut impl Rng) -> Self {
        let g = ParamGroup::Other;
        Self {
            bilinear: store.add_glorot(format!("{prefix}.bilinear"), g, (d, d), rng),
            root: store.add_glorot(format!("{prefix}.root"), g, (d, 1), rng),
            head_w: store.add_glorot(format!("{prefix}.head_w"), g, (d, d), rng),
            head_b: store.add_zeros(format!("{prefix}.head_b"), g, (1, d)),
            dep_w: store.add_glorot(format!("{prefix}.dep_w"), g, (d, d), rng),
            dep_b: store.add_zeros(format!("{prefix}.dep_b"), g, (1, d)),
        }
    }

    /// Edge scores `P` (`n×n`, zero diagonal) and root scores `R` (`1×n`).
    pub fn scores(&self, tape: &mut Tape, store: &ParamStore, nodes: Var) -> Result<(Var, Var)> {
        if tape.value(nodes).iter().any(|x| !x.is_finite()) {
            return Err(Error::Argument("non-finite node embeddings".into()));
        }
        let n = tape.shape(nodes).0;
        let (hw, hb) = (tape.param(store, self.head_w), tape.param(store, self.head_b));
        let (dw, db) = (tape.param(store, self.dep_w), tape.param(store, self.dep_b));
        let wc = tape.param(store, self.bilinear);
        let wr = tape.param(store, self.root);

        let heads = tape.affine(nodes, hw, hb);
        let heads = tape.tanh(heads);
        let deps = tape.affine(nodes, dw, db);
        let deps = tape.tanh(deps);
        let deps_t = tape.transpose(deps);
        let hw_c = tape.matmul(heads, wc);
        let logits = tape.matmul(hw_c, deps_t);
        let logits = tape.clamp(logits, -LOGIT_CLAMP, LOGIT_CLAMP);
        let scores = tape.exp(logits);
        let off_diag = tape.leaf(Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { 1.0 }));
        let p = tape.mul(scores, off_diag);

        let root_logits = tape.matmul(nodes, wr);
        let root_logits = tape.clamp(root_logits, -LOGIT_CLAMP, LOGIT_CLAMP);
        let root_scores = tape.exp(root_logits);
        let r = tape.transpose(root_scores);
        Ok((p, r))
    }
}

/// Mixes each node's head distribution (its column of `P` together with
/// `R_j`, normalised) with a uniform choice over the `n` candidates:
/// `(1 − tau) · score / s_j + tau / n`.
///
/// Learned scores can isolate a group of nodes from the rest and from the
/// root, which leaves almost no weight on spanning trees and makes the
/// Laplacian numerically singular; the uniform part keeps every tree
/// reachable.
pub fn smooth_scores(tape: &mut Tape, p: Var, r: Var, tau: f64) -> (Var, Var) {
    let n = tape.shape(p).0;
    let incoming = tape.sum_rows(p);
    let total = tape.add(incoming, r);
    let inv_total = tape.recip(total);
    let p = tape.mul_row(p, inv_total);
    let r = tape.mul_row(r, inv_total);
    let floor = tau / n as f64;
    let p = tape.scale(p, 1.0 - tau);
    let p_floor = tape.leaf(Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { floor }));
    let p = tape.add(p, p_floor);
    let r = tape.scale(r, 1.0 - tau);
    let r_floor = tape.leaf(Array2::from_elem((1, n), floor));
    let r = tape.add(r, r_floor);
    (p, r)
}

/// Arc marginals `A` (`n×n`) and root marginals (`1×n`) of the distribution
/// over rooted spanning arborescences with weight `R_root · Π P_head,dep`.
pub fn tree_marginals_var(tape: &mut Tape, p: Var, r: Var) -> Result<(Var, Var)> {
    let n = tape.shape(p).0;
    if tape.shape(p) != (n, n) || tape.shape(r) != (1, n) || n == 0 {
        return Err(Error::Argument(format!(
            "tree marginals need P n×n and R 1×n with n ≥ 1, got {:?} and {:?}",
            tape.shape(p),
            tape.shape(r)
        )));
    }
    // Every tree gives each node exactly one incoming arc or the root, so
    // dividing column j of P and R_j by the same positive s_j leaves the
    // marginals unchanged while keeping the Laplacian well conditioned.
    let incoming = tape.sum_rows(p);
    let total = tape.add(incoming, r);
    let inv_total = tape.recip(total);
    let p = tape.mul_row(p, inv_total);
    let r = tape.mul(r, inv_total);
    // L_jj = Σ_i P_ij, L_ij = -P_ij; row 0 is then replaced by the root scores.
    let in_weight = tape.sum_rows(p);
    let degree = tape.diag_from_row(in_weight);
    let laplacian = tape.sub(degree, p);
    let rooted = tape.scatter_rows(laplacian, r, &[0]);
    let inv = tape.inverse(rooted, MIN_RCOND)?;

    let inv_diag = tape.diag_to_row(inv);
    let via_diag = tape.mul_row(p, inv_diag);
    let not_first_col = tape.leaf(Array2::from_shape_fn((n, n), |(_, j)| if j == 0 { 0.0 } else { 1.0 }));
    let via_diag = tape.mul(via_diag, not_first_col);

    let inv_t = tape.transpose(inv);
    let via_transpose = tape.mul(p, inv_t);
    let not_first_row = tape.leaf(Array2::from_shape_fn((n, n), |(i, _)| if i == 0 { 0.0 } else { 1.0 }));
    let via_transpose = tape.mul(via_transpose, not_first_row);

    let arcs = tape.sub(via_diag, via_transpose);

    let first_col = tape.select_rows(inv_t, &[0]);
    let roots = tape.mul(r, first_col);
    Ok((arcs, roots))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeMarginals {
    pub p: Array2<f64>,
    pub r: Array1<f64>,
    pub a: Array2<f64>,
    pub root_marginals: Array1<f64>,
}

impl TreeMarginals {
    /// Largest violation of `root[j] + Σ_i A_ij = 1`.
    pub fn head_or_root_violation(&self) -> f64 {
        (0..self.a.ncols())
            .map(|j| (self.root_marginals[j] + self.a.column(j).sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &TreeMarginals) -> f64 {
        let arcs = (&self.a - &other.a).mapv(f64::abs).fold(0.0, |m: f64, &x| m.max(x));
        let roots = (&self.root_marginals - &other.root_marginals)
            .mapv(f64::abs)
            .fold(0.0, |m: f64, &x| m.max(x));
        arcs.max(roots)
    }
}

fn check_scores(p: &Array2<f64>, r: &Array1<f64>) -> Result<usize> {
    let n = r.len();
    if p.dim() != (n, n) || n == 0 {
        return Err(Error::Argument(format!(
            "P is {:?} but R has {} entries",
            p.dim(),
            r.len()
        )));
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || r.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::Argument("P must be non-negative and R positive".into()));
    }
    if (0..n).any(|i| p[[i, i]] != 0.0) {
        return Err(Error::Argument("P must have a zero diagonal".into()));
    }
    Ok(n)
}

/// Matrix-Tree marginals of fixed scores.
pub fn tree_marginals(p: &Array2<f64>, r: &Array1<f64>) -> Result<TreeMarginals> {
    check_scores(p, r)?;
    let mut tape = Tape::new();
    let pv = tape.leaf(p.clone());
    let rv = tape.leaf(r.clone().insert_axis(ndarray::Axis(0)));
    let (a, roots) = tree_marginals_var(&mut tape, pv, rv)?;
    Ok(TreeMarginals {
        p: p.clone(),
        r: r.clone(),
        a: tape.value(a).clone(),
        root_marginals: tape.value(roots).row(0).to_owned(),
    })
}

/// Scores for node embeddings `e` under `scorer`.
pub fn edge_scores(e: &Array2<f64>, scorer: &EdgeScorer, store: &ParamStore) -> Result<(Array2<f64>, Array1<f64>)> {
    let mut tape = Tape::new();
    let ev = tape.leaf(e.clone());
    let (p, r) = scorer.scores(&mut tape, store, ev)?;
    Ok((tape.value(p).clone(), tape.value(r).row(0).to_owned()))
}

/// Enumerates every rooted spanning arborescence. Exponential; `n ≤ 7`.
pub fn brute_force_marginals(p: &Array2<f64>, r: &Array1<f64>) -> Result<TreeMarginals> {
    let n = check_scores(p, r)?;
    if n > BRUTE_FORCE_MAX_NODES {
        return Err(Error::Argument(format!(
            "brute force enumeration supports at most {BRUTE_FORCE_MAX_NODES} nodes, got {n}"
        )));
    }
    // heads[j] == n marks j as the root.
    let mut heads = vec![0usize; n];
    let mut arc_mass = Array2::<f64>::zeros((n, n));
    let mut root_mass = Array1::<f64>::zeros(n);
    let mut total = 0.0;
    let combos = (n + 1).pow(n as u32);
    for code in 0..combos {
        let mut c = code;
        for h in heads.iter_mut() {
            *h = c % (n + 1);
            c /= n + 1;
        }
        let roots: Vec<usize> = (0..n).filter(|&j| heads[j] == n).collect();
        if roots.len() != 1 || (0..n).any(|j| heads[j] == j) || !reaches_root(&heads) {
            continue;
        }
        let root = roots[0];
        let mut w = r[root];
        for j in 0..n {
            if j != root {
                w *= p[[heads[j], j]];
            }
        }
        total += w;
        root_mass[root] += w;
        for j in 0..n {
            if j != root {
                arc_mass[[heads[j], j]] += w;
            }
        }
    }
    if !(total > 0.0) {
        return Err(Error::Numerical("zero partition sum".into()));
    }
    Ok(TreeMarginals {
        p: p.clone(),
        r: r.clone(),
        a: arc_mass / total,
        root_marginals: root_mass / total,
    })
}

fn reaches_root(heads: &[usize]) -> bool {
    let n = heads.len();
    (0..n).all(|start| {
        let mut node = start;
        for _ in 0..=n {
            if heads[node] == n {
                return true;
            }
            node = heads[node];
        }
        false
    })
}

/// Random strictly positive scores: log-uniform in `[e^-spread, e^spread]`.
pub fn random_instance(n: usize, spread: f64, rng: &mut impl Rng) -> (Array2<f64>, Array1<f64>) {
    let p = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            rng.gen_range(-spread..spread).exp()
        }
    });
    let r = Array1::from_shape_simple_fn(n, || rng.gen_range(-spread..spread).exp());
    (p, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_node_is_root() {
        let m = tree_marginals(&Array2::zeros((1, 1)), &Array1::from(vec![2.5])).unwrap();
        assert_eq!(m.a, Array2::<f64>::zeros((1, 1)));
        assert!((m.root_marginals[0] - 1.0).abs() < 1e-15);
        let b = brute_force_marginals(&Array2::zeros((1, 1)), &Array1::from(vec![2.5])).unwrap();
        assert_eq!(b.root_marginals[0], 1.0);
    }

    #[test]
    fn two_nodes_uniform() {
        let p = Array2::from_shape_vec((2, 2), vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let r = Array1::from(vec![1.0, 1.0]);
        for m in [tree_marginals(&p, &r).unwrap(), brute_force_marginals(&p, &r).unwrap()] {
            assert!((m.a[[0, 1]] - 0.5).abs() < 1e-12);
            assert!((m.a[[1, 0]] - 0.5).abs() < 1e-12);
            assert!((m.root_marginals[0] - 0.5).abs() < 1e-12);
            assert!((m.root_marginals[1] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn three_nodes_symmetric() {
        let p = Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 0.0 } else { 1.0 });
        let r = Array1::from(vec![1.0; 3]);
        let b = brute_force_marginals(&p, &r).unwrap();
        for j in 0..3 {
            assert!((b.root_marginals[j] - 1.0 / 3.0).abs() < 1e-12);
        }
        let off: Vec<f64> = b.a.indexed_iter().filter(|((i, j), _)| i != j).map(|(_, &v)| v).collect();
        assert!(off.iter().all(|v| (v - off[0]).abs() < 1e-12));
    }

    #[test]
    fn matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 2..=5 {
            for _ in 0..20 {
                let (p, r) = random_instance(n, 2.0, &mut rng);
                let fast = tree_marginals(&p, &r).unwrap();
                let slow = brute_force_marginals(&p, &r).unwrap();
                assert!(fast.max_abs_diff(&slow) < 1e-9);
                assert!(fast.head_or_root_violation() < 1e-9);
            }
        }
    }

    #[test]
    fn scale_covariance() {
        let (p, r) = random_instance(4, 1.5, &mut ChaCha8Rng::seed_from_u64(12));
        let base = tree_marginals(&p, &r).unwrap();
        let scaled = tree_marginals(&(&p * 37.0), &(&r * 37.0)).unwrap();
        assert!((&base.a - &scaled.a).mapv(f64::abs).iter().all(|&d| d < 1e-8));
    }

    #[test]
    fn permutation_equivariance() {
        let (p, r) = random_instance(5, 1.0, &mut ChaCha8Rng::seed_from_u64(13));
        let perm = [0usize, 3, 1, 4, 2];
        let pp = Array2::from_shape_fn((5, 5), |(i, j)| p[[perm[i], perm[j]]]);
        let rp = Array1::from_shape_fn(5, |i| r[perm[i]]);
        let base = tree_marginals(&p, &r).unwrap();
        let permuted = tree_marginals(&pp, &rp).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert!((permuted.a[[i, j]] - base.a[[perm[i], perm[j]]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn argument_errors() {
        let p = Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 0.0 } else { 1.0 });
        assert!(tree_marginals(&p, &Array1::from(vec![1.0, 1.0])).is_err());
        assert!(tree_marginals(&p, &Array1::from(vec![1.0, 0.0, 1.0])).is_err());
        let big = Array2::from_shape_fn((8, 8), |(i, j)| if i == j { 0.0 } else { 1.0 });
        assert!(brute_force_marginals(&big, &Array1::from(vec![1.0; 8])).is_err());
        assert!(tree_marginals(&big, &Array1::from(vec![1.0; 8])).is_ok());
    }

    #[test]
    fn near_singular_laplacian_is_rejected() {
        // Nodes 1 and 2 only point at each other: no tree has real weight.
        let mut p = Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 0.0 } else { 1e-20 });
        p[[1, 2]] = 1.0;
        p[[2, 1]] = 1.0;
        let r = Array1::from(vec![1.0, 1e-20, 1e-20]);
        let err = tree_marginals(&p, &r).unwrap_err();
        assert!(err.to_string().contains("condition estimate"), "{err}");
    }

    fn smoothed(p: &Array2<f64>, r: &Array1<f64>, tau: f64) -> Result<TreeMarginals> {
        let mut tape = Tape::new();
        let pv = tape.leaf(p.clone());
        let rv = tape.leaf(r.clone().insert_axis(ndarray::Axis(0)));
        let (ps, rs) = smooth_scores(&mut tape, pv, rv, tau);
        let (a, roots) = tree_marginals_var(&mut tape, ps, rs)?;
        Ok(TreeMarginals {
            p: p.clone(),
            r: r.clone(),
            a: tape.value(a).clone(),
            root_marginals: tape.value(roots).row(0).to_owned(),
        })
    }

    #[test]
    fn smoothing_is_exact_at_zero_and_rescues_isolated_groups() {
        let (p, r) = random_instance(5, 2.0, &mut ChaCha8Rng::seed_from_u64(21));
        let exact = tree_marginals(&p, &r).unwrap();
        assert!(smoothed(&p, &r, 0.0).unwrap().max_abs_diff(&exact) < 1e-12);
        let near = smoothed(&p, &r, 1e-4).unwrap();
        assert!(near.max_abs_diff(&exact) < 1e-3);
        assert!(near.head_or_root_violation() < 1e-9);

        // Nodes 1 and 2 only point at each other.
        let mut p = Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 0.0 } else { 1e-20 });
        p[[1, 2]] = 1.0;
        p[[2, 1]] = 1.0;
        let r = Array1::from(vec![1.0, 1e-20, 1e-20]);
        assert!(tree_marginals(&p, &r).is_err());
        let m = smoothed(&p, &r, 1e-4).unwrap();
        assert!(m.head_or_root_violation() < 1e-9);
        assert!(m.a[[1, 2]] > 0.4 && m.a[[2, 1]] > 0.4);
    }

    #[test]
    fn edge_score_shapes() {
        let mut store = ParamStore::new();
        let scorer = EdgeScorer::new(&mut store, "ins", 4, &mut ChaCha8Rng::seed_from_u64(0));
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
        let (p, r) = edge_scores(&Array2::zeros((3, 4)), &scorer, &store).unwrap();
        for ((i, j), &v) in p.indexed_iter() {
            assert_eq!(v, if i == j { 0.0 } else { 1.0 });
        }
        assert!(r.iter().all(|&x| x == 1.0));
        let mut bad = Array2::zeros((2, 4));
        bad[[0, 0]] = f64::NAN;
        assert!(edge_scores(&bad, &scorer, &store).is_err());
    }
}
