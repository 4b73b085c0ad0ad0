//! Low-rank separation of 2-D convolutions: a small-matrix Jacobi SVD,
//! rank-n filter factorization, and the graph rewrite replacing a Conv2D with
//! per-rank 1xB / Ax1 depthwise stages plus a 1x1 pointwise mix, cutting the
//! per-output-element multiplication count from C*A*B to n*(C+A+B).

use thiserror::Error;

use crate::graph::{AttrValue, DType, Graph, NodeId, OpKind, Payload};
use crate::report::PassReport;

pub const MAX_SVD_DIM: usize = 16;
pub const DEFAULT_SEP_TOL: f64 = 1e-3;
const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum OpsError {
    #[error("Jacobi SVD did not converge within {JACOBI_MAX_SWEEPS} sweeps")]
    ConvergenceFailure,
    #[error("rank {rank} reconstruction error {error:.3e} exceeds tolerance {tol:.3e}")]
    RankTooLow { rank: usize, error: f64, tol: f64 },
    #[error("invalid rank {rank} for a {rows}x{cols} filter")]
    BadRank { rank: usize, rows: usize, cols: usize },
    #[error("matrix dimension exceeds {MAX_SVD_DIM}")]
    TooLarge,
    #[error("node cannot be separated: {0}")]
    UnsupportedConv(String),
}

/// Thin SVD of a small row-major matrix: `u` (rows x k) and `v` (cols x k)
/// hold orthonormal columns with row stride `k`, `s` descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    /// Number of singular values/vectors: min(rows, cols).
    pub k: usize,
}

/// One-sided Jacobi SVD; the smaller dimension is capped at 16 (filters are
/// small), the larger is unbounded.
pub fn jacobi_svd(m: &[f64], rows: usize, cols: usize) -> Result<Svd, OpsError> {
    assert_eq!(m.len(), rows * cols);
    if rows.min(cols) > MAX_SVD_DIM {
        return Err(OpsError::TooLarge);
    }
    if rows < cols {
        // work on the transpose, swap factors back
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = m[i * cols + j];
            }
        }
        let svd = jacobi_svd(&t, cols, rows)?;
        return Ok(Svd {
            u: svd.v,
            s: svd.s,
            v: svd.u,
            rows,
            cols,
            k: svd.k,
        });
    }
    // columns of `a` are rotated until pairwise orthogonal; v accumulates
    let mut a = m.to_vec();
    let mut v = vec![0.0; cols * cols];
    for j in 0..cols {
        v[j * cols + j] = 1.0;
    }
    let col_dot = |a: &[f64], p: usize, q: usize| -> f64 {
        (0..rows).map(|i| a[i * cols + p] * a[i * cols + q]).sum()
    };
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let alpha = col_dot(&a, p, p);
                let beta = col_dot(&a, q, q);
                let gamma = col_dot(&a, p, q);
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt().max(f64::MIN_POSITIVE) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let ap = a[i * cols + p];
                    let aq = a[i * cols + q];
                    a[i * cols + p] = c * ap - s * aq;
                    a[i * cols + q] = s * ap + c * aq;
                }
                for i in 0..cols {
                    let vp = v[i * cols + p];
                    let vq = v[i * cols + q];
                    v[i * cols + p] = c * vp - s * vq;
                    v[i * cols + q] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(OpsError::ConvergenceFailure);
    }
    // singular values are the column norms; sort descending
    let mut order: Vec<usize> = (0..cols).collect();
    let norms: Vec<f64> = (0..cols).map(|j| col_dot(&a, j, j).sqrt()).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap_or(std::cmp::Ordering::Equal));
    let mut u = vec![0.0; rows * cols];
    let mut s = vec![0.0; cols];
    let mut vs = vec![0.0; cols * cols];
    for (k, &j) in order.iter().enumerate() {
        s[k] = norms[j];
        for i in 0..rows {
            u[i * cols + k] = if norms[j] > 0.0 {
                a[i * cols + j] / norms[j]
            } else {
                0.0
            };
        }
        for i in 0..cols {
            vs[i * cols + k] = v[i * cols + j];
        }
    }
    Ok(Svd {
        u,
        s,
        v: vs,
        rows,
        cols,
        k: cols,
    })
}

/// Rank-n factorization of one filter (or its error when truncated).
#[derive(Debug, Clone)]
pub struct SeparationResult {
    /// Per rank: vertical Ax1 factor (orthonormal across ranks).
    pub vertical: Vec<Vec<f64>>,
    /// Per rank: horizontal 1xB factor (orthonormal across ranks).
    pub horizontal: Vec<Vec<f64>>,
    /// Per rank: singular value scaling the outer product.
    pub scales: Vec<f64>,
    /// Per rank: flattened C*F channel-mix factor; empty for plain 2-D filters.
    pub pointwise: Vec<Vec<f64>>,
    pub rank: usize,
    pub frobenius_error: f64,
    pub max_abs_error: f64,
}

impl SeparationResult {
    /// Reconstructed A x B filter: sum of scaled outer products.
    pub fn reconstruct_2d(&self) -> Vec<f64> {
        let a = self.vertical.first().map(|v| v.len()).unwrap_or(0);
        let b = self.horizontal.first().map(|v| v.len()).unwrap_or(0);
        let mut out = vec![0.0; a * b];
        for r in 0..self.rank {
            for i in 0..a {
                for j in 0..b {
                    out[i * b + j] += self.scales[r] * self.vertical[r][i] * self.horizontal[r][j];
                }
            }
        }
        out
    }
}

/// Best rank-n approximation of an AxB filter in Frobenius norm; the error is
/// the tail singular-value energy.
pub fn separate_filter(filter: &[f64], a: usize, b: usize, n: usize) -> Result<SeparationResult, OpsError> {
    if n == 0 || n > a.min(b) {
        return Err(OpsError::BadRank { rank: n, rows: a, cols: b });
    }
    let svd = jacobi_svd(filter, a, b)?;
    let mut vertical = Vec::with_capacity(n);
    let mut horizontal = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    for r in 0..n {
        vertical.push((0..a).map(|i| svd.u[i * svd.k + r]).collect());
        horizontal.push((0..b).map(|j| svd.v[j * svd.k + r]).collect());
        scales.push(svd.s[r]);
    }
    let frob2: f64 = svd.s[n..].iter().map(|s| s * s).sum();
    let res = SeparationResult {
        vertical,
        horizontal,
        scales,
        pointwise: Vec::new(),
        rank: n,
        frobenius_error: frob2.sqrt(),
        max_abs_error: 0.0,
    };
    let rec = res.reconstruct_2d();
    let max_abs = filter
        .iter()
        .zip(&rec)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    Ok(SeparationResult { max_abs_error: max_abs, ..res })
}

/// Rank-n CP-style factorization of a full [A,B,C,F] filter:
/// W[a,b,c,f] ~ sum_r vertical_r[a] * horizontal_r[b] * pointwise_r[c*F+f].
/// Stage 1 is a rank-n SVD of the (A, B*C*F) flattening; stage 2 takes the
/// best rank-1 split of each right factor reshaped to (B, C*F).
pub fn separate_filter_4d(
    filter: &[f64],
    dims: [usize; 4],
    n: usize,
) -> Result<SeparationResult, OpsError> {
    let [a, b, c, f] = dims;
    assert_eq!(filter.len(), a * b * c * f);
    if n == 0 || n > a.min(b) {
        return Err(OpsError::BadRank { rank: n, rows: a, cols: b });
    }
    let svd = jacobi_svd(filter, a, b * c * f)?;
    let mut vertical = Vec::with_capacity(n);
    let mut horizontal = Vec::with_capacity(n);
    let mut pointwise = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    for r in 0..n {
        let u_r: Vec<f64> = (0..a).map(|i| svd.u[i * svd.k + r]).collect();
        // scaled right factor, reshaped (B, C*F), split rank-1
        let w_r: Vec<f64> = (0..b * c * f)
            .map(|j| svd.s[r] * svd.v[j * svd.k + r])
            .collect();
        let inner = jacobi_svd(&w_r, b, c * f)?;
        let v_r: Vec<f64> = (0..b).map(|i| inner.u[i * inner.k] * inner.s[0]).collect();
        let m_r: Vec<f64> = (0..c * f).map(|j| inner.v[j * inner.k]).collect();
        vertical.push(u_r);
        horizontal.push(v_r);
        pointwise.push(m_r);
        scales.push(1.0); // scale folded into the horizontal factor
    }
    // reconstruction error against the full tensor
    let mut frob2 = 0.0;
    let mut max_abs: f64 = 0.0;
    for ai in 0..a {
        for bi in 0..b {
            for ci in 0..c {
                for fi in 0..f {
                    let mut rec = 0.0;
                    for r in 0..n {
                        rec += vertical[r][ai] * horizontal[r][bi] * pointwise[r][ci * f + fi];
                    }
                    let d = filter[((ai * b + bi) * c + ci) * f + fi] - rec;
                    frob2 += d * d;
                    max_abs = max_abs.max(d.abs());
                }
            }
        }
    }
    Ok(SeparationResult {
        vertical,
        horizontal,
        scales,
        pointwise,
        rank: n,
        frobenius_error: frob2.sqrt(),
        max_abs_error: max_abs,
    })
}

/// Multiplications per output element before (C*A*B) and after (n*(C+A+B))
/// separation, and their ratio.
pub fn estimate_savings(c: u64, a: u64, b: u64, n: u64) -> (u64, u64, f64) {
    let before = c * a * b;
    let after = n * (c + a + b);
    (before, after, before as f64 / after as f64)
}

/// Replaces a VALID stride-1 Conv2D with the separated chain: per rank a 1xB
/// then Ax1 depthwise stage, channel-concat across ranks, and a 1x1 pointwise
/// conv. The node is left unchanged on RankTooLow.
pub fn separate_conv2d(
    graph: &Graph,
    node_id: NodeId,
    n: usize,
    tol: f64,
) -> Result<(Graph, PassReport), OpsError> {
    let mut g = graph.clone();
    let _ = g.validate();
    let mut report = PassReport::begin("separate_conv2d", &g);
    let node = g
        .node(node_id)
        .ok_or_else(|| OpsError::UnsupportedConv("no such node".into()))?
        .clone();
    if node.op != OpKind::Conv2D {
        return Err(OpsError::UnsupportedConv(format!("{} is not Conv2D", node.op.name())));
    }
    let strides = node.ints_attr("strides").unwrap_or(&[1, 1]);
    if strides != [1, 1] {
        return Err(OpsError::UnsupportedConv("stride must be 1".into()));
    }
    if node.str_attr("padding").map(|p| p == "SAME").unwrap_or(false) {
        return Err(OpsError::UnsupportedConv("SAME padding not supported".into()));
    }
    let wt = node.inputs[1];
    let filter = g
        .const_data(wt)
        .ok_or_else(|| OpsError::UnsupportedConv("filter must be const".into()))?
        .payload
        .to_f64_vec();
    let fshape = g.tensor(wt).shape.clone();
    let [a, b, c, f] = [fshape[0], fshape[1], fshape[2], fshape[3]];
    let sep = separate_filter_4d(&filter, [a, b, c, f], n)?;
    let wmax = filter.iter().fold(0.0f64, |m, &x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    if sep.max_abs_error > tol * wmax {
        return Err(OpsError::RankTooLow {
            rank: n,
            error: sep.max_abs_error,
            tol: tol * wmax,
        });
    }

    let x = node.inputs[0];
    let in_shape = g.tensor(x).shape.clone();
    let [nn, h, w] = [in_shape[0], in_shape[1], in_shape[2]];
    let out_t = node.outputs[0];
    let mut branches = Vec::with_capacity(n);
    for r in 0..n {
        // 1xB depthwise: same row filter replicated over all C channels
        let mut hk = vec![0.0f32; b * c];
        for bi in 0..b {
            for ci in 0..c {
                hk[bi * c + ci] = sep.horizontal[r][bi] as f32;
            }
        }
        let hw = g.add_const(vec![1, b, c, 1], Payload::F32(hk));
        let (h1, t1) = g.op(
            OpKind::DepthwiseConv2D,
            vec![x, hw],
            vec![nn, h, w - b + 1, c],
            DType::F32,
        );
        g.set_attr(h1, "strides", AttrValue::Ints(vec![1, 1]));
        // Ax1 depthwise
        let mut vk = vec![0.0f32; a * c];
        for ai in 0..a {
            for ci in 0..c {
                vk[ai * c + ci] = (sep.scales[r] * sep.vertical[r][ai]) as f32;
            }
        }
        let vw = g.add_const(vec![a, 1, c, 1], Payload::F32(vk));
        let (v1, t2) = g.op(
            OpKind::DepthwiseConv2D,
            vec![t1, vw],
            vec![nn, h - a + 1, w - b + 1, c],
            DType::F32,
        );
        g.set_attr(v1, "strides", AttrValue::Ints(vec![1, 1]));
        branches.push(t2);
    }
    let mixed = if n == 1 {
        branches[0]
    } else {
        let (cc, t) = g.op(
            OpKind::Concat,
            branches.clone(),
            vec![nn, h - a + 1, w - b + 1, c * n],
            DType::F32,
        );
        g.set_attr(cc, "axis", AttrValue::Int(3));
        t
    };
    // pointwise mix: [1,1,n*C,F], channel layout r*C + c from the concat
    let mut pk = vec![0.0f32; n * c * f];
    for r in 0..n {
        for ci in 0..c {
            for fi in 0..f {
                pk[(r * c + ci) * f + fi] = sep.pointwise[r][ci * f + fi] as f32;
            }
        }
    }
    let pw = g.add_const(vec![1, 1, n * c, f], Payload::F32(pk));
    let px = g.add_node(OpKind::Conv2D, vec![mixed, pw], vec![out_t]);
    g.set_attr(px, "strides", AttrValue::Ints(vec![1, 1]));
    g.remove_node(node_id);
    g.validate().map_err(|_| OpsError::UnsupportedConv("rewrite failed validation".into()))?;
    report.log_fire("separate", 0, 1);
    report.finish(&g);
    Ok((g, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::UNSPECIFIED_SHAPE;
    use crate::interp::{self, TensorValue};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn outer(u: &[f64], v: &[f64]) -> Vec<f64> {
        u.iter().flat_map(|&a| v.iter().map(move |&b| a * b)).collect()
    }

    #[test]
    fn sobel_rank1_exact() {
        let f = outer(&[1.0, 2.0, 1.0], &[1.0, 0.0, -1.0]);
        let r = separate_filter(&f, 3, 3, 1).unwrap();
        assert!(r.frobenius_error < 1e-12, "{}", r.frobenius_error);
        assert!(r.max_abs_error < 1e-12);
        let rec = r.reconstruct_2d();
        for (x, y) in f.iter().zip(&rec) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_filter_tail_energy() {
        let mut f = vec![0.0; 9];
        f[0] = 1.0;
        f[4] = 1.0;
        f[8] = 1.0;
        let r = separate_filter(&f, 3, 3, 1).unwrap();
        assert!((r.frobenius_error.powi(2) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn full_rank_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(a, b) in &[(3usize, 3usize), (5, 7), (4, 2)] {
            let f: Vec<f64> = (0..a * b).map(|_| rng.random::<f64>() - 0.5).collect();
            let r = separate_filter(&f, a, b, a.min(b)).unwrap();
            assert!(r.frobenius_error < 1e-10);
            assert!(r.max_abs_error < 1e-10);
        }
    }

    /// Two-sided Jacobi eigenvalues of the Gram matrix M^T M: an independent
    /// oracle for the singular values.
    fn gram_eigenvalues(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut g = vec![0.0; cols * cols];
        for i in 0..cols {
            for j in 0..cols {
                g[i * cols + j] = (0..rows).map(|k| m[k * cols + i] * m[k * cols + j]).sum();
            }
        }
        for _ in 0..200 {
            let mut off = 0.0;
            for p in 0..cols {
                for q in (p + 1)..cols {
                    off += g[p * cols + q].abs();
                    let apq = g[p * cols + q];
                    if apq.abs() < 1e-14 {
                        continue;
                    }
                    let theta = 0.5 * ((2.0 * apq).atan2(g[q * cols + q] - g[p * cols + p]));
                    let (c, s) = (theta.cos(), theta.sin());
                    for k in 0..cols {
                        let gkp = g[k * cols + p];
                        let gkq = g[k * cols + q];
                        g[k * cols + p] = c * gkp - s * gkq;
                        g[k * cols + q] = s * gkp + c * gkq;
                    }
                    for k in 0..cols {
                        let gpk = g[p * cols + k];
                        let gqk = g[q * cols + k];
                        g[p * cols + k] = c * gpk - s * gqk;
                        g[q * cols + k] = s * gpk + c * gqk;
                    }
                }
            }
            if off < 1e-14 {
                break;
            }
        }
        let mut ev: Vec<f64> = (0..cols).map(|i| g[i * cols + i].max(0.0)).collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ev
    }

    #[test]
    fn svd_matches_gram_oracle_and_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..20 {
            let rows = 2 + (trial % 6);
            let cols = 2 + (trial % 5);
            let m: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let svd = jacobi_svd(&m, rows, cols).unwrap();
            let ev = gram_eigenvalues(&m, rows, cols);
            for (s, e) in svd.s.iter().zip(&ev) {
                assert!((s * s - e).abs() < 1e-10, "sigma^2 {} vs eig {}", s * s, e);
            }
            // orthonormal factors
            let k = cols.min(rows);
            for i in 0..k {
                for j in 0..k {
                    let want = if i == j { 1.0 } else { 0.0 };
                    let uu: f64 = (0..rows)
                        .map(|r| svd.u[r * svd.k + i] * svd.u[r * svd.k + j])
                        .sum();
                    let vv: f64 = (0..cols)
                        .map(|r| svd.v[r * svd.k + i] * svd.v[r * svd.k + j])
                        .sum();
                    if svd.s[i] > 1e-12 && svd.s[j] > 1e-12 {
                        assert!((uu - want).abs() < 1e-10, "u not orthonormal");
                        assert!((vv - want).abs() < 1e-10, "v not orthonormal");
                    }
                }
            }
            // tail energy identity: sum sigma^2 = ||M||_F^2
            let frob2: f64 = m.iter().map(|x| x * x).sum();
            let s2: f64 = svd.s.iter().map(|s| s * s).sum();
            assert!((frob2 - s2).abs() < 1e-10);
        }
    }

    #[test]
    fn savings_examples() {
        assert_eq!(estimate_savings(1, 1, 1, 1), (1, 3, 1.0 / 3.0));
        let (b, a, _) = estimate_savings(16, 3, 3, 1);
        assert_eq!((b, a), (144, 22));
        let (b, a, r) = estimate_savings(3, 3, 3, 1);
        assert_eq!((b, a), (27, 9));
        assert!((r - 3.0).abs() < 1e-12);
    }

    /// Conv graph whose filter is W[a,b,c,f] = u[a] v[b] m[c,f] (rank-1).
    fn rank1_conv_graph(c: usize, f: usize) -> (Graph, crate::graph::TensorId, NodeId) {
        let (a, b) = (3usize, 3usize);
        let u = [0.6, -1.1, 0.4];
        let v = [0.9, 0.2, -0.7];
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m: Vec<f64> = (0..c * f).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut wdat = vec![0.0f32; a * b * c * f];
        for ai in 0..a {
            for bi in 0..b {
                for ci in 0..c {
                    for fi in 0..f {
                        wdat[((ai * b + bi) * c + ci) * f + fi] =
                            (u[ai] * v[bi] * m[ci * f + fi]) as f32;
                    }
                }
            }
        }
        let mut g = Graph::new();
        let x = g.add_input(vec![1, 6, 6, c], DType::F32);
        let wt = g.add_const(vec![a, b, c, f], Payload::F32(wdat));
        let (cv, co) = g.op(OpKind::Conv2D, vec![x, wt], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        g.set_attr(cv, "strides", AttrValue::Ints(vec![1, 1]));
        g.outputs.push(co);
        g.validate().unwrap();
        (g, x, cv)
    }

    #[test]
    fn separate_rank1_conv_27_to_9() {
        let (g, x, cv) = rank1_conv_graph(3, 3);
        let (sep, report) = separate_conv2d(&g, cv, 1, DEFAULT_SEP_TOL).unwrap();
        let mut inp = BTreeMap::new();
        let data: Vec<f32> = (0..36 * 3).map(|i| ((i as f32) * 0.17).sin()).collect();
        inp.insert(x, TensorValue::f32(vec![1, 6, 6, 3], data));
        let ra = interp::run(&g, &inp).unwrap();
        let rb = interp::run(&sep, &inp).unwrap();
        assert_eq!(ra.stats.conv_mults_per_elem, 27);
        assert_eq!(rb.stats.conv_mults_per_elem, 9);
        let va = ra.outputs[&g.outputs[0]].as_f32().unwrap().to_vec();
        let vb = rb.outputs[&sep.outputs[0]].as_f32().unwrap().to_vec();
        assert_eq!(g.outputs, sep.outputs);
        for (p, q) in va.iter().zip(&vb) {
            assert!((p - q).abs() < 1e-4, "{p} vs {q}");
        }
        assert!(report.mults_after < report.mults_before);
    }

    #[test]
    fn separate_rank2_mult_count() {
        // sum of two mutually orthogonal rank-1 terms with distinct scales:
        // the two-stage SVD recovers such filters exactly at n=2
        let (a, b, c, f) = (3usize, 3usize, 3usize, 2usize);
        let terms = [
            ([1.0, 2.0, 1.0], [1.0, 0.0, -1.0]),
            ([0.3, 0.0, -0.3], [0.3, 0.6, 0.3]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut wdat = vec![0.0f32; a * b * c * f];
        for (u, v) in &terms {
            let m: Vec<f64> = (0..c * f).map(|_| rng.random::<f64>() - 0.5).collect();
            for ai in 0..a {
                for bi in 0..b {
                    for ci in 0..c {
                        for fi in 0..f {
                            wdat[((ai * b + bi) * c + ci) * f + fi] +=
                                (u[ai] * v[bi] * m[ci * f + fi]) as f32;
                        }
                    }
                }
            }
        }
        let mut g = Graph::new();
        let x = g.add_input(vec![1, 5, 5, c], DType::F32);
        let wt = g.add_const(vec![a, b, c, f], Payload::F32(wdat));
        let (cv, co) = g.op(OpKind::Conv2D, vec![x, wt], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        g.set_attr(cv, "strides", AttrValue::Ints(vec![1, 1]));
        g.outputs.push(co);
        g.validate().unwrap();
        let (sep, _) = separate_conv2d(&g, cv, 2, DEFAULT_SEP_TOL).unwrap();
        let mut inp = BTreeMap::new();
        let data: Vec<f32> = (0..25 * c).map(|i| ((i as f32) * 0.23).cos()).collect();
        inp.insert(x, TensorValue::f32(vec![1, 5, 5, c], data));
        let ra = interp::run(&g, &inp).unwrap();
        let rb = interp::run(&sep, &inp).unwrap();
        assert_eq!(rb.stats.conv_mults_per_elem, 18);
        let va = ra.outputs[&g.outputs[0]].as_f32().unwrap().to_vec();
        let vb = rb.outputs[&sep.outputs[0]].as_f32().unwrap().to_vec();
        for (p, q) in va.iter().zip(&vb) {
            assert!((p - q).abs() < 1e-3, "{p} vs {q}");
        }
    }

    #[test]
    fn full_rank_filter_rank_too_low() {
        let mut g = Graph::new();
        let x = g.add_input(vec![1, 5, 5, 1], DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let wdat: Vec<f32> = (0..9).map(|_| rng.random::<f32>() - 0.5).collect();
        let wt = g.add_const(vec![3, 3, 1, 1], Payload::F32(wdat));
        let (cv, co) = g.op(OpKind::Conv2D, vec![x, wt], UNSPECIFIED_SHAPE.to_vec(), DType::F32);
        g.set_attr(cv, "strides", AttrValue::Ints(vec![1, 1]));
        g.outputs.push(co);
        g.validate().unwrap();
        let err = separate_conv2d(&g, cv, 1, 1e-6).unwrap_err();
        assert!(matches!(err, OpsError::RankTooLow { .. }), "{err:?}");
    }

    #[test]
    fn bad_rank_rejected() {
        let f = vec![1.0; 9];
        assert!(matches!(separate_filter(&f, 3, 3, 0), Err(OpsError::BadRank { .. })));
        assert!(matches!(separate_filter(&f, 3, 3, 4), Err(OpsError::BadRank { .. })));
    }

    #[test]
    fn oversized_matrix_rejected() {
        let m = vec![0.0; 17 * 17];
        assert_eq!(jacobi_svd(&m, 17, 17).unwrap_err(), OpsError::TooLarge);
    }
}
