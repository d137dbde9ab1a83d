//! Exact constructions that realize other scoring functions inside this
//! model family.
//!
//! Three groups:
//! * a full-expressiveness construction that, given any finite set of true
//!   statements, produces 0/1 factor matrices whose scores separate true
//!   from false statements exactly (two variants, one sized by the entity
//!   count and one by the relation count);
//! * an exact two-way bridge to full-core trilinear models: expanding factor
//!   matrices into a dense core tensor, and compressing a core back into
//!   factors via per-slice SVD;
//! * encoders that reproduce four bilinear scorers (RESCAL, DistMult,
//!   SimplE, ComplEx) and a relation-conditioned linear convolution (HypER
//!   without its nonlinearity), each shipped with an independent oracle
//!   implementation of the original scoring function.
//!
//! All constructed models disable dropout, normalization, and tanh, and use
//! pass-through batch norms, so their evaluation path is the raw
//! multilinear form.

use std::collections::BTreeSet;

use crate::error::Result;
use crate::linalg::{slice_tensor_product, svd, Matrix, Tensor3};
use crate::model::{BatchNorm, Hyperparams, ModelParams};

/// Singular values at or below this fraction of a slice's largest are
/// treated as zero when compressing a core tensor.
pub const RANK_TRUNCATION: f64 = 1e-12;

/// A complete list of the true statements over a finite vocabulary.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub n_entities: usize,
    pub n_relations: usize,
    pub triples: BTreeSet<(usize, usize, usize)>,
}

impl GroundTruth {
    /// Builds a ground truth, dropping duplicates and checking ranges.
    pub fn new(
        n_entities: usize,
        n_relations: usize,
        triples: impl IntoIterator<Item = (usize, usize, usize)>,
    ) -> Self {
        let triples: BTreeSet<_> = triples.into_iter().collect();
        for &(s, r, o) in &triples {
            assert!(
                s < n_entities && o < n_entities && r < n_relations,
                "triple ({s},{r},{o}) out of range"
            );
        }
        GroundTruth {
            n_entities,
            n_relations,
            triples,
        }
    }

    /// Four entities and four relations exercising common patterns: a
    /// reflexive edge, a symmetric pair, a one-way edge, and a transitive
    /// chain with its shortcuts.
    pub fn example() -> Self {
        GroundTruth::new(
            4,
            4,
            [
                (0, 0, 0),
                (0, 1, 1),
                (1, 1, 0),
                (2, 2, 1),
                (3, 3, 2),
                (2, 3, 0),
                (3, 3, 0),
            ],
        )
    }

    /// True/false label of a statement, as a score the constructions must
    /// reproduce exactly.
    pub fn label(&self, s: usize, r: usize, o: usize) -> f64 {
        if self.triples.contains(&(s, r, o)) {
            1.0
        } else {
            0.0
        }
    }

    /// The same truth closed under reversal: each `(s, r, o)` adds
    /// `(o, r + n_relations, s)` over a doubled relation vocabulary.
    pub fn with_reciprocals(&self) -> GroundTruth {
        let mut triples = self.triples.clone();
        for &(s, r, o) in &self.triples {
            triples.insert((o, r + self.n_relations, s));
        }
        GroundTruth {
            n_entities: self.n_entities,
            n_relations: 2 * self.n_relations,
            triples,
        }
    }
}

/// Which dimension sizes the pooling window of the exact construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeparationMode {
    /// Window size equals the entity count; the relation-side factor stores
    /// the truth table.
    ByEntityCount,
    /// Window size equals the relation count; the subject-side factor
    /// stores the truth table.
    ByRelationCount,
}

/// Constructs a model whose evaluation score is exactly `1.0` on every true
/// statement and exactly `0.0` on every false one.
///
/// Entity and relation tables are one-hot; the factor matrices contain only
/// zeros and ones, so every score is computed in exact integer arithmetic.
pub fn exact_separation_model(
    truth: &GroundTruth,
    mode: SeparationMode,
) -> (ModelParams, Hyperparams) {
    let n_e = truth.n_entities;
    let n_r = truth.n_relations;
    let (rank, factor_u, factor_v) = match mode {
        SeparationMode::ByEntityCount => {
            let rank = n_e;
            // Column `o * n_e + m` of the subject factor is the m-th basis
            // vector, for every window o: each window passes the subject
            // coordinate through unchanged.
            let mut u = Matrix::zeros(n_e, rank * n_e);
            for m in 0..n_e {
                for o in 0..n_e {
                    u.set(m, o * n_e + m, 1.0);
                }
            }
            // The relation factor marks, in window l at offset i, whether
            // subject i relates to object l.
            let mut v = Matrix::zeros(n_r, rank * n_e);
            for &(i, j, l) in &truth.triples {
                v.set(j, l * n_e + i, 1.0);
            }
            (rank, u, v)
        }
        SeparationMode::ByRelationCount => {
            let rank = n_r;
            // The subject factor marks, in window l at offset j, whether
            // subject i relates via j to object l.
            let mut u = Matrix::zeros(n_e, rank * n_e);
            for &(i, j, l) in &truth.triples {
                u.set(i, l * rank + j, 1.0);
            }
            // The relation factor passes the relation coordinate through in
            // every window.
            let mut v = Matrix::zeros(n_r, rank * n_e);
            for j in 0..n_r {
                for o in 0..n_e {
                    v.set(j, o * rank + j, 1.0);
                }
            }
            (rank, u, v)
        }
    };
    let hyper = Hyperparams::bare(n_e, n_r, rank);
    let params = ModelParams {
        entity: Matrix::identity(n_e),
        relation: Matrix::identity(n_r),
        factor_u,
        factor_v,
        bn_entity: BatchNorm::identity(n_e),
        bn_pooled: BatchNorm::identity(n_e),
    };
    (params, hyper)
}

/// Expands factor matrices into the dense core tensor of the equivalent
/// trilinear model: `core[i][j][m] = sum_l u[i][m*rank+l] * v[j][m*rank+l]`.
pub fn build_core_tensor(factor_u: &Matrix, factor_v: &Matrix, rank: usize) -> Tensor3 {
    assert!(rank > 0, "rank must be positive");
    assert_eq!(factor_u.cols(), factor_v.cols(), "factor widths differ");
    assert_eq!(factor_u.cols() % rank, 0, "width not divisible by rank");
    let depth = factor_u.cols() / rank;
    let mut core = Tensor3::zeros(factor_u.rows(), factor_v.rows(), depth);
    for l in 0..rank {
        let u_slice = interleaved_columns(factor_u, rank, l);
        let v_slice = interleaved_columns(factor_v, rank, l);
        let term = slice_tensor_product(&u_slice, &v_slice);
        for (c, t) in core.data_mut().iter_mut().zip(term.data()) {
            *c += t;
        }
    }
    core
}

/// Extracts columns `m*rank + offset` for `m = 0..cols/rank`, i.e. one
/// position out of every pooling window.
fn interleaved_columns(factor: &Matrix, rank: usize, offset: usize) -> Matrix {
    let depth = factor.cols() / rank;
    let mut out = Matrix::zeros(factor.rows(), depth);
    for r in 0..factor.rows() {
        for m in 0..depth {
            out.set(r, m, factor.get(r, m * rank + offset));
        }
    }
    out
}

/// Direct trilinear contraction of a core tensor with three vectors.
pub fn tucker_score(core: &Tensor3, e_s: &[f64], r: &[f64], e_o: &[f64]) -> f64 {
    let (d1, d2, d3) = core.dims();
    assert_eq!(e_s.len(), d1, "subject width");
    assert_eq!(r.len(), d2, "relation width");
    assert_eq!(e_o.len(), d3, "object width");
    let mut acc = 0.0;
    for i in 0..d1 {
        if e_s[i] == 0.0 {
            continue;
        }
        for j in 0..d2 {
            if r[j] == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for m in 0..d3 {
                inner += core.get(i, j, m) * e_o[m];
            }
            acc += e_s[i] * r[j] * inner;
        }
    }
    acc
}

/// Compresses a core tensor into factor matrices whose scores reproduce the
/// trilinear form exactly (up to the `1e-12` relative rank truncation).
///
/// Each object-mode slice is factored by SVD; its singular directions fill
/// one column per window across both factors, with `sqrt(sigma)` absorbed
/// into each side. The window size is the largest slice rank encountered
/// (at least 1), so it never exceeds `min(subject dim, relation dim)`.
pub fn encode_tucker(core: &Tensor3) -> Result<(ModelParams, Hyperparams)> {
    let (d_e, d_r, depth) = core.dims();
    assert_eq!(d_e, depth, "object mode must match subject mode");
    let mut factors = Vec::with_capacity(depth);
    let mut k_used = 1usize;
    for m in 0..depth {
        let slice = core.slice_last(m);
        let dec = svd(&slice)?;
        let sigma_max = dec.sigma.first().copied().unwrap_or(0.0);
        let rank = dec
            .sigma
            .iter()
            .filter(|&&s| s > RANK_TRUNCATION * sigma_max && s > 0.0)
            .count();
        k_used = k_used.max(rank);
        factors.push((dec, rank));
    }
    let mut factor_u = Matrix::zeros(d_e, k_used * d_e);
    let mut factor_v = Matrix::zeros(d_r, k_used * d_e);
    for (m, (dec, rank)) in factors.iter().enumerate() {
        for l in 0..*rank {
            let scale = dec.sigma[l].sqrt();
            for i in 0..d_e {
                factor_u.set(i, m * k_used + l, scale * dec.u.get(i, l));
            }
            for j in 0..d_r {
                factor_v.set(j, m * k_used + l, scale * dec.v.get(j, l));
            }
        }
    }
    let hyper = Hyperparams::bare(d_e, d_r, k_used);
    let params = ModelParams {
        entity: Matrix::identity(d_e),
        relation: Matrix::identity(d_r),
        factor_u,
        factor_v,
        bn_entity: BatchNorm::identity(d_e),
        bn_pooled: BatchNorm::identity(d_e),
    };
    Ok((params, hyper))
}

/// `copies` identity blocks side by side: the subject factor shared by the
/// RESCAL and convolution encoders.
fn stacked_identity(dim: usize, copies: usize) -> Matrix {
    let mut u = Matrix::zeros(dim, copies * dim);
    for o in 0..copies {
        for m in 0..dim {
            u.set(m, o * dim + m, 1.0);
        }
    }
    u
}

/// Raw-pipeline model around explicit factors with one-hot lookup tables.
fn raw_model(
    factor_u: Matrix,
    factor_v: Matrix,
    rank: usize,
    n_relations: usize,
) -> (ModelParams, Hyperparams) {
    let d_e = factor_u.rows();
    let d_r = factor_v.rows();
    assert_eq!(d_r, n_relations, "one relation row per relation");
    let hyper = Hyperparams::bare(d_e, d_r, rank);
    let params = ModelParams {
        entity: Matrix::identity(d_e),
        relation: Matrix::identity(n_relations),
        factor_u,
        factor_v,
        bn_entity: BatchNorm::identity(d_e),
        bn_pooled: BatchNorm::identity(d_e),
    };
    (params, hyper)
}

/// Oracle: the full bilinear form `e_s^T W e_o`.
pub fn rescal_oracle(w: &Matrix, e_s: &[f64], e_o: &[f64]) -> f64 {
    assert_eq!(w.rows(), e_s.len());
    assert_eq!(w.cols(), e_o.len());
    let mut acc = 0.0;
    for i in 0..w.rows() {
        let mut inner = 0.0;
        for j in 0..w.cols() {
            inner += w.get(i, j) * e_o[j];
        }
        acc += e_s[i] * inner;
    }
    acc
}

/// Encodes one full bilinear matrix per relation. Window size equals the
/// entity width; the relation factor's row `l` holds slice `j` of `W_l`
/// transposed into window `j`.
pub fn encode_rescal(matrices: &[Matrix]) -> (ModelParams, Hyperparams) {
    assert!(!matrices.is_empty());
    let d = matrices[0].rows();
    for w in matrices {
        assert_eq!((w.rows(), w.cols()), (d, d), "square relation matrices");
    }
    let factor_u = stacked_identity(d, d);
    let mut factor_v = Matrix::zeros(matrices.len(), d * d);
    for (l, w) in matrices.iter().enumerate() {
        for i in 0..d {
            for j in 0..d {
                factor_v.set(l, j * d + i, w.get(i, j));
            }
        }
    }
    raw_model(factor_u, factor_v, d, matrices.len())
}

/// Oracle: the diagonal bilinear form `sum_i e_s[i] * w[i] * e_o[i]`.
pub fn distmult_oracle(w: &[f64], e_s: &[f64], e_o: &[f64]) -> f64 {
    assert_eq!(w.len(), e_s.len());
    assert_eq!(w.len(), e_o.len());
    e_s.iter()
        .zip(w)
        .zip(e_o)
        .map(|((&s, &w), &o)| s * w * o)
        .sum()
}

/// Encodes one diagonal-form vector per relation: window size 1, identity
/// subject factor, relation rows as given.
pub fn encode_distmult(rows: &[Vec<f64>]) -> (ModelParams, Hyperparams) {
    assert!(!rows.is_empty());
    let d = rows[0].len();
    let mut factor_v = Matrix::zeros(rows.len(), d);
    for (l, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), d, "equal-width relation vectors");
        factor_v.row_mut(l).copy_from_slice(row);
    }
    raw_model(Matrix::identity(d), factor_v, 1, rows.len())
}

/// An entity under the head/tail convention: embeddings are `[head; tail]`.
#[derive(Debug, Clone)]
pub struct HeadTail {
    pub head: Vec<f64>,
    pub tail: Vec<f64>,
}

impl HeadTail {
    /// Concatenated model-space vector.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.head.clone();
        v.extend_from_slice(&self.tail);
        v
    }
}

/// Oracle: the averaged pair of diagonal forms
/// `(⟨h_s, r, t_o⟩ + ⟨h_o, r_inv, t_s⟩) / 2`.
pub fn simple_oracle(r: &[f64], r_inv: &[f64], s: &HeadTail, o: &HeadTail) -> f64 {
    let forward: f64 = distmult_oracle(r, &s.head, &o.tail);
    let backward: f64 = distmult_oracle(r_inv, &o.head, &s.tail);
    0.5 * (forward + backward)
}

/// Encodes the averaged-pair scorer. Entities embed as `[head; tail]`;
/// window size 1 over width `2d`; the subject factor swaps the halves and
/// halves them, and relation row `l` is `[r_inv_l ; r_l]`.
pub fn encode_simple(
    relations: &[Vec<f64>],
    inverse_relations: &[Vec<f64>],
) -> (ModelParams, Hyperparams) {
    assert_eq!(relations.len(), inverse_relations.len());
    assert!(!relations.is_empty());
    let d = relations[0].len();
    let mut factor_u = Matrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        factor_u.set(i, d + i, 0.5);
        factor_u.set(d + i, i, 0.5);
    }
    let mut factor_v = Matrix::zeros(relations.len(), 2 * d);
    for (l, (r, r_inv)) in relations.iter().zip(inverse_relations).enumerate() {
        assert_eq!(r.len(), d);
        assert_eq!(r_inv.len(), d);
        factor_v.row_mut(l)[..d].copy_from_slice(r_inv);
        factor_v.row_mut(l)[d..].copy_from_slice(r);
    }
    raw_model(factor_u, factor_v, 1, relations.len())
}

/// A complex vector stored as separate real and imaginary parts; model-space
/// embeddings are `[re; im]`.
#[derive(Debug, Clone)]
pub struct ReIm {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ReIm {
    /// Concatenated model-space vector.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.re.clone();
        v.extend_from_slice(&self.im);
        v
    }
}

/// Oracle: `Re(sum_i s_i * r_i * conj(o_i))` expanded into four real terms.
pub fn complex_oracle(r: &ReIm, s: &ReIm, o: &ReIm) -> f64 {
    let d = r.re.len();
    assert!(d == r.im.len() && d == s.re.len() && d == s.im.len());
    assert!(d == o.re.len() && d == o.im.len());
    let mut acc = 0.0;
    for i in 0..d {
        acc += s.re[i] * r.re[i] * o.re[i]
            + s.im[i] * r.re[i] * o.im[i]
            + s.re[i] * r.im[i] * o.im[i]
            - s.im[i] * r.im[i] * o.re[i];
    }
    acc
}

/// Encodes the complex diagonal scorer. Entities embed as `[re; im]`; the
/// window size is 2. Window slice 0 pairs `[re_s; re_s]` against
/// `[re_r; im_r]`; slice 1 pairs `[-im_s; im_s]` against `[im_r; re_r]`,
/// which together produce the real and imaginary parts of `s * r` and dot
/// them against the object halves.
pub fn encode_complex(relations: &[ReIm]) -> (ModelParams, Hyperparams) {
    assert!(!relations.is_empty());
    let d = relations[0].re.len();
    let width = 2 * d; // model-space entity width
    let mut factor_u = Matrix::zeros(width, 2 * width);
    for j in 0..d {
        // Window j (object coordinate Re_j): slice 0 reads re_s[j], slice 1
        // reads -im_s[j].
        factor_u.set(j, 2 * j, 1.0);
        factor_u.set(d + j, 2 * j + 1, -1.0);
        // Window d + j (object coordinate Im_j): slice 0 reads re_s[j],
        // slice 1 reads im_s[j].
        factor_u.set(j, 2 * (d + j), 1.0);
        factor_u.set(d + j, 2 * (d + j) + 1, 1.0);
    }
    let mut factor_v = Matrix::zeros(relations.len(), 2 * width);
    for (l, r) in relations.iter().enumerate() {
        assert_eq!(r.re.len(), d);
        assert_eq!(r.im.len(), d);
        let row = factor_v.row_mut(l);
        for j in 0..d {
            row[2 * j] = r.re[j]; // slice 0, window j
            row[2 * j + 1] = r.im[j]; // slice 1, window j
            row[2 * (d + j)] = r.im[j]; // slice 0, window d+j
            row[2 * (d + j) + 1] = r.re[j]; // slice 1, window d+j
        }
    }
    raw_model(factor_u, factor_v, 2, relations.len())
}

/// Oracle for the relation-conditioned linear convolution: reshape
/// `filter_gen * r` into `n_filters` filters of length `filter_len`, slide
/// each over the subject with stride 1 (valid positions only), flatten the
/// feature maps row-major, project with `mix`, and dot with the object.
pub fn conv_oracle(
    filter_gen: &Matrix,
    mix: &Matrix,
    n_filters: usize,
    filter_len: usize,
    e_s: &[f64],
    r: &[f64],
    e_o: &[f64],
) -> f64 {
    let d_e = e_s.len();
    let conv_len = d_e - filter_len + 1;
    assert_eq!(filter_gen.rows(), n_filters * filter_len);
    assert_eq!(filter_gen.cols(), r.len());
    assert_eq!(mix.rows(), n_filters * conv_len);
    assert_eq!(mix.cols(), d_e);
    assert_eq!(e_o.len(), d_e);
    let filters = filter_gen.matvec(r);
    let mut features = vec![0.0; n_filters * conv_len];
    for f in 0..n_filters {
        for p in 0..conv_len {
            let mut acc = 0.0;
            for q in 0..filter_len {
                acc += filters[f * filter_len + q] * e_s[p + q];
            }
            features[f * conv_len + p] = acc;
        }
    }
    let projected = mix.matvec_t(&features);
    projected.iter().zip(e_o).map(|(&a, &b)| a * b).sum()
}

/// Encodes the linear convolution as a bilinear-per-relation model by
/// materializing each basis relation's filters as banded (Toeplitz)
/// matrices and folding them through the projection. The result reuses the
/// RESCAL layout: stacked-identity subject factor, one bilinear matrix per
/// relation row.
pub fn encode_conv(
    filter_gen: &Matrix,
    mix: &Matrix,
    n_filters: usize,
    filter_len: usize,
    entity_dim: usize,
) -> (ModelParams, Hyperparams) {
    let d_r = filter_gen.cols();
    let conv_len = entity_dim - filter_len + 1;
    assert_eq!(filter_gen.rows(), n_filters * filter_len);
    assert_eq!(mix.rows(), n_filters * conv_len);
    assert_eq!(mix.cols(), entity_dim);
    let factor_u = stacked_identity(entity_dim, entity_dim);
    let mut factor_v = Matrix::zeros(d_r, entity_dim * entity_dim);
    for t in 0..d_r {
        // Bilinear matrix of basis relation t.
        let mut m_t = Matrix::zeros(entity_dim, entity_dim);
        for f in 0..n_filters {
            // Banded matrix: row p holds the filter starting at column p.
            let mut band = Matrix::zeros(conv_len, entity_dim);
            for p in 0..conv_len {
                for q in 0..filter_len {
                    band.set(p, p + q, filter_gen.get(f * filter_len + q, t));
                }
            }
            // Rows of the projection belonging to this filter.
            let mut mix_block = Matrix::zeros(conv_len, entity_dim);
            for p in 0..conv_len {
                mix_block
                    .row_mut(p)
                    .copy_from_slice(mix.row(f * conv_len + p));
            }
            m_t.axpy(1.0, &band.matmul_tn(&mix_block));
        }
        for a in 0..entity_dim {
            for c in 0..entity_dim {
                factor_v.set(t, c * entity_dim + a, m_t.get(a, c));
            }
        }
    }
    raw_model(factor_u, factor_v, entity_dim, d_r)
}
