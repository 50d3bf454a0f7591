//! Long-term preference encoder.
//!
//! Historical trajectories go through a Bi-LSTM; each trajectory is then
//! reweighted by spatial and temporal closeness to the query check-in,
//! summarised into one vector with a personal and social term, mixed across
//! trajectories by self-attention, and finally aggregated against the
//! current trajectory.

use ndarray::Array2;
use rand::Rng;

use crate::autograd::{Mat, ParamId, ParamStore, Tape, Var};
use crate::context::{DistanceMatrix, TimeCorrelationMatrix};
use crate::corpus::Checkin;
use crate::embedding::EmbeddingTables;
use crate::nn::{uniform, LstmCell};

/// Distances below this are clamped before taking the reciprocal.
pub const MIN_DISTANCE_KM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LongTermParams {
    pub forward: LstmCell,
    pub backward: LstmCell,
    /// `D_u × K`
    pub user_proj: ParamId,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    /// Projection applied to the aggregated history.
    pub w_i: ParamId,
}

impl LongTermParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        input: usize,
        hidden: usize,
        user_dim: usize,
        rng: &mut R,
        range: f64,
    ) -> Self {
        assert!(hidden % 2 == 0, "hidden size must be even");
        let forward = LstmCell::new(store, "history.fwd", input, hidden / 2, rng, range);
        let backward = LstmCell::new(store, "history.bwd", input, hidden / 2, rng, range);
        let mut mat = |name: &str, r: usize, c: usize| store.add(name, uniform(rng, r, c, range));
        let user_proj = mat("long.user_proj", user_dim, hidden);
        let w_q = mat("long.w_q", hidden, hidden);
        let w_k = mat("long.w_k", hidden, hidden);
        let w_v = mat("long.w_v", hidden, hidden);
        let w_i = mat("long.w_i", hidden, hidden);
        Self {
            forward,
            backward,
            user_proj,
            w_q,
            w_k,
            w_v,
            w_i,
        }
    }

    pub fn find(store: &ParamStore) -> Option<Self> {
        Some(Self {
            forward: LstmCell::find(store, "history.fwd")?,
            backward: LstmCell::find(store, "history.bwd")?,
            user_proj: store.id("long.user_proj")?,
            w_q: store.id("long.w_q")?,
            w_k: store.id("long.w_k")?,
            w_v: store.id("long.w_v")?,
            w_i: store.id("long.w_i")?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden * 2
    }
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|x| x / sum).collect()
}

/// α: softmax over the history of `1 / dis(query, l_j)` in km.
pub fn spatial_weights(query_poi: u32, hist_pois: &[u32], dis: &DistanceMatrix) -> Vec<f64> {
    let inv: Vec<f64> = hist_pois
        .iter()
        .map(|&p| 1.0 / dis.km(query_poi, p).max(MIN_DISTANCE_KM))
        .collect();
    softmax(&inv)
}

/// β: softmax over the history of `τ[query slot][slot_j]`.
pub fn temporal_weights(query_slot: u8, hist_slots: &[u8], tau: &TimeCorrelationMatrix) -> Vec<f64> {
    let v: Vec<f64> = hist_slots.iter().map(|&s| tau.get(query_slot, s)).collect();
    softmax(&v)
}

/// Scales row `j` of `h` by `α_j + β_j`.
pub fn st_enrich(t: &mut Tape, h: Var, alpha: &[f64], beta: &[f64]) -> Var {
    let w = Array2::from_shape_fn((alpha.len(), 1), |(j, _)| alpha[j] + beta[j]);
    let w = t.constant(w);
    t.scale_rows(h, w)
}

/// Bi-LSTM states of several trajectories, stacked trajectory by trajectory.
#[derive(Clone, Debug)]
pub struct HistoryEncoding {
    /// `ΣN × K`; padding never appears here.
    pub rows: Var,
    /// `(offset, len)` of each trajectory within `rows`.
    pub spans: Vec<(usize, usize)>,
}

impl HistoryEncoding {
    pub fn num_rows(&self) -> usize {
        self.spans.last().map_or(0, |&(o, n)| o + n)
    }

    /// `B × ΣN` indicator of which rows belong to which trajectory.
    pub fn block_mask(&self) -> Mat {
        let mut m = Array2::zeros((self.spans.len(), self.num_rows()));
        for (b, &(o, n)) in self.spans.iter().enumerate() {
            m.slice_mut(ndarray::s![b, o..o + n]).fill(1.0);
        }
        m
    }

    pub fn trajectory(&self, t: &mut Tape, b: usize) -> Var {
        let (o, n) = self.spans[b];
        t.slice_rows(self.rows, o, n)
    }
}

/// Runs the Bi-LSTM over each trajectory; row `j` of a trajectory is the
/// forward state after `j` concatenated with the backward state at `j`.
pub fn encode_history(
    t: &mut Tape,
    lt: &LongTermParams,
    tables: &EmbeddingTables,
    trajs: &[&[Checkin]],
) -> HistoryEncoding {
    let b = trajs.len();
    let steps = trajs.iter().map(|x| x.len()).max().unwrap_or(0);
    assert!(b > 0 && steps > 0, "encode_history needs non-empty input");
    let mut inputs = Vec::with_capacity(steps);
    let mut masks = Vec::with_capacity(steps);
    for s in 0..steps {
        let rows: Vec<Option<&Checkin>> = trajs.iter().map(|x| x.get(s)).collect();
        inputs.push(tables.embed_rows(t, &rows));
        masks.push(Array2::from_shape_fn((b, 1), |(i, _)| {
            if trajs[i].len() > s {
                1.0
            } else {
                0.0
            }
        }));
    }
    let fwd = lt.forward.run(t, &inputs, Some(&masks), false);
    let bwd = lt.backward.run(t, &inputs, Some(&masks), true);
    let per_step: Vec<Var> = fwd
        .iter()
        .zip(&bwd)
        .map(|(&f, &r)| t.concat_cols(&[f, r]))
        .collect();
    let all = t.vstack(&per_step);
    let mut idx = Vec::new();
    let mut spans = Vec::with_capacity(b);
    for (i, x) in trajs.iter().enumerate() {
        spans.push((idx.len(), x.len()));
        idx.extend((0..x.len()).map(|s| s * b + i));
    }
    let rows = t.gather_rows(all, &idx);
    HistoryEncoding { rows, spans }
}

/// Personal and social summary of each encoded trajectory.
#[derive(Clone, Debug)]
pub struct SocialSummary {
    /// `B × K`: `Σ_j γ_j H[j] + Σ_j γ^f_j H[j]` per trajectory.
    pub h_uf: Var,
    /// `B × ΣN`, zero outside each trajectory's block.
    pub gamma_user: Var,
    pub gamma_friend: Option<Var>,
}

fn attention_pool(t: &mut Tape, lt: &LongTermParams, enc: &HistoryEncoding, mask: &Mat, who: Var) -> (Var, Var) {
    let proj = t.param(lt.user_proj);
    let up = t.matmul(who, proj);
    let scores = t.matmul_t(up, enc.rows);
    let scores = t.expand_rows(scores, enc.spans.len());
    let gamma = t.softmax_rows(scores, Some(mask));
    let pooled = t.matmul(gamma, enc.rows);
    (pooled, gamma)
}

/// γ weights from the user's (and optionally the friend's) projected
/// embedding and the resulting `H_{u,f}` per trajectory.
pub fn personal_social_summary(
    t: &mut Tape,
    lt: &LongTermParams,
    enc: &HistoryEncoding,
    user_vec: Var,
    friend_vec: Option<Var>,
) -> SocialSummary {
    let mask = enc.block_mask();
    let (h_u, gamma_user) = attention_pool(t, lt, enc, &mask, user_vec);
    match friend_vec {
        Some(f) => {
            let (h_f, gamma_friend) = attention_pool(t, lt, enc, &mask, f);
            SocialSummary {
                h_uf: t.add(h_u, h_f),
                gamma_user,
                gamma_friend: Some(gamma_friend),
            }
        }
        None => SocialSummary {
            h_uf: h_u,
            gamma_user,
            gamma_friend: None,
        },
    }
}

/// Adds the `1×K` summary to every row of a trajectory.
pub fn personal_social_enrich(t: &mut Tape, h: Var, h_uf: Var) -> Var {
    t.add_row(h, h_uf)
}

/// Result of one attention layer.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub output: Var,
    pub weights: Var,
}

/// Scaled dot-product attention `softmax(QKᵀ/√d) V` with `d` the width of
/// `q`.
pub fn attend(t: &mut Tape, q: Var, k: Var, v: Var) -> Attention {
    let d = t.shape(q).1 as f64;
    let scores = t.matmul_t(q, k);
    let scores = t.scale(scores, 1.0 / d.sqrt());
    let weights = t.softmax_rows(scores, None);
    let output = t.matmul(weights, v);
    Attention { output, weights }
}

/// Self-attention across the pooled vectors (`n×K`) of the histories.
pub fn inter_self_attention(t: &mut Tape, lt: &LongTermParams, pooled: Var) -> Attention {
    let (wq, wk, wv) = (t.param(lt.w_q), t.param(lt.w_k), t.param(lt.w_v));
    let q = t.matmul(pooled, wq);
    let k = t.matmul(pooled, wk);
    let v = t.matmul(pooled, wv);
    attend(t, q, k, v)
}

/// Affinity-weighted mean of the history vectors against `s_n`, before the
/// output projection. Returns `(pooled 1×K, weights 1×n)`.
pub fn nonlocal_pool(t: &mut Tape, s_n: Var, context: Var) -> (Var, Var) {
    let scores = t.matmul_t(s_n, context);
    let weights = t.softmax_rows(scores, None);
    (t.matmul(weights, context), weights)
}

/// `Y_l = Σ_i f(s_n, s_i) W_i s_i / Σ_i f(s_n, s_i)` with `f = exp(s_nᵀ s_i)`.
pub fn nonlocal_aggregate(t: &mut Tape, lt: &LongTermParams, s_n: Var, context: Var) -> (Var, Var) {
    let (pooled, weights) = nonlocal_pool(t, s_n, context);
    let wi = t.param(lt.w_i);
    (t.matmul(pooled, wi), weights)
}

/// Unidirectional pass over the first `steps` check-ins of each trajectory.
/// Returns one `B×K` state per step; rows past a trajectory's end are
/// undefined and must not be read.
pub fn encode_current(
    t: &mut Tape,
    cell: &LstmCell,
    tables: &EmbeddingTables,
    trajs: &[&[Checkin]],
    steps: usize,
) -> Vec<Var> {
    let inputs: Vec<Var> = (0..steps)
        .map(|s| {
            let rows: Vec<Option<&Checkin>> = trajs.iter().map(|x| x.get(s)).collect();
            tables.embed_rows(t, &rows)
        })
        .collect();
    cell.run(t, &inputs, None, false)
}

/// Hidden states of one prefix (`n×K`) and their mean `s_n`.
pub fn encode_current_prefix(
    t: &mut Tape,
    cell: &LstmCell,
    tables: &EmbeddingTables,
    prefix: &[Checkin],
) -> (Var, Var) {
    let states = encode_current(t, cell, tables, &[prefix], prefix.len());
    let h = t.vstack(&states);
    let s_n = t.mean_rows(h);
    (h, s_n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{build_time_correlation, DistanceMatrix};
    use crate::embedding::{FrozenEmbeddings, TableDims};
    use crate::testutil::{checkin, traj};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const E: f64 = std::f64::consts::E;

    fn setup(hidden: usize) -> (ParamStore, EmbeddingTables, LongTermParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let frozen = FrozenEmbeddings {
            poi: uniform(&mut rng, 10, 4, 1.0),
            category: uniform(&mut rng, 10, 2, 1.0),
        };
        let dims = TableDims { user: 3, slot: 2, weekday: 2 };
        let tables = EmbeddingTables::new(&mut store, frozen, 4, dims, &mut rng, 0.5);
        let lt = LongTermParams::new(&mut store, 10, hidden, 3, &mut rng, 0.5);
        (store, tables, lt)
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn spatial_weight_values() {
        let d = DistanceMatrix::from_parts(
            vec![(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)],
            0.0,
            1.0,
        );
        assert_eq!(spatial_weights(0, &[1], &d), vec![1.0]);
        // Equidistant (both clamped) → uniform.
        assert!(close(&spatial_weights(0, &[1, 2], &d), &[0.5, 0.5], 1e-15));
        let w = [1.0f64.exp(), 0.5f64.exp()];
        let expect = [w[0] / (w[0] + w[1]), w[1] / (w[0] + w[1])];
        assert!(close(&expect, &[0.6225, 0.3775], 1e-4));
        let km_per_deg = 111.194_926_644_558_73;
        let d = DistanceMatrix::new(vec![
            (0.0, 0.0),
            (0.0, 1.0 / km_per_deg),
            (0.0, 2.0 / km_per_deg),
        ])
        .unwrap();
        assert!(close(&spatial_weights(0, &[1, 2], &d), &expect, 1e-9));
    }

    #[test]
    fn temporal_weight_values() {
        // Slot 0 holds {1}, slot 1 holds {1}, slot 2 holds {2}: τ(0,1)=1, τ(0,2)=0.
        let trajs = [crate::testutil::traj_at(0, &[(1, 0.0), (1, 1.0), (2, 2.0)])];
        let tau = build_time_correlation(trajs.iter());
        let b = temporal_weights(0, &[1, 2], &tau);
        assert!(close(&b, &[E / (E + 1.0), 1.0 / (E + 1.0)], 1e-12));
        assert!(close(&b, &[0.7311, 0.2689], 1e-4));
        assert_eq!(temporal_weights(0, &[5], &tau), vec![1.0]);
        assert!(close(&temporal_weights(0, &[0, 0, 0], &tau), &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn st_enrich_cases() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let h = t.constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let same = st_enrich(&mut t, h, &[0.5, 0.5], &[0.5, 0.5]);
        assert_eq!(t.value(same), t.value(h));
        let skew = st_enrich(&mut t, h, &[1.0, 0.0], &[1.0, 0.0]);
        assert_eq!(t.value(skew), &array![[2.0, 4.0], [0.0, 0.0]]);
    }

    #[test]
    fn history_shapes_and_padding_invariance() {
        let (store, tables, lt) = setup(6);
        let a = traj(0, &[1, 2, 3]);
        let b = traj(0, &[4, 5, 6, 7, 8]);
        let single = traj(0, &[9]);
        let mut t = Tape::new(&store);
        let alone = encode_history(&mut t, &lt, &tables, &[&a.checkins]);
        let mixed = encode_history(&mut t, &lt, &tables, &[&b.checkins, &a.checkins, &single.checkins]);
        assert_eq!(t.shape(alone.rows), (3, 6));
        assert_eq!(mixed.spans, vec![(0, 5), (5, 3), (8, 1)]);
        let ra = t.value(alone.rows).clone();
        let mb = mixed.trajectory(&mut t, 1);
        let rb = t.value(mb).clone();
        assert!(ra.iter().zip(rb.iter()).all(|(x, y)| (x - y).abs() < 1e-14));
    }

    #[test]
    fn reversal_swaps_directions_with_tied_cells() {
        let (mut store, tables, lt) = setup(4);
        for (f, b) in [
            (lt.forward.w_x, lt.backward.w_x),
            (lt.forward.w_h, lt.backward.w_h),
            (lt.forward.b, lt.backward.b),
        ] {
            let v = store.get(f).clone();
            *store.get_mut(b) = v;
        }
        let x = traj(0, &[1, 2, 3]);
        let mut rev = x.clone();
        rev.checkins.reverse();
        let mut t = Tape::new(&store);
        let h = encode_history(&mut t, &lt, &tables, &[&x.checkins]);
        let hr = encode_history(&mut t, &lt, &tables, &[&rev.checkins]);
        let (h, hr) = (t.value(h.rows), t.value(hr.rows));
        for j in 0..3 {
            let fwd = h.row(j).slice(ndarray::s![..2]).to_vec();
            let bwd_rev = hr.row(2 - j).slice(ndarray::s![2..]).to_vec();
            assert!(close(&fwd, &bwd_rev, 1e-14));
        }
    }

    #[test]
    fn gamma_weights() {
        let (store, tables, lt) = setup(6);
        let a = traj(0, &[1, 2, 3]);
        let one = traj(0, &[4]);
        let mut t = Tape::new(&store);
        let enc = encode_history(&mut t, &lt, &tables, &[&a.checkins, &one.checkins]);
        let u = tables.embed_users(&mut t, &[1]);
        let same = tables.embed_users(&mut t, &[1]);
        let s = personal_social_summary(&mut t, &lt, &enc, u, Some(same));
        let g = t.value(s.gamma_user).clone();
        assert!((g.row(0).sum() - 1.0).abs() < 1e-12);
        assert_eq!(g[[1, 3]], 1.0);
        assert_eq!(g[[0, 3]], 0.0);
        let single = personal_social_summary(&mut t, &lt, &enc, u, None);
        let doubled = t.value(single.h_uf) * 2.0;
        assert!(t
            .value(s.h_uf)
            .iter()
            .zip(doubled.iter())
            .all(|(x, y)| (x - y).abs() < 1e-14));
        let h = enc.trajectory(&mut t, 0);
        let row = t.slice_rows(s.h_uf, 0, 1);
        let enriched = personal_social_enrich(&mut t, h, row);
        assert_eq!(t.shape(enriched), (3, 6));
    }

    #[test]
    fn singleton_self_attention() {
        let (store, _, lt) = setup(4);
        let mut t = Tape::new(&store);
        let pooled = t.constant(array![[0.1, -0.2, 0.3, 0.4]]);
        let att = inter_self_attention(&mut t, &lt, pooled);
        assert_eq!(t.value(att.weights), &array![[1.0]]);
        let expect = t.value(pooled).dot(store.get(lt.w_v));
        assert!(t.value(att.output).iter().zip(expect.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn self_attention_is_permutation_equivariant() {
        let (store, _, lt) = setup(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = uniform(&mut rng, 3, 4, 1.0);
        let perm = [2usize, 0, 1];
        let mut t = Tape::new(&store);
        let a = t.constant(p.clone());
        let b = t.constant(p.select(ndarray::Axis(0), &perm));
        let oa = inter_self_attention(&mut t, &lt, a);
        let ob = inter_self_attention(&mut t, &lt, b);
        let wa = t.value(oa.weights);
        for r in 0..3 {
            assert!((wa.row(r).sum() - 1.0).abs() < 1e-12);
        }
        let expect = t.value(oa.output).select(ndarray::Axis(0), &perm);
        assert!(t.value(ob.output).iter().zip(expect.iter()).all(|(x, y)| (x - y).abs() < 1e-14));
    }

    #[test]
    fn nonlocal_cases() {
        let (mut store, _, lt) = setup(2);
        *store.get_mut(lt.w_i) = array![[2.0, 0.0], [1.0, 3.0]];
        let mut t = Tape::new(&store);
        let s_n = t.constant(array![[1.0, 0.0]]);
        let ctx = t.constant(array![[1.0, 0.0], [0.0, 1.0]]);
        let (_, w) = nonlocal_aggregate(&mut t, &lt, s_n, ctx);
        assert!(close(t.value(w).as_slice().unwrap(), &[E / (E + 1.0), 1.0 / (E + 1.0)], 1e-12));
        let one = t.constant(array![[0.5, -1.0]]);
        let (y, _) = nonlocal_aggregate(&mut t, &lt, s_n, one);
        assert!(close(t.value(y).as_slice().unwrap(), &[0.0, -3.0], 1e-15));
        let twice = t.constant(array![[0.5, -1.0], [0.5, -1.0]]);
        let (y2, _) = nonlocal_aggregate(&mut t, &lt, s_n, twice);
        assert!(close(t.value(y2).as_slice().unwrap(), &[0.0, -3.0], 1e-15));
    }

    #[test]
    fn current_encoder_mean() {
        let (mut store, tables, _) = setup(4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cell = LstmCell::new(&mut store, "cur", 10, 4, &mut rng, 0.5);
        let mut t = Tape::new(&store);
        let c = [checkin(0, 1, 0.0)];
        let (h, s_n) = encode_current_prefix(&mut t, &cell, &tables, &c);
        assert_eq!(t.value(h), t.value(s_n));
        let x = traj(0, &[1, 2, 3]);
        let y = traj(0, &[4, 5]);
        let batched = encode_current(&mut t, &cell, &tables, &[&x.checkins, &y.checkins], 2);
        let (alone, _) = encode_current_prefix(&mut t, &cell, &tables, &y.checkins);
        for s in 0..2 {
            let a = t.value(batched[s]).row(1).to_vec();
            let b = t.value(alone).row(s).to_vec();
            assert!(close(&a, &b, 1e-14));
        }
    }
}
