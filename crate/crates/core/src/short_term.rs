//! Short-term preference encoder: a standard recurrent pass fused with a
//! dilated pass whose carried state skips to the cheapest recent
//! predecessor under the ε transition cost.

use ndarray::Array2;
use rand::Rng;

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::context::ContextStats;
use crate::corpus::Checkin;
use crate::embedding::EmbeddingTables;
use crate::nn::LstmCell;

/// Raw fusion parameter value whose softplus is 0.5.
pub fn fusion_init() -> f64 {
    inverse_softplus(0.5)
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn inverse_softplus(y: f64) -> f64 {
    y.exp_m1().ln()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShortTermParams {
    pub dilated: LstmCell,
    /// Cost weights `W1, W2, W3` (each `1×1`).
    pub eps_w: [ParamId; 3],
    pub w1: ParamId,
    pub w2: ParamId,
}

impl ShortTermParams {
    pub fn new<R: Rng>(store: &mut ParamStore, input: usize, hidden: usize, rng: &mut R, range: f64) -> Self {
        let dilated = LstmCell::new(store, "short.dilated", input, hidden, rng, range);
        let third = Array2::from_elem((1, 1), 1.0 / 3.0);
        let eps_w = [
            store.add("short.eps_w1", third.clone()),
            store.add("short.eps_w2", third.clone()),
            store.add("short.eps_w3", third),
        ];
        let w1 = store.add("short.fuse_w1", Array2::from_elem((1, 1), fusion_init()));
        let w2 = store.add("short.fuse_w2", Array2::from_elem((1, 1), fusion_init()));
        Self {
            dilated,
            eps_w,
            w1,
            w2,
        }
    }

    pub fn find(store: &ParamStore) -> Option<Self> {
        Some(Self {
            dilated: LstmCell::find(store, "short.dilated")?,
            eps_w: [
                store.id("short.eps_w1")?,
                store.id("short.eps_w2")?,
                store.id("short.eps_w3")?,
            ],
            w1: store.id("short.fuse_w1")?,
            w2: store.id("short.fuse_w2")?,
        })
    }

    pub fn epsilon_weights(&self, store: &ParamStore) -> [f64; 3] {
        self.eps_w.map(|id| store.get(id)[[0, 0]])
    }

    /// Effective (positive) fusion weights.
    pub fn fusion_weights(&self, store: &ParamStore) -> (f64, f64) {
        (
            softplus(store.get(self.w1)[[0, 0]]),
            softplus(store.get(self.w2)[[0, 0]]),
        )
    }
}

/// Cost features of every candidate edge `j−κ → j`: `features[j][κ−1]`.
/// Position 0 has no candidates.
pub fn candidate_features(prefix: &[Checkin], ctx: &ContextStats, kappa_max: usize) -> Vec<Vec<[f64; 3]>> {
    (0..prefix.len())
        .map(|j| {
            let to = &prefix[j];
            (1..=kappa_max.min(j))
                .map(|k| {
                    let from = &prefix[j - k];
                    ctx.transition_features((from.poi, from.category), (to.poi, to.category))
                })
                .collect()
        })
        .collect()
}

/// Chosen predecessor offset per position (`offsets[0] == 0`) and the cost
/// of every candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct DilatedPlan {
    pub offsets: Vec<usize>,
    pub costs: Vec<Vec<f64>>,
}

impl DilatedPlan {
    pub fn from_features(features: &[Vec<[f64; 3]>], weights: [f64; 3]) -> Self {
        let costs: Vec<Vec<f64>> = features
            .iter()
            .map(|cands| {
                cands
                    .iter()
                    .map(|f| f.iter().zip(weights).map(|(x, w)| x * w).sum())
                    .collect()
            })
            .collect();
        let offsets = costs
            .iter()
            .map(|c| {
                let mut best = 0;
                for (i, &v) in c.iter().enumerate() {
                    if v < c[best] {
                        best = i;
                    }
                }
                if c.is_empty() {
                    0
                } else {
                    best + 1
                }
            })
            .collect();
        Self { offsets, costs }
    }

    pub fn is_chain(&self) -> bool {
        self.offsets.iter().skip(1).all(|&k| k == 1)
    }
}

/// Picks, for each position, the predecessor offset with the smallest ε;
/// ties go to the smallest offset.
pub fn plan_dilation(prefix: &[Checkin], ctx: &ContextStats, weights: [f64; 3], kappa_max: usize) -> DilatedPlan {
    DilatedPlan::from_features(&candidate_features(prefix, ctx, kappa_max.max(1)), weights)
}

/// How the dilated pass picks its carried state.
#[derive(Clone, Debug)]
pub enum Routing<'a> {
    /// One plan per batch row.
    Hard(&'a [DilatedPlan]),
    /// Softmin over candidates, `π = softmax(−ε/T)`, with ε built on the tape
    /// from the cost-weight parameters so they receive gradients.
    Relaxed {
        features: &'a [Vec<Vec<[f64; 3]>>],
        eps_w: [ParamId; 3],
        temperature: f64,
        use_category: bool,
    },
}

/// Dilated pass over the first `steps` check-ins of each row. Returns one
/// `B×K` state per step; rows past a trajectory's end are undefined.
pub fn stc_dilated_pass(
    t: &mut Tape,
    cell: &LstmCell,
    tables: &EmbeddingTables,
    trajs: &[&[Checkin]],
    steps: usize,
    routing: &Routing,
) -> Vec<Var> {
    let b = trajs.len();
    let inputs: Vec<Var> = (0..steps)
        .map(|s| {
            let rows: Vec<Option<&Checkin>> = trajs.iter().map(|x| x.get(s)).collect();
            tables.embed_rows(t, &rows)
        })
        .collect();
    let xw = cell.project_inputs(t, &inputs);
    let mut hs: Vec<Var> = Vec::with_capacity(steps);
    let mut cs: Vec<Var> = Vec::with_capacity(steps);
    for j in 0..steps {
        let (h_prev, c_prev) = if j == 0 {
            cell.zero_state(t, b)
        } else {
            let kmax = match routing {
                Routing::Hard(plans) => plans
                    .iter()
                    .map(|p| p.offsets.get(j).copied().unwrap_or(1))
                    .max()
                    .unwrap_or(1)
                    .max(1),
                Routing::Relaxed { features, .. } => features
                    .iter()
                    .map(|f| f.get(j).map_or(1, |c| c.len()))
                    .max()
                    .unwrap_or(1)
                    .max(1),
            };
            route(t, routing, &hs, &cs, j, kmax, b)
        };
        let (h, c) = cell.step_projected(t, xw[j], h_prev, c_prev);
        hs.push(h);
        cs.push(c);
    }
    hs
}

fn route(t: &mut Tape, routing: &Routing, hs: &[Var], cs: &[Var], j: usize, kmax: usize, b: usize) -> (Var, Var) {
    match routing {
        Routing::Hard(plans) => {
            if kmax == 1 {
                return (hs[j - 1], cs[j - 1]);
            }
            let idx: Vec<usize> = plans
                .iter()
                .map(|p| p.offsets.get(j).copied().unwrap_or(1).max(1))
                .enumerate()
                .map(|(row, k)| (k - 1) * b + row)
                .chain((plans.len()..b).map(|row| row))
                .collect();
            let hc: Vec<Var> = (1..=kmax).map(|k| hs[j - k]).collect();
            let cc: Vec<Var> = (1..=kmax).map(|k| cs[j - k]).collect();
            let hstack = t.vstack(&hc);
            let cstack = t.vstack(&cc);
            (t.gather_rows(hstack, &idx), t.gather_rows(cstack, &idx))
        }
        Routing::Relaxed {
            features,
            eps_w,
            temperature,
            use_category,
        } => {
            let mut mask = Array2::zeros((b, kmax));
            let mut f: [Array2<f64>; 3] = std::array::from_fn(|_| Array2::zeros((b, kmax)));
            for (row, feats) in features.iter().enumerate().take(b) {
                match feats.get(j) {
                    Some(cands) if !cands.is_empty() => {
                        for (k, x) in cands.iter().enumerate() {
                            mask[[row, k]] = 1.0;
                            for d in 0..3 {
                                f[d][[row, k]] = x[d];
                            }
                        }
                    }
                    _ => mask[[row, 0]] = 1.0,
                }
            }
            let terms = if *use_category { 3 } else { 2 };
            let mut eps: Option<Var> = None;
            for d in 0..terms {
                let fd = t.constant(f[d].clone());
                let w = t.param(eps_w[d]);
                let term = t.scale_by(fd, w);
                eps = Some(match eps {
                    Some(e) => t.add(e, term),
                    None => term,
                });
            }
            let logits = t.scale(eps.unwrap(), -1.0 / temperature);
            let pi = t.softmax_rows(logits, Some(&mask));
            let mut h = None;
            let mut c = None;
            for k in 1..=kmax {
                let col = t.slice_cols(pi, k - 1, 1);
                let hk = t.scale_rows(hs[j - k], col);
                let ck = t.scale_rows(cs[j - k], col);
                h = Some(h.map_or(hk, |acc| t.add(acc, hk)));
                c = Some(c.map_or(ck, |acc| t.add(acc, ck)));
            }
            (h.unwrap(), c.unwrap())
        }
    }
}

/// `Y_s = ŵ1·h + ŵ2·h'` with `ŵk = softplus(wk) / (softplus(w1) + softplus(w2))`.
pub fn fuse_short_term(t: &mut Tape, h: Var, h_dil: Var, w1: Var, w2: Var) -> Var {
    let a = t.softplus(w1);
    let b = t.softplus(w2);
    let s = t.add(a, b);
    let na = t.div(a, s);
    let nb = t.div(b, s);
    let x = t.scale_by(h, na);
    let y = t.scale_by(h_dil, nb);
    t.add(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{FrozenEmbeddings, TableDims};
    use crate::nn::uniform;
    use crate::testutil::traj;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fusion_init_is_half() {
        assert!((softplus(fusion_init()) - 0.5).abs() < 1e-15);
        assert!((fusion_init() + 0.432_752_129_567_188_3).abs() < 1e-12);
    }

    fn fuse_vals(h: &[f64], hd: &[f64], w: (f64, f64)) -> Vec<f64> {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let h = t.row(h);
        let hd = t.row(hd);
        let w1 = t.row(&[inverse_softplus(w.0)]);
        let w2 = t.row(&[inverse_softplus(w.1)]);
        let y = fuse_short_term(&mut t, h, hd, w1, w2);
        t.value(y).iter().copied().collect()
    }

    #[test]
    fn fusion_cases() {
        assert_eq!(fuse_vals(&[1.0, 2.0], &[3.0, 6.0], (0.5, 0.5)), vec![2.0, 4.0]);
        let y = fuse_vals(&[1.0, 2.0], &[3.0, 6.0], (3.0, 1.0));
        assert!((y[0] - 1.5).abs() < 1e-12 && (y[1] - 3.0).abs() < 1e-12);
        let y = fuse_vals(&[0.3, -0.7], &[0.3, -0.7], (2.5, 0.1));
        assert!((y[0] - 0.3).abs() < 1e-15 && (y[1] + 0.7).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn fusion_scale_invariant(w1 in 0.05f64..5.0, w2 in 0.05f64..5.0, c in 0.1f64..10.0,
                                  h in prop::array::uniform3(-1.0f64..1.0),
                                  hd in prop::array::uniform3(-1.0f64..1.0)) {
            let a = fuse_vals(&h, &hd, (w1, w2));
            let b = fuse_vals(&h, &hd, (c * w1, c * w2));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn plan_selection() {
        // Position 2 (l3): candidate κ=1 (from l2) costs 0.9, κ=2 (from l1) 0.2.
        let feats = vec![
            vec![],
            vec![[0.5, 0.5, 0.5]],
            vec![[0.9, 0.9, 0.9], [0.2, 0.2, 0.2]],
            vec![[0.1, 0.1, 0.1], [0.1, 0.1, 0.1], [0.1, 0.1, 0.1]],
        ];
        let p = DilatedPlan::from_features(&feats, [1.0 / 3.0; 3]);
        assert_eq!(p.offsets, vec![0, 1, 2, 1]);
        assert!(!p.is_chain());
        let single: Vec<Vec<[f64; 3]>> = feats.iter().map(|c| c.iter().take(1).copied().collect()).collect();
        assert!(DilatedPlan::from_features(&single, [1.0; 3]).is_chain());
    }

    fn setup() -> (ParamStore, EmbeddingTables, LstmCell, ShortTermParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let frozen = FrozenEmbeddings {
            poi: uniform(&mut rng, 10, 3, 1.0),
            category: uniform(&mut rng, 10, 2, 1.0),
        };
        let dims = TableDims { user: 2, slot: 2, weekday: 1 };
        let tables = EmbeddingTables::new(&mut store, frozen, 2, dims, &mut rng, 0.5);
        let cur = LstmCell::new(&mut store, "cur", 8, 3, &mut rng, 0.5);
        let st = ShortTermParams::new(&mut store, 8, 3, &mut rng, 0.5);
        (store, tables, cur, st)
    }

    #[test]
    fn chain_plan_reduces_to_standard_pass() {
        let (mut store, tables, cur, st) = setup();
        for (a, b) in [(cur.w_x, st.dilated.w_x), (cur.w_h, st.dilated.w_h), (cur.b, st.dilated.b)] {
            let v = store.get(a).clone();
            *store.get_mut(b) = v;
        }
        let x = traj(0, &[1, 2, 3, 4]);
        let y = traj(0, &[5, 6]);
        let trajs = [&x.checkins[..], &y.checkins[..]];
        let chain = DilatedPlan {
            offsets: vec![0, 1, 1, 1],
            costs: vec![],
        };
        let plans = vec![chain.clone(), chain];
        let mut t = Tape::new(&store);
        let std_pass = crate::long_term::encode_current(&mut t, &cur, &tables, &trajs, 4);
        let dil = stc_dilated_pass(&mut t, &st.dilated, &tables, &trajs, 4, &Routing::Hard(&plans));
        for s in 0..4 {
            assert_eq!(t.value(std_pass[s]), t.value(dil[s]));
        }
        let w1 = t.param(st.w1);
        let w2 = t.param(st.w2);
        let y = fuse_short_term(&mut t, std_pass[3], dil[3], w1, w2);
        assert_eq!(t.value(y), t.value(std_pass[3]));
    }

    #[test]
    fn skip_routing_matches_manual_computation() {
        let (store, tables, _, st) = setup();
        let x = traj(0, &[1, 2, 3]);
        let plan = DilatedPlan {
            offsets: vec![0, 1, 2],
            costs: vec![],
        };
        let mut t = Tape::new(&store);
        let dil = stc_dilated_pass(&mut t, &st.dilated, &tables, &[&x.checkins], 3, &Routing::Hard(std::slice::from_ref(&plan)));
        // Manual: step 0 from zero, step 1 from step 0, step 2 from step 0.
        let e: Vec<Var> = x
            .checkins
            .iter()
            .map(|c| tables.embed_rows(&mut t, &[Some(c)]))
            .collect();
        let (h0, c0) = st.dilated.zero_state(&mut t, 1);
        let (h1, c1) = st.dilated.step(&mut t, e[0], h0, c0);
        let (h2, _) = st.dilated.step(&mut t, e[1], h1, c1);
        let (h3, _) = st.dilated.step(&mut t, e[2], h1, c1);
        for (got, want) in [(dil[1], h2), (dil[2], h3)] {
            assert!(t.value(got).iter().zip(t.value(want).iter()).all(|(a, b)| (a - b).abs() < 1e-14));
        }
        // Length-2 prefix: exactly one recurrent step beyond the start.
        let short = stc_dilated_pass(&mut t, &st.dilated, &tables, &[&x.checkins[..2]], 2, &Routing::Hard(std::slice::from_ref(&plan)));
        assert_eq!(short.len(), 2);
    }

    #[test]
    fn relaxed_routing_converges_to_hard_at_low_temperature() {
        let (store, tables, _, st) = setup();
        let x = traj(0, &[1, 2, 3, 4]);
        let feats = vec![
            vec![],
            vec![[0.5, 0.5, 0.5]],
            vec![[0.9, 0.9, 0.9], [0.2, 0.2, 0.2]],
            vec![[0.4, 0.4, 0.4], [0.1, 0.1, 0.1], [0.6, 0.6, 0.6]],
        ];
        let plan = DilatedPlan::from_features(&feats, st.epsilon_weights(&store));
        let mut t = Tape::new(&store);
        let hard = stc_dilated_pass(&mut t, &st.dilated, &tables, &[&x.checkins], 4, &Routing::Hard(std::slice::from_ref(&plan)));
        let relaxed = Routing::Relaxed {
            features: std::slice::from_ref(&feats),
            eps_w: st.eps_w,
            temperature: 1e-3,
            use_category: true,
        };
        let soft = stc_dilated_pass(&mut t, &st.dilated, &tables, &[&x.checkins], 4, &relaxed);
        let d = t.value(hard[3]) - t.value(soft[3]);
        assert!(d.iter().all(|v| v.abs() < 1e-9));
    }
}
