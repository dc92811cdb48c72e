//! Oracles shared by the integration tests and the acceptance binary.
#![allow(dead_code)]

use std::path::Path;

use kgeisd::config::RunConfig;
use kgeisd::eval::MetricsReport;
use kgeisd::isd::{distill_loss_on_tape, total_loss_on_tape, SemanticBlock};
use kgeisd::kgdata::{synthetic_kg, FilterIndex, SyntheticSpec, Triple, TripleStore};
use kgeisd::models::{score_distmult, KgeModel, ModelConfig, Registry};
use kgeisd::numkernel::gradcheck::{finite_difference, relative_error};
use kgeisd::numkernel::{ParamStore, RngState, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-5;
pub const KINDS: [&str; 4] = ["distmult", "complex", "tucker", "lowfer"];

pub fn random_tensor(rng: &mut RngState, shape: &[usize], scale: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = rng.uniform_range(-scale, scale);
    }
    t
}

/// Overwrites every trainable parameter with uniform values in `±scale`, so
/// gradients are not dwarfed by finite-difference noise.
pub fn scramble(store: &mut ParamStore, rng: &mut RngState, scale: f64) {
    for (_, _, p) in store.iter_mut() {
        if p.trainable {
            p.value = random_tensor(rng, p.value.shape(), scale);
        }
    }
}

/// Relative error of the full gradient vector: the largest absolute gap
/// between tape gradients and central differences over every trainable
/// parameter, divided by the largest gradient magnitude.
pub fn max_gradient_error(store: &mut ParamStore, loss: impl Fn(&mut Tape<'_>) -> Var) -> f64 {
    let grads = {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape);
        tape.backward(l).expect("scalar loss")
    };
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, _, p)| p.trainable)
        .map(|(id, _, _)| id)
        .collect();
    let mut analytic_all = Vec::new();
    let mut numeric_all = Vec::new();
    for id in ids {
        let analytic = grads
            .param(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()));
        let numeric = finite_difference(store, id, FD_STEP, |s| {
            let mut tape = Tape::new(s);
            let l = loss(&mut tape);
            tape.value(l).item()
        });
        analytic_all.extend_from_slice(analytic.data());
        numeric_all.extend_from_slice(numeric.data());
    }
    relative_error(
        &Tensor::from_vec(analytic_all),
        &Tensor::from_vec(numeric_all),
    )
}

/// Toy sizes within N_e ≤ 8, d ≤ 6, bs ≤ 3.
pub struct Toy {
    pub n_e: usize,
    pub n_r: usize,
    pub d_e: usize,
    pub bs: usize,
}

impl Toy {
    pub fn draw(rng: &mut RngState) -> Self {
        let pick = |rng: &mut RngState, lo: usize, hi: usize| {
            lo + (rng.uniform() * (hi - lo + 1) as f64) as usize
        };
        Self {
            n_e: pick(rng, 4, 8),
            n_r: pick(rng, 2, 4),
            d_e: 2 * pick(rng, 1, 3),
            bs: pick(rng, 2, 3),
        }
    }

    pub fn ids(&self, rng: &mut RngState, n: usize) -> Vec<usize> {
        (0..self.bs)
            .map(|_| (rng.uniform() * n as f64) as usize)
            .collect()
    }

    /// Distinct head ids, as 1-N batches never repeat a query.
    pub fn heads(&self, rng: &mut RngState) -> Vec<usize> {
        let mut all: Vec<usize> = (0..self.n_e).collect();
        rng.shuffle(&mut all);
        all.truncate(self.bs);
        all
    }
}

pub fn toy_model_config(kind: &str, d_e: usize, regularized: bool) -> ModelConfig {
    let mut cfg = if regularized {
        ModelConfig::new(kind, d_e)
    } else {
        ModelConfig::plain(kind, d_e)
    };
    if kind == "tucker" || kind == "lowfer" {
        cfg.d_r = Some(d_e.max(3) - 1);
    }
    cfg.k_l = 2;
    if regularized {
        cfg.batchnorm = Some(true);
    }
    cfg
}

/// Scorer gradient: BCE of a plain model's logits against soft targets.
pub fn scorer_gradient_error(kind: &str, seed: u64) -> f64 {
    let mut rng = RngState::new(seed);
    let toy = Toy::draw(&mut rng);
    let registry = Registry::builtin();
    let cfg = toy_model_config(kind, toy.d_e, false);
    let mut store = ParamStore::new();
    let model = KgeModel::new(&registry, &cfg, toy.n_e, toy.n_r, &mut store, &mut rng).unwrap();
    scramble(&mut store, &mut rng, 1.0);
    let heads = toy.heads(&mut rng);
    let rels = toy.ids(&mut rng, toy.n_r);
    let targets = random_tensor(&mut rng, &[toy.bs, toy.n_e], 0.5).map(|x| x + 0.5);
    max_gradient_error(&mut store, |tape| {
        let mut unused = RngState::new(0);
        let u = model
            .forward(tape, &heads, &rels, true, &mut unused)
            .unwrap();
        tape.bce_logits(u, targets.clone()).unwrap()
    })
}

/// BCE gradient with the logits themselves as the parameter.
pub fn bce_gradient_error(seed: u64) -> f64 {
    let mut rng = RngState::new(seed);
    let toy = Toy::draw(&mut rng);
    let mut store = ParamStore::new();
    let u = store
        .insert("u", random_tensor(&mut rng, &[toy.bs, toy.n_e], 3.0), true)
        .unwrap();
    let targets = random_tensor(&mut rng, &[toy.bs, toy.n_e], 0.5).map(|x| x + 0.5);
    max_gradient_error(&mut store, |tape| {
        let v = tape.param(u);
        tape.bce_logits(v, targets.clone()).unwrap()
    })
}

/// Block gradient: a random linear functional of `l = extract(E)`.
pub fn block_gradient_error(seed: u64) -> f64 {
    let mut rng = RngState::new(seed);
    let toy = Toy::draw(&mut rng);
    let k_b = 1 + (rng.uniform() * 4.0) as usize;
    let mut store = ParamStore::new();
    let e = store
        .insert(
            "entity",
            random_tensor(&mut rng, &[toy.n_e, toy.d_e], 1.0),
            true,
        )
        .unwrap();
    let block = SemanticBlock::new(&mut store, toy.d_e, k_b, toy.bs, toy.n_e, &mut rng).unwrap();
    scramble(&mut store, &mut rng, 1.0);
    let heads = toy.heads(&mut rng);
    let weights = random_tensor(&mut rng, &[1, toy.d_e], 1.0);
    max_gradient_error(&mut store, |tape| {
        let ev = tape.param(e);
        let l = block.extract(tape, ev, &heads).unwrap();
        let w = tape.constant(weights.clone());
        let prod = tape.mul(l, w).unwrap();
        tape.sum(prod)
    })
}

/// Distillation gradient with the student vector as the parameter.
pub fn distill_gradient_error(seed: u64) -> f64 {
    let mut rng = RngState::new(seed);
    let d = 2 + (rng.uniform() * 5.0) as usize;
    let temperature = rng.uniform_range(0.5, 4.0);
    let mut store = ParamStore::new();
    let s = store
        .insert("student", random_tensor(&mut rng, &[1, d], 2.0), true)
        .unwrap();
    let teacher = random_tensor(&mut rng, &[1, d], 2.0);
    max_gradient_error(&mut store, |tape| {
        let sv = tape.param(s);
        let tv = tape.constant(teacher.clone());
        distill_loss_on_tape(tape, sv, tv, temperature).unwrap()
    })
}

/// The full iteration loss: regularized forward (batchnorm, fixed dropout
/// masks), BCE, block extraction, distillation against a constant teacher,
/// β-mixing.
pub fn composed_gradient_error(kind: &str, seed: u64) -> f64 {
    let mut rng = RngState::new(seed);
    let mut toy = Toy::draw(&mut rng);
    // two rows normalize to exactly ±1, which zeroes every upstream gradient
    toy.bs = 3;
    let registry = Registry::builtin();
    let cfg = toy_model_config(kind, toy.d_e, true);
    let mut store = ParamStore::new();
    let model = KgeModel::new(&registry, &cfg, toy.n_e, toy.n_r, &mut store, &mut rng).unwrap();
    let block = SemanticBlock::new(&mut store, toy.d_e, 3, toy.bs, toy.n_e, &mut rng).unwrap();
    scramble(&mut store, &mut rng, 1.0);
    let heads = toy.heads(&mut rng);
    let rels = toy.ids(&mut rng, toy.n_r);
    let targets = random_tensor(&mut rng, &[toy.bs, toy.n_e], 0.5).map(|x| x + 0.5);
    let teacher = random_tensor(&mut rng, &[1, toy.d_e], 1.0);
    let beta = rng.uniform_range(0.1, 0.9);
    let temperature = rng.uniform_range(0.5, 3.0);
    let masks = RngState::new(seed ^ 0xD00D);
    let entity = model.entity_param();
    max_gradient_error(&mut store, |tape| {
        // same masks on every evaluation
        let mut dropout = masks.clone();
        let u = model
            .forward(tape, &heads, &rels, true, &mut dropout)
            .unwrap();
        let bce = tape.bce_logits(u, targets.clone()).unwrap();
        let ev = tape.param(entity);
        let l = block.extract(tape, ev, &heads).unwrap();
        let t = tape.constant(teacher.clone());
        let kl = distill_loss_on_tape(tape, l, t, temperature).unwrap();
        total_loss_on_tape(tape, bce, Some(kl), beta).unwrap()
    })
}

/// Tie-averaged rank by sorting every surviving candidate.
pub fn brute_rank(scores: &[f64], answer: usize, known: &[usize]) -> f64 {
    let mut candidates: Vec<(f64, usize)> = scores
        .iter()
        .enumerate()
        .filter(|(c, _)| *c == answer || !known.contains(c))
        .map(|(c, &s)| (s, c))
        .collect();
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let target = scores[answer];
    let first = candidates.iter().position(|c| c.0 == target).unwrap() + 1;
    let last = candidates.iter().rposition(|c| c.0 == target).unwrap() + 1;
    (first + last) as f64 / 2.0
}

/// Reference metrics from exhaustive sorting. Reciprocal ranks are summed
/// in ascending rank order, the evaluator's documented order.
pub fn brute_metrics(
    store: &ParamStore,
    model: &KgeModel,
    triples: &[Triple],
    filter: &FilterIndex,
    inverse_offset: usize,
) -> MetricsReport {
    let e = store.value(model.entity_param());
    let r = store.value(model.relation_param());
    let score_row = |h: usize, rel: usize| -> Vec<f64> {
        let hv = Tensor::from_rows(&[e.row(h).to_vec()]);
        let rv = Tensor::from_rows(&[r.row(rel).to_vec()]);
        score_distmult(&hv, &rv, e).unwrap().into_data()
    };
    let mut heads = Vec::new();
    let mut tails = Vec::new();
    for t in triples {
        tails.push(brute_rank(
            &score_row(t.head, t.relation),
            t.tail,
            filter.tails(t.head, t.relation),
        ));
        let inv = t.relation + inverse_offset;
        heads.push(brute_rank(
            &score_row(t.tail, inv),
            t.head,
            filter.tails(t.tail, inv),
        ));
    }
    let summarize = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len() as f64;
        let mut reciprocal = 0.0;
        for x in &v {
            reciprocal += 1.0 / x;
        }
        kgeisd::eval::DirectionMetrics {
            mrr: reciprocal / n,
            h1: v.iter().filter(|&&x| x <= 1.0).count() as f64 / n,
            h3: v.iter().filter(|&&x| x <= 3.0).count() as f64 / n,
            h10: v.iter().filter(|&&x| x <= 10.0).count() as f64 / n,
        }
    };
    let both: Vec<f64> = heads.iter().chain(&tails).copied().collect();
    let all = summarize(&both);
    MetricsReport {
        mrr: all.mrr,
        h1: all.h1,
        h3: all.h3,
        h10: all.h10,
        head: summarize(&heads),
        tail: summarize(&tails),
        num_triples: triples.len(),
    }
}

/// DistMult over a random graph with embeddings on a coarse grid, so exact
/// score ties are common. Test triples reuse training queries, so known
/// answers collide with the ranked one.
pub fn ranking_fixture(seed: u64, n_e: usize) -> (TripleStore, KgeModel, ParamStore) {
    use kgeisd::kgdata::Vocabulary;
    let mut rng = RngState::new(seed);
    let n_r = 2;
    let mut seen = std::collections::HashSet::new();
    let mut triples = Vec::new();
    while triples.len() < 3 * n_e {
        let h = (rng.uniform() * n_e as f64) as usize;
        let r = (rng.uniform() * n_r as f64) as usize;
        let t = (rng.uniform() * n_e as f64) as usize;
        if h != t && seen.insert((h, r, t)) {
            triples.push(Triple::new(h, r, t));
        }
    }
    let test = triples.split_off(triples.len() - n_e.min(12));
    let valid = triples.split_off(triples.len() - 2);
    let vocab = Vocabulary::from_names(
        (0..n_e).map(|i| format!("n{i}")),
        (0..n_r).map(|i| format!("r{i}")),
    );
    let data = TripleStore::new(vocab, triples, valid, test)
        .unwrap()
        .augment_reciprocal();
    let registry = Registry::builtin();
    let mut store = ParamStore::new();
    let model = KgeModel::new(
        &registry,
        &ModelConfig::plain("distmult", 3),
        n_e,
        2 * n_r,
        &mut store,
        &mut rng,
    )
    .unwrap();
    for (_, _, p) in store.iter_mut() {
        for x in p.value.data_mut() {
            // values in {-1, -0.5, 0, 0.5, 1}
            *x = ((rng.uniform() * 5.0).floor() - 2.0) / 2.0;
        }
    }
    (data, model, store)
}

/// The 30-entity, 3-relation synthetic KG used by the training checks.
pub fn synthetic(symmetric: bool) -> TripleStore {
    synthetic_kg(&SyntheticSpec {
        symmetric,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

/// Writes a synthetic dataset and a config pointing at it.
pub fn write_toy_run(dir: &Path, cfg_json: &str) -> RunConfig {
    let data = dir.join("data");
    synthetic(false).write(&data).unwrap();
    let mut cfg = RunConfig::from_json(cfg_json).unwrap();
    cfg.dataset_dir = data;
    cfg.output_dir = dir.join("out");
    cfg
}

/// Parameter tensors by name.
pub fn named_values(store: &ParamStore) -> Vec<(String, Tensor)> {
    store
        .iter()
        .map(|(_, name, p)| (name.to_string(), p.value.clone()))
        .collect()
}

/// Largest absolute difference over the parameters the two stores share
/// by name; `None` if a shared name differs in shape.
pub fn max_shared_diff(a: &ParamStore, b: &ParamStore) -> Option<f64> {
    let mut worst = 0.0f64;
    for (_, name, p) in a.iter() {
        if let Some(id) = b.id(name) {
            let q = b.value(id);
            if q.shape() != p.value.shape() {
                return None;
            }
            worst = worst.max(p.value.max_abs_diff(q));
        }
    }
    Some(worst)
}

/// Worst absolute gaps over `n` random inputs for the three reductions to
/// DistMult: identity-core TuckER, identity-factor LowFER (rank 1) and
/// ComplEx with zero imaginary parts.
pub fn reduction_errors(n: usize, seed: u64) -> [f64; 3] {
    use kgeisd::models::{score_complex, score_lowfer, score_tucker};
    let mut rng = RngState::new(seed);
    let mut worst = [0.0f64; 3];
    for _ in 0..n {
        let d = 1 + (rng.uniform() * 6.0) as usize;
        let bs = 1 + (rng.uniform() * 3.0) as usize;
        let n_e = 2 + (rng.uniform() * 6.0) as usize;
        let h = random_tensor(&mut rng, &[bs, d], 2.0);
        let r = random_tensor(&mut rng, &[bs, d], 2.0);
        let e = random_tensor(&mut rng, &[n_e, d], 2.0);
        let reference = score_distmult(&h, &r, &e).unwrap();

        let mut core = Tensor::zeros(&[d, d, d]);
        for a in 0..d {
            core.data_mut()[a * d * d + a * d + a] = 1.0;
        }
        let tucker = score_tucker(&h, &r, &core, &e).unwrap();
        worst[0] = worst[0].max(tucker.max_abs_diff(&reference));

        let eye = Tensor::eye(d);
        let lowfer = score_lowfer(&h, &r, &eye, &eye, 1, &e).unwrap();
        worst[1] = worst[1].max(lowfer.max_abs_diff(&reference));

        let pad = |t: &Tensor| {
            let rows: Vec<Vec<f64>> = (0..t.rows())
                .map(|i| {
                    t.row(i)
                        .iter()
                        .copied()
                        .chain(std::iter::repeat_n(0.0, d))
                        .collect()
                })
                .collect();
            Tensor::from_rows(&rows)
        };
        let complex = score_complex(&pad(&h), &pad(&r), &pad(&e)).unwrap();
        worst[2] = worst[2].max(complex.max_abs_diff(&reference));
    }
    worst
}

/// Small regularized run over [`synthetic`]: dropout and batchnorm at their
/// defaults, `epochs` epochs of batch size 16.
pub fn toy_run_config(kind: &str, isd: bool, beta_init: f64, epochs: usize) -> RunConfig {
    let mut cfg = RunConfig::new("data", "out");
    cfg.model = ModelConfig::new(kind, 8);
    cfg.model.k_l = 4;
    cfg.train.batch_size = 16;
    cfg.train.lr = 0.005;
    cfg.train.epochs = epochs;
    cfg.train.eval_every = 2;
    cfg.train.seed = 7;
    cfg.isd.enabled = isd;
    cfg.isd.beta_init = beta_init;
    cfg.resolve(&Registry::builtin()).unwrap();
    cfg
}

/// A fresh trainer for `cfg` over the augmented [`synthetic`] graph.
pub fn toy_trainer(cfg: &RunConfig) -> (kgeisd::trainer::Trainer, TripleStore) {
    let data = synthetic(false).augment_reciprocal();
    let trainer =
        kgeisd::trainer::Trainer::from_run_config(&Registry::builtin(), cfg, &data).unwrap();
    (trainer, data)
}

/// Six entities on a line, one relation, unit relation vectors: the score of
/// `(h, r, t)` is `e_h · e_t`, which gives hand-checkable ties.
pub fn line_fixture() -> (TripleStore, KgeModel, ParamStore) {
    use kgeisd::kgdata::Vocabulary;
    let vocab = Vocabulary::from_names((0..6).map(|i| format!("e{i}")), ["r".to_string()]);
    let train = vec![
        Triple::new(0, 0, 1),
        Triple::new(0, 0, 2),
        Triple::new(3, 0, 4),
        Triple::new(5, 0, 0),
    ];
    let test = vec![
        Triple::new(0, 0, 3),
        Triple::new(1, 0, 2),
        Triple::new(2, 0, 5),
        Triple::new(4, 0, 1),
        Triple::new(3, 0, 3),
    ];
    let data = TripleStore::new(vocab, train, vec![], test)
        .unwrap()
        .augment_reciprocal();
    let registry = Registry::builtin();
    let mut store = ParamStore::new();
    let mut rng = RngState::new(0);
    let model = KgeModel::new(
        &registry,
        &ModelConfig::plain("distmult", 2),
        6,
        2,
        &mut store,
        &mut rng,
    )
    .unwrap();
    let e = model.entity_param();
    let r = model.relation_param();
    store.get_mut(e).value = Tensor::from_rows(&[
        vec![1.0, 0.0],
        vec![1.0, 1.0],
        vec![1.0, 1.0],
        vec![0.0, 1.0],
        vec![2.0, 0.0],
        vec![-1.0, 0.0],
    ]);
    store.get_mut(r).value = Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
    (data, model, store)
}
