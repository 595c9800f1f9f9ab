use pee_core::memory::{build_memory, multihop, persona_information_retrieval, retri, KeyValueMemory};
use pee_core::numkit::{grad_check, Mlp, ParamStore, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Rows = Vec<Vec<f64>>;

fn put(tape: &mut Tape, rows: &Rows) -> KeyValueMemory {
    put_kv(tape, rows, rows)
}

fn put_kv(tape: &mut Tape, keys: &Rows, values: &Rows) -> KeyValueMemory {
    let k = tape.constant(Tensor::matrix(keys.len(), keys[0].len(), keys.concat()).unwrap());
    let v = tape.constant(Tensor::matrix(values.len(), values[0].len(), values.concat()).unwrap());
    KeyValueMemory::from_matrices(tape, k, v).unwrap()
}

fn vec_var(tape: &mut Tape, v: &[f64]) -> Var {
    tape.constant(Tensor::vector(v.to_vec()))
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Rows {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

// --- plain f64 oracles -----------------------------------------------------

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn retri_oracle(q: &[f64], keys: &Rows, values: &Rows) -> (Vec<f64>, Vec<f64>) {
    let s: Vec<f64> = keys.iter().map(|k| dot(q, k)).collect();
    let max = s.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = s.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = e.iter().sum();
    let a: Vec<f64> = e.iter().map(|x| x / z).collect();
    let mut o = vec![0.0; values[0].len()];
    for (ai, v) in a.iter().zip(values) {
        for (oj, vj) in o.iter_mut().zip(v) {
            *oj += ai * vj;
        }
    }
    (o, a)
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
}

// --- retri -----------------------------------------------------------------

#[test]
fn single_slot_returns_its_value() {
    let mut t = Tape::detached();
    let m = put_kv(&mut t, &vec![vec![0.3, -2.0]], &vec![vec![5.0, 6.0, 7.0]]);
    let q = vec_var(&mut t, &[1.0, 4.0]);
    let r = retri(&mut t, q, &m).unwrap();
    assert_eq!(t.value(r.output).data(), &[5.0, 6.0, 7.0]);
    assert_eq!(t.value(r.weights.unwrap()).data(), &[1.0]);
}

#[test]
fn identical_keys_average_values() {
    let mut t = Tape::detached();
    let keys = vec![vec![0.2, 0.7]; 3];
    let values = vec![vec![1.0, 0.0], vec![0.0, 3.0], vec![2.0, 3.0]];
    let m = put_kv(&mut t, &keys, &values);
    let q = vec_var(&mut t, &[-1.0, 9.0]);
    let r = retri(&mut t, q, &m).unwrap();
    assert!(close(t.value(r.output).data(), &[1.0, 2.0], 1e-12));
}

#[test]
fn key_scaling_sharpens_attention() {
    let keys = vec![vec![1.0, 0.2], vec![0.5, 0.5], vec![-0.3, 0.9]];
    let q = [1.0, 0.0];
    let argmax = |w: &[f64]| w.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    let base = retri_oracle(&q, &keys, &keys).1;
    for alpha in [0.5, 2.0, 10.0, 100.0] {
        let scaled: Rows = keys.iter().map(|k| k.iter().map(|x| x * alpha).collect()).collect();
        let mut t = Tape::detached();
        let m = put_kv(&mut t, &scaled, &keys);
        let qv = vec_var(&mut t, &q);
        let r = retri(&mut t, qv, &m).unwrap();
        let w = t.value(r.weights.unwrap()).data().to_vec();
        assert_eq!(argmax(&w), argmax(&base));
        if alpha == 100.0 {
            assert!(w[argmax(&w)] > 0.99);
        }
    }
}

#[test]
fn retri_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let keys = random_rows(&mut rng, 5, 4);
    let values = random_rows(&mut rng, 5, 3);
    let q: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut t = Tape::detached();
    let m = put_kv(&mut t, &keys, &values);
    let qv = vec_var(&mut t, &q);
    let r = retri(&mut t, qv, &m).unwrap();
    let (o, a) = retri_oracle(&q, &keys, &values);
    assert!(close(t.value(r.output).data(), &o, 1e-12));
    assert!(close(t.value(r.weights.unwrap()).data(), &a, 1e-12));
}

// --- build_memory ------------------------------------------------------------

fn identity_mlp(store: &mut ParamStore, name: &str, d: usize) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mlp = Mlp::new(store, name, d, d, 1, &mut rng);
    let mut eye = vec![0.0; d * d];
    for i in 0..d {
        eye[i * d + i] = 1.0;
    }
    store
        .set(mlp.layers[0].weight, Tensor::matrix(d, d, eye).unwrap())
        .unwrap();
    mlp
}

#[test]
fn identity_networks_copy_representations() {
    let mut store = ParamStore::new();
    let k = identity_mlp(&mut store, "k", 3);
    let v = identity_mlp(&mut store, "v", 3);
    let mut t = Tape::new(&store);
    let reps = [vec_var(&mut t, &[1.0, 2.0, 3.0]), vec_var(&mut t, &[-1.0, 0.5, 0.0])];
    let m = build_memory(&mut t, &reps, &k, &v).unwrap();
    assert_eq!(m.len, 2);
    let want = [1.0, 2.0, 3.0, -1.0, 0.5, 0.0];
    assert_eq!(t.value(m.keys.unwrap()).data(), &want);
    assert_eq!(t.value(m.values.unwrap()).data(), &want);
}

#[test]
fn build_memory_matches_affine_oracle() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let k = Mlp::new(&mut store, "k", 3, 2, 1, &mut rng);
    let v = Mlp::new(&mut store, "v", 3, 4, 1, &mut rng);
    store
        .set(k.layers[0].bias.unwrap(), Tensor::vector(vec![0.1, -0.2]))
        .unwrap();
    let reps = random_rows(&mut rng, 2, 3);
    let mut t = Tape::new(&store);
    let rv: Vec<Var> = reps.iter().map(|r| vec_var(&mut t, r)).collect();
    let m = build_memory(&mut t, &rv, &k, &v).unwrap();
    let affine = |layer: &pee_core::numkit::Affine, x: &[f64]| -> Vec<f64> {
        let w = store.get(layer.weight);
        let b = store.get(layer.bias.unwrap()).data();
        (0..layer.output)
            .map(|j| {
                b[j] + (0..layer.input)
                    .map(|i| x[i] * w.data()[i * layer.output + j])
                    .sum::<f64>()
            })
            .collect()
    };
    let want_k: Vec<f64> = reps.iter().flat_map(|r| affine(&k.layers[0], r)).collect();
    let want_v: Vec<f64> = reps.iter().flat_map(|r| affine(&v.layers[0], r)).collect();
    assert!(close(t.value(m.keys.unwrap()).data(), &want_k, 1e-12));
    assert!(close(t.value(m.values.unwrap()).data(), &want_v, 1e-12));
}

// --- persona information retrieval ------------------------------------------

#[test]
fn pir_single_step_is_plain_retri() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rows = random_rows(&mut rng, 3, 2);
    let c = [0.4, -0.9];
    let mut t = Tape::detached();
    let m = put(&mut t, &rows);
    let cv = vec_var(&mut t, &c);
    let (o, trace) = persona_information_retrieval(&mut t, &[cv], &m).unwrap();
    let (want, a) = retri_oracle(&c, &rows, &rows);
    assert!(close(t.value(o).data(), &want, 1e-12));
    assert!(close(t.value(trace.last_weights).data(), &a, 1e-12));
}

#[test]
fn pir_zero_values_leave_queries_untouched() {
    let mut t = Tape::detached();
    let m = put_kv(&mut t, &vec![vec![1.0, 0.0], vec![0.0, 1.0]], &vec![vec![0.0, 0.0]; 2]);
    let cs = [[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]];
    let cv: Vec<Var> = cs.iter().map(|c| vec_var(&mut t, c)).collect();
    let (_, trace) = persona_information_retrieval(&mut t, &cv, &m).unwrap();
    for (q, c) in trace.queries.iter().zip(&cs) {
        assert_eq!(t.value(*q).data(), c);
    }
    for o in &trace.outputs {
        assert_eq!(t.value(*o).data(), &[0.0, 0.0]);
    }
}

#[test]
fn pir_two_steps_match_unrolled_oracle() {
    let rows = vec![vec![1.0, 0.5], vec![-0.5, 2.0]];
    let (c1, c2) = ([0.3, 0.1], [-0.2, 0.7]);
    let (o1, _) = retri_oracle(&c1, &rows, &rows);
    let q2 = add(&c2, &o1);
    let (o2, a2) = retri_oracle(&q2, &rows, &rows);

    let mut t = Tape::detached();
    let m = put(&mut t, &rows);
    let cv = [vec_var(&mut t, &c1), vec_var(&mut t, &c2)];
    let (o, trace) = persona_information_retrieval(&mut t, &cv, &m).unwrap();
    assert!(close(t.value(trace.queries[1]).data(), &q2, 1e-12));
    assert!(close(t.value(o).data(), &o2, 1e-12));
    assert!(close(t.value(trace.last_weights).data(), &a2, 1e-12));
}

#[test]
fn pir_single_slot_weight_is_one_at_every_step() {
    let mut t = Tape::detached();
    let m = put(&mut t, &vec![vec![0.4, 0.4]]);
    let cv: Vec<Var> = (0..4).map(|i| vec_var(&mut t, &[i as f64, 1.0])).collect();
    for k in 1..=4 {
        let (_, trace) = persona_information_retrieval(&mut t, &cv[..k], &m).unwrap();
        assert_eq!(t.value(trace.last_weights).data(), &[1.0]);
    }
}

// --- multihop ----------------------------------------------------------------

fn multihop_oracle(q0: &[f64], w: &Rows, e: &Rows, hops: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut q = q0.to_vec();
    let (mut ow, mut oe) = (vec![], vec![]);
    for _ in 0..hops {
        ow = retri_oracle(&q, w, w).0;
        oe = retri_oracle(&q, e, e).0;
        q = add(&q, &add(&ow, &oe));
    }
    (ow, oe, q)
}

#[test]
fn one_hop_is_two_independent_reads() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (w, e) = (random_rows(&mut rng, 2, 3), random_rows(&mut rng, 3, 3));
    let q0 = [0.1, 0.2, -0.3];
    let mut t = Tape::detached();
    let (mw, me) = (put(&mut t, &w), put(&mut t, &e));
    let qv = vec_var(&mut t, &q0);
    let r = multihop(&mut t, qv, &mw, &me, 1).unwrap();
    let ow = retri_oracle(&q0, &w, &w).0;
    let oe = retri_oracle(&q0, &e, &e).0;
    assert!(close(t.value(r.word.output).data(), &ow, 1e-12));
    assert!(close(t.value(r.external.output).data(), &oe, 1e-12));
    assert!(close(t.value(r.query).data(), &add(&q0, &add(&ow, &oe)), 1e-12));
}

#[test]
fn three_hops_match_unrolled_oracle() {
    let w = vec![vec![0.9, -0.1], vec![0.2, 0.6]];
    let e = vec![vec![-0.4, 0.8], vec![0.3, 0.3]];
    let q0 = [0.5, -0.25];
    let (ow, oe, q) = multihop_oracle(&q0, &w, &e, 3);
    let mut t = Tape::detached();
    let (mw, me) = (put(&mut t, &w), put(&mut t, &e));
    let qv = vec_var(&mut t, &q0);
    let r = multihop(&mut t, qv, &mw, &me, 3).unwrap();
    assert!(close(t.value(r.word.output).data(), &ow, 1e-10));
    assert!(close(t.value(r.external.output).data(), &oe, 1e-10));
    assert!(close(t.value(r.query).data(), &q, 1e-10));
}

#[test]
fn zero_value_memories_are_a_fixed_point() {
    for hops in 1..=5 {
        let mut t = Tape::detached();
        let keys = vec![vec![1.0, -1.0], vec![2.0, 0.5]];
        let zeros = vec![vec![0.0, 0.0]; 2];
        let mw = put_kv(&mut t, &keys, &zeros);
        let me = put_kv(&mut t, &keys[..1].to_vec(), &zeros[..1].to_vec());
        let qv = vec_var(&mut t, &[0.7, -0.2]);
        let r = multihop(&mut t, qv, &mw, &me, hops).unwrap();
        assert_eq!(t.value(r.query).data(), &[0.7, -0.2]);
        assert_eq!(t.value(r.word.output).data(), &[0.0, 0.0]);
        assert_eq!(t.value(r.external.output).data(), &[0.0, 0.0]);
    }
}

#[test]
fn empty_external_memory_still_reads_words() {
    let w = vec![vec![0.1, 0.2]];
    let mut t = Tape::detached();
    let mw = put(&mut t, &w);
    let me = KeyValueMemory::empty(2, 2);
    let qv = vec_var(&mut t, &[1.0, 1.0]);
    let r = multihop(&mut t, qv, &mw, &me, 2).unwrap();
    assert_eq!(t.value(r.external.output).data(), &[0.0, 0.0]);
    assert!(close(t.value(r.query).data(), &[1.2, 1.4], 1e-12));
}

#[test]
fn three_hops_pass_grad_check() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let kw = store.add_uniform("kw", &[3, 4], 0.8, &mut rng);
    let vw = store.add_uniform("vw", &[3, 4], 0.8, &mut rng);
    let ke = store.add_uniform("ke", &[2, 4], 0.8, &mut rng);
    let ve = store.add_uniform("ve", &[2, 4], 0.8, &mut rng);
    let q0 = store.add_uniform("q0", &[4], 0.8, &mut rng);
    let ids = [kw, vw, ke, ve, q0];
    let report = grad_check(&mut store, &ids, 1e-4, |t| {
        let [kwv, vwv, kev, vev] = [kw, vw, ke, ve].map(|id| t.param(id));
        let mw = KeyValueMemory::from_matrices(t, kwv, vwv)?;
        let me = KeyValueMemory::from_matrices(t, kev, vev)?;
        let q = t.param(q0);
        let r = multihop(t, q, &mw, &me, 3)?;
        let sq = t.mul(r.query, r.query);
        Ok(t.sum(sq))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_form_a_distribution_and_output_is_in_hull(
        seed in 0u64..10_000,
        n in 1usize..8,
        scale in 0.1f64..20.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keys: Rows = random_rows(&mut rng, n, 3).into_iter().map(|r| r.into_iter().map(|x| x * scale).collect()).collect();
        let values = random_rows(&mut rng, n, 2);
        let q: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut t = Tape::detached();
        let m = put_kv(&mut t, &keys, &values);
        let qv = vec_var(&mut t, &q);
        let r = retri(&mut t, qv, &m).unwrap();
        let w = t.value(r.weights.unwrap()).data().to_vec();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        let o = t.value(r.output).data();
        for j in 0..2 {
            let lo = values.iter().map(|v| v[j]).fold(f64::MAX, f64::min);
            let hi = values.iter().map(|v| v[j]).fold(f64::MIN, f64::max);
            prop_assert!(o[j] >= lo - 1e-12 && o[j] <= hi + 1e-12);
        }
    }
}
