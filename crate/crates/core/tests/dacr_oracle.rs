//! Contrastive loss against a brute-force scalar re-implementation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weathercycle_core::dacr::{
    dacr_loss, dacr_loss_var, level_weight, DacrWeights, DifficultyLabel, DifficultyLevel, EmbeddingBackend, StubBackend,
};
use weathercycle_core::tape::{Tape, Tensor};
use weathercycle_core::{Result, RgbImage};

/// Stub features squeezed to 8 dims by a fixed random projection.
struct Stub8 {
    proj: Vec<[f64; StubBackend::DIM]>,
}

impl Stub8 {
    fn new() -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        Self { proj: (0..8).map(|_| std::array::from_fn(|_| r.random_range(-1.0..1.0))).collect() }
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

impl EmbeddingBackend for Stub8 {
    fn name(&self) -> &str {
        "stub8"
    }
    fn dim(&self) -> usize {
        8
    }
    fn embed_image(&self, img: &RgbImage) -> Result<Vec<f64>> {
        let f = StubBackend.embed_image(img)?;
        Ok(unit(self.proj.iter().map(|row| row.iter().zip(&f).map(|(a, b)| a * b).sum()).collect()))
    }
    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let mut v = vec![0.0; 8];
        v[text.len() % 8] = 1.0;
        Ok(v)
    }
}

fn sim(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Mean over the hard set of
/// `-log(exp(s_ap/tau) / (sum_j w_j exp(s_anj/tau) [+ exp(s_ap/tau)]))`.
fn oracle(a: &[Vec<f64>], p: &[Vec<f64>], n: &[(Vec<f64>, f64)], hard: &[usize], tau: f64, with_pos: bool) -> f64 {
    let mut total = 0.0;
    for &i in hard {
        let num = (sim(&a[i], &p[i]) / tau).exp();
        let mut den = 0.0;
        for (z, w) in n {
            den += w * (sim(&a[i], z) / tau).exp();
        }
        if with_pos {
            den += num;
        }
        total += -(num / den).ln();
    }
    total / hard.len() as f64
}

fn random_image(r: &mut ChaCha8Rng) -> RgbImage {
    let base: [f64; 3] = std::array::from_fn(|_| r.random_range(0.1..0.9));
    RgbImage::from_fn(16, 16, |_, _| base.map(|b| (b + r.random_range(-0.1..0.1)).clamp(0.0, 1.0)))
}

fn level(r: &mut ChaCha8Rng) -> DifficultyLevel {
    DifficultyLevel::ALL[r.random_range(0..3)]
}

#[test]
fn image_level_loss_matches_oracle() {
    let w = DacrWeights::default();
    let backends: [&dyn EmbeddingBackend; 2] = [&StubBackend, &Stub8::new()];
    let mut worst = 0.0f64;
    for (bi, backend) in backends.into_iter().enumerate() {
        let mut r = ChaCha8Rng::seed_from_u64(20 + bi as u64);
        for trial in 0..25 {
            let b = 1 + trial % 4;
            let anchors: Vec<RgbImage> = (0..b).map(|_| random_image(&mut r)).collect();
            let positives: Vec<RgbImage> = (0..b).map(|_| random_image(&mut r)).collect();
            let negatives: Vec<(RgbImage, DifficultyLabel)> =
                (0..b).map(|_| (random_image(&mut r), DifficultyLabel::fixed(level(&mut r)))).collect();
            let hard: Vec<usize> = (0..b).filter(|_| r.random_bool(0.7)).collect();
            let with_pos = trial % 2 == 1;
            let got = dacr_loss(backend, &anchors, &positives, &negatives, &w, &hard, with_pos).unwrap();
            if hard.is_empty() {
                assert!(got.empty);
                assert_eq!(got.loss, 0.0);
                continue;
            }
            let emb = |imgs: &[RgbImage]| imgs.iter().map(|i| backend.embed_image(i).unwrap()).collect::<Vec<_>>();
            let n: Vec<(Vec<f64>, f64)> =
                negatives.iter().map(|(i, l)| (backend.embed_image(i).unwrap(), level_weight(l.level, &w))).collect();
            let want = oracle(&emb(&anchors), &emb(&positives), &n, &hard, w.tau, with_pos);
            worst = worst.max((got.loss - want).abs());
            assert!((got.loss - want).abs() < 1e-8, "{} trial {trial}: {} vs {want}", backend.name(), got.loss);
        }
    }
    println!("dacr oracle worst abs diff {worst:e}");
}

#[test]
fn raw_embedding_loss_matches_oracle() {
    let mut r = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..40 {
        let b = 1 + trial % 4;
        let mut vecs = |k: usize| -> Vec<Vec<f64>> { (0..k).map(|_| (0..8).map(|_| r.random_range(-1.0..1.0)).collect()).collect() };
        let (a, p, n) = (vecs(b), vecs(b), vecs(b));
        let weights = [1.0, 3.0, 5.0];
        let n: Vec<(Vec<f64>, f64)> = n.into_iter().enumerate().map(|(j, v)| (v, weights[(j + trial) % 3])).collect();
        let hard: Vec<usize> = (0..b).collect();
        let mut tape = Tape::new();
        let leaf = |t: &mut Tape, v: &Vec<f64>| t.constant(Tensor::new(vec![8], v.clone()));
        let av: Vec<_> = a.iter().map(|v| leaf(&mut tape, v)).collect();
        let pv: Vec<_> = p.iter().map(|v| leaf(&mut tape, v)).collect();
        let nv: Vec<_> = n.iter().map(|(v, w)| (leaf(&mut tape, v), *w)).collect();
        let out = dacr_loss_var(&mut tape, &av, &pv, &nv, &hard, 0.1, false).unwrap();
        let got = tape.scalar_value(out.loss.unwrap());
        let want = oracle(&a, &p, &n, &hard, 0.1, false);
        assert!((got - want).abs() < 1e-8, "trial {trial}: {got} vs {want}");
    }
}

#[test]
fn weights_and_single_negative_upgrade() {
    let w = DacrWeights::default();
    let got: Vec<f64> = DifficultyLevel::ALL.iter().map(|&l| level_weight(l, &w)).collect();
    assert_eq!(got, vec![1.0, 3.0, 5.0]);

    let run = |weight: f64, neg: [f64; 2]| {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(vec![2], vec![1.0, 0.0]));
        let p = t.constant(Tensor::new(vec![2], vec![1.0, 0.0]));
        let n = t.constant(Tensor::new(vec![2], neg.to_vec()));
        let out = dacr_loss_var(&mut t, &[a], &[p], &[(n, weight)], &[0], 0.1, false).unwrap();
        t.scalar_value(out.loss.unwrap())
    };
    let easy = run(1.0, [-1.0, 0.0]);
    assert!((easy + 20.0).abs() < 1e-9, "{easy}");
    let very_hard = run(5.0, [-1.0, 0.0]);
    assert!((very_hard - easy - 5f64.ln()).abs() < 1e-9);
    assert!((run(3.0, [-1.0, 0.0]) - easy - 3f64.ln()).abs() < 1e-9);
    assert!(run(1.0, [1.0, 0.0]).abs() < 1e-12);
}
