//! Implementation-independent oracles: finite differences for backprop, a
//! per-sample scalar re-implementation of the forward pass, brute-force
//! tallies and the O(n^2) pairwise AUC statistic.

use gridfed::fed::fedavg;
use gridfed::metrics::{accuracy, auc, confusion, f1_weighted, per_class_f1, precision, recall, roc_curve};
use gridfed::nn::{
    backward, flatten, forward, init_params, loss_ce, param_count, unflatten, MlpParams, CLASSES, HIDDEN1, HIDDEN2,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_params(d: usize, rng: &mut ChaCha8Rng) -> MlpParams {
    let mut p = init_params(d, rng.gen());
    for x in p.b1.iter_mut().chain(p.b2.iter_mut()).chain(p.b3.iter_mut()) {
        *x = rng.gen_range(-0.3..0.3);
    }
    p
}

fn random_batch(b: usize, d: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    ((0..b * d).map(|_| rng.gen_range(-2.0..2.0)).collect(), (0..b).map(|_| rng.gen_range(0..2)).collect())
}

/// Straight-line forward pass, one sample at a time, written without any of
/// the library's helpers.
#[allow(clippy::needless_range_loop)]
fn reference_probs(p: &MlpParams, x: &[f64], d: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for row in x.chunks(d) {
        let mut h1 = [0.0; HIDDEN1];
        for (j, h) in h1.iter_mut().enumerate() {
            let mut s = p.b1[j];
            for i in 0..d {
                s += p.w1[j * d + i] * row[i];
            }
            *h = s.max(0.0);
        }
        let mut h2 = [0.0; HIDDEN2];
        for (j, h) in h2.iter_mut().enumerate() {
            let mut s = p.b2[j];
            for i in 0..HIDDEN1 {
                s += p.w2[j * HIDDEN1 + i] * h1[i];
            }
            *h = s.max(0.0);
        }
        let mut z = [0.0; CLASSES];
        for (c, zc) in z.iter_mut().enumerate() {
            let mut s = p.b3[c];
            for i in 0..HIDDEN2 {
                s += p.w3[c * HIDDEN2 + i] * h2[i];
            }
            *zc = s;
        }
        let m = z[0].max(z[1]);
        let e = [(z[0] - m).exp(), (z[1] - m).exp()];
        out.push(e[0] / (e[0] + e[1]));
        out.push(e[1] / (e[0] + e[1]));
    }
    out
}

fn loss_at(flat: &[f64], d: usize, x: &[f64], y: &[u8]) -> f64 {
    let p = unflatten(flat, d).unwrap();
    forward(&p, x).unwrap().loss(y).unwrap()
}

/// Denominator floor for the relative error of near-zero gradient entries.
const REL_FLOOR: f64 = 1e-6;

#[test]
fn backprop_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-5;
    for instance in 0..20 {
        let d = rng.gen_range(1..=10);
        let b = rng.gen_range(1..=8);
        let p = random_params(d, &mut rng);
        let (x, y) = random_batch(b, d, &mut rng);
        let analytic = backward(&p, &forward(&p, &x).unwrap(), &y).unwrap().flatten();
        let mut flat = flatten(&p);
        let mut worst = 0.0f64;
        for i in 0..flat.len() {
            let orig = flat[i];
            flat[i] = orig + h;
            let up = loss_at(&flat, d, &x, &y);
            flat[i] = orig - h;
            let down = loss_at(&flat, d, &x, &y);
            flat[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "instance {instance} (d={d}, B={b}): max relative error {worst:e}");
    }
}

#[test]
fn forward_matches_scalar_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10 {
        let d = rng.gen_range(1..=40);
        let b = rng.gen_range(1..=16);
        let p = random_params(d, &mut rng);
        let (x, _) = random_batch(b, d, &mut rng);
        let got = forward(&p, &x).unwrap();
        for (u, v) in got.probs().iter().zip(reference_probs(&p, &x, d)) {
            assert!((u - v).abs() < 1e-12, "{u} vs {v}");
        }
        for row in got.probs().chunks(2) {
            assert!(row[0] >= 0.0 && row[1] >= 0.0);
            assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn loss_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let b = rng.gen_range(1..=64);
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..b {
            let p1: f64 = rng.gen_range(0.001..0.999);
            probs.extend([1.0 - p1, p1]);
            labels.push(rng.gen_range(0..2u8));
        }
        let brute: f64 =
            -labels.iter().enumerate().map(|(i, &y)| probs[2 * i + y as usize].ln()).sum::<f64>() / b as f64;
        assert!((loss_ce(&probs, &labels).unwrap() - brute).abs() < 1e-10);
    }
}

#[test]
fn param_count_equals_flat_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let d = rng.gen_range(1..=300);
        assert_eq!(flatten(&init_params(d, rng.gen())).len(), param_count(d));
        assert_eq!(param_count(d), 128 * d + 8514);
    }
}

#[test]
fn fedavg_is_the_vector_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for k in 1..=6 {
        let models: Vec<MlpParams> = (0..k).map(|_| random_params(9, &mut rng)).collect();
        let avg = flatten(&fedavg(&models, None).unwrap());
        let flats: Vec<Vec<f64>> = models.iter().map(flatten).collect();
        for (i, a) in avg.iter().enumerate() {
            let mean = flats.iter().map(|f| f[i]).sum::<f64>() / k as f64;
            assert!((a - mean).abs() <= 1e-15, "k={k} index {i}: {a} vs {mean}");
        }
    }
    let a = random_params(4, &mut rng);
    let b = random_params(4, &mut rng);
    let pair = flatten(&fedavg(&[a.clone(), b.clone()], None).unwrap());
    for ((m, x), y) in pair.iter().zip(flatten(&a)).zip(flatten(&b)) {
        assert!((m - (x + y) / 2.0).abs() <= 1e-15);
    }
}

fn random_labels(n: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    loop {
        let v: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        if v.contains(&0) && v.contains(&1) {
            return v;
        }
    }
}

fn pairwise_auc(scores: &[f64], truth: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &ti) in truth.iter().enumerate() {
        if ti != 1 {
            continue;
        }
        for (j, &tj) in truth.iter().enumerate() {
            if tj != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

#[test]
fn confusion_matches_tally() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = rng.gen_range(1..200);
        let p: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let t: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let c = confusion(&p, &t).unwrap();
        let count = |a: u8, b: u8| p.iter().zip(&t).filter(|&(&x, &y)| x == a && y == b).count() as u64;
        assert_eq!((c.tp, c.tn, c.fp, c.fn_), (count(1, 1), count(0, 0), count(1, 0), count(0, 1)));
        assert_eq!((accuracy(&c).unwrap() * c.total() as f64).round() as u64, c.tp + c.tn);
        let f = per_class_f1(&p, &t).unwrap();
        let w = f1_weighted(&p, &t).unwrap();
        assert!(w >= f[0].min(f[1]) - 1e-15 && w <= f[0].max(f[1]) + 1e-15);
        if c.tp + c.fp > 0 {
            assert!((precision(&c).unwrap() - c.tp as f64 / (c.tp + c.fp) as f64).abs() <= 1e-15);
        }
        if c.tp + c.fn_ > 0 {
            assert!((recall(&c).unwrap() - c.tp as f64 / (c.tp + c.fn_) as f64).abs() <= 1e-15);
        }
    }
}

#[test]
fn roc_points_match_threshold_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..30 {
        let n = rng.gen_range(2..120);
        let truth = random_labels(n, &mut rng);
        // Coarse scores force ties.
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..12) as f64) / 11.0).collect();
        let pos = truth.iter().filter(|&&y| y == 1).count() as f64;
        let neg = n as f64 - pos;
        let roc = roc_curve(&scores, &truth).unwrap();
        assert_eq!((roc[0].fpr, roc[0].tpr), (0.0, 0.0));
        assert_eq!((roc.last().unwrap().fpr, roc.last().unwrap().tpr), (1.0, 1.0));
        for w in roc.windows(2) {
            assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
        for point in &roc[1..] {
            let tp = (0..n).filter(|&i| scores[i] >= point.threshold && truth[i] == 1).count() as f64;
            let fp = (0..n).filter(|&i| scores[i] >= point.threshold && truth[i] == 0).count() as f64;
            assert_eq!((point.fpr, point.tpr), (fp / neg, tp / pos));
        }
    }
}

#[test]
fn auc_equals_pairwise_statistic() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for n in [2usize, 3, 10, 57, 400, 2000] {
        let truth = random_labels(n, &mut rng);
        let continuous: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let tied: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64).collect();
        for scores in [continuous, tied] {
            let a = auc(&scores, &truth).unwrap();
            assert!((a - pairwise_auc(&scores, &truth)).abs() < 1e-9, "n={n}");
            let cubed: Vec<f64> = scores.iter().map(|s| s.powi(3)).collect();
            let sigmoid: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
            assert!((auc(&cubed, &truth).unwrap() - a).abs() < 1e-12);
            assert!((auc(&sigmoid, &truth).unwrap() - a).abs() < 1e-12);
        }
    }
}

#[test]
fn random_ranking_auc_is_one_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 10_000;
    let truth = random_labels(n, &mut rng);
    let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    assert!((auc(&scores, &truth).unwrap() - 0.5).abs() < 0.02);
}
