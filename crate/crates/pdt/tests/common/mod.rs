//! Brute-force metric oracles shared by the oracle and acceptance suites.
//! Everything here is deliberately naive: full pair enumeration and full
//! threshold scans, used only as ground truth.

use pdt::metrics::ScoreSet;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

pub fn random_scores(rng: &mut ChaCha12Rng) -> ScoreSet {
    let ng = rng.gen_range(1..=250);
    let ni = rng.gen_range(1..=250);
    // quantize to a coarse grid so ties across and within classes occur
    let grid = *[1000.0, 40.0, 7.0].get(rng.gen_range(0..3)).unwrap();
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| (rng.gen_range(-1.0..1.0f64) * grid).round() / grid)
            .collect()
    };
    ScoreSet {
        genuine: draw(ng),
        impostor: draw(ni),
    }
}

/// Every distinct score plus a sentinel above the maximum, under the rule
/// "accept iff score >= threshold".
pub fn candidate_thresholds(s: &ScoreSet) -> Vec<f64> {
    let mut all: Vec<f64> = s.genuine.iter().chain(&s.impostor).copied().collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup();
    let max = *all.last().unwrap();
    all.push(max + 1.0);
    all
}

pub fn counts_at(s: &ScoreSet, t: f64) -> (u64, u64) {
    let tp = s.genuine.iter().filter(|&&v| v >= t).count() as u64;
    let fp = s.impostor.iter().filter(|&&v| v >= t).count() as u64;
    (tp, fp)
}

pub fn brute_auc(s: &ScoreSet) -> f64 {
    let mut twice: u64 = 0;
    for &g in &s.genuine {
        for &i in &s.impostor {
            if g > i {
                twice += 2;
            } else if g == i {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * s.genuine.len() as u64 * s.impostor.len() as u64) as f64
}

pub fn brute_eer(s: &ScoreSet) -> f64 {
    let g = s.genuine.len() as u64;
    let i = s.impostor.len() as u64;
    let mut best: Option<(u64, u64, u64, u64)> = None;
    for t in candidate_thresholds(s) {
        let (tp, fp) = counts_at(s, t);
        let fneg = g - tp;
        let gap = (fp * g).abs_diff(fneg * i);
        let combined = fp * g + fneg * i;
        if best.map_or(true, |b| (gap, combined) < (b.0, b.1)) {
            best = Some((gap, combined, fp, fneg));
        }
    }
    let (_, _, fp, fneg) = best.unwrap();
    0.5 * (fp as f64 / i as f64 + fneg as f64 / g as f64)
}

pub fn brute_vr(s: &ScoreSet, target: f64) -> (f64, f64) {
    let g = s.genuine.len() as f64;
    let i = s.impostor.len() as f64;
    for t in candidate_thresholds(s) {
        let (tp, fp) = counts_at(s, t);
        if fp as f64 <= target * i {
            return (tp as f64 / g, t);
        }
    }
    unreachable!("sentinel threshold accepts nothing");
}
