//! Biometric evaluation: verification (ROC/AUC, EER, VR@FAR) and
//! closed-set identification (Rank-1), plus multi-fold aggregation.
//!
//! All threshold sweeps reduce FAR/FRR comparisons to integer counts
//! (`fp * G` vs `fn * I`) so results agree bit-exactly with brute-force
//! pair enumeration, independent of floating-point summation order.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// FAR targets every report evaluates, descending.
pub const FAR_TARGETS: [f64; 4] = [5e-2, 1e-2, 1e-3, 1e-4];

/// Similarity scores split by ground truth; higher = more same-identity.
#[derive(Debug, Clone, Default)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl ScoreSet {
    pub fn validate(&self) -> Result<()> {
        if self.genuine.is_empty() || self.impostor.is_empty() {
            return Err(Error::Validation(format!(
                "score set needs both classes, got {} genuine / {} impostor",
                self.genuine.len(),
                self.impostor.len()
            )));
        }
        if self.genuine.iter().chain(&self.impostor).any(|v| !v.is_finite()) {
            return Err(Error::Validation("score set contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Cosine similarity of two unit-normalized embedding vectors.
pub fn score(e_a: &Tensor, e_b: &Tensor) -> Result<f64> {
    let (sa, sb) = (e_a.shape().to_vec(), e_b.shape().to_vec());
    if sa.len() != 1 || sa != sb {
        return Err(Error::Dimension(format!(
            "score expects two [D] vectors, got {sa:?} and {sb:?}"
        )));
    }
    let (da, db) = (e_a.data(), e_b.data());
    for (label, d) in [("first", &da), ("second", &db)] {
        let n: f64 = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!(
                "{label} embedding has norm {n}, expected unit"
            )));
        }
    }
    Ok(da.iter().zip(db.iter()).map(|(x, y)| x * y).sum())
}

/// Cumulative accept counts at every candidate threshold, most permissive
/// first. Entry k is (threshold, tp, fp) under the rule "accept iff
/// score >= threshold"; a leading sentinel above the maximum score accepts
/// nothing.
fn sweep(scores: &ScoreSet) -> Vec<(f64, u64, u64)> {
    let mut union: Vec<f64> = scores.genuine.iter().chain(&scores.impostor).copied().collect();
    union.sort_by(|a, b| b.partial_cmp(a).unwrap());
    union.dedup();

    let mut gen_sorted = scores.genuine.clone();
    gen_sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut imp_sorted = scores.impostor.clone();
    imp_sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let mut out = Vec::with_capacity(union.len() + 1);
    out.push((union[0] + 1.0, 0, 0));
    let (mut gi, mut ii) = (0usize, 0usize);
    let (mut tp, mut fp) = (0u64, 0u64);
    for &t in &union {
        while gi < gen_sorted.len() && gen_sorted[gi] >= t {
            gi += 1;
            tp += 1;
        }
        while ii < imp_sorted.len() && imp_sorted[ii] >= t {
            ii += 1;
            fp += 1;
        }
        out.push((t, tp, fp));
    }
    out
}

/// ROC points (FAR, TAR), ascending in FAR, endpoints (0,0) and (1,1)
/// included.
pub fn roc(scores: &ScoreSet) -> Result<Vec<(f64, f64)>> {
    scores.validate()?;
    let g = scores.genuine.len() as f64;
    let i = scores.impostor.len() as f64;
    let mut points: Vec<(f64, f64)> = sweep(scores)
        .iter()
        .map(|&(_, tp, fp)| (fp as f64 / i, tp as f64 / g))
        .collect();
    if *points.last().unwrap() != (1.0, 1.0) {
        points.push((1.0, 1.0));
    }
    Ok(points)
}

/// Area under the ROC by trapezoid rule. The accumulation is exact
/// (integer numerator), so the value equals the Mann-Whitney statistic
/// `P(G > I) + 0.5 * P(G = I)`.
pub fn auc(scores: &ScoreSet) -> Result<f64> {
    scores.validate()?;
    let pts = sweep(scores);
    let g = scores.genuine.len() as u64;
    let i = scores.impostor.len() as u64;
    // twice the unnormalized area: sum of (fp_k - fp_{k-1}) * (tp_k + tp_{k-1})
    let mut twice_area: u64 = 0;
    let mut prev = (0u64, 0u64); // (tp, fp)
    for &(_, tp, fp) in &pts[1..] {
        twice_area += (fp - prev.1) * (tp + prev.0);
        prev = (tp, fp);
    }
    twice_area += (i - prev.1) * (g + prev.0); // close the curve at (1,1)
    Ok(twice_area as f64 / (2 * g * i) as f64)
}

/// Equal error rate: the threshold minimizing |FAR - FRR| (ties broken by
/// the smaller combined error), reported as the midpoint (FAR + FRR) / 2.
pub fn eer(scores: &ScoreSet) -> Result<f64> {
    scores.validate()?;
    let g = scores.genuine.len() as u64;
    let i = scores.impostor.len() as u64;
    // compare |fp/I - fn/G| via the integer |fp*G - fn*I|
    let mut best: Option<(u64, u64, u64, u64)> = None; // (gap, combined, fp, fn)
    for &(_, tp, fp) in &sweep(scores) {
        let fneg = g - tp;
        let scaled_fp = fp * g;
        let scaled_fn = fneg * i;
        let gap = scaled_fp.abs_diff(scaled_fn);
        let combined = scaled_fp + scaled_fn;
        let key = (gap, combined, fp, fneg);
        if best.map_or(true, |b| (key.0, key.1) < (b.0, b.1)) {
            best = Some(key);
        }
    }
    let (_, _, fp, fneg) = best.unwrap();
    Ok(0.5 * (fp as f64 / i as f64 + fneg as f64 / g as f64))
}

/// Verification rate at a FAR budget: the most permissive threshold whose
/// FAR does not exceed `far_target`, and the TAR there.
pub fn vr_at_far(scores: &ScoreSet, far_target: f64) -> Result<(f64, f64)> {
    scores.validate()?;
    if !(far_target > 0.0 && far_target < 1.0) {
        return Err(Error::Validation(format!(
            "far_target must lie in (0,1), got {far_target}"
        )));
    }
    let g = scores.genuine.len() as f64;
    let i = scores.impostor.len() as f64;
    // walk from most to least permissive; the first candidate satisfying
    // the budget is the smallest such threshold
    let pts = sweep(scores);
    for &(t, tp, fp) in pts.iter().rev() {
        if fp as f64 <= far_target * i {
            return Ok((tp as f64 / g, t));
        }
    }
    unreachable!("the sentinel threshold accepts nothing, FAR = 0");
}

/// Closed-set identification data: every probe identity must appear in the
/// gallery.
#[derive(Debug, Clone, Default)]
pub struct IdentificationSet {
    pub gallery: Vec<(u32, Vec<f64>)>,
    pub probes: Vec<(u32, Vec<f64>)>,
}

impl IdentificationSet {
    pub fn validate(&self) -> Result<()> {
        if self.gallery.is_empty() {
            return Err(Error::Validation("identification gallery is empty".into()));
        }
        if self.probes.is_empty() {
            return Err(Error::Validation("identification probe set is empty".into()));
        }
        let d = self.gallery[0].1.len();
        for (_, e) in self.gallery.iter().chain(&self.probes) {
            if e.len() != d {
                return Err(Error::Dimension(format!(
                    "mixed embedding dimensions {d} and {} in identification set",
                    e.len()
                )));
            }
        }
        for (id, _) in &self.probes {
            if !self.gallery.iter().any(|(gid, _)| gid == id) {
                return Err(Error::Validation(format!(
                    "probe identity {id} missing from gallery (closed-set violation)"
                )));
            }
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fraction of probes whose best-scoring gallery identity is their own.
/// Multiple gallery entries per identity score by their maximum; ties go to
/// the earliest gallery index.
pub fn rank1(idset: &IdentificationSet) -> Result<f64> {
    idset.validate()?;
    let mut hits = 0usize;
    for (pid, pe) in &idset.probes {
        let mut best_idx = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (gi, (_, ge)) in idset.gallery.iter().enumerate() {
            let s = dot(pe, ge);
            if s > best_score {
                best_score = s;
                best_idx = gi;
            }
        }
        if idset.gallery[best_idx].0 == *pid {
            hits += 1;
        }
    }
    Ok(hits as f64 / idset.probes.len() as f64)
}

/// Probe-vs-gallery similarity scores labeled by identity match.
pub fn verification_scores(idset: &IdentificationSet) -> Result<ScoreSet> {
    idset.validate()?;
    let mut set = ScoreSet::default();
    for (pid, pe) in &idset.probes {
        for (gid, ge) in &idset.gallery {
            let s = dot(pe, ge);
            if gid == pid {
                set.genuine.push(s);
            } else {
                set.impostor.push(s);
            }
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub auc: f64,
    pub eer: f64,
    pub rank1: f64,
    /// FAR target -> (verification rate, threshold used)
    pub vr_at_far: BTreeMap<u64, (f64, f64)>,
    pub n_genuine: usize,
    pub n_impostor: usize,
    pub n_probes: usize,
}

impl MetricsReport {
    /// Keys of the `vr_at_far` map are the FAR target bits, so the map is
    /// ordered and exact; this recovers the target value.
    pub fn vr(&self, far_target: f64) -> Option<(f64, f64)> {
        self.vr_at_far.get(&far_target.to_bits()).copied()
    }
}

/// All verification metrics plus Rank-1 for one gallery/probe protocol.
pub fn evaluate(idset: &IdentificationSet) -> Result<MetricsReport> {
    let scores = verification_scores(idset)?;
    let mut vr = BTreeMap::new();
    for t in FAR_TARGETS {
        vr.insert(t.to_bits(), vr_at_far(&scores, t)?);
    }
    Ok(MetricsReport {
        auc: auc(&scores)?,
        eer: eer(&scores)?,
        rank1: rank1(idset)?,
        vr_at_far: vr,
        n_genuine: scores.genuine.len(),
        n_impostor: scores.impostor.len(),
        n_probes: idset.probes.len(),
    })
}

/// `metric=value` lines, deterministic order.
pub fn format_report(r: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "auc={:.6}", r.auc);
    let _ = writeln!(s, "eer={:.6}", r.eer);
    let _ = writeln!(s, "rank1={:.6}", r.rank1);
    for t in FAR_TARGETS {
        let (vr, thr) = r.vr(t).expect("report covers all FAR targets");
        let _ = writeln!(s, "vr_at_far_{t:e}={vr:.6}");
        let _ = writeln!(s, "threshold_at_far_{t:e}={thr:.6}");
    }
    let _ = writeln!(s, "n_genuine={}", r.n_genuine);
    let _ = writeln!(s, "n_impostor={}", r.n_impostor);
    let _ = writeln!(s, "n_probes={}", r.n_probes);
    s
}

pub fn write_report(r: &MetricsReport, path: &Path) -> Result<()> {
    std::fs::write(path, format_report(r)).map_err(|e| Error::io(path, e))
}

/// `FAR,TAR` CSV with header, 6 decimal places.
pub fn write_roc_csv(scores: &ScoreSet, path: &Path) -> Result<()> {
    let mut s = String::from("FAR,TAR\n");
    for (far, tar) in roc(scores)? {
        let _ = writeln!(s, "{far:.6},{tar:.6}");
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Arithmetic mean and population standard deviation of each metric
/// across folds.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSummary {
    /// metric name -> (mean, population stddev)
    pub stats: BTreeMap<String, (f64, f64)>,
}

pub fn aggregate_folds(reports: &[MetricsReport]) -> Result<FoldSummary> {
    if reports.is_empty() {
        return Err(Error::Validation("aggregate_folds needs at least one report".into()));
    }
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        columns.entry("auc".into()).or_default().push(r.auc);
        columns.entry("eer".into()).or_default().push(r.eer);
        columns.entry("rank1".into()).or_default().push(r.rank1);
        for t in FAR_TARGETS {
            let (vr, _) = r.vr(t).expect("report covers all FAR targets");
            columns.entry(format!("vr_at_far_{t:e}")).or_default().push(vr);
        }
    }
    let stats = columns
        .into_iter()
        .map(|(name, vals)| {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (name, (mean, var.sqrt()))
        })
        .collect();
    Ok(FoldSummary { stats })
}

pub fn format_fold_summary(s: &FoldSummary) -> String {
    let mut out = String::new();
    for (name, (mean, sd)) in &s.stats {
        let _ = writeln!(out, "{name}_mean={mean:.6}");
        let _ = writeln!(out, "{name}_stddev={sd:.6}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(genuine: &[f64], impostor: &[f64]) -> ScoreSet {
        ScoreSet {
            genuine: genuine.to_vec(),
            impostor: impostor.to_vec(),
        }
    }

    #[test]
    fn score_examples() {
        let e = Tensor::from_vec(vec![2], vec![0.6, 0.8]).unwrap();
        assert_eq!(score(&e, &e).unwrap(), 1.0);
        let o = Tensor::from_vec(vec![2], vec![-0.8, 0.6]).unwrap();
        assert_eq!(score(&e, &o).unwrap(), 0.0);
        assert_eq!(
            score(&e, &o).unwrap().to_bits(),
            score(&o, &e).unwrap().to_bits()
        );
        let bad = Tensor::from_vec(vec![2], vec![1.0, 1.0]).unwrap();
        assert!(matches!(score(&e, &bad), Err(Error::Validation(_))));
    }

    #[test]
    fn separable_scores() {
        let s = set(&[0.9, 0.8], &[0.1, 0.2]);
        assert_eq!(auc(&s).unwrap(), 1.0);
        assert_eq!(eer(&s).unwrap(), 0.0);
        for t in FAR_TARGETS {
            assert_eq!(vr_at_far(&s, t).unwrap().0, 1.0);
        }
    }

    #[test]
    fn identical_distributions() {
        let s = set(&[0.1, 0.5, 0.9], &[0.1, 0.5, 0.9]);
        assert!((auc(&s).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn eer_crossing_example() {
        let s = set(&[0.6, 0.4], &[0.5, 0.3]);
        assert!((eer(&s).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn vr_far_thousand_impostors() {
        // largest impostor at 0.85, everything else below 0.5
        let mut imp: Vec<f64> = (0..999).map(|k| 0.0005 * k as f64).collect();
        imp.push(0.85);
        let s = set(&[0.9, 0.8, 0.7], &imp);
        let (vr, thr) = vr_at_far(&s, 0.001).unwrap();
        // budget allows exactly 1 of 1000 impostors through
        let passing = imp.iter().filter(|&&v| v >= thr).count();
        assert_eq!(passing, 1);
        // most permissive qualifying threshold is the lowest genuine score
        assert_eq!(thr, 0.7);
        assert_eq!(vr, 1.0);
        // a tighter budget must exclude the top impostor
        let (vr0, thr0) = vr_at_far(&s, 0.0005).unwrap();
        assert!(thr0 > 0.85);
        assert_eq!(imp.iter().filter(|&&v| v >= thr0).count(), 0);
        // only the 0.9 genuine clears the next candidate threshold
        assert!((vr0 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn vr_monotone_in_far() {
        let s = set(&[0.8, 0.6, 0.55, 0.2], &[0.7, 0.5, 0.4, 0.1]);
        let loose = vr_at_far(&s, 0.05).unwrap().0;
        let tight = vr_at_far(&s, 0.001).unwrap().0;
        assert!(loose >= tight);
    }

    #[test]
    fn monotone_transform_invariance() {
        let s = set(&[0.9, 0.3, 0.5], &[0.4, 0.2, 0.6]);
        let warp = |v: f64| (3.0 * v).exp() - 7.0;
        let w = ScoreSet {
            genuine: s.genuine.iter().map(|&v| warp(v)).collect(),
            impostor: s.impostor.iter().map(|&v| warp(v)).collect(),
        };
        assert_eq!(auc(&s).unwrap().to_bits(), auc(&w).unwrap().to_bits());
        assert_eq!(eer(&s).unwrap().to_bits(), eer(&w).unwrap().to_bits());
        for t in FAR_TARGETS {
            assert_eq!(vr_at_far(&s, t).unwrap().0, vr_at_far(&w, t).unwrap().0);
        }
    }

    #[test]
    fn rank1_examples() {
        let id = |id: u32, e: &[f64]| (id, e.to_vec());
        // probes identical to gallery entries -> 1.0
        let g = vec![id(1, &[1.0, 0.0]), id(2, &[0.0, 1.0])];
        let s = IdentificationSet {
            gallery: g.clone(),
            probes: g.clone(),
        };
        assert_eq!(rank1(&s).unwrap(), 1.0);

        // correct identity ranked second -> 0.0
        let s = IdentificationSet {
            gallery: vec![id(1, &[1.0, 0.0]), id(2, &[0.6, 0.8])],
            probes: vec![(2, vec![0.9, 0.1])],
        };
        assert_eq!(rank1(&s).unwrap(), 0.0);

        // open-set probe rejected
        let s = IdentificationSet {
            gallery: vec![id(1, &[1.0, 0.0])],
            probes: vec![(9, vec![1.0, 0.0])],
        };
        assert!(matches!(rank1(&s), Err(Error::Validation(_))));
    }

    #[test]
    fn fold_aggregation() {
        let mk = |v: f64| MetricsReport {
            auc: v,
            eer: v / 2.0,
            rank1: v,
            vr_at_far: FAR_TARGETS.iter().map(|t| (t.to_bits(), (v, 0.5))).collect(),
            n_genuine: 1,
            n_impostor: 1,
            n_probes: 1,
        };
        let s = aggregate_folds(&[mk(90.0), mk(100.0)]).unwrap();
        let (mean, sd) = s.stats["auc"];
        assert_eq!(mean, 95.0);
        assert_eq!(sd, 5.0);

        let single = aggregate_folds(&[mk(1.0)]).unwrap();
        assert_eq!(single.stats["auc"].1, 0.0);

        let swapped = aggregate_folds(&[mk(100.0), mk(90.0)]).unwrap();
        assert_eq!(swapped.stats["auc"], s.stats["auc"]);
    }

    #[test]
    fn report_formatting() {
        let r = MetricsReport {
            auc: 0.987654321,
            eer: 0.1,
            rank1: 0.75,
            vr_at_far: FAR_TARGETS.iter().map(|t| (t.to_bits(), (0.5, 0.4))).collect(),
            n_genuine: 10,
            n_impostor: 20,
            n_probes: 5,
        };
        let text = format_report(&r);
        assert!(text.contains("auc=0.987654\n"));
        assert!(text.contains("vr_at_far_1e-2=0.500000\n"));
        assert!(text.contains("n_probes=5\n"));
    }
}
