//! Brute-force reference implementations, written independently of the
//! library: rankings come from pairwise comparisons of integer counts,
//! decoding transforms from exact integer arithmetic where possible, and
//! chi-square tail probabilities from direct numerical integration.
//!
//! Each `check_*` returns a short summary on success and a description of
//! the first disagreement otherwise.

#![allow(dead_code)]

use dmap::decoding::{apply_spec, apply_temperature, apply_top_k, apply_top_p};
use dmap::density::bin_density;
use dmap::engine::interval_for;
use dmap::records::compact_from_full;
use dmap::stats::chi_square_pvalue;
use dmap::{DecodingSpec, DmapInterval, Error, FullDistributionRecord, StepDensity};

pub const MAX_VOCAB: usize = 8;

/// Every vector of `vocab` non-negative integers summing to `total`.
pub fn compositions(vocab: usize, total: u32) -> Vec<Vec<u32>> {
    fn rec(prefix: &mut Vec<u32>, left: usize, remaining: u32, out: &mut Vec<Vec<u32>>) {
        if left == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for c in 0..=remaining {
            prefix.push(c);
            rec(prefix, left - 1, remaining - c, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), vocab, total, &mut out);
    out
}

/// The probability grid: all vocabularies up to [`MAX_VOCAB`] with
/// probabilities in steps of 1/6, plus a finer 1/12 grid up to size 4.
pub fn grid() -> Vec<(Vec<u32>, u32)> {
    let mut out = Vec::new();
    for vocab in 1..=MAX_VOCAB {
        out.extend(compositions(vocab, 6).into_iter().map(|c| (c, 6)));
    }
    for vocab in 1..=4 {
        out.extend(compositions(vocab, 12).into_iter().map(|c| (c, 12)));
    }
    out
}

fn probs(counts: &[u32], total: u32) -> Vec<f64> {
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Number of tokens placed strictly before `j`: higher count, or equal
/// count and lower index.
fn rank(counts: &[u32], j: usize) -> usize {
    (0..counts.len()).filter(|&i| counts[i] > counts[j] || (counts[i] == counts[j] && i < j)).count()
}

/// Integer mass of the tokens ranked before `j`.
fn count_above(counts: &[u32], j: usize) -> u32 {
    (0..counts.len()).filter(|&i| rank(counts, i) < rank(counts, j)).map(|i| counts[i]).sum()
}

fn entropy_oracle(counts: &[u32], total: u32) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

pub fn check_compact_from_full() -> Result<String, String> {
    let mut cases = 0;
    for (counts, total) in grid() {
        let p = probs(&counts, total);
        for obs in 0..counts.len() {
            let rec = FullDistributionRecord { text_id: "g".into(), pos: 3, obs_index: obs, probs: p.clone(), is_prompt: false };
            let s = compact_from_full(&rec).map_err(|e| format!("{counts:?} obs {obs}: {e}"))?;
            let above = count_above(&counts, obs) as f64 / total as f64;
            let h = entropy_oracle(&counts, total);
            if s.p_obs != p[obs] || !close(s.mass_above, above, 1e-14) || !close(s.entropy, h, 1e-13) || s.pos != 3 {
                return Err(format!(
                    "{counts:?} obs {obs}: got ({}, {}, {}), oracle ({}, {above}, {h})",
                    s.p_obs, s.mass_above, s.entropy, p[obs]
                ));
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} (distribution, observed token) cases"))
}

pub fn check_interval_for() -> Result<String, String> {
    let mut cases = 0;
    for (counts, total) in grid() {
        let p = probs(&counts, total);
        let mut covered = 0.0;
        for obs in 0..counts.len() {
            let above = count_above(&counts, obs);
            let mass_above = above as f64 / total as f64;
            match interval_for(p[obs], mass_above, obs) {
                Err(Error::ImpossibleToken { pos }) if counts[obs] == 0 && pos == obs => {}
                Ok(iv) if counts[obs] > 0 => {
                    let a = above as f64 / total as f64;
                    let b = (above + counts[obs]) as f64 / total as f64;
                    if !close(iv.a, a, 1e-15) || !close(iv.b, b, 1e-15) {
                        return Err(format!("{counts:?} obs {obs}: [{}, {}] vs [{a}, {b}]", iv.a, iv.b));
                    }
                    covered += iv.len();
                }
                other => return Err(format!("{counts:?} obs {obs}: unexpected {other:?}")),
            }
            cases += 1;
        }
        // The intervals of all possible tokens tile [0, 1].
        if !close(covered, 1.0, 1e-14) {
            return Err(format!("{counts:?}: intervals cover {covered}"));
        }
    }
    Ok(format!("{cases} intervals, each distribution tiles [0, 1]"))
}

/// Top-k by integer rank.
fn top_k_oracle(counts: &[u32], k: usize) -> Vec<f64> {
    let kept: Vec<bool> = (0..counts.len()).map(|j| rank(counts, j) < k).collect();
    let mass: u32 = (0..counts.len()).filter(|&j| kept[j]).map(|j| counts[j]).sum();
    (0..counts.len()).map(|j| if kept[j] { counts[j] as f64 / mass as f64 } else { 0.0 }).collect()
}

/// Top-p with `pi = num / den`: a token survives when the mass ranked above
/// it has not yet exceeded `pi`.
fn top_p_oracle(counts: &[u32], num: u32, den: u32) -> Vec<f64> {
    let total: u32 = counts.iter().sum();
    let kept: Vec<bool> = (0..counts.len()).map(|j| count_above(counts, j) * den <= num * total).collect();
    let mass: u32 = (0..counts.len()).filter(|&j| kept[j]).map(|j| counts[j]).sum();
    (0..counts.len()).map(|j| if kept[j] { counts[j] as f64 / mass as f64 } else { 0.0 }).collect()
}

fn temperature_oracle(counts: &[u32], tau: f64) -> Vec<f64> {
    let w: Vec<f64> = counts.iter().map(|&c| if c == 0 { 0.0 } else { (c as f64).powf(1.0 / tau) }).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

/// temperature, then top-k, then top-p, with the ranking taken from the
/// integer counts (temperature preserves it). `None` when a cumulative mass
/// lies within 1e-9 of `pi`, where floating point cannot decide.
fn composed_oracle(counts: &[u32], tau: f64, k: usize, pi: f64) -> Option<Vec<f64>> {
    let tempered = temperature_oracle(counts, tau);
    let n = counts.len();
    let kept_k: Vec<bool> = (0..n).map(|j| rank(counts, j) < k).collect();
    let mass_k: f64 = (0..n).filter(|&j| kept_k[j]).map(|j| tempered[j]).sum();
    let after_k: Vec<f64> = (0..n).map(|j| if kept_k[j] { tempered[j] / mass_k } else { 0.0 }).collect();
    let mut kept = vec![false; n];
    for j in 0..n {
        let before: f64 = (0..n).filter(|&i| rank(counts, i) < rank(counts, j)).map(|i| after_k[i]).sum();
        if (before - pi).abs() < 1e-9 {
            return None;
        }
        kept[j] = after_k[j] > 0.0 && before <= pi;
    }
    let mass: f64 = (0..n).filter(|&j| kept[j]).map(|j| after_k[j]).sum();
    Some((0..n).map(|j| if kept[j] { after_k[j] / mass } else { 0.0 }).collect())
}

fn same(got: &[f64], want: &[f64], tol: f64) -> bool {
    got.len() == want.len() && got.iter().zip(want).all(|(g, w)| close(*g, *w, tol))
}

const TOP_P_GRID: [(u32, u32); 4] = [(1, 4), (11, 20), (4, 5), (19, 20)];

pub fn check_apply_spec() -> Result<String, String> {
    let mut cases = 0;
    let mut undecidable = 0;
    for (counts, total) in grid() {
        if counts.iter().all(|&c| c == 0) {
            continue;
        }
        let p = probs(&counts, total);
        for tau in [0.5, 0.7, 1.0, 1.3, 2.5] {
            let got = apply_temperature(&p, tau).map_err(|e| e.to_string())?;
            if !same(&got, &temperature_oracle(&counts, tau), 1e-13) {
                return Err(format!("temp={tau} on {counts:?}: {got:?}"));
            }
            cases += 1;
        }
        for k in 1..=MAX_VOCAB + 1 {
            let got = apply_top_k(&p, k).map_err(|e| e.to_string())?;
            if !same(&got, &top_k_oracle(&counts, k), 1e-15) {
                return Err(format!("topk={k} on {counts:?}: {got:?}"));
            }
            cases += 1;
        }
        // 1/4 is a multiple of 1/12, so it lands exactly on a cumulative mass
        // and exercises the strict inequality.
        for (num, den) in TOP_P_GRID {
            let got = apply_top_p(&p, num as f64 / den as f64).map_err(|e| e.to_string())?;
            if !same(&got, &top_p_oracle(&counts, num, den), 1e-15) {
                return Err(format!("topp={num}/{den} on {counts:?}: {got:?}"));
            }
            cases += 1;
        }
        for (tau, k, pi) in [(0.7, 3, 0.8), (1.3, 2, 0.55), (0.5, 5, 0.25), (2.5, 4, 0.95)] {
            let spec: DecodingSpec = format!("temp={tau}+topk={k}+topp={pi}").parse().map_err(|e: Error| e.to_string())?;
            let got = apply_spec(&p, &spec).map_err(|e| e.to_string())?;
            match composed_oracle(&counts, tau, k, pi) {
                Some(want) if same(&got, &want, 1e-12) => cases += 1,
                Some(want) => return Err(format!("{spec} on {counts:?}: {got:?} vs {want:?}")),
                None => undecidable += 1,
            }
        }
    }
    Ok(format!("{cases} transform cases ({undecidable} compositions skipped at a floating-point boundary)"))
}

/// Direct bin integration of weighted, normalized indicators.
fn bins_oracle(pieces: &[(f64, f64, f64)], k: usize) -> Vec<f64> {
    let total: f64 = pieces.iter().map(|p| p.2).sum();
    (0..k)
        .map(|b| {
            let lo = b as f64 / k as f64;
            let hi = (b + 1) as f64 / k as f64;
            let mass: f64 =
                pieces.iter().map(|&(a, e, w)| w * (e.min(hi) - a.max(lo)).max(0.0) / (e - a)).sum();
            mass * k as f64 / total
        })
        .collect()
}

pub fn check_bin_density() -> Result<String, String> {
    let mut cases = 0;
    for (counts, total) in grid() {
        if counts.iter().all(|&c| c == 0) {
            continue;
        }
        // Every possible token's interval, weighted by probability times a
        // token-specific factor so the density is not uniform.
        let pieces: Vec<(f64, f64, f64)> = (0..counts.len())
            .filter(|&j| counts[j] > 0)
            .map(|j| {
                let above = count_above(&counts, j);
                let a = above as f64 / total as f64;
                let b = (above + counts[j]) as f64 / total as f64;
                (a, b, counts[j] as f64 / total as f64 * (1.0 + j as f64))
            })
            .collect();
        let intervals: Vec<(DmapInterval, f64)> =
            pieces.iter().map(|&(a, b, w)| (DmapInterval::new(a, b).expect("valid interval"), w)).collect();
        let d = StepDensity::from_weighted_intervals(&intervals).map_err(|e| e.to_string())?;
        for k in [1, 2, 3, 5, 7, 40] {
            let got = bin_density(&d, k).map_err(|e| e.to_string())?;
            if !same(&got, &bins_oracle(&pieces, k), 1e-12) {
                return Err(format!("k={k} on {counts:?}: {got:?}"));
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} binnings"))
}

/// `ln Γ(df / 2)` from the exact factorial forms of integer and
/// half-integer arguments.
fn ln_gamma_half(df: usize) -> f64 {
    if df.is_multiple_of(2) {
        (1..df / 2).map(|i| (i as f64).ln()).sum()
    } else {
        0.5 * std::f64::consts::PI.ln() + (1..=(df - 1) / 2).map(|i| (i as f64 - 0.5).ln()).sum::<f64>()
    }
}

/// Upper chi-square tail by Simpson's rule after `t = u²`, which removes
/// the singularity of the density at zero for one degree of freedom.
pub fn chi_square_tail_oracle(stat: f64, df: usize) -> f64 {
    let ln_norm = std::f64::consts::LN_2 - 0.5 * df as f64 * std::f64::consts::LN_2 - ln_gamma_half(df);
    let f = |u: f64| {
        if u <= 0.0 {
            return if df == 1 { ln_norm.exp() } else { 0.0 };
        }
        (ln_norm + (df as f64 - 1.0) * u.ln() - 0.5 * u * u).exp()
    };
    let lo = stat.sqrt();
    let hi = lo.max((df as f64).sqrt()) + 40.0;
    let n = 400_000;
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

pub const PVALUE_STATS: [f64; 11] = [0.01, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 35.0, 50.0, 100.0, 200.0];
pub const PVALUE_DFS: [usize; 9] = [1, 2, 3, 5, 10, 11, 25, 45, 99];

pub fn check_chi_square_pvalue() -> Result<String, String> {
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    for df in PVALUE_DFS {
        let mut previous = f64::INFINITY;
        for stat in PVALUE_STATS {
            let got = chi_square_pvalue(stat, df).map_err(|e| e.to_string())?;
            let want = chi_square_tail_oracle(stat, df);
            let err = (got.p_value - want).abs();
            worst = worst.max(err);
            if err > 1e-8 {
                return Err(format!("Q(df={df}, stat={stat}) = {} vs oracle {want}", got.p_value));
            }
            if want > 1e-300 && (got.log10_p - want.log10()).abs() > 1e-6 {
                return Err(format!("log10 p at df={df}, stat={stat}: {} vs {}", got.log10_p, want.log10()));
            }
            if got.p_value > previous {
                return Err(format!("p-value increases in stat at df={df}, stat={stat}"));
            }
            previous = got.p_value;
            cases += 1;
        }
    }
    Ok(format!("{cases} (stat, df) points, max abs error {worst:.1e}"))
}
