//! Acceptance run: one line per criterion, non-zero exit if any fails.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use chrono::DateTime;
use common::{golden_dir, read, run_toy, stance, MatrixSpec, GOLDEN_FILES};
use normalign::annotation::{agreement_stats, AnnotationTask, TaskPayload, Taxonomy};
use normalign::client::requests_sent;
use normalign::corpus::{award_window_start, chunk, detect_award_section, split_into_sections, Sentence, Span};
use normalign::extraction::normalize_negation;
use normalign::lexicon::{award_keywords, Language, NegationLexicon};
use normalign::metrics::{classification_report, cohen_kappa, partition_matches, score};
use normalign::model::{AnnotationRecord, TargetKind};
use normalign::rational::Rational;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Reduced "n/d" (or "n" when d = 1), the form `Rational` prints.
fn frac(n: u64, d: u64) -> Option<String> {
    if d == 0 {
        return None;
    }
    let g = gcd(n, d).max(1);
    Some(if d / g == 1 { format!("{}", n / g) } else { format!("{}/{}", n / g, d / g) })
}

fn show(r: Option<&Rational>) -> Option<String> {
    r.map(|r| r.to_string())
}

struct Oracle {
    agree: BTreeSet<(usize, usize)>,
    conflict: BTreeSet<(usize, usize)>,
    saa: Option<String>,
    eaa: Option<String>,
    avg: Option<String>,
}

/// Enumerates every cell of the matrix and counts by hand.
fn oracle(spec: &MatrixSpec) -> Oracle {
    let (nc, nr) = (spec.cand.len(), spec.refs.len());
    let mut agree = BTreeSet::new();
    let mut conflict = BTreeSet::new();
    for i in 0..nc {
        for j in 0..nr {
            if spec.bits[i * nr + j] {
                if spec.cand[i] == spec.refs[j] {
                    agree.insert((i, j));
                } else {
                    conflict.insert((i, j));
                }
            }
        }
    }
    let (a, c, n) = (agree.len() as u64, conflict.len() as u64, (nc + nr) as u64);
    // (a/n + a/(a+c)) / 2 = a(a+c+n) / (2n(a+c))
    let avg = (n > 0 && a + c > 0).then(|| frac(a * (a + c + n), 2 * n * (a + c)).unwrap());
    Oracle { saa: frac(a, n), eaa: frac(a, a + c), avg, agree, conflict }
}

fn random_spec(rng: &mut ChaCha8Rng, max: usize) -> MatrixSpec {
    let nc = rng.random_range(1..=max);
    let nr = rng.random_range(1..=max);
    MatrixSpec {
        cand: (0..nc).map(|_| stance(rng.random())).collect(),
        refs: (0..nr).map(|_| stance(rng.random())).collect(),
        bits: (0..nc * nr).map(|_| rng.random_bool(0.35)).collect(),
    }
}

fn ids(spec: &MatrixSpec, set: &BTreeSet<(usize, usize)>) -> BTreeSet<(String, String)> {
    let (c, r) = spec.solutions();
    set.iter().map(|&(i, j)| (c[i].id.clone(), r[j].id.clone())).collect()
}

fn metric_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..1000 {
        let spec = random_spec(&mut rng, 8);
        let m = spec.matrix();
        let o = oracle(&spec);
        let s = score(&m).map_err(|e| e.to_string())?;
        let p = partition_matches(&m).map_err(|e| e.to_string())?;
        check(p.agree == ids(&spec, &o.agree) && p.conflict == ids(&spec, &o.conflict), || {
            format!("matrix {k}: partition differs")
        })?;
        let got = (show(s.saa()), show(s.eaa()), show(s.avg()));
        let want = (o.saa.clone(), o.eaa.clone(), o.avg.clone());
        check(got == want, || format!("matrix {k}: got {got:?}, oracle {want:?}"))?;
    }
    within(t.elapsed(), Duration::from_secs(5))?;
    Ok(format!("1000 matrices up to 8x8 equal the enumeration oracle in {:?}", t.elapsed()))
}

const PADS: [usize; 6] = [2, 6, 10, 20, 40, 100];

fn two_hundred() -> Vec<MatrixSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    (0..200).map(|_| random_spec(&mut rng, 8)).collect()
}

fn eaa_invariance() -> Outcome {
    let t = Instant::now();
    let mut strict = 0;
    for (k, spec) in two_hundred().iter().enumerate() {
        let base = score(&spec.matrix()).map_err(|e| e.to_string())?;
        for pad in PADS {
            let padded = score(&spec.padded(pad, |i| stance(i % 3 == 0)).matrix()).map_err(|e| e.to_string())?;
            check(base.eaa() == padded.eaa(), || format!("matrix {k} pad {pad}: eaa changed"))?;
            if base.n_agree() > 0 {
                check(padded.saa() < base.saa(), || format!("matrix {k} pad {pad}: saa did not decrease"))?;
                strict += 1;
            }
        }
    }
    within(t.elapsed(), Duration::from_secs(5))?;
    Ok(format!("200 matrices x pads {PADS:?}: eaa unchanged, saa strictly lower in {strict} cases with |A|>0 ({:?})", t.elapsed()))
}

fn stance_flip() -> Outcome {
    let t = Instant::now();
    for (k, spec) in two_hundred().iter().enumerate() {
        let o = oracle(spec);
        let flipped = score(&spec.flipped().matrix()).map_err(|e| e.to_string())?;
        let want = frac(o.conflict.len() as u64, (o.agree.len() + o.conflict.len()) as u64);
        check(show(flipped.eaa()) == want, || format!("matrix {k}: eaa after flip {:?}, expected {want:?}", show(flipped.eaa())))?;
    }
    Ok(format!("200 matrices: eaa(flipped) = |C|/(|A|+|C|) exactly ({:?})", t.elapsed()))
}

/// round(100 p / q) with halves going up, as an integer number of hundredths.
fn hundredths(p: u64, q: u64) -> u64 {
    (200 * p + q) / (2 * q)
}

fn mean2(a: (u64, u64), b: (u64, u64)) -> (u64, u64) {
    (a.0 * b.1 + b.0 * a.1, 2 * a.1 * b.1)
}

fn weighted(a: (u64, u64), wa: u64, b: (u64, u64), wb: u64) -> (u64, u64) {
    (wa * a.0 * b.1 + wb * b.0 * a.1, (wa + wb) * a.1 * b.1)
}

fn table_cells(tp: u64, fn_: u64, fp: u64, tn: u64) -> Option<[u64; 13]> {
    let r = |(p, q): (u64, u64)| (q > 0).then(|| hundredths(p, q));
    let (pm, rm, fm) = ((tp, tp + fp), (tp, tp + fn_), (2 * tp, 2 * tp + fp + fn_));
    let (pn, rn, f_n) = ((tn, tn + fn_), (tn, tn + fp), (2 * tn, 2 * tn + fn_ + fp));
    let (sm, sn) = (tp + fn_, fp + tn);
    Some([
        r(pm)?,
        r(rm)?,
        r(fm)?,
        r(pn)?,
        r(rn)?,
        r(f_n)?,
        r((tp + tn, sm + sn))?,
        r(mean2(pm, pn))?,
        r(mean2(rm, rn))?,
        r(mean2(fm, f_n))?,
        r(weighted(pm, sm, pn, sn))?,
        r(weighted(rm, sm, rn, sn))?,
        r(weighted(fm, sm, f_n, sn))?,
    ])
}

const PUBLISHED: [u64; 13] = [99, 97, 98, 88, 97, 92, 97, 94, 97, 95, 97, 97, 97];

fn mapping_table() -> Outcome {
    let t = Instant::now();
    let mut hits = Vec::new();
    for tp in 0..=240 {
        for fp in 0..=60 {
            if table_cells(tp, 240 - tp, fp, 60 - fp) == Some(PUBLISHED) {
                hits.push((tp, 240 - tp, fp, 60 - fp));
            }
        }
    }
    check(hits == [(232, 8, 2, 58)], || format!("search found {hits:?}"))?;

    let rep = |v: &[(&'static str, usize)]| v.iter().flat_map(|(l, n)| std::iter::repeat_n(*l, *n)).collect::<Vec<_>>();
    let gold = rep(&[("M", 240), ("NM", 60)]);
    let pred = rep(&[("M", 232), ("NM", 8), ("M", 2), ("NM", 58)]);
    let r = classification_report(&gold, &pred).map_err(|e| e.to_string())?;
    let d = |x: &Rational| x.to_decimal_string(2);
    let (m, nm) = (r.class("M").unwrap(), r.class("NM").unwrap());
    let rendered = [
        d(&m.precision),
        d(&m.recall),
        d(&m.f1),
        d(&nm.precision),
        d(&nm.recall),
        d(&nm.f1),
        d(&r.accuracy),
        d(&r.macro_avg.precision),
        d(&r.macro_avg.recall),
        d(&r.macro_avg.f1),
        d(&r.weighted_avg.precision),
        d(&r.weighted_avg.recall),
        d(&r.weighted_avg.f1),
    ];
    let want: Vec<String> = PUBLISHED.iter().map(|c| format!("0.{c:02}")).collect();
    check(rendered.to_vec() == want, || format!("rendered {rendered:?}"))?;
    within(t.elapsed(), Duration::from_secs(1))?;
    Ok(format!("unique matrix TP=232 FN=8 FP=2 TN=58; report renders all 13 cells ({:?})", t.elapsed()))
}

fn kappa_trio() -> Outcome {
    let a = ["x", "y", "x", "y", "x", "z"];
    let perfect = cohen_kappa(&a, &a).map_err(|e| e.to_string())?;
    check(perfect == Some(Rational::one()), || format!("perfect agreement gave {perfect:?}"))?;
    // independent marginals: p_o equals p_e
    let l = ["x", "x", "y", "y"];
    let r = ["x", "y", "x", "y"];
    let chance = cohen_kappa(&l, &r).map_err(|e| e.to_string())?;
    check(chance == Some(Rational::zero()), || format!("chance agreement gave {chance:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..200 {
        let n = rng.random_range(1..30);
        let la: Vec<&str> = (0..n).map(|_| ["a", "b", "c"][rng.random_range(0..3)]).collect();
        let lb: Vec<&str> = (0..n).map(|_| ["a", "b", "c"][rng.random_range(0..3)]).collect();
        let agree = la.iter().zip(&lb).filter(|(x, y)| x == y).count() as i64;
        let chance: i64 = ["a", "b", "c"]
            .iter()
            .map(|c| la.iter().filter(|x| *x == c).count() as i64 * lb.iter().filter(|x| *x == c).count() as i64)
            .sum();
        let n = n as i64;
        // (p_o - p_e) / (1 - p_e) = (agree n - chance) / (n^2 - chance)
        let want = (n * n != chance).then(|| Rational::new(agree * n - chance, n * n - chance));
        let got = cohen_kappa(&la, &lb).map_err(|e| e.to_string())?;
        check(got == want, || format!("case {k}: kappa {got:?}, oracle {want:?}"))?;
    }
    Ok("0.752 itself is not reproducible (overlap labels unpublished); perfect=1, chance=0 and 200 oracle cases hold".into())
}

fn issue_rate() -> Outcome {
    let tasks: Vec<AnnotationTask> = (0..1095)
        .map(|i| AnnotationTask {
            task_id: format!("m{i}"),
            kind: TargetKind::MatchPair,
            target_ref: format!("c{i}|r{i}"),
            payload: TaskPayload::DilemmaMapping {
                episode_id: "e".into(),
                summary: String::new(),
                chunk_index: i,
                chunk_text: String::new(),
            },
            label_schema: Taxonomy::bundled().match_pair.clone(),
            pipeline_label: Some("match".into()),
            assigned_to: None,
            redundancy: 1,
        })
        .collect();
    let records: Vec<AnnotationRecord> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| AnnotationRecord {
            task_id: t.task_id.clone(),
            annotator_id: "ann".into(),
            target_kind: TargetKind::MatchPair,
            target_ref: t.target_ref.clone(),
            label: if i < 46 { "incorrect" } else { "correct" }.into(),
            issues: if i < 46 { vec!["False match".into()] } else { vec![] },
            created_at: DateTime::UNIX_EPOCH,
        })
        .collect();
    let s = agreement_stats(TargetKind::MatchPair, &records, &tasks).map_err(|e| e.to_string())?;
    check(s.issue_rate_display.as_deref() == Some("4.2%"), || format!("rendered {:?}", s.issue_rate_display))?;
    check(s.issue_histogram.get("False match") == Some(&46), || "histogram".into())?;
    Ok("46 flagged of 1095 renders 4.2%".into())
}

fn end_to_end() -> Outcome {
    let before = requests_sent();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut slowest = Duration::ZERO;
    let mut runs = Vec::new();
    for (name, p) in [("p1-a", 1), ("p1-b", 1), ("p4-a", 4), ("p4-b", 4)] {
        let data = dir.path().join(name);
        let t = Instant::now();
        run_toy(&data, p);
        slowest = slowest.max(t.elapsed());
        runs.push(data);
    }
    for f in GOLDEN_FILES {
        let first = read(&runs[0], f);
        for r in &runs[1..] {
            check(read(r, f) == first, || format!("{f} differs between {} and {}", runs[0].display(), r.display()))?;
        }
        check(read(&golden_dir(), f) == first, || format!("{f} differs from the frozen golden copy"))?;
    }
    within(slowest, Duration::from_secs(10))?;
    let sent = requests_sent() - before;
    check(sent == 0, || format!("{sent} network requests"))?;
    Ok(format!("4 runs (parallelism 1 and 4) byte-identical to golden, slowest {slowest:?}, 0 network requests"))
}

fn sentences(n: usize) -> Vec<Sentence> {
    (0..n).map(|i| Sentence { speaker: "V".into(), text: format!("Sætning {i}.") }).collect()
}

fn property_suite() -> Outcome {
    let t = Instant::now();
    let run = |name: &str, f: &dyn Fn(&mut TestRunner) -> Result<(), String>| {
        let mut runner = TestRunner::new(Config { cases: 500, failure_persistence: None, ..Config::default() });
        f(&mut runner).map_err(|e| format!("{name}: {e}"))
    };
    run("chunking", &|r| {
        r.run(&(0usize..80, 1usize..10, any::<usize>()), |(n, size, s)| {
            let stride = 1 + s % size;
            let c = chunk(&sentences(n), size, stride).unwrap();
            let expected = if n == 0 { 0 } else if n <= size { 1 } else { (n - size).div_ceil(stride) + 1 };
            prop_assert_eq!(c.len(), expected);
            for (k, ch) in c.iter().enumerate() {
                prop_assert_eq!(ch.span, Span::new(k * stride, (k * stride + size).min(n)));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;
    run("award exclusion", &|r| {
        r.run(&(1usize..120, any::<usize>()), |(n, p)| {
            let start = award_window_start(n);
            let mut s = sentences(n);
            if start == 0 {
                return Ok(());
            }
            s[p % start].text = "Ugens T-shirt går til Finn.".into();
            prop_assert_eq!(detect_award_section(&s, &award_keywords(Language::Danish)), None);
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;
    run("section disjointness", &|r| {
        r.run(&(1usize..100, prop::collection::vec(any::<usize>(), 0..10), any::<usize>()), |(n, starts, a)| {
            let award = Span::new(award_window_start(n).max(a % n), n);
            let located: Vec<(usize, usize)> = starts.iter().enumerate().map(|(k, s)| (k, s % award.start.max(1))).collect();
            let (sections, _) = split_into_sections(&located, n, Some(award));
            for w in sections.windows(2) {
                prop_assert!(w[0].span.end <= w[1].span.start);
            }
            for s in &sections {
                prop_assert!(!s.span.intersects(&award));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;
    run("negation idempotence", &|r| {
        let lex = NegationLexicon::bundled_all();
        let prefix = prop::sample::select(vec!["", "Lad være med at ", "Du skal ikke ", "Don't ", "Never ", "Køb ikke "]);
        let word = prop::sample::select(vec!["ring", "til", "Pia", "tal", "med", "Finn", "blomster"]);
        r.run(&(prefix.clone(), prefix, prop::collection::vec(word, 1..5), any::<bool>()), |(p1, p2, w, a)| {
            let text = format!("{p1}{p2}{}", w.join(" "));
            let once = normalize_negation(&text, stance(a), &lex);
            let twice = normalize_negation(&once.text, once.stance, &lex);
            prop_assert_eq!((&twice.text, twice.stance, twice.flipped), (&once.text, once.stance, false));
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;
    within(t.elapsed(), Duration::from_secs(5))?;
    Ok(format!("4 properties x 500 cases ({:?})", t.elapsed()))
}

fn desk_scale_note() -> Outcome {
    let readme = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).map_err(|e| e.to_string())?;
    check(readme.contains("## Running against real endpoints"), || "README lacks the real-endpoint procedure".into())?;
    Ok("model rankings, corpus statistics, stylometric percentages and mapping accuracy need the real corpus and live models; \
        not reproduced here, substitutes above plus the README procedure"
        .into())
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("metric-oracle equivalence", metric_oracle),
        ("eaa verbosity invariance", eaa_invariance),
        ("stance-flip covariance", stance_flip),
        ("mapping table reproduction", mapping_table),
        ("kappa property trio", kappa_trio),
        ("issue-rate reproduction", issue_rate),
        ("end-to-end golden run", end_to_end),
        ("pipeline property suite", property_suite),
    ];
    let mut failed = 0;
    let mut all: Vec<(&str, Outcome)> = criteria.iter().map(|(n, f)| (*n, f())).collect();
    all.push(("desk-scale limits documented", desk_scale_note()));
    for (name, outcome) in all {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
