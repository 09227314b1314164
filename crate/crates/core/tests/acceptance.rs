//! Acceptance checks. Each test prints one `criterion N PASS|FAIL` line to
//! the real stdout (bypassing the harness capture) and then asserts.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use common::*;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sema_core::analysis::{
    divergence, normalize_spatial, spearman, CorrelationMatrix, NormScope, PairScoreRecord,
    SemanticMetric, SpatialMetric,
};
use sema_core::cache::{sha256_hex, CacheStore};
use sema_core::dataset::{enumerate_pairs, to_pixel, total_scanpaths, Fixation, PixelPoint, ScanpathPair};
use sema_core::encoding::{
    encode_fixation, encode_png, extract_patch, patch_window, render_marker, EncodingCondition,
    FixationRef, MarkerSpec, PatchSpec,
};
use sema_core::pipeline::artifacts::{correlation_path, descriptions_path, pairs_path, read_json, read_pairs_csv, summaries_path, DescriptionManifest, SummaryManifest};
use sema_core::pipeline::{Pipeline, RunConfig};
use sema_core::semantic::{
    bleu_4_sym, embed_score, rouge_l, score_condition, tokenize, Bm25Corpus, EmbedOptions,
    EmbeddingBackend, OrthogonalStub, SemanticError, TokenVectors,
};
use sema_core::spatial::{
    compute_all, dtw, hausdorff, levenshtein_grid, multimatch, scanmatch, tde, GridSpec,
    ScanMatchParams, SpatialParams, SpatialScoreSet,
};
use sema_core::vlm::{VlmClient, VlmConfig, VlmTransport};

fn criterion(n: u32, title: &str, f: impl FnOnce() -> String) {
    let start = Instant::now();
    let outcome = std::panic::catch_unwind(AssertUnwindSafe(f));
    let secs = start.elapsed().as_secs_f64();
    let (ok, detail) = match &outcome {
        Ok(d) => (true, d.clone()),
        Err(p) => (
            false,
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()),
        ),
    };
    let line = format!(
        "criterion {n:>2} {} {title} ({secs:.1}s): {detail}\n",
        if ok { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(ok, "{line}");
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------- 1

fn grid_point(rng: &mut ChaCha8Rng) -> Fixation {
    Fixation::new(
        f64::from(rng.random_range(0..=10u32)) / 10.0,
        f64::from(rng.random_range(0..=10u32)) / 10.0,
        rng.random_range(50.0..500.0),
    )
}

fn grid_path(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<Fixation> {
    let n = rng.random_range(1..=max_len);
    (0..n).map(|_| grid_point(rng)).collect()
}

fn euclid(a: &Fixation, b: &Fixation) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

/// Minimum over every monotone warping path from (0,0) to the end, with the
/// path enumerated explicitly.
fn dtw_exhaustive(a: &[Fixation], b: &[Fixation]) -> f64 {
    fn walk(a: &[Fixation], b: &[Fixation], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + euclid(&a[i], &b[j]);
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

fn cell_symbol(f: &Fixation, cols: u32, rows: u32) -> u32 {
    let c = ((f.x * f64::from(cols)).floor() as i64).clamp(0, i64::from(cols) - 1) as u32;
    let r = ((f.y * f64::from(rows)).floor() as i64).clamp(0, i64::from(rows) - 1) as u32;
    r * cols + c
}

/// Textbook recursive edit distance with memoization.
fn lev_memo(a: &[u32], b: &[u32]) -> usize {
    fn go(a: &[u32], b: &[u32], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == 0 {
            return j;
        }
        if j == 0 {
            return i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let cost = usize::from(a[i - 1] != b[j - 1]);
        let v = (go(a, b, i - 1, j, memo) + 1)
            .min(go(a, b, i, j - 1, memo) + 1)
            .min(go(a, b, i - 1, j - 1, memo) + cost);
        memo.insert((i, j), v);
        v
    }
    go(a, b, a.len(), b.len(), &mut HashMap::new())
}

/// Maximum over every global alignment, enumerated without memoization.
fn alignment_exhaustive(a: &[u32], b: &[u32], sub: &dyn Fn(u32, u32) -> f64, gap: f64) -> f64 {
    match (a.split_first(), b.split_first()) {
        (None, _) => gap * b.len() as f64,
        (_, None) => gap * a.len() as f64,
        (Some((&x, ra)), Some((&y, rb))) => {
            let m = sub(x, y) + alignment_exhaustive(ra, rb, sub, gap);
            let da = gap + alignment_exhaustive(ra, b, sub, gap);
            let db = gap + alignment_exhaustive(a, rb, sub, gap);
            m.max(da).max(db)
        }
    }
}

/// LCS length by trying every subsequence of `a`.
fn lcs_brute(a: &[&str], b: &[&str]) -> usize {
    let is_subseq = |s: &[&str]| {
        let mut it = b.iter();
        s.iter().all(|t| it.any(|u| u == t))
    };
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let s: Vec<&str> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
            is_subseq(&s).then_some(s.len())
        })
        .max()
        .unwrap_or(0)
}

#[test]
fn criterion_01_oracle_equivalence() {
    criterion(1, "oracle equivalence of DP metrics", || {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g3 = GridSpec::new(3, 3).unwrap();
        let g14 = GridSpec::default();
        let param_sets = [
            ScanMatchParams { max_sub: 1.0, gap: 0.0 },
            ScanMatchParams { max_sub: 2.0, gap: -0.3 },
        ];
        let words = ["a", "b", "c", "d"];
        for k in 0..200 {
            let a = grid_path(&mut rng, 6);
            let b = grid_path(&mut rng, 6);
            let got = dtw(&a, &b).unwrap();
            let want = dtw_exhaustive(&a, &b);
            assert!(close(got, want, 1e-9), "pair {k}: dtw {got} vs {want}");

            for p in param_sets {
                let sa: Vec<u32> = a.iter().map(|f| cell_symbol(f, 3, 3)).collect();
                let sb: Vec<u32> = b.iter().map(|f| cell_symbol(f, 3, 3)).collect();
                let sub = |x: u32, y: u32| {
                    let d = ((f64::from(x % 3) - f64::from(y % 3)).powi(2)
                        + (f64::from(x / 3) - f64::from(y / 3)).powi(2))
                    .sqrt();
                    p.max_sub * (1.0 - d / 8f64.sqrt())
                };
                let raw = alignment_exhaustive(&sa, &sb, &sub, p.gap);
                let want = (raw / (p.max_sub * a.len().max(b.len()) as f64)).clamp(0.0, 1.0);
                let got = scanmatch(&a, &b, g3, p).unwrap();
                assert!(close(got, want, 1e-9), "pair {k}: scanmatch {got} vs {want}");
            }

            let la = grid_path(&mut rng, 8);
            let lb = grid_path(&mut rng, 8);
            let want = lev_memo(
                &la.iter().map(|f| cell_symbol(f, 14, 8)).collect::<Vec<_>>(),
                &lb.iter().map(|f| cell_symbol(f, 14, 8)).collect::<Vec<_>>(),
            );
            assert_eq!(levenshtein_grid(&la, &lb, g14).unwrap() as usize, want, "pair {k}");

            let ta: Vec<&str> = (0..rng.random_range(1..=8)).map(|_| words[rng.random_range(0..4)]).collect();
            let tb: Vec<&str> = (0..rng.random_range(1..=8)).map(|_| words[rng.random_range(0..4)]).collect();
            let l = lcs_brute(&ta, &tb) as f64;
            let want = if l == 0.0 {
                0.0
            } else {
                let (p, r) = (l / ta.len() as f64, l / tb.len() as f64);
                2.0 * p * r / (p + r)
            };
            let got = rouge_l(&ta, &tb);
            assert!(close(got, want, 1e-9), "pair {k}: rouge_l {got} vs {want}");
        }
        "200 pairs: dtw, scanmatch (2 parameter sets), levenshtein, rouge_l match brute force".into()
    });
}

// ---------------------------------------------------------------- 2

/// Hash-seeded dense vectors, to exercise the cosine path with non-orthogonal
/// embeddings.
struct HashedDense;

impl EmbeddingBackend for HashedDense {
    fn name(&self) -> String {
        "hashed-dense".into()
    }

    fn embed(&self, tokens: &[String]) -> Result<TokenVectors, SemanticError> {
        Ok(TokenVectors::Dense(
            tokens
                .iter()
                .map(|t| {
                    let seed = u64::from_str_radix(&sha256_hex(t.as_bytes())[..16], 16).unwrap();
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()
                })
                .collect(),
        ))
    }
}

fn opt_close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => close(x, y, tol),
        (None, None) => true,
        _ => false,
    }
}

fn spatial_close(a: &SpatialScoreSet, b: &SpatialScoreSet, tol: f64) -> bool {
    let mm = |s: &SpatialScoreSet| {
        s.multimatch
            .map(|m| [m.shape, m.direction, m.length, m.position, m.duration, m.mean])
    };
    opt_close(a.dtw, b.dtw, tol)
        && opt_close(a.scanmatch, b.scanmatch, tol)
        && opt_close(a.hausdorff, b.hausdorff, tol)
        && opt_close(a.tde, b.tde, tol)
        && a.levenshtein == b.levenshtein
        && match (mm(a), mm(b)) {
            (Some(x), Some(y)) => x.iter().zip(&y).all(|(p, q)| close(*p, *q, tol)),
            (None, None) => true,
            _ => false,
        }
}

#[test]
fn criterion_02_identity_and_symmetry() {
    criterion(2, "identity and symmetry", || {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = SpatialParams::default();
        let paths: Vec<Vec<Fixation>> = (0..100)
            .map(|_| {
                (0..rng.random_range(3..=10))
                    .map(|_| Fixation::new(rng.random(), rng.random(), rng.random_range(50.0..800.0)))
                    .collect()
            })
            .collect();
        for (i, a) in paths.iter().enumerate() {
            assert_eq!(dtw(a, a).unwrap(), 0.0, "dtw identity {i}");
            assert_eq!(hausdorff(a, a).unwrap(), 0.0, "hausdorff identity {i}");
            assert_eq!(tde(a, a, 3, 1).unwrap(), 0.0, "tde identity {i}");
            assert_eq!(levenshtein_grid(a, a, params.grid).unwrap(), 0, "levenshtein identity {i}");
            assert!(close(scanmatch(a, a, params.grid, params.scanmatch).unwrap(), 1.0, 1e-12));
            let m = multimatch(a, a).unwrap();
            for v in [m.shape, m.direction, m.length, m.position, m.duration, m.mean] {
                assert!(close(v, 1.0, 1e-12), "multimatch identity {i}: {m:?}");
            }
        }
        let mut spatial_pairs = 0;
        for i in 0..paths.len() {
            for j in i + 1..paths.len() {
                let ab = compute_all(&paths[i], &paths[j], &params);
                let ba = compute_all(&paths[j], &paths[i], &params);
                assert!(spatial_close(&ab, &ba, 1e-12), "spatial asymmetry {i},{j}: {ab:?} vs {ba:?}");
                spatial_pairs += 1;
            }
        }

        let vocab: Vec<String> = (0..25).map(|k| format!("word{k}")).collect();
        let texts: Vec<String> = (0..100)
            .map(|_| {
                (0..rng.random_range(1..=30))
                    .map(|_| {
                        let mut w = vocab[rng.random_range(0..vocab.len())].clone();
                        if rng.random_bool(0.2) {
                            w = w.to_uppercase();
                        }
                        if rng.random_bool(0.15) {
                            w.push(',');
                        }
                        w
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
                    + "."
            })
            .collect();
        let toks: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
        let opts = EmbedOptions::default();
        let corpus = Bm25Corpus::new(&toks).unwrap();
        for t in &toks {
            assert!(close(rouge_l(t, t), 1.0, 1e-12));
            assert!(close(bleu_4_sym(t, t), 1.0, 1e-12));
            for backend in [&OrthogonalStub as &dyn EmbeddingBackend, &HashedDense] {
                let s = embed_score(t, t, backend, &opts).unwrap();
                assert!(close(s.f1, 1.0, 1e-12), "{} identity: {s:?}", backend.name());
            }
        }
        let mut text_pairs = 0;
        for i in 0..toks.len() {
            for j in i + 1..toks.len() {
                let (a, b) = (&toks[i], &toks[j]);
                assert!(close(rouge_l(a, b), rouge_l(b, a), 1e-12));
                assert!(close(bleu_4_sym(a, b), bleu_4_sym(b, a), 1e-12));
                assert!(close(corpus.score_sym(a, b), corpus.score_sym(b, a), 1e-12));
                for backend in [&OrthogonalStub as &dyn EmbeddingBackend, &HashedDense] {
                    let x = embed_score(a, b, backend, &opts).unwrap().f1;
                    let y = embed_score(b, a, backend, &opts).unwrap().f1;
                    assert!(close(x, y, 1e-12), "{} asymmetry {i},{j}", backend.name());
                }
                text_pairs += 1;
            }
        }
        format!("100 scanpaths ({spatial_pairs} pairs), 100 texts ({text_pairs} pairs)")
    });
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_03_pixel_geometry() {
    criterion(3, "pixel geometry", || {
        let (w, h) = (1680u32, 1050u32);
        assert_eq!(to_pixel(&Fixation::new(0.0, 0.0, 1.0), w, h), PixelPoint { px: 0, py: 0 });
        assert_eq!(to_pixel(&Fixation::new(1.0, 1.0, 1.0), w, h), PixelPoint { px: 1679, py: 1049 });

        let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, (x / 256 + 8 * (y / 256)) as u8]));
        let corners = [(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)];
        for s in [96u32, 192, 256] {
            for (cx, cy) in corners {
                let c = PixelPoint { px: cx, py: cy };
                let win = patch_window(c, s, w, h);
                assert_eq!((win.x1 - win.x0, win.y1 - win.y0), (s, s), "s={s} at {c:?}");
                assert!(win.x1 <= w && win.y1 <= h);
                // The window touches the corner it was asked for.
                assert!(win.x0 == 0 || win.x1 == w);
                assert!(win.y0 == 0 || win.y1 == h);
                assert_eq!(cx == 0, win.x0 == 0);
                assert_eq!(cy == 0, win.y0 == 0);
                let patch = extract_patch(&img, c, PatchSpec { size_px: s }).unwrap();
                assert_eq!(patch.dimensions(), (s, s));
                for (i, j, p) in patch.enumerate_pixels() {
                    assert_eq!(p, img.get_pixel(win.x0 + i, win.y0 + j));
                }
            }
        }

        let spec = MarkerSpec::default();
        assert_eq!(
            (spec.circle_radius_px, spec.outline_width_px, spec.center_dot_radius_px),
            (100, 3, 5)
        );
        let white = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
        let red = Rgb([255u8, 0, 0]);
        let mut counted = 0usize;
        for (cx, cy) in [(840u32, 525u32), (3, 1046), (1679, 60)] {
            let out = render_marker(&white, PixelPoint { px: cx, py: cy }, &spec).unwrap();
            for (x, y, p) in out.enumerate_pixels() {
                let dx = f64::from(x) - f64::from(cx);
                let dy = f64::from(y) - f64::from(cy);
                let d = (dx * dx + dy * dy).sqrt();
                let inside = d <= 5.0 || (d - 100.0).abs() <= 1.5;
                let want = if inside { red } else { Rgb([255, 255, 255]) };
                assert_eq!(*p, want, "marker at ({cx},{cy}) pixel ({x},{y}) d={d}");
                counted += usize::from(inside);
            }
        }
        format!("to_pixel edges, 12 corner patches, 3 markers ({counted} marked pixels) exact")
    });
}

// ---------------------------------------------------------------- 4 & 6

struct NullRun {
    _dir: tempfile::TempDir,
    out: PathBuf,
    records: Vec<sema_core::dataset::StimulusRecord>,
    conditions: Vec<EncodingCondition>,
    failures: usize,
    seconds: f64,
}

/// 100 images x 5 scanpaths through every stage with the null mock. Shared
/// by the counting and null-correlation checks.
fn null_run() -> &'static NullRun {
    static RUN: OnceLock<NullRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let (w, h) = (448, 320);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let manifest = write_dataset(
            &dir.path().join("data"),
            100,
            w,
            h,
            |_| ImageKind::Noise,
            |_| {
                (0..5)
                    .map(|_| {
                        let n = rng.random_range(3..=8);
                        uniform_scanpath(&mut rng, n, w, h, 0)
                    })
                    .collect()
            },
        );
        let mut cfg = RunConfig::default();
        cfg.manifest = manifest;
        cfg.out_dir = dir.path().join("out");
        cfg.cache_dir = dir.path().join("cache");
        cfg.vlm.max_concurrent_requests = 8;
        let mock: Arc<dyn VlmTransport> = Arc::new(NullMock::default());
        let p = Pipeline::with_backends(cfg.clone(), Some(mock), Arc::new(OrthogonalStub)).unwrap();
        let report = p.run_all().unwrap();
        NullRun {
            out: cfg.out_dir.clone(),
            records: p.records().to_vec(),
            conditions: cfg.conditions.clone(),
            failures: report.failures.len(),
            _dir: dir,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_04_counting() {
    criterion(4, "counting on 100 images x 5 scanpaths", || {
        let run = null_run();
        assert_eq!(run.failures, 0);
        assert_eq!(run.records.len(), 100);
        assert_eq!(total_scanpaths(&run.records), 500);
        let pairs: usize = run.records.iter().map(|r| enumerate_pairs(r).len()).sum();
        assert_eq!(pairs, 1000);
        let fixations: usize = run.records.iter().flat_map(|r| &r.scanpaths).map(|s| s.len()).sum();
        assert_eq!(run.conditions.len(), 4);
        for c in &run.conditions {
            let d: DescriptionManifest = read_json(&descriptions_path(&run.out, c)).unwrap();
            assert_eq!(d.entries.len(), fixations, "{c}");
            assert!(d.entries.iter().all(|e| e.text.is_some()));
            let s: SummaryManifest = read_json(&summaries_path(&run.out, c)).unwrap();
            assert_eq!(s.entries.len(), 500, "{c}");
            let rows = read_pairs_csv(&pairs_path(&run.out, c)).unwrap();
            assert_eq!(rows.len(), 1000, "{c}");
            assert!(rows.iter().all(|r| r.condition == *c));
        }
        format!("500 scanpaths, 1000 pairs, 1000 records in each of 4 conditions ({fixations} fixations)")
    });
}

#[test]
fn criterion_06_null_correlation() {
    criterion(6, "null-correlation sanity", || {
        let run = null_run();
        let mut summary = Vec::new();
        for c in &run.conditions {
            let m: CorrelationMatrix = read_json(&correlation_path(&run.out, c)).unwrap();
            let cells: Vec<_> = m.cells.iter().flatten().collect();
            assert_eq!(cells.len(), 24);
            let small = cells.iter().filter(|c| c.rho.is_some_and(|r| r.abs() < 0.1)).count();
            let max = cells.iter().filter_map(|c| c.rho).fold(0.0f64, |a, r| a.max(r.abs()));
            assert!(cells.iter().all(|c| c.n_pairs == 1000), "{c}: n_pairs");
            assert!(small >= 23, "{c}: only {small}/24 cells with |rho| < 0.1 (max {max:.3})");
            summary.push(format!("{c} {small}/24 max|rho|={max:.3}"));
        }
        assert!(run.seconds < 300.0, "pipeline took {:.0}s", run.seconds);
        format!("{} ; pipeline {:.1}s", summary.join(", "), run.seconds)
    });
}

// ---------------------------------------------------------------- 5

fn ranks_independent(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let less = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn pearson_independent(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

#[test]
fn criterion_05_spearman() {
    criterion(5, "spearman correctness", || {
        let xs: Vec<f64> = (0..20).map(f64::from).collect();
        let up: Vec<f64> = xs.iter().map(|x| x.powi(3) - 4.0 * x).collect();
        let up: Vec<f64> = up.iter().enumerate().map(|(i, v)| v + 1000.0 * i as f64).collect();
        let down: Vec<f64> = xs.iter().map(|x| (-x).exp()).collect();
        assert_eq!(spearman(&xs, &up).unwrap(), Some(1.0));
        assert_eq!(spearman(&xs, &down).unwrap(), Some(-1.0));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst = 0.0f64;
        let mut checked = 0;
        while checked < 50 {
            let n = rng.random_range(3..=20);
            let x: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..5u32))).collect();
            let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..4u32))).collect();
            let rx = ranks_independent(&x);
            let ry = ranks_independent(&y);
            let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
            if constant(&x) || constant(&y) {
                assert_eq!(spearman(&x, &y).unwrap(), None);
                continue;
            }
            let want = pearson_independent(&rx, &ry);
            let got = spearman(&x, &y).unwrap().unwrap();
            worst = worst.max((got - want).abs());
            assert!(close(got, want, 1e-12), "n={n}: {got} vs {want}");

            let fx: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v + 1.0).collect();
            let gy: Vec<f64> = y.iter().map(|v| v.exp()).collect();
            assert_eq!(spearman(&fx, &gy).unwrap().unwrap().to_bits(), got.to_bits());
            checked += 1;
        }
        format!("monotone 1.0, anti-monotone -1.0, 50 tied datasets max err {worst:.1e}, transforms exact")
    });
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_07_coupled_mock() {
    criterion(7, "coupled mock: embed_f1 vs scanmatch", || {
        let dir = tempfile::tempdir().unwrap();
        let (w, h) = (448, 320);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let manifest = write_dataset(
            &dir.path().join("data"),
            20,
            w,
            h,
            |_| ImageKind::Cells,
            |_| {
                // Four well-separated regions; each viewer dwells on one.
                let centers = [(90, 80), (w - 90, 80), (90, h - 80), (w - 90, h - 80)];
                (0..6)
                    .map(|_| {
                        let c = centers[rng.random_range(0..4)];
                        let n = rng.random_range(4..=8);
                        clustered_scanpath(&mut rng, n, c, 40, w, h, 48)
                    })
                    .collect()
            },
        );
        let mut cfg = RunConfig::default();
        cfg.manifest = manifest;
        cfg.conditions = vec![EncodingCondition::patch(96)];
        cfg.out_dir = dir.path().join("out");
        cfg.cache_dir = dir.path().join("cache");
        let p = Pipeline::with_backends(cfg.clone(), Some(Arc::new(CellMock::default())), Arc::new(OrthogonalStub)).unwrap();
        let report = p.run_all().unwrap();
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        let m: CorrelationMatrix = read_json(&correlation_path(&cfg.out_dir, &cfg.conditions[0])).unwrap();
        let cell = m.cell(SemanticMetric::EmbedF1, SpatialMetric::Scanmatch).unwrap();
        let rho = cell.rho.expect("rho defined");
        assert!(rho > 0.5 && rho < 1.0, "rho = {rho}");
        format!("rho(embed_f1, scanmatch) = {rho:.3} over {} pairs", cell.n_pairs)
    });
}

// ---------------------------------------------------------------- 8

const TEXT_METRICS: [SemanticMetric; 3] = [SemanticMetric::EmbedF1, SemanticMetric::RougeL, SemanticMetric::Bleu4];

fn mirrored_positive(dir: &Path) -> usize {
    let (w, h) = (448u32, 320u32);
    let a_px = [(60u32, 70u32), (150, 200), (100, 260), (200, 120), (70, 150)];
    let a: Vec<Fixation> = a_px.iter().map(|&(x, y)| fix_px(x, y, w, h, 250.0)).collect();
    let b: Vec<Fixation> = a_px.iter().map(|&(x, y)| fix_px(w - 1 - x, y, w, h, 250.0)).collect();
    let c: Vec<Fixation> = a_px.iter().map(|&(x, y)| fix_px(x + 6, y + 5, w, h, 250.0)).collect();
    let manifest = write_dataset(dir, 1, w, h, |_| ImageKind::MirroredCells, |_| vec![a.clone(), b.clone(), c.clone()]);
    let mut cfg = RunConfig::default();
    cfg.manifest = manifest;
    cfg.conditions = vec![EncodingCondition::patch(96)];
    cfg.out_dir = dir.join("out");
    cfg.cache_dir = dir.join("cache");
    let p = Pipeline::with_backends(cfg.clone(), Some(Arc::new(CellMock::default())), Arc::new(OrthogonalStub)).unwrap();
    let report = p.run_all().unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    let records = read_pairs_csv(&pairs_path(&cfg.out_dir, &cfg.conditions[0])).unwrap();
    let ab = ScanpathPair::new("img000", "s0", "s1").unwrap();
    let mut checked = 0;
    for s in TEXT_METRICS {
        for m in SpatialMetric::ALL {
            let d = divergence(&records, s, m);
            let row = d.iter().find(|r| r.pair == ab).expect("mirrored pair scored");
            assert_eq!(row.sim_text, 1.0, "{s:?}: mirrored texts should match");
            assert!(row.d > 0.0, "mirrored {s:?}/{m:?}: D = {}", row.d);
            checked += 1;
        }
    }
    checked
}

fn describe_and_summarize(client: &VlmClient, img: &RgbImage, subject: &str, fixations: &[Fixation]) -> String {
    let descriptions: Vec<_> = fixations
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let enc = encode_fixation(
                img,
                to_pixel(f, img.width(), img.height()),
                EncodingCondition::patch(96),
                FixationRef {
                    image_id: "img".into(),
                    subject_id: subject.into(),
                    fixation_index: i,
                },
            )
            .unwrap();
            client.describe(&enc).unwrap()
        })
        .collect();
    client.summarize_scanpath(&encode_png(img).unwrap(), &descriptions).unwrap().text
}

fn identical_geometry_negative(dir: &Path) -> usize {
    let (w, h) = (448u32, 320u32);
    let client = VlmClient::new(
        VlmConfig::default(),
        Some(Arc::new(CellMock::default())),
        CacheStore::open(dir.join("cache")).unwrap(),
    )
    .unwrap();
    let plain = make_image(ImageKind::Cells, w, h, 0);
    let shifted = make_image(ImageKind::ShiftedCells(7), w, h, 0);
    // Columns 1..=6 only, so the shifted codes (8..=13) never overlap.
    let f: Vec<Fixation> = [(50u32, 60u32), (120, 140), (190, 250), (90, 200)]
        .iter()
        .map(|&(x, y)| fix_px(x, y, w, h, 200.0))
        .collect();
    let g: Vec<Fixation> = [(400u32, 60u32), (380, 270), (300, 100), (330, 180)]
        .iter()
        .map(|&(x, y)| fix_px(x, y, w, h, 200.0))
        .collect();
    let texts = vec![
        describe_and_summarize(&client, &plain, "s0", &f),
        describe_and_summarize(&client, &shifted, "s1", &f),
        describe_and_summarize(&client, &plain, "s2", &g),
    ];
    let t0: std::collections::HashSet<_> = tokenize(&texts[0]).into_iter().collect();
    assert!(tokenize(&texts[1]).iter().all(|t| !t0.contains(t)), "texts overlap: {texts:?}");

    let paths = [&f, &f, &g];
    let idx = [(0usize, 1usize), (0, 2), (1, 2)];
    let sem = score_condition(&texts, &idx, &OrthogonalStub, &EmbedOptions::default()).unwrap();
    let params = SpatialParams::default();
    let mut records: Vec<PairScoreRecord> = idx
        .iter()
        .zip(sem)
        .map(|(&(i, j), semantic)| PairScoreRecord {
            pair: ScanpathPair::new("img", &format!("s{i}"), &format!("s{j}")).unwrap(),
            condition: EncodingCondition::patch(96),
            semantic,
            spatial: compute_all(paths[i], paths[j], &params),
            normalized_spatial: Default::default(),
        })
        .collect();
    normalize_spatial(&mut records, NormScope::Condition);
    let same = ScanpathPair::new("img", "s0", "s1").unwrap();
    let mut checked = 0;
    for s in TEXT_METRICS {
        for m in SpatialMetric::ALL {
            let d = divergence(&records, s, m);
            let row = d.iter().find(|r| r.pair == same).expect("pair scored");
            assert_eq!(row.sim_spatial, 1.0, "{m:?}: identical geometry");
            assert!(row.d < 0.0, "identical geometry {s:?}/{m:?}: D = {}", row.d);
            checked += 1;
        }
    }
    checked
}

#[test]
fn criterion_08_divergence_sign() {
    criterion(8, "divergence sign semantics", || {
        let dir = tempfile::tempdir().unwrap();
        let pos = mirrored_positive(&dir.path().join("mirror"));
        let neg = identical_geometry_negative(&dir.path().join("same"));
        format!("D > 0 in {pos} mirrored-content cells, D < 0 in {neg} identical-geometry cells")
    });
}

// ---------------------------------------------------------------- 9 & 10

fn sema() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sema"));
    for v in ["VLM_ENDPOINT", "VLM_API_KEY", "EMBED_ENDPOINT", "RUST_LOG"] {
        c.env_remove(v);
    }
    c.stdout(Stdio::null()).stderr(Stdio::null());
    c
}

fn small_dataset(dir: &Path, seed: u64) -> PathBuf {
    let (w, h) = (224u32, 160u32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    write_dataset(dir, 4, w, h, |_| ImageKind::Noise, |_| {
        (0..3).map(|_| uniform_scanpath(&mut rng, 5, w, h, 0)).collect()
    })
}

fn stage_args(cmd: &mut Command, stage: &str, manifest: &Path, out: &Path, cache: &Path) {
    cmd.arg(stage)
        .arg("--manifest")
        .arg(manifest)
        .arg("--out")
        .arg(out)
        .arg("--cache-dir")
        .arg(cache)
        .args(["--conditions", "patch96,marker", "--retry-base", "0.01"]);
}

fn cache_records(cache: &Path) -> BTreeMap<String, Vec<u8>> {
    let store = CacheStore::open(cache).unwrap();
    store
        .keys()
        .unwrap()
        .into_iter()
        .map(|k| {
            let bytes = std::fs::read(store.path_for(&k).unwrap()).unwrap();
            (k, bytes)
        })
        .collect()
}

#[test]
fn criterion_09_resumability() {
    criterion(9, "kill-and-resume idempotence", || {
        let dir = tempfile::tempdir().unwrap();
        let manifest = small_dataset(&dir.path().join("data"), 9);
        let total = 4 * 3 * 5 * 2;

        let reference = MockServer::start(4, Duration::ZERO, deterministic_chat_handler());
        let mut cmd = sema();
        stage_args(&mut cmd, "describe", &manifest, &dir.path().join("out_ref"), &dir.path().join("cache_ref"));
        assert!(cmd.arg("--vlm-endpoint").arg(&reference.url).status().unwrap().success());
        assert_eq!(reference.count(), total);
        let want = cache_records(&dir.path().join("cache_ref"));
        assert_eq!(want.len(), total);

        let server = MockServer::start(2, Duration::from_millis(25), deterministic_chat_handler());
        let (out, cache) = (dir.path().join("out"), dir.path().join("cache"));
        let mut cmd = sema();
        stage_args(&mut cmd, "describe", &manifest, &out, &cache);
        let mut child = cmd
            .args(["--vlm-endpoint", &server.url, "--max-concurrent-requests", "2"])
            .spawn()
            .unwrap();
        let deadline = Instant::now() + Duration::from_secs(60);
        while server.count() < total / 3 && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(5));
        }
        child.kill().unwrap();
        child.wait().unwrap();
        let partial = cache_records(&cache).len();
        assert!(partial > 0 && partial < total, "kill landed at {partial}/{total}");

        let mut cmd = sema();
        stage_args(&mut cmd, "describe", &manifest, &out, &cache);
        assert!(cmd.args(["--vlm-endpoint", &server.url]).status().unwrap().success());
        let got = cache_records(&cache);
        assert_eq!(got.len(), want.len());
        for (k, v) in &want {
            assert!(got.get(k) == Some(v), "cache record {k} differs after resume");
        }

        let mut cmd = sema();
        stage_args(&mut cmd, "run-all", &manifest, &out, &cache);
        assert!(cmd.args(["--vlm-endpoint", &server.url]).status().unwrap().success());
        let before = server.count();
        let mut cmd = sema();
        stage_args(&mut cmd, "run-all", &manifest, &out, &cache);
        assert!(cmd.args(["--vlm-endpoint", &server.url]).status().unwrap().success());
        let second = server.count() - before;
        assert_eq!(second, 0, "second full run made {second} requests");
        format!("killed at {partial}/{total} records; resumed cache equals uninterrupted run per key; second run-all made 0 requests")
    });
}

#[test]
fn criterion_10_determinism() {
    criterion(10, "determinism of score + analyze", || {
        let dir = tempfile::tempdir().unwrap();
        let manifest = small_dataset(&dir.path().join("data"), 10);
        let (out, cache) = (dir.path().join("out"), dir.path().join("cache"));
        let server = MockServer::start(4, Duration::ZERO, deterministic_chat_handler());
        let mut cmd = sema();
        stage_args(&mut cmd, "run-all", &manifest, &out, &cache);
        assert!(cmd.args(["--vlm-endpoint", &server.url]).status().unwrap().success());
        drop(server);

        let mut snapshots = Vec::new();
        for _ in 0..2 {
            for stage in ["score", "analyze"] {
                let mut cmd = sema();
                stage_args(&mut cmd, stage, &manifest, &out, &cache);
                assert!(cmd.arg("--offline").status().unwrap().success(), "{stage}");
            }
            snapshots.push(snapshot(&out));
        }
        let files = &snapshots[0];
        let kinds = ["pairs_", "correlation_", "divergence_top_", "diagnostics_", "heatmap_"];
        for k in kinds {
            assert_eq!(files.keys().filter(|p| p.to_string_lossy().starts_with(k)).count(), 2, "{k}");
        }
        for (path, bytes) in files {
            assert!(snapshots[1].get(path) == Some(bytes), "{} differs between runs", path.display());
        }
        assert_eq!(files.len(), snapshots[1].len());
        format!("{} output files byte-identical across two offline runs", files.len())
    });
}
