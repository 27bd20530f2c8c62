//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line; exits nonzero on any failure.

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use detlsh::encoding::{encode_dataset, sample_for_breakpoints, select_breakpoints};
use detlsh::io::{
    compute_ground_truth, decode_bvecs, decode_fvecs, decode_index, decode_ivecs, encode_bvecs,
    encode_fvecs, encode_index, encode_ivecs, load_index, save_index,
};
use detlsh::parallel::{parallel_c2k_ann, parallel_encode, parallel_project, WorkerPlan};
use detlsh::projection::projected_distance;
use detlsh::{
    c2k_ann, chi2_survival, chi2_upper_quantile, estimate_r_min, Dataset, DetIndex, Error,
    HashFamily, IndexConfig, IndexFileError, QueryParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn gaussian_mixture(n: usize, dim: usize, components: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f32>> = (0..components)
        .map(|_| (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect())
        .collect();
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = &centers[rng.gen_range(0..components)];
        data.extend(c.iter().map(|&x| {
            let z: f64 = StandardNormal.sample(&mut rng);
            x + z as f32 * 1.5
        }));
    }
    Dataset::new(dim, data).unwrap()
}

fn uniform(n: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Dataset::new(
        dim,
        (0..n * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
    )
    .unwrap()
}

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn c2_guarantee() -> Outcome {
    let (k, c, n_queries) = (10, 1.5, 200);
    let all = gaussian_mixture(20_000 + n_queries + 50, 32, 8, 11);
    let rows: Vec<&[f32]> = all.rows().collect();
    let data = Dataset::from_rows(rows[..20_000].iter().copied()).unwrap();
    let queries = Dataset::from_rows(rows[20_000..20_000 + n_queries].iter().copied()).unwrap();
    let tuning: Vec<&[f32]> = rows[20_000 + n_queries..].to_vec();

    let start = Instant::now();
    let gt = compute_ground_truth(&data, &queries, k, 1).map_err(|e| e.to_string())?;
    let index = DetIndex::build(
        data,
        IndexConfig {
            seed: 5,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let params = QueryParams::derive(16, c, 4, 1.0, Some(0.1)).map_err(|e| e.to_string())?;
    let r_min = estimate_r_min(&index, &tuning, &params, k).map_err(|e| e.to_string())?;
    let params = params.with_r_min(r_min).map_err(|e| e.to_string())?;

    let mut successes = 0;
    for (qi, q) in queries.rows().enumerate() {
        let res = c2k_ann(&index, q, k, &params).map_err(|e| e.to_string())?;
        let ok = res.neighbors.len() == k
            && res
                .neighbors
                .iter()
                .zip(&gt.neighbors[qi])
                .all(|(got, truth)| got.distance <= c * c * truth.distance + 1e-9);
        successes += ok as usize;
    }
    let elapsed = start.elapsed();
    let frac = successes as f64 / n_queries as f64;
    let bound = 0.5 - (-1.0f64).exp();
    let sigma = (bound * (1.0 - bound) / n_queries as f64).sqrt();
    let floor = bound - 3.0 * sigma;
    check(frac >= floor, || {
        format!("success fraction {frac:.4} below {floor:.4}")
    })?;
    check(elapsed < Duration::from_secs(120), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "success fraction {frac:.4} (floor {floor:.4}), r_min {r_min:.4}, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn projection_statistics() -> Outcome {
    let (pairs, dim, k) = (100_000u64, 16, 16u32);
    let alphas = [0.1, 0.5, 0.9];
    let thresholds: Vec<f64> = alphas
        .iter()
        .map(|&a| chi2_upper_quantile(a, k).map(f64::sqrt))
        .collect::<detlsh::Result<_>>()
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let start = Instant::now();
    let mut ratio_sum = 0.0;
    let mut exceed = [0usize; 3];
    for p in 0..pairs {
        let a: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let family = HashFamily::generate(dim, k as usize, 1, p).map_err(|e| e.to_string())?;
        let s = detlsh::euclidean_distance(&a, &b).unwrap();
        let pa = family.project(&a).unwrap();
        let pb = family.project(&b).unwrap();
        let sp = projected_distance(pa.space(0), pb.space(0));
        ratio_sum += (sp / s).powi(2);
        for (e, t) in exceed.iter_mut().zip(&thresholds) {
            *e += (sp > s * t) as usize;
        }
    }
    let elapsed = start.elapsed();
    let mean = ratio_sum / pairs as f64;
    check((15.8..=16.2).contains(&mean), || {
        format!("mean s'^2/s^2 = {mean:.4}")
    })?;
    let freqs: Vec<f64> = exceed.iter().map(|&e| e as f64 / pairs as f64).collect();
    for (f, a) in freqs.iter().zip(alphas) {
        check((f - a).abs() <= 0.01, || {
            format!("tail frequency {f:.4} for alpha {a}")
        })?;
    }
    check(elapsed < Duration::from_secs(30), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "mean ratio {mean:.4}, tail frequencies {freqs:.4?}, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn sort_oracle(values: &[f32], regions: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    let m = sorted.len();
    let step = m / regions;
    let mut out = vec![sorted[0] as f64];
    for z in 2..=regions {
        out.push(sorted[step * (z - 1) - 1] as f64);
    }
    out.push(sorted[m - 1] as f64);
    out
}

fn breakpoint_oracle() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let start = Instant::now();
    for case in 0..1000 {
        // log-uniform sizes cover both ends of 256..=100_000
        let size = (256.0f64 * (100_000.0f64 / 256.0).powf(rng.gen::<f64>())).round() as usize;
        let values: Vec<f32> = match case % 4 {
            0 => (0..size).map(|_| rng.gen_range(0..4) as f32).collect(),
            1 => (0..size)
                .map(|_| rng.gen_range(0..300) as f32 * 0.5)
                .collect(),
            2 => (0..size).map(|_| StandardNormal.sample(&mut rng)).collect(),
            _ => (0..size).map(|_| rng.gen_range(-1e3f32..1e3)).collect(),
        };
        let expected = sort_oracle(&values, 256);
        let got = select_breakpoints(&mut values.clone(), 256).map_err(|e| e.to_string())?;
        check(got == expected, || {
            format!("case {case} (size {size}) differs from the sort oracle")
        })?;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(30), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!("1000 arrays match, {:.1}s", elapsed.as_secs_f64()))
}

/// Solves `e^{-t}(1 + t) = alpha` for `t > 0` by Newton's method.
fn k4_closed_form(alpha: f64) -> f64 {
    let mut t = 1.0 - alpha.ln();
    for _ in 0..100 {
        let f = (-t).exp() * (1.0 + t) - alpha;
        let df = -t * (-t).exp();
        let next = t - f / df;
        if (next - t).abs() < 1e-15 * t.max(1.0) {
            t = next;
            break;
        }
        t = next;
    }
    2.0 * t
}

fn chi2_accuracy() -> Outcome {
    let alphas: Vec<f64> = (1..100)
        .map(|i| i as f64 / 100.0)
        .chain([1e-6, 1e-3, 0.999])
        .collect();
    let mut worst: f64 = 0.0;
    for &a in &alphas {
        let k2 = chi2_upper_quantile(a, 2).map_err(|e| e.to_string())?;
        let k4 = chi2_upper_quantile(a, 4).map_err(|e| e.to_string())?;
        let e2 = (k2 - (-2.0 * a.ln())).abs();
        let e4 = (k4 - k4_closed_form(a)).abs();
        worst = worst.max(e2).max(e4);
        check(e2 <= 1e-9 && e4 <= 1e-9, || {
            format!("alpha {a}: errors {e2:e} (K=2), {e4:e} (K=4)")
        })?;
    }
    for k in [8, 16, 32] {
        let qs: Vec<f64> = alphas
            .iter()
            .filter(|&&a| a >= 0.01)
            .map(|&a| chi2_upper_quantile(a, k).unwrap())
            .collect();
        check(qs.windows(2).all(|w| w[1] < w[0]), || {
            format!("quantile not decreasing in alpha for K={k}")
        })?;
        check(
            qs.iter()
                .zip(alphas.iter().filter(|&&a| a >= 0.01))
                .all(|(&q, &a)| (chi2_survival(q, k) - a).abs() < 1e-9),
            || format!("survival does not invert the quantile for K={k}"),
        )?;
    }
    Ok(format!(
        "max error {worst:.2e} over {} alphas",
        alphas.len()
    ))
}

fn range_query_exactness() -> Outcome {
    let data = uniform(1000, 8, 4);
    let config = IndexConfig {
        proj_dim: 8,
        spaces: 1,
        max_leaf: 8,
        seed: 9,
        ..Default::default()
    };
    let index = DetIndex::build(data, config).map_err(|e| e.to_string())?;
    let tree = &index.trees()[0];
    let (bps, proj) = (index.breakpoints(), index.projections());
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let mut sizes = (usize::MAX, 0);
    for trial in 0..500 {
        let q: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.2f32..1.2)).collect();
        let pq = index.family().project(&q).unwrap();
        let pq = pq.space(0);
        let radius = rng.gen_range(0.05..4.0);
        let exact: BTreeSet<u32> = tree
            .range_query(pq, radius, bps, proj)
            .into_iter()
            .collect();
        let scan: BTreeSet<u32> = (0..1000u32)
            .filter(|&id| projected_distance(pq, proj.point(0, id)) <= radius)
            .collect();
        check(exact == scan, || {
            format!("trial {trial}: range query differs from linear scan")
        })?;
        let hits = tree.range_query_relaxed(pq, radius, bps);
        check(hits.windows(2).all(|w| w[0].lower <= w[1].lower), || {
            format!("trial {trial}: relaxed lower bounds decrease")
        })?;
        let relaxed: BTreeSet<u32> = hits
            .iter()
            .flat_map(|h| tree.leaf_ids(h.leaf).iter().copied())
            .collect();
        check(relaxed.is_superset(&scan), || {
            format!("trial {trial}: relaxed result misses points")
        })?;
        sizes = (sizes.0.min(scan.len()), sizes.1.max(scan.len()));
    }
    Ok(format!(
        "500 trials, exact result sizes {}..={}",
        sizes.0, sizes.1
    ))
}

fn parallel_parity() -> Outcome {
    let data = gaussian_mixture(20_100, 32, 8, 12);
    let rows: Vec<&[f32]> = data.rows().collect();
    let base = Dataset::from_rows(rows[..20_000].iter().copied()).unwrap();
    let queries: Vec<&[f32]> = rows[20_000..].to_vec();
    let config = IndexConfig {
        seed: 21,
        ..Default::default()
    };
    let start = Instant::now();

    let seq = DetIndex::build(base.clone(), config).map_err(|e| e.to_string())?;
    let sample = sample_for_breakpoints(base.len(), base.len().div_ceil(10), config.seed).unwrap();
    let (seq_bps, seq_enc) =
        encode_dataset(seq.projections(), config.regions, &sample).map_err(|e| e.to_string())?;
    let params = QueryParams::derive(16, 1.5, 4, 1.0, Some(0.1)).unwrap();
    let r_min = estimate_r_min(&seq, &queries[..20], &params, 10).map_err(|e| e.to_string())?;
    let params = params.with_r_min(r_min).unwrap();
    let seq_results: Vec<_> = queries
        .iter()
        .map(|q| c2k_ann(&seq, q, 10, &params).unwrap())
        .collect();

    for workers in [1, 2, 4, 8] {
        let plan = WorkerPlan::new(workers, None).map_err(|e| e.to_string())?;
        let proj = parallel_project(seq.family(), &base, &plan).map_err(|e| e.to_string())?;
        check(&proj == seq.projections(), || {
            format!("N_w={workers}: projections differ")
        })?;
        let (bps, enc) =
            parallel_encode(&proj, config.regions, &sample, &plan).map_err(|e| e.to_string())?;
        check(bps == seq_bps && bps == *seq.breakpoints(), || {
            format!("N_w={workers}: breakpoints differ")
        })?;
        check(enc == seq_enc, || {
            format!("N_w={workers}: encodings differ")
        })?;
        let par =
            DetIndex::build_parallel(base.clone(), config, &plan).map_err(|e| e.to_string())?;
        check(par.trees() == seq.trees(), || {
            format!("N_w={workers}: trees differ")
        })?;
        for (qi, q) in queries.iter().enumerate() {
            let res = parallel_c2k_ann(&par, q, 10, &params, &plan).map_err(|e| e.to_string())?;
            check(res == seq_results[qi], || {
                format!("N_w={workers}: query {qi} differs")
            })?;
        }
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(180), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "N_w in {{1,2,4,8}} identical over 100 queries, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn persistence() -> Outcome {
    let data = gaussian_mixture(5_050, 24, 4, 13);
    let rows: Vec<&[f32]> = data.rows().collect();
    let base = Dataset::from_rows(rows[..5_000].iter().copied()).unwrap();
    let config = IndexConfig {
        seed: 77,
        ..Default::default()
    };
    let index = DetIndex::build(base.clone(), config).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("index.deti");
    save_index(&index, &path).map_err(|e| e.to_string())?;
    let loaded = load_index(&path, base.clone()).map_err(|e| e.to_string())?;
    check(loaded.trees() == index.trees(), || {
        "trees differ after reload".into()
    })?;

    let params = QueryParams::derive(16, 1.5, 4, 1.0, Some(0.1)).unwrap();
    let r_min = estimate_r_min(&index, &rows[..10], &params, 10).unwrap();
    let params = params.with_r_min(r_min).unwrap();
    for (qi, q) in rows[5_000..].iter().enumerate() {
        let a = c2k_ann(&index, q, 10, &params).map_err(|e| e.to_string())?;
        let b = c2k_ann(&loaded, q, 10, &params).map_err(|e| e.to_string())?;
        check(a == b, || format!("query {qi} differs after reload"))?;
    }

    let bytes = encode_index(&index);
    let mut corrupt = bytes.clone();
    corrupt[bytes.len() / 2] ^= 0x40;
    match decode_index(&corrupt, base.clone()) {
        Err(Error::IndexFile(IndexFileError::Checksum { .. })) => {}
        other => return Err(format!("corrupted byte gave {:?}", other.map(|_| ()))),
    }
    let mut bumped = bytes;
    bumped[4..8].copy_from_slice(&2u32.to_le_bytes());
    match decode_index(&bumped, base) {
        Err(Error::IndexFile(IndexFileError::UnsupportedVersion { found: 2, .. })) => {}
        other => return Err(format!("version bump gave {:?}", other.map(|_| ()))),
    }
    Ok("50 queries identical; checksum and version errors typed".into())
}

fn format_fidelity() -> Outcome {
    let example = [2u8, 0, 0, 0, 0, 0, 0x80, 0x3f, 0, 0, 0, 0x40];
    let ds = decode_fvecs(&example).map_err(|e| e.to_string())?;
    check(
        ds.dim() == 2 && ds.len() == 1 && ds.point(0) == [1.0, 2.0],
        || format!("byte example decoded to {ds:?}"),
    )?;
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    for trial in 0..200 {
        let (n, d) = (rng.gen_range(1..50), rng.gen_range(1..40));
        // arbitrary finite bit patterns, including subnormals and negative zero
        let f = Dataset::new(
            d,
            (0..n * d)
                .map(|_| f32::from_bits(rng.gen::<u32>() & 0xff7f_ffff))
                .collect(),
        )
        .unwrap();
        let bytes = encode_fvecs(&f);
        let back = decode_fvecs(&bytes).map_err(|e| e.to_string())?;
        check(
            encode_fvecs(&back) == bytes
                && back
                    .as_slice()
                    .iter()
                    .zip(f.as_slice())
                    .all(|(a, b)| a.to_bits() == b.to_bits()),
            || format!("fvecs trial {trial} not bit-exact"),
        )?;
        let b = Dataset::new(d, (0..n * d).map(|_| rng.gen::<u8>() as f32).collect()).unwrap();
        let bytes = encode_bvecs(&b).unwrap();
        let back = decode_bvecs(&bytes).map_err(|e| e.to_string())?;
        check(back == b && encode_bvecs(&back).unwrap() == bytes, || {
            format!("bvecs trial {trial} not bit-exact")
        })?;
        let ids: Vec<Vec<i32>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen()).collect())
            .collect();
        let bytes = encode_ivecs(&ids);
        check(
            decode_ivecs(&bytes).map_err(|e| e.to_string())? == ids,
            || format!("ivecs trial {trial} differs"),
        )?;
    }
    Ok("byte example and 200 round trips per format exact".into())
}

fn best_of<F: FnMut() -> Duration>(runs: usize, mut f: F) -> Duration {
    (0..runs).map(|_| f()).min().unwrap()
}

fn selection_speed() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let values: Vec<f32> = (0..1_000_000)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let select = best_of(3, || {
        let mut v = values.clone();
        let t = Instant::now();
        std::hint::black_box(select_breakpoints(&mut v, 256).unwrap());
        t.elapsed()
    });
    let sort = best_of(3, || {
        let v = values.clone();
        let t = Instant::now();
        std::hint::black_box(sort_oracle(&v, 256));
        t.elapsed()
    });
    let ratio = sort.as_secs_f64() / select.as_secs_f64();
    check(select < sort, || {
        format!("selection {select:?} not faster than sort {sort:?}")
    })?;
    Ok(format!(
        "selection {select:.2?} vs sort {sort:.2?} ({ratio:.2}x)"
    ))
}

fn parallel_speedup() -> Outcome {
    let threads = thread::available_parallelism().map_or(1, |n| n.get());
    let data = uniform(1_000_000, 64, 14);
    let config = IndexConfig {
        seed: 3,
        ..Default::default()
    };
    let t = Instant::now();
    drop(DetIndex::build(data.clone(), config).map_err(|e| e.to_string())?);
    let t1 = t.elapsed().as_secs_f64();
    let plan = WorkerPlan::new(8, None).unwrap();
    let t = Instant::now();
    drop(DetIndex::build_parallel(data, config, &plan).map_err(|e| e.to_string())?);
    let t8 = t.elapsed().as_secs_f64();
    let s8 = t1 / t8;
    let summary =
        format!("T_1 {t1:.2}s, T_8 {t8:.2}s, S_8 = {s8:.2} on {threads} hardware threads");
    if threads < 8 {
        return Ok(format!("{summary}; not gated below 8 threads"));
    }
    check(s8 > 1.5, || summary.clone())?;
    Ok(summary)
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("c2 guarantee on a Gaussian mixture", c2_guarantee),
        ("projected distance statistics", projection_statistics),
        ("breakpoints match the sort oracle", breakpoint_oracle),
        ("chi-squared quantile accuracy", chi2_accuracy),
        ("range query exactness", range_query_exactness),
        ("parallel parity", parallel_parity),
        ("index persistence", persistence),
        ("vector file formats", format_fidelity),
        ("selection faster than sorting", selection_speed),
        ("parallel build speedup", parallel_speedup),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
