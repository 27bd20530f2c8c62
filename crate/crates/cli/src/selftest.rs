//! Fast oracle checks run by `detlsh selftest`.

use std::collections::BTreeSet;

use detlsh::encoding::select_breakpoints;
use detlsh::io::{decode_fvecs, decode_index, encode_fvecs, encode_index};
use detlsh::parallel::{parallel_c2k_ann, WorkerPlan};
use detlsh::projection::projected_distance;
use detlsh::{c2k_ann, chi2_upper_quantile, Dataset, DetIndex, IndexConfig, QueryParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

type Check = fn() -> Result<(), String>;

fn random_dataset(n: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Dataset::new(
        dim,
        (0..n * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
    )
    .unwrap()
}

fn small_index() -> DetIndex {
    let config = IndexConfig {
        proj_dim: 8,
        spaces: 2,
        max_leaf: 16,
        seed: 1,
        ..Default::default()
    };
    DetIndex::build(random_dataset(3000, 12, 2), config).unwrap()
}

fn chi2_closed_form() -> Result<(), String> {
    for a in [0.01, 0.1, 0.5, 0.9] {
        let q = chi2_upper_quantile(a, 2).map_err(|e| e.to_string())?;
        if (q + 2.0 * f64::ln(a)).abs() > 1e-9 {
            return Err(format!("K=2 quantile at {a} is {q}"));
        }
    }
    Ok(())
}

fn breakpoints_vs_sort() -> Result<(), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    for case in 0..50 {
        let m = rng.gen_range(256..20_000);
        let values: Vec<f32> = (0..m).map(|_| rng.gen_range(0..case + 2) as f32).collect();
        let mut sorted = values.clone();
        sorted.sort_by(f32::total_cmp);
        let got = select_breakpoints(&mut values.clone(), 256).map_err(|e| e.to_string())?;
        let step = m / 256;
        let want: Vec<f64> = std::iter::once(sorted[0])
            .chain((2..=256).map(|z| sorted[step * (z - 1) - 1]))
            .chain(std::iter::once(sorted[m - 1]))
            .map(f64::from)
            .collect();
        if got != want {
            return Err(format!("case {case} differs from sorting"));
        }
    }
    Ok(())
}

fn range_vs_scan() -> Result<(), String> {
    let index = small_index();
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    for trial in 0..50 {
        let q: Vec<f32> = (0..12).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let pq = index.family().project(&q).map_err(|e| e.to_string())?;
        let radius = rng.gen_range(0.1..3.0);
        for (space, tree) in index.trees().iter().enumerate() {
            let got: BTreeSet<u32> = tree
                .range_query(
                    pq.space(space),
                    radius,
                    index.breakpoints(),
                    index.projections(),
                )
                .into_iter()
                .collect();
            let want: BTreeSet<u32> = (0..index.len() as u32)
                .filter(|&id| {
                    projected_distance(pq.space(space), index.projections().point(space, id))
                        <= radius
                })
                .collect();
            if got != want {
                return Err(format!("trial {trial}, space {space}"));
            }
        }
    }
    Ok(())
}

fn parallel_parity() -> Result<(), String> {
    let seq = small_index();
    let plan = WorkerPlan::new(4, None).map_err(|e| e.to_string())?;
    let par = DetIndex::build_parallel(seq.dataset().clone(), *seq.config(), &plan)
        .map_err(|e| e.to_string())?;
    if par.trees() != seq.trees() || par.breakpoints() != seq.breakpoints() {
        return Err("parallel build differs".into());
    }
    let params = QueryParams::derive(8, 1.5, 2, 0.2, Some(0.1)).map_err(|e| e.to_string())?;
    for id in 0..20u32 {
        let q = seq.dataset().point(id * 7);
        let a = c2k_ann(&seq, q, 5, &params).map_err(|e| e.to_string())?;
        let b = parallel_c2k_ann(&par, q, 5, &params, &plan).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("query {id} differs"));
        }
    }
    Ok(())
}

fn round_trips() -> Result<(), String> {
    let data = random_dataset(100, 7, 5);
    let bytes = encode_fvecs(&data);
    if decode_fvecs(&bytes).map_err(|e| e.to_string())? != data {
        return Err("fvecs round trip differs".into());
    }
    let index = small_index();
    let loaded =
        decode_index(&encode_index(&index), index.dataset().clone()).map_err(|e| e.to_string())?;
    if loaded.trees() != index.trees() || loaded.family() != index.family() {
        return Err("index round trip differs".into());
    }
    Ok(())
}

/// Runs every check, printing one line each; returns the number of failures.
pub fn run() -> usize {
    let checks: [(&str, Check); 5] = [
        ("chi-squared closed form", chi2_closed_form),
        ("breakpoints vs sort", breakpoints_vs_sort),
        ("range query vs scan", range_vs_scan),
        ("parallel parity", parallel_parity),
        ("file round trips", round_trips),
    ];
    let mut failures = 0;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("PASS {name}"),
            Err(e) => {
                failures += 1;
                println!("FAIL {name}: {e}");
            }
        }
    }
    failures
}
