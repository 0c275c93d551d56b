//! Intrinsic-dimension estimates, the ID report and embedding export.

mod common;

use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use msdiff::degrade::benchmark_case;
use msdiff::diagnostics::{export_embeddings, id_report, id_table_csv, twonn_id, write_embeddings, Stage};
use msdiff::diffuse::{DiffusionHead, HeadConfig, Latents};
use msdiff::embed::EmbedModel;
use msdiff::hsidata::synth_cube;

/// `n` points of a `k`-dimensional unit cube embedded in the first `k` of
/// `dim` coordinates.
fn flat(n: usize, k: usize, dim: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dim);
    for _ in 0..n {
        for j in 0..dim {
            out.push(if j < k { r.random_range(0.0..1.0) } else { 0.0 });
        }
    }
    out
}

/// Random orthogonal matrix from Gram-Schmidt on a Gaussian-ish matrix.
fn rotation(dim: usize, r: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    q
}

fn rotate(points: &[f64], q: &[Vec<f64>]) -> Vec<f64> {
    let dim = q.len();
    points
        .chunks(dim)
        .flat_map(|p| q.iter().map(move |row| row.iter().zip(p).map(|(a, b)| a * b).sum::<f64>()))
        .collect()
}

#[test]
fn plane_in_ten_dimensions() {
    let pts = flat(1000, 2, 10, &mut common::rng(1));
    let est = twonn_id(&pts, 10).unwrap().estimate;
    assert!((1.7..=2.3).contains(&est), "{est}");
}

#[test]
fn segment_in_three_dimensions() {
    let mut r = common::rng(2);
    let dir = [0.3, -0.5, 0.8];
    let pts: Vec<f64> = (0..1000)
        .flat_map(|_| {
            let t: f64 = r.random_range(0.0..1.0);
            dir.map(|d| 1.0 + d * t)
        })
        .collect();
    let est = twonn_id(&pts, 3).unwrap().estimate;
    assert!((0.85..=1.15).contains(&est), "{est}");
}

#[test]
fn estimate_is_invariant_to_rigid_motions_and_scale() {
    let mut r = common::rng(3);
    let pts = flat(400, 3, 6, &mut r);
    let base = twonn_id(&pts, 6).unwrap().estimate;
    let q = rotation(6, &mut r);
    let rotated = twonn_id(&rotate(&pts, &q), 6).unwrap().estimate;
    assert!((base - rotated).abs() < 1e-9, "{base} vs {rotated}");
    let scaled: Vec<f64> = pts.iter().map(|v| 3.5 * v).collect();
    assert!((twonn_id(&scaled, 6).unwrap().estimate - base).abs() < 1e-9);
    let shifted: Vec<f64> = pts.iter().enumerate().map(|(i, v)| v + (i % 6) as f64).collect();
    assert!((twonn_id(&shifted, 6).unwrap().estimate - base).abs() < 1e-9);
}

#[test]
fn too_few_and_duplicate_points() {
    let pts = flat(9, 2, 2, &mut common::rng(4));
    assert!(twonn_id(&pts, 2).is_err());
    let mut pts = flat(30, 2, 2, &mut common::rng(5));
    let copies = pts[..10].to_vec();
    pts.extend(copies);
    let r = twonn_id(&pts, 2).unwrap();
    assert_eq!((r.points, r.duplicates), (30, 5));
    assert!(twonn_id(&[1.0; 7], 2).is_err());
}

#[test]
fn id_report_covers_every_case_and_stage() {
    let (cube, labels) = synth_cube(16, 16, 4, 3, 1).unwrap();
    let cfg = common::tiny_embed_config(3);
    let embed = EmbedModel::init(cfg.clone(), 2).unwrap();
    let head = DiffusionHead::init(HeadConfig::new(cfg.embed_dim), 3).unwrap();
    let cases: Vec<_> = ["C-3-3", "C-9"].iter().map(|c| benchmark_case(c).unwrap()).collect();
    let coords = labels.labeled();
    let rows = id_report(&cube, &labels, &coords, &embed, &head, 0.25, &cases, 100, 7).unwrap();
    assert_eq!(rows.len(), 6);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.stage, Stage::ALL[i % 3]);
        assert_eq!(row.case, cases[i / 3].label);
    }
    assert_eq!(rows[0].dim, 36);
    assert_eq!(rows[1].dim, 8);
    assert_eq!(rows, id_report(&cube, &labels, &coords, &embed, &head, 0.25, &cases, 100, 7).unwrap());

    let csv = id_table_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "case,stage,dim,points,id,error");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("C-3-3,degraded-raw,36,"));
    assert!(lines[3].starts_with("C-3-3,diffusion-refined,8,"));
}

#[test]
fn embedding_export_roundtrips_nine_digits() {
    let mut r = common::rng(6);
    let n = 25;
    let data: Vec<f64> = (0..n * 3).map(|_| r.random_range(-1e3..1e3) * 10f64.powi(r.random_range(-6..3))).collect();
    let labels: Vec<u16> = (0..n).map(|i| (i % 4) as u16 + 1).collect();
    let latents = Latents::new(3, data.clone(), labels.clone()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.csv");
    export_embeddings(&latents, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), n + 1);
    assert_eq!(lines[0], "label,f0,f1,f2");
    for (i, line) in lines[1..].iter().enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0].parse::<u16>().unwrap(), labels[i]);
        for (j, cell) in cells[1..].iter().enumerate() {
            let v: f64 = cell.parse().unwrap();
            let x = data[i * 3 + j];
            assert!((v - x).abs() <= 5e-9 * x.abs(), "{v} vs {x}");
        }
    }
    let mut buf = Vec::new();
    write_embeddings(&latents, &mut buf).unwrap();
    assert_eq!(buf, text.as_bytes());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn estimate_is_positive_and_finite(seed in any::<u64>(), n in 12usize..80, dim in 1usize..5) {
        let mut r = common::rng(seed);
        let pts: Vec<f64> = (0..n * dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let est = twonn_id(&pts, dim).unwrap().estimate;
        prop_assert!(est.is_finite() && est > 0.0);
    }

    #[test]
    fn point_order_does_not_matter(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let pts = flat(40, 2, 3, &mut r);
        let mut rows: Vec<&[f64]> = pts.chunks(3).collect();
        rows.reverse();
        let rev: Vec<f64> = rows.concat();
        let a = twonn_id(&pts, 3).unwrap().estimate;
        let b = twonn_id(&rev, 3).unwrap().estimate;
        prop_assert!((a - b).abs() < 1e-12);
    }
}
