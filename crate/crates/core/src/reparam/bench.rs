//! Timing of the four inference variants: encoder merged on/off times
//! pyramid banks merged on/off.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::dcnet::{DCNet, ForwardOutputs};
use crate::error::{invalid, Error, Result};
use crate::nn::InferExec;
use crate::ops::counters;
use crate::tensor::Tensor;

/// Largest output difference accepted before timing.
pub const BENCH_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub variant: String,
    pub encoder_merged: bool,
    pub blocks_merged: bool,
    pub median_ms: f64,
    pub gemm_count: u64,
    pub unfold_count: u64,
    /// Against the fully unmerged variant.
    pub max_abs_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchTable {
    pub repeats: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,median-ms,gemm-count,unfold-count,max-abs-diff\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.3},{},{},{:e}",
                r.variant, r.median_ms, r.gemm_count, r.unfold_count, r.max_abs_diff
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<34} {:>10} {:>6} {:>7} {:>12}\n",
            "variant", "median-ms", "gemm", "unfold", "max-abs-diff"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<34} {:>10.3} {:>6} {:>7} {:>12.3e}",
                r.variant, r.median_ms, r.gemm_count, r.unfold_count, r.max_abs_diff
            );
        }
        s
    }

    pub fn row(&self, encoder_merged: bool, blocks_merged: bool) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.encoder_merged == encoder_merged && r.blocks_merged == blocks_merged)
    }
}

fn variant_name(enc: bool, blocks: bool) -> String {
    format!(
        "{}/{}",
        if enc { "parallel-encoder" } else { "dual-encoder" },
        if blocks { "merged-blocks" } else { "unmerged-blocks" }
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Checks that all four variants agree, then times each `repeats` times.
pub fn bench(dual: &DCNet, merged: &DCNet, input: &Tensor, repeats: usize) -> Result<BenchTable> {
    if repeats < 3 {
        return invalid(format!("bench needs at least 3 repeats, got {repeats}"));
    }
    if dual.is_merged() || !merged.is_merged() {
        return invalid("bench expects a dual-encoder graph and its merged form");
    }
    let variants = [(false, false), (false, true), (true, false), (true, true)];
    let mut reference: Option<ForwardOutputs> = None;
    let mut rows = Vec::with_capacity(4);
    for (enc, blocks) in variants {
        let net = if enc { merged } else { dual };
        let mut ex = if blocks {
            InferExec::merged(&net.store)
        } else {
            InferExec::new(&net.store)
        };
        let before = counters::snapshot();
        let out = net.forward_with(&mut ex, input)?;
        let counts = counters::snapshot() - before;
        let diff = match &reference {
            Some(r) => out.max_abs_diff(r)?,
            None => 0.0,
        };
        if diff > BENCH_TOLERANCE {
            return Err(Error::Equivalence {
                diff,
                tol: BENCH_TOLERANCE,
            });
        }
        reference.get_or_insert(out);
        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t = Instant::now();
            std::hint::black_box(net.forward_with(&mut ex, input)?);
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        rows.push(BenchRow {
            variant: variant_name(enc, blocks),
            encoder_merged: enc,
            blocks_merged: blocks,
            median_ms: median(times),
            gemm_count: counts.gemm,
            unfold_count: counts.unfold,
            max_abs_diff: diff,
        });
    }
    Ok(BenchTable { repeats, rows })
}
