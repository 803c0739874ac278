//! Merged Convolution: K parallel convolutions with a common kernel size and
//! output size executed as one batched GEMM over shared unfolds.

use crate::error::{invalid, Error, Result};
use crate::ops::conv::{check_input, check_params, conv_jobs, finish_output, unfold_f64};
use crate::ops::counters::{self, OpCounts};
use crate::ops::gemm::{batched_gemm_f64, GemmJob};
use crate::tensor::{ConvSpec, Tensor};

#[derive(Clone, Debug)]
struct Branch {
    spec: ConvSpec,
    offset: usize,
    bias: Option<Tensor>,
}

/// Stacked weights of K mergeable branches.
#[derive(Clone, Debug)]
pub struct MergedConvPlan {
    branches: Vec<Branch>,
    weights: Vec<f64>,
}

/// Change in output size relative to the input, per axis. Equal offsets and
/// strides give equal output sizes for every input size.
fn size_offset(spec: &ConvSpec) -> (isize, isize) {
    let axis = |p: usize, d: usize, k: usize| 2 * p as isize - (d * (k - 1)) as isize;
    (
        axis(spec.padding.0, spec.dilation.0, spec.kernel.0),
        axis(spec.padding.1, spec.dilation.1, spec.kernel.1),
    )
}

/// Builds a plan from `(spec, weight, bias)` branches.
///
/// Every branch must share the kernel size of branch 0 and produce the same
/// output size; the first offender is named in the error.
pub fn merge_parallel_convs(branches: &[(ConvSpec, &Tensor, Option<&Tensor>)]) -> Result<MergedConvPlan> {
    let Some(first) = branches.first() else {
        return invalid("nothing to merge");
    };
    let mut plan = MergedConvPlan {
        branches: Vec::with_capacity(branches.len()),
        weights: Vec::new(),
    };
    for (i, (spec, w, b)) in branches.iter().enumerate() {
        spec.validate()?;
        check_params(w, *b, spec).map_err(|e| Error::CannotMerge {
            branch: i,
            reason: e.to_string(),
        })?;
        if spec.kernel != first.0.kernel {
            return Err(Error::CannotMerge {
                branch: i,
                reason: format!("kernel {:?} differs from {:?}", spec.kernel, first.0.kernel),
            });
        }
        if spec.stride != first.0.stride || size_offset(spec) != size_offset(&first.0) {
            return Err(Error::CannotMerge {
                branch: i,
                reason: "output size differs from branch 0".into(),
            });
        }
        plan.branches.push(Branch {
            spec: *spec,
            offset: plan.weights.len(),
            bias: b.cloned(),
        });
        plan.weights.extend(w.data().iter().map(|&v| v as f64));
    }
    Ok(plan)
}

impl MergedConvPlan {
    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    pub fn specs(&self) -> Vec<ConvSpec> {
        self.branches.iter().map(|b| b.spec).collect()
    }

    fn weight(&self, k: usize) -> &[f64] {
        let b = &self.branches[k];
        let len = b.spec.out_channels * b.spec.patch_rows();
        &self.weights[b.offset..b.offset + len]
    }
}

/// Runs all branches. `inputs` holds either one tensor shared by every branch
/// or one tensor per branch. Inputs passed as the same reference and branches
/// with identical patch geometry share a single unfold; all branches go
/// through one batched GEMM. Returns outputs in branch order and the counts
/// spent.
pub fn execute_merged(plan: &MergedConvPlan, inputs: &[&Tensor]) -> Result<(Vec<Tensor>, OpCounts)> {
    let k = plan.len();
    let binding: Vec<&Tensor> = match inputs.len() {
        1 => vec![inputs[0]; k],
        n if n == k => inputs.to_vec(),
        n => return invalid(format!("plan has {k} branches but {n} inputs were bound")),
    };
    let before = counters::snapshot();

    let n = binding[0].dims().0;
    let mut out_size = None;
    for (i, (x, br)) in binding.iter().zip(&plan.branches).enumerate() {
        let size = check_input(x, &br.spec)?;
        if x.dims().0 != n || *out_size.get_or_insert(size) != size {
            return invalid(format!("input bound to branch {i} does not match branch 0"));
        }
    }
    let out_size = out_size.expect("at least one branch");
    let l = out_size.0 * out_size.1;

    // one unfold per distinct (input, patch geometry)
    let mut unfold_keys: Vec<(*const Tensor, ConvSpec)> = Vec::new();
    let mut unfolds: Vec<Vec<f64>> = Vec::new();
    let mut which = Vec::with_capacity(k);
    for (x, br) in binding.iter().zip(&plan.branches) {
        let ptr = *x as *const Tensor;
        let found = unfold_keys
            .iter()
            .position(|(p, s)| std::ptr::eq(*p, ptr) && s.same_patch_geometry(&br.spec));
        let idx = match found {
            Some(i) => i,
            None => {
                unfolds.push(unfold_f64(x, &br.spec)?.0);
                unfold_keys.push((ptr, br.spec));
                unfolds.len() - 1
            }
        };
        which.push(idx);
    }

    let mut accs: Vec<Vec<f64>> = plan
        .branches
        .iter()
        .map(|b| vec![0.0; n * b.spec.out_channels * l])
        .collect();
    {
        let mut jobs: Vec<GemmJob> = Vec::new();
        for (i, acc) in accs.iter_mut().enumerate() {
            let spec = &plan.branches[i].spec;
            jobs.extend(conv_jobs(plan.weight(i), &unfolds[which[i]], acc, spec, n, l));
        }
        batched_gemm_f64(&mut jobs);
    }
    let outputs = accs
        .iter()
        .zip(&plan.branches)
        .map(|(acc, b)| finish_output(acc, b.bias.as_ref(), n, b.spec.out_channels, out_size))
        .collect();
    Ok((outputs, counters::snapshot() - before))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::conv2d;
    use crate::testutil::random_tensor;

    fn bank(dils: &[usize], c: usize, m: usize, seed: u64) -> Vec<(ConvSpec, Tensor, Tensor)> {
        dils.iter()
            .enumerate()
            .map(|(i, &d)| {
                let spec = ConvSpec::same3x3(c, m, d);
                (
                    spec,
                    random_tensor(spec.weight_shape(), seed + i as u64),
                    random_tensor([m, 1, 1, 1], seed + 100 + i as u64),
                )
            })
            .collect()
    }

    fn as_refs(b: &[(ConvSpec, Tensor, Tensor)]) -> Vec<(ConvSpec, &Tensor, Option<&Tensor>)> {
        b.iter().map(|(s, w, bias)| (*s, w, Some(bias))).collect()
    }

    #[test]
    fn single_branch_equals_conv2d() {
        let b = bank(&[2], 3, 5, 1);
        let plan = merge_parallel_convs(&as_refs(&b)).unwrap();
        let x = random_tensor([2, 3, 9, 9], 2);
        let (out, _) = execute_merged(&plan, &[&x]).unwrap();
        let expect = conv2d(&x, &b[0].1, Some(&b[0].2), &b[0].0).unwrap();
        assert_eq!(out[0], expect);
    }

    #[test]
    fn four_dilations_one_gemm_four_unfolds() {
        let b = bank(&[1, 3, 5, 7], 4, 3, 10);
        let plan = merge_parallel_convs(&as_refs(&b)).unwrap();
        let x = random_tensor([1, 4, 12, 12], 3);
        let (out, counts) = execute_merged(&plan, &[&x]).unwrap();
        assert_eq!(counts, OpCounts { gemm: 1, unfold: 4 });
        for (o, (s, w, bias)) in out.iter().zip(&b) {
            let expect = conv2d(&x, w, Some(bias), s).unwrap();
            assert!(o.max_abs_diff(&expect).unwrap() <= 1e-5);
        }
    }

    #[test]
    fn equal_geometry_shares_unfold() {
        let b = bank(&[3, 3, 3, 3], 2, 2, 20);
        let plan = merge_parallel_convs(&as_refs(&b)).unwrap();
        let x = random_tensor([1, 2, 8, 8], 4);
        let (_, counts) = execute_merged(&plan, &[&x, &x, &x, &x]).unwrap();
        assert_eq!(counts, OpCounts { gemm: 1, unfold: 1 });
    }

    #[test]
    fn distinct_inputs() {
        let b = bank(&[1, 5], 3, 4, 30);
        let plan = merge_parallel_convs(&as_refs(&b)).unwrap();
        let x0 = random_tensor([2, 3, 7, 7], 5);
        let x1 = random_tensor([2, 3, 7, 7], 6);
        let (out, counts) = execute_merged(&plan, &[&x0, &x1]).unwrap();
        assert_eq!(counts.gemm, 1);
        for (o, (x, (s, w, bias))) in out.iter().zip([&x0, &x1].iter().zip(&b)) {
            assert!(o.max_abs_diff(&conv2d(x, w, Some(bias), s).unwrap()).unwrap() <= 1e-5);
        }
        assert!(execute_merged(&plan, &[&x0, &x1, &x0]).is_err());
        let small = random_tensor([2, 3, 6, 6], 7);
        assert!(execute_merged(&plan, &[&x0, &small]).is_err());
    }

    #[test]
    fn precondition_violations_name_the_branch() {
        let mut b = bank(&[1, 3, 5], 2, 2, 40);
        let spec = ConvSpec::new(2, 2, 1);
        b.push((
            spec,
            random_tensor(spec.weight_shape(), 1),
            Tensor::vector(vec![0.0; 2]),
        ));
        match merge_parallel_convs(&as_refs(&b)) {
            Err(Error::CannotMerge { branch, .. }) => assert_eq!(branch, 3),
            other => panic!("{other:?}"),
        }
        // same kernel but output shrinks
        let mut b = bank(&[1, 3], 2, 2, 50);
        b[1].0 = ConvSpec::new(2, 2, 3).dilation(3).padding(1);
        b[1].1 = random_tensor(b[1].0.weight_shape(), 3);
        assert!(matches!(
            merge_parallel_convs(&as_refs(&b)),
            Err(Error::CannotMerge { branch: 1, .. })
        ));
    }
}
