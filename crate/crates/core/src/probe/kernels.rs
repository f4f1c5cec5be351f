use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::{Layer, ProbeModel};
use crate::baselines::{involution_kernel_at, sa_kernel_at};
use crate::rsa::kernels_at;
use crate::tensor::{FeatureMap, NeighborhoodSpec};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpedKernel {
    /// `"original"` or `"reversed"`.
    pub clip: String,
    pub head: usize,
    pub kind: String,
    pub position: [usize; 3],
    pub values: Vec<f64>,
    pub path: PathBuf,
}

/// Kernels of every head at target `(t, h, w)`, as `(head, kind, weights)`.
pub fn kernels(
    model: &ProbeModel,
    clip: &FeatureMap<f64>,
    position: [usize; 3],
) -> Result<Vec<(usize, &'static str, Vec<f64>)>> {
    let [t, h, w] = position;
    let s = clip.shape();
    if t >= s.time || h >= s.height || w >= s.width {
        return Err(Error::shape(format!(
            "position {position:?} outside {}x{}x{}",
            s.time, s.height, s.width
        )));
    }
    let n = s.position(t, h, w);
    let x = model.embed(clip)?;
    Ok(match &model.layer {
        Layer::Rsa(p) => {
            let (kv, kr) = kernels_at(&x, p, 0, n)?;
            let mut out = Vec::new();
            for (head, (a, b)) in kv.into_iter().zip(kr).enumerate() {
                out.push((head, "basic", a));
                out.push((head, "relational", b));
            }
            out
        }
        Layer::Sa(p) => vec![(0, "attention", sa_kernel_at(&x, &model.config.window, p, 0, n)?)],
        Layer::Involution(p) => vec![(0, "involution", involution_kernel_at(&x, p, 0, n)?)],
    })
}

/// Formats `values` as one `m_h × m_w` block per temporal slice, blocks
/// separated by a blank line.
pub fn kernel_csv(values: &[f64], spec: &NeighborhoodSpec) -> String {
    let mut out = String::new();
    let (mh, mw) = (spec.height(), spec.width());
    for dt in 0..spec.time() {
        if dt > 0 {
            out.push('\n');
        }
        for dh in 0..mh {
            let row = &values[(dt * mh + dh) * mw..(dt * mh + dh + 1) * mw];
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
    }
    out
}

/// Parses [`kernel_csv`] output back into a flat vector.
pub fn parse_kernel_csv(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .flat_map(|l| l.split(','))
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::config(format!("bad kernel value {v:?}: {e}")))
        })
        .collect()
}

/// Writes the kernels at `position` for `clip` and, at the time-mirrored
/// position `(T-1-t, h, w)`, for the reversed clip. The target feature is
/// the same voxel in both, so only context-dependent kernels may change.
pub fn dump_kernels(
    model: &ProbeModel,
    clip: &FeatureMap<f64>,
    position: [usize; 3],
    out: &Path,
) -> Result<Vec<DumpedKernel>> {
    fs::create_dir_all(out)?;
    let [t, h, w] = position;
    let reversed = clip.reverse_time();
    let t_max = clip.shape().time.saturating_sub(1);
    let mirrored = [t_max.saturating_sub(t), h, w];
    let mut dumped = Vec::new();
    for (tag, x, pos) in [("original", clip, position), ("reversed", &reversed, mirrored)] {
        for (head, kind, values) in kernels(model, x, pos)? {
            let path = out.join(format!("{tag}_q{head}_{kind}.csv"));
            fs::write(&path, kernel_csv(&values, &model.config.window))?;
            dumped.push(DumpedKernel {
                clip: tag.into(),
                head,
                kind: kind.into(),
                position: pos,
                values,
                path,
            });
        }
    }
    Ok(dumped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout_and_round_trip() {
        let spec = NeighborhoodSpec::new(3, 1, 3).unwrap();
        let v: Vec<f64> = (0..9).map(|i| i as f64 * 0.5).collect();
        let text = kernel_csv(&v, &spec);
        assert_eq!(text, "0,0.5,1\n\n1.5,2,2.5\n\n3,3.5,4\n");
        assert_eq!(parse_kernel_csv(&text).unwrap(), v);
    }
}
