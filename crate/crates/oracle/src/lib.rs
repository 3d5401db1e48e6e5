//! Naive reference implementation of the selective multi-scale neck.
//!
//! Everything in this crate is written with plain scalar loops over nested
//! `Vec`s and deliberately shares no code (and no memory layout) with the
//! optimized library it checks. The crate has no dependencies, so the build
//! graph itself guarantees independence.
//!
//! All arithmetic is `f64`.

pub mod naive;
pub mod neck;

pub use neck::{reference_forward, Branch, Config, Levels, Params};

/// One feature map indexed as `[channel][row][col]`.
pub type FeatureMap = Vec<Vec<Vec<f64>>>;
/// A matrix indexed as `[row][col]`.
pub type Matrix = Vec<Vec<f64>>;
/// A convolution weight indexed as `[out_ch][in_ch][ky][kx]`.
pub type ConvWeight = Vec<Vec<Vec<Vec<f64>>>>;

/// Result of an elementwise comparison between two level sets.
#[derive(Debug, Clone)]
pub struct DiffReport {
    pub max_abs: f64,
    pub max_rel: f64,
    /// `[level_position, channel, row, col]` of the largest absolute deviation.
    pub argmax_index: [usize; 4],
    pub passed: bool,
}

impl DiffReport {
    pub fn to_kv_lines(&self, abs_tol: f64, rel_tol: f64) -> String {
        format!(
            "max_abs={:e}\nmax_rel={:e}\nargmax_index={},{},{},{}\nabs_tol={:e}\nrel_tol={:e}\npassed={}\n",
            self.max_abs,
            self.max_rel,
            self.argmax_index[0],
            self.argmax_index[1],
            self.argmax_index[2],
            self.argmax_index[3],
            abs_tol,
            rel_tol,
            self.passed
        )
    }
}

/// Elementwise max absolute and relative deviation between two level sets.
///
/// Relative deviation of a pair `(a, b)` is `|a-b| / max(|a|, |b|)` and zero
/// when both values are zero. `passed` uses inclusive tolerances on both the
/// absolute and the relative maximum.
pub fn compare(
    a: &Levels,
    b: &Levels,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<DiffReport, String> {
    if a.l_min != b.l_min || a.features.len() != b.features.len() {
        return Err(format!(
            "level structure mismatch: {}..{} vs {}..{}",
            a.l_min,
            a.l_min + a.features.len(),
            b.l_min,
            b.l_min + b.features.len()
        ));
    }
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    let mut argmax = [0usize; 4];
    for (pos, (fa, fb)) in a.features.iter().zip(&b.features).enumerate() {
        if fa.len() != fb.len() {
            return Err(format!("channel count mismatch at level position {pos}"));
        }
        for (c, (pa, pb)) in fa.iter().zip(fb).enumerate() {
            if pa.len() != pb.len() || pa.first().map(Vec::len) != pb.first().map(Vec::len) {
                return Err(format!("spatial size mismatch at level position {pos}"));
            }
            for (y, (ra, rb)) in pa.iter().zip(pb).enumerate() {
                for (x, (&va, &vb)) in ra.iter().zip(rb).enumerate() {
                    let abs = (va - vb).abs();
                    let denom = va.abs().max(vb.abs());
                    let rel = if denom == 0.0 { 0.0 } else { abs / denom };
                    if abs > max_abs {
                        max_abs = abs;
                        argmax = [pos, c, y, x];
                    }
                    if rel > max_rel {
                        max_rel = rel;
                    }
                }
            }
        }
    }
    Ok(DiffReport {
        max_abs,
        max_rel,
        argmax_index: argmax,
        passed: max_abs <= abs_tol && max_rel <= rel_tol,
    })
}
