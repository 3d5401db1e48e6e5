//! Conversions from the library's flat tensors into the reference crate's
//! nested-Vec layout.

use smsl_core::neck::{LevelSet, SmslParams};
use smsl_core::Tensor;
use smsl_oracle::{Branch, FeatureMap, Levels, Matrix, Params};

pub fn tensor_to_map(t: &Tensor<f64>) -> FeatureMap {
    let &[c, h, w] = t.shape() else {
        panic!("expected a [c,h,w] tensor, got {:?}", t.shape())
    };
    (0..c)
        .map(|ci| {
            (0..h)
                .map(|y| (0..w).map(|x| t.data()[(ci * h + y) * w + x]).collect())
                .collect()
        })
        .collect()
}

pub fn tensor_to_matrix(t: &Tensor<f64>) -> Matrix {
    let &[r, c] = t.shape() else {
        panic!("expected a [rows,cols] tensor, got {:?}", t.shape())
    };
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

/// Flatten a `[out, in, 1, 1]` projection into `[out][in]`.
pub fn projection_to_matrix(t: &Tensor<f64>) -> Matrix {
    let &[o, i, 1, 1] = t.shape() else {
        panic!("expected a 1x1 conv weight, got {:?}", t.shape())
    };
    (0..o).map(|oc| t.data()[oc * i..(oc + 1) * i].to_vec()).collect()
}

pub fn levels_to_oracle(levels: &LevelSet<f64>) -> Levels {
    Levels {
        l_min: levels.l_min(),
        features: levels.features().iter().map(tensor_to_map).collect(),
    }
}

fn branch_to_oracle(b: &smsl_core::neck::SfcBranchParams<f64>) -> Branch {
    Branch {
        w: tensor_to_matrix(&b.w),
        ln_gamma: b.ln_gamma.data().to_vec(),
        ln_beta: b.ln_beta.data().to_vec(),
        v: tensor_to_matrix(&b.v),
    }
}

pub fn params_to_oracle(params: &SmslParams<f64>) -> Params {
    Params {
        w1: tensor_to_matrix(&params.cr.w1),
        w2: tensor_to_matrix(&params.cr.w2),
        local_branches: params.sfc_local.iter().map(branch_to_oracle).collect(),
        global_branch: branch_to_oracle(&params.sfc_global),
        theta: projection_to_matrix(&params.nonlocal.theta),
        phi: projection_to_matrix(&params.nonlocal.phi),
        g_proj: projection_to_matrix(&params.nonlocal.g),
        w_z: projection_to_matrix(&params.nonlocal.w_z),
    }
}
