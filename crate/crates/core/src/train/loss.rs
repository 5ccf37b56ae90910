use crate::error::{Error, Result};
use crate::tensor::{concat, Real, Var};

/// Weights of the reconstruction loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_perceptual: f64,
    /// Adds the perceptual hook when one is supplied.
    pub perceptual: bool,
    /// Adds the image-gradient MAE term.
    pub gradient: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_perceptual: 0.05,
            perceptual: false,
            gradient: true,
        }
    }
}

/// Optional learned perceptual distance between two images.
pub trait PerceptualLoss<T: Real> {
    fn distance<'t>(&self, pred: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>>;
}

/// Loss value and its parts.
#[derive(Debug, Clone, Copy)]
pub struct LossParts<'t, T: Real> {
    pub total: Var<'t, T>,
    pub mse: f64,
    pub grad_mae: f64,
    pub perceptual: f64,
}

/// Forward differences along x and y of `[..,H,W,C]`, zero in the last
/// column (for x) and last row (for y).
pub fn image_gradient<'t, T: Real>(img: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let s = img.shape();
    let r = s.len();
    if r < 3 || s[r - 3] < 2 || s[r - 2] < 2 {
        return Err(Error::contract("image_gradient", format!("need [..,H,W,C] with H,W >= 2, got {s:?}")));
    }
    let diff = |axis: usize| -> Result<Var<'t, T>> {
        let n = s[axis];
        let d = img.narrow(axis, 1, n - 1)?.sub(img.narrow(axis, 0, n - 1)?)?;
        let mut pad = s.clone();
        pad[axis] = 1;
        concat(&[d, img.tape().constant(crate::tensor::Tensor::zeros(&pad))], axis)
    };
    Ok((diff(r - 2)?, diff(r - 3)?))
}

/// `MSE + λ·perceptual + MAE(∇pred, ∇target)` with terms toggled by `weights`.
pub fn reconstruction_loss<'t, T: Real>(
    pred: Var<'t, T>,
    target: Var<'t, T>,
    weights: &LossWeights,
    hook: Option<&dyn PerceptualLoss<T>>,
) -> Result<LossParts<'t, T>> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("reconstruction_loss", &pred.shape(), &target.shape()));
    }
    let diff = pred.sub(target)?;
    let mse = diff.square()?.mean()?;
    let mut total = mse;
    let mut grad_mae = 0.0;
    if weights.gradient {
        let (px, py) = image_gradient(pred)?;
        let (tx, ty) = image_gradient(target)?;
        let mae = px.sub(tx)?.abs()?.mean()?.add(py.sub(ty)?.abs()?.mean()?)?.scale(T::of(0.5))?;
        grad_mae = mae.item().f64();
        total = total.add(mae)?;
    }
    let mut perceptual = 0.0;
    if let (true, Some(h)) = (weights.perceptual, hook) {
        let p = h.distance(pred, target)?;
        perceptual = p.item().f64();
        total = total.add(p.scale(T::of(weights.lambda_perceptual))?)?;
    }
    Ok(LossParts {
        total,
        mse: mse.item().f64(),
        grad_mae,
        perceptual,
    })
}
