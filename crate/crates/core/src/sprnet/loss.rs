use super::{sign, SprError};
use crate::nn::{Graph, NnError, Tensor, Unary};

/// Floor on |y| inside `ln|y|`, response units.
pub const EPS_Y: f64 = 1e-6;

/// Weights of one gated fusion step. Convolution kernels are
/// `[C x C x k]`, the conditioning matrix is `[C x F]`.
pub struct FusionWeights<'a, V> {
    pub filter: &'a V,
    pub filter_bias: Option<&'a V>,
    pub gate: &'a V,
    pub gate_bias: Option<&'a V>,
    pub cond: &'a V,
    pub cond_bias: &'a V,
}

/// `tanh(W_f * z) . sigma(W_g * z) . sigma(W_c b)`, the vector factor
/// broadcast over time.
pub fn gated_fusion<G: Graph>(
    g: &mut G,
    z: &G::V,
    b: &G::V,
    w: &FusionWeights<'_, G::V>,
    dilation: usize,
) -> Result<G::V, NnError> {
    let f = g.conv1d(z, w.filter, w.filter_bias, dilation)?;
    let gt = g.conv1d(z, w.gate, w.gate_bias, dilation)?;
    let c = g.dense(w.cond, b, w.cond_bias)?;
    let f = g.tanh(&f);
    let gt = g.sigmoid(&gt);
    let c = g.sigmoid(&c);
    let u = g.mul(&f, &gt)?;
    g.mul_rows(&u, &c)
}

/// Combined probabilistic objective `L_d + w_u L_u` for one sample of
/// shape `[channels x T]`. `eps[c]` is the |y| floor of channel `c` in the
/// units of `y`.
pub fn probabilistic_loss<G: Graph>(
    g: &mut G,
    alpha: &G::V,
    beta: &G::V,
    y: &Tensor,
    eps: &[f64],
    w_u: f64,
) -> Result<G::V, NnError> {
    let shape = y.shape();
    if g.value(alpha).shape() != shape || g.value(beta).shape() != shape || shape.len() != 2 || shape[0] != eps.len() {
        return Err(NnError::Shape(format!(
            "probabilistic loss: alpha {:?}, beta {:?}, y {:?}, {} floors",
            g.value(alpha).shape(),
            g.value(beta).shape(),
            shape,
            eps.len()
        )));
    }
    let a2 = g.unary(alpha, Unary::SquareFloor(1e-8));
    let b2 = g.unary(beta, Unary::Square);
    let s = g.add(&a2, &b2)?;
    let ln_a2 = g.unary(&a2, Unary::Ln);
    let ln_s = g.unary(&s, Unary::Ln);
    let half_ln_s = g.scale(&ln_s, 0.5);
    let mu = g.sub(&ln_a2, &half_ln_s)?;
    let r = g.div(&b2, &a2)?;
    let r1 = g.add_scalar(&r, 1.0);
    let var = g.unary(&r1, Unary::Ln);

    let signs = g.value(alpha).map(sign);
    let med = g.unary(&mu, Unary::Exp);
    let med = g.mul_const(&med, &signs)?;
    let l_d = g.mse(&med, y)?;

    let mut ly = y.clone();
    for (c, row) in ly.data_mut().chunks_mut(shape[1]).enumerate() {
        row.iter_mut().for_each(|v| *v = v.abs().max(eps[c]).ln());
    }
    let ly = g.input(ly);
    let d = g.sub(&ly, &mu)?;
    let d2 = g.unary(&d, Unary::Square);
    let two_var = g.scale(&var, 2.0);
    let quad = g.div(&d2, &two_var)?;
    let ln_var = g.unary(&var, Unary::Ln);
    let ln_sigma = g.scale(&ln_var, 0.5);
    let nll = g.add(&ln_sigma, &quad)?;
    let l_u = g.mean(&nll);

    let l_u = g.scale(&l_u, w_u);
    g.add(&l_d, &l_u)
}

/// Mean of `ln sigma + (ln|y| - mu)^2 / (2 sigma^2)` with |y| floored at
/// [`EPS_Y`].
pub fn nll_uncertainty_loss(y: &[f64], mu: &[f64], sigma: &[f64]) -> Result<f64, SprError> {
    if y.len() != mu.len() || y.len() != sigma.len() || y.is_empty() {
        return Err(NnError::Shape(format!("nll: {} / {} / {} values", y.len(), mu.len(), sigma.len())).into());
    }
    if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(SprError::Config(format!("sigma must be positive, got {s}")));
    }
    let total: f64 = y
        .iter()
        .zip(mu)
        .zip(sigma)
        .map(|((y, m), s)| {
            let d = y.abs().max(EPS_Y).ln() - m;
            s.ln() + d * d / (2.0 * s * s)
        })
        .sum();
    Ok(total / y.len() as f64)
}

/// Mean of `(exp(mu) sign(alpha) - y)^2`.
pub fn median_data_loss(y: &[f64], mu: &[f64], alpha: &[f64]) -> Result<f64, SprError> {
    if y.len() != mu.len() || y.len() != alpha.len() || y.is_empty() {
        return Err(NnError::Shape(format!("median loss: {} / {} / {} values", y.len(), mu.len(), alpha.len())).into());
    }
    let total: f64 = y
        .iter()
        .zip(mu)
        .zip(alpha)
        .map(|((y, m), a)| (m.exp() * sign(*a) - y).powi(2))
        .sum();
    Ok(total / y.len() as f64)
}
