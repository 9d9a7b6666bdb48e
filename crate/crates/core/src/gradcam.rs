//! Class activation maps from exported activation and derivative tensors.
//!
//! The module is a pure function of the supplied tensors: activations
//! `A^k` of the last convolutional layer and the first, second and third
//! derivatives of the class score with respect to them. How the exporter
//! obtains higher-order derivatives is its own business.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::LogitMap;

/// `k` row-major planes of `u x v` finite values, tagged with a derivative
/// order (0 for activations).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorStack {
    order: u8,
    k: usize,
    u: usize,
    v: usize,
    data: Vec<f32>,
}

impl TensorStack {
    pub fn new(order: u8, k: usize, u: usize, v: usize, data: Vec<f32>) -> Result<Self> {
        if order > 3 {
            return Err(Error::DimensionMismatch(format!(
                "derivative order {order} is not in 0..=3"
            )));
        }
        if k == 0 || u == 0 || v == 0 {
            return Err(Error::DimensionMismatch(format!(
                "stack dimensions must be positive, got k={k} u={u} v={v}"
            )));
        }
        let expected = k
            .checked_mul(u)
            .and_then(|n| n.checked_mul(v))
            .ok_or_else(|| Error::DimensionMismatch("stack size overflows".into()))?;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(TensorStack {
            order,
            k,
            u,
            v,
            data,
        })
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn u(&self) -> usize {
        self.u
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, k: usize) -> &[f32] {
        let n = self.u * self.v;
        &self.data[k * n..(k + 1) * n]
    }

    fn planes(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.u * self.v)
    }

    fn same_shape(&self, other: &TensorStack) -> bool {
        (self.k, self.u, self.v) == (other.k, other.u, other.v)
    }
}

/// Feature maps `A^k` of the final convolutional layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack(TensorStack);

impl FeatureStack {
    pub fn new(k: usize, u: usize, v: usize, data: Vec<f32>) -> Result<Self> {
        TensorStack::new(0, k, u, v, data).map(FeatureStack)
    }

    pub fn as_stack(&self) -> &TensorStack {
        &self.0
    }
}

impl TryFrom<TensorStack> for FeatureStack {
    type Error = Error;

    fn try_from(stack: TensorStack) -> Result<Self> {
        if stack.order != 0 {
            return Err(Error::WrongOrder {
                expected: 0,
                actual: stack.order,
            });
        }
        Ok(FeatureStack(stack))
    }
}

/// `n`-th derivatives of the class score with respect to each `A^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientStack(TensorStack);

impl GradientStack {
    pub fn new(order: u8, k: usize, u: usize, v: usize, data: Vec<f32>) -> Result<Self> {
        if !(1..=3).contains(&order) {
            return Err(Error::WrongOrder {
                expected: 1,
                actual: order,
            });
        }
        TensorStack::new(order, k, u, v, data).map(GradientStack)
    }

    pub fn order(&self) -> u8 {
        self.0.order
    }

    pub fn as_stack(&self) -> &TensorStack {
        &self.0
    }

    fn expect_order(&self, expected: u8) -> Result<&TensorStack> {
        if self.0.order != expected {
            return Err(Error::WrongOrder {
                expected,
                actual: self.0.order,
            });
        }
        Ok(&self.0)
    }
}

impl TryFrom<TensorStack> for GradientStack {
    type Error = Error;

    fn try_from(stack: TensorStack) -> Result<Self> {
        if !(1..=3).contains(&stack.order) {
            return Err(Error::WrongOrder {
                expected: 1,
                actual: stack.order,
            });
        }
        Ok(GradientStack(stack))
    }
}

/// One scalar weight per feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImportanceWeights(Vec<f64>);

impl ImportanceWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::DimensionMismatch("no importance weights".into()));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(ImportanceWeights(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Which importance score feeds the map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CamVariant {
    GradCam,
    #[serde(rename = "gradcampp")]
    GradCamPlusPlus,
}

/// Grad-CAM weights: the global average of each gradient plane.
pub fn gradcam_weights(grads: &GradientStack) -> Result<ImportanceWeights> {
    let g = grads.expect_order(1)?;
    let n = (g.u * g.v) as f64;
    let weights = g
        .planes()
        .map(|plane| plane.iter().map(|&x| x as f64).sum::<f64>() / n)
        .collect();
    ImportanceWeights::new(weights)
}

/// Grad-CAM++ weights.
///
/// Per pixel, `a_ij = g2_ij / (2 g2_ij + S_k g3_ij)` where `S_k` is the sum of
/// activation plane `k`; pixels with a zero denominator get `a_ij = 0`. The
/// weight of map `k` is `sum_ij a_ij * relu(g1_ij)`.
pub fn gradcampp_weights(
    acts: &FeatureStack,
    g1: &GradientStack,
    g2: &GradientStack,
    g3: &GradientStack,
) -> Result<ImportanceWeights> {
    let a = &acts.0;
    let (g1, g2, g3) = (g1.expect_order(1)?, g2.expect_order(2)?, g3.expect_order(3)?);
    for g in [g1, g2, g3] {
        if !a.same_shape(g) {
            return Err(Error::DimensionMismatch(format!(
                "activations are {}x{}x{}, order-{} derivatives are {}x{}x{}",
                a.k, a.u, a.v, g.order, g.k, g.u, g.v
            )));
        }
    }
    let mut weights = Vec::with_capacity(a.k);
    for k in 0..a.k {
        let plane_sum: f64 = a.plane(k).iter().map(|&x| x as f64).sum();
        let mut w = 0.0f64;
        for ((&d1, &d2), &d3) in g1.plane(k).iter().zip(g2.plane(k)).zip(g3.plane(k)) {
            let (d2, d3) = (d2 as f64, d3 as f64);
            let denom = 2.0 * d2 + plane_sum * d3;
            if denom == 0.0 {
                continue;
            }
            w += (d2 / denom) * (d1 as f64).max(0.0);
        }
        weights.push(w);
    }
    ImportanceWeights::new(weights)
}

/// Bilinear resize with corner-aligned sampling: output pixel `(i, j)` reads
/// source coordinate `(i (u-1)/(h-1), j (v-1)/(w-1))`. A length-1 output axis
/// samples source index 0.
pub fn resize_bilinear(src: &[f64], u: usize, v: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    debug_assert_eq!(src.len(), u * v);
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (pos.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|j| coord(j, out_w, v)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let (r0, r1, fy) = coord(i, out_h, u);
        for &(c0, c1, fx) in &cols {
            let top = src[r0 * v + c0] * (1.0 - fx) + src[r0 * v + c1] * fx;
            let bottom = src[r1 * v + c0] * (1.0 - fx) + src[r1 * v + c1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Min-max rescale to `[0, 1]`; a constant input becomes all zeros.
fn min_max_rescale(height: usize, width: usize, values: &[f64]) -> Result<LogitMap> {
    if let Some(i) = values.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let range = hi - lo;
    if !range.is_finite() || range <= 0.0 {
        return LogitMap::zeros(height, width);
    }
    let scaled = values
        .iter()
        .map(|&x| (((x - lo) / range) as f32).clamp(0.0, 1.0))
        .collect();
    LogitMap::new(height, width, scaled)
}

/// `relu(sum_k w_k A^k)`, resized to `out_h x out_w` and min-max rescaled.
pub fn cam_map(
    acts: &FeatureStack,
    weights: &ImportanceWeights,
    out_h: usize,
    out_w: usize,
) -> Result<LogitMap> {
    let a = &acts.0;
    if weights.len() != a.k {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} feature maps",
            weights.len(),
            a.k
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::EmptyDimensions {
            height: out_h,
            width: out_w,
        });
    }
    let mut raw = vec![0.0f64; a.u * a.v];
    for (plane, &w) in a.planes().zip(weights.as_slice()) {
        for (acc, &x) in raw.iter_mut().zip(plane) {
            *acc += w * x as f64;
        }
    }
    for x in &mut raw {
        *x = x.max(0.0);
    }
    let resized = resize_bilinear(&raw, a.u, a.v, out_h, out_w);
    min_max_rescale(out_h, out_w, &resized)
}

/// Pixelwise mean of maps (e.g. noise-perturbed reruns), min-max rescaled.
pub fn smooth_average(maps: &[LogitMap]) -> Result<LogitMap> {
    let first = maps.first().ok_or(Error::NoMaps)?;
    let (h, w) = first.dims();
    let mut acc = vec![0.0f64; h * w];
    for m in maps {
        if m.dims() != (h, w) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                h,
                w,
                m.height(),
                m.width()
            )));
        }
        for (a, &x) in acc.iter_mut().zip(m.values()) {
            *a += x as f64;
        }
    }
    let n = maps.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    min_max_rescale(h, w, &acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grads(order: u8, k: usize, u: usize, v: usize, data: Vec<f32>) -> GradientStack {
        GradientStack::new(order, k, u, v, data).unwrap()
    }

    #[test]
    fn gradcam_weight_examples() {
        let w = gradcam_weights(&grads(1, 1, 2, 2, vec![1.0; 4])).unwrap();
        assert_eq!(w.as_slice(), &[1.0]);
        let w = gradcam_weights(&grads(1, 1, 2, 2, vec![1.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(w.as_slice(), &[0.25]);
        let mut data = vec![2.0; 4];
        data.extend([-2.0; 4]);
        let w = gradcam_weights(&grads(1, 2, 2, 2, data)).unwrap();
        assert_eq!(w.as_slice(), &[2.0, -2.0]);
    }

    #[test]
    fn gradcam_weights_reject_wrong_order() {
        let g2 = grads(2, 1, 1, 1, vec![1.0]);
        assert!(matches!(
            gradcam_weights(&g2),
            Err(Error::WrongOrder {
                expected: 1,
                actual: 2
            })
        ));
    }

    #[test]
    fn stack_construction_errors() {
        assert!(matches!(
            FeatureStack::new(1, 2, 2, vec![0.0; 3]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            FeatureStack::new(1, 1, 1, vec![f32::NAN]),
            Err(Error::NonFinite(0))
        ));
        assert!(FeatureStack::new(0, 1, 1, vec![]).is_err());
        assert!(GradientStack::new(0, 1, 1, 1, vec![0.0]).is_err());
        let t = TensorStack::new(2, 1, 1, 1, vec![1.0]).unwrap();
        assert!(FeatureStack::try_from(t.clone()).is_err());
        assert_eq!(GradientStack::try_from(t).unwrap().order(), 2);
    }

    #[test]
    fn gradcampp_single_pixel() {
        let acts = FeatureStack::new(1, 1, 1, vec![2.0]).unwrap();
        let w = gradcampp_weights(
            &acts,
            &grads(1, 1, 1, 1, vec![1.0]),
            &grads(2, 1, 1, 1, vec![1.0]),
            &grads(3, 1, 1, 1, vec![1.0]),
        )
        .unwrap();
        assert_eq!(w.as_slice(), &[0.25]);
    }

    #[test]
    fn gradcampp_degenerate_cases() {
        let acts = FeatureStack::new(2, 2, 2, vec![1.0; 8]).unwrap();
        let w = gradcampp_weights(
            &acts,
            &grads(1, 2, 2, 2, vec![1.0; 8]),
            &grads(2, 2, 2, 2, vec![0.0; 8]),
            &grads(3, 2, 2, 2, vec![0.0; 8]),
        )
        .unwrap();
        assert_eq!(w.as_slice(), &[0.0, 0.0]);

        let w = gradcampp_weights(
            &acts,
            &grads(1, 2, 2, 2, vec![-3.0; 8]),
            &grads(2, 2, 2, 2, vec![0.7; 8]),
            &grads(3, 2, 2, 2, vec![0.2; 8]),
        )
        .unwrap();
        assert_eq!(w.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn gradcampp_checks_orders_and_shapes() {
        let acts = FeatureStack::new(1, 1, 1, vec![2.0]).unwrap();
        let g = grads(1, 1, 1, 1, vec![1.0]);
        assert!(matches!(
            gradcampp_weights(&acts, &g, &g, &g),
            Err(Error::WrongOrder { expected: 2, .. })
        ));
        let wide = grads(2, 1, 1, 2, vec![1.0, 1.0]);
        let g3 = grads(3, 1, 1, 1, vec![1.0]);
        assert!(matches!(
            gradcampp_weights(&acts, &g, &wide, &g3),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn cam_map_examples() {
        let acts = FeatureStack::new(1, 2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let m = cam_map(&acts, &ImportanceWeights::new(vec![1.0]).unwrap(), 2, 2).unwrap();
        assert_eq!(m.values(), &[1.0, 0.0, 0.0, 0.0]);

        let positive = FeatureStack::new(1, 2, 2, vec![0.3, 1.0, 2.0, 0.5]).unwrap();
        let m = cam_map(&positive, &ImportanceWeights::new(vec![-1.0]).unwrap(), 4, 4).unwrap();
        assert!(m.values().iter().all(|&x| x == 0.0));

        let two = FeatureStack::new(2, 2, 2, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let m = cam_map(&two, &ImportanceWeights::new(vec![1.0, 1.0]).unwrap(), 2, 2).unwrap();
        assert_eq!(m.values(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn cam_map_upsamples_bilinearly() {
        // 1x2 source [0, 1] to 1x3: midpoint interpolates to 0.5.
        let acts = FeatureStack::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        let m = cam_map(&acts, &ImportanceWeights::new(vec![1.0]).unwrap(), 1, 3).unwrap();
        assert_eq!(m.values(), &[0.0, 0.5, 1.0]);
        // 2x2 to 3x3: center is the mean of the four corners.
        let acts = FeatureStack::new(1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let m = cam_map(&acts, &ImportanceWeights::new(vec![1.0]).unwrap(), 3, 3).unwrap();
        assert!((m.get(1, 1) - 0.5).abs() < 1e-7);
        assert_eq!(m.get(2, 2), 1.0);
    }

    #[test]
    fn cam_map_errors() {
        let acts = FeatureStack::new(2, 1, 1, vec![1.0, 1.0]).unwrap();
        let w = ImportanceWeights::new(vec![1.0]).unwrap();
        assert!(matches!(cam_map(&acts, &w, 2, 2), Err(Error::DimensionMismatch(_))));
        let w2 = ImportanceWeights::new(vec![1.0, 1.0]).unwrap();
        assert!(cam_map(&acts, &w2, 0, 2).is_err());
    }

    #[test]
    fn smooth_average_examples() {
        let m = LogitMap::new(1, 3, vec![0.2, 0.4, 0.6]).unwrap();
        let expect = [0.0f32, 0.5, 1.0];
        for input in [vec![m.clone()], vec![m.clone(), m.clone()]] {
            let out = smooth_average(&input).unwrap();
            for (a, b) in out.values().iter().zip(expect) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        let a = LogitMap::new(1, 2, vec![1.0, 0.0]).unwrap();
        let b = LogitMap::new(1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(smooth_average(&[a, b]).unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn smooth_average_errors() {
        assert!(matches!(smooth_average(&[]), Err(Error::NoMaps)));
        let a = LogitMap::zeros(1, 2).unwrap();
        let b = LogitMap::zeros(2, 1).unwrap();
        assert!(matches!(
            smooth_average(&[a, b]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    fn arb_stack(order: u8) -> impl Strategy<Value = TensorStack> {
        (1usize..4, 1usize..6, 1usize..6).prop_flat_map(move |(k, u, v)| {
            proptest::collection::vec(-5.0f32..5.0, k * u * v)
                .prop_map(move |d| TensorStack::new(order, k, u, v, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn cam_map_output_is_valid(s in arb_stack(0), ws in proptest::collection::vec(-3.0f64..3.0, 3),
                                   h in 1usize..9, w in 1usize..9) {
            let k = s.k();
            let acts = FeatureStack::try_from(s).unwrap();
            let weights = ImportanceWeights::new(ws.into_iter().cycle().take(k).collect()).unwrap();
            let m = cam_map(&acts, &weights, h, w).unwrap();
            prop_assert_eq!(m.dims(), (h, w));
            prop_assert!(m.values().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn resize_to_same_size_is_identity(u in 1usize..8, v in 1usize..8, seed in proptest::collection::vec(-10.0f64..10.0, 64)) {
            let src: Vec<f64> = seed.into_iter().take(u * v).chain(std::iter::repeat(0.0)).take(u * v).collect();
            prop_assert_eq!(resize_bilinear(&src, u, v, u, v), src);
        }

        #[test]
        fn single_map_unit_weight_is_rescaled_relu(s in arb_stack(0)) {
            let (u, v) = (s.u(), s.v());
            let plane: Vec<f32> = s.plane(0).to_vec();
            let acts = FeatureStack::new(1, u, v, plane.clone()).unwrap();
            let m = cam_map(&acts, &ImportanceWeights::new(vec![1.0]).unwrap(), u, v).unwrap();
            let relu: Vec<f64> = plane.iter().map(|&x| (x as f64).max(0.0)).collect();
            let hi = relu.iter().cloned().fold(0.0, f64::max);
            let lo = relu.iter().cloned().fold(f64::INFINITY, f64::min);
            for (got, r) in m.values().iter().zip(&relu) {
                let want = if hi > lo { (r - lo) / (hi - lo) } else { 0.0 };
                prop_assert!((*got as f64 - want).abs() < 1e-6);
            }
        }

        #[test]
        fn smooth_average_is_permutation_invariant(vals in proptest::collection::vec(0.0f32..=1.0, 12)) {
            let maps: Vec<_> = vals.chunks(4).map(|c| LogitMap::new(2, 2, c.to_vec()).unwrap()).collect();
            let mut rev = maps.clone();
            rev.reverse();
            let a = smooth_average(&maps).unwrap();
            let b = smooth_average(&rev).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
