//! The atmospheric scattering model: `I = J·t + A·(1 − t)` with `t = exp(−β·d)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_tensor::ImageTensor;

/// Floor applied to the transmission before dividing in [`recover_clear`].
pub const TRANSMISSION_FLOOR: f32 = 0.05;

/// Per-pixel transmission, every value in (0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct TransmissionMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl TransmissionMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::invalid(format!(
                "transmission data length {} does not match {height}×{width}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
            return Err(Error::invalid(format!("transmission value {bad} outside (0,1]")));
        }
        Ok(Self { height, width, data })
    }

    /// The same transmission everywhere (homogeneous scene depth).
    pub fn constant(height: usize, width: usize, t: f32) -> Result<Self> {
        Self::new(height, width, vec![t; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    fn require_matches(&self, img: &ImageTensor) -> Result<()> {
        if (self.height, self.width) != (img.height(), img.width()) {
            return Err(Error::invalid(format!(
                "shape mismatch: transmission {}×{} vs image {}×{}×{}",
                self.height,
                self.width,
                img.height(),
                img.width(),
                img.channels()
            )));
        }
        Ok(())
    }
}

/// Global airlight color, each component in [0,1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtmosphericLight(pub [f32; 3]);

impl AtmosphericLight {
    pub fn new(a: [f32; 3]) -> Result<Self> {
        if a.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!("atmospheric light {a:?} outside [0,1]")));
        }
        Ok(Self(a))
    }

    pub fn gray(v: f32) -> Result<Self> {
        Self::new([v; 3])
    }

    fn per_channel(&self, channels: usize) -> Result<[f32; 3]> {
        if channels == 1 && (self.0[0] != self.0[1] || self.0[1] != self.0[2]) {
            return Err(Error::invalid(
                "single-channel images need a scalar (gray) atmospheric light",
            ));
        }
        Ok(self.0)
    }
}

/// Scene depth, every value ≥ 0.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::invalid(format!(
                "depth data length {} does not match {height}×{width}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|&&d| !(d >= 0.0 && d.is_finite())) {
            return Err(Error::invalid(format!("depth value {bad} is negative or non-finite")));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Divides by the maximum depth so values lie in [0,1]; an all-zero map is unchanged.
    pub fn normalized(&self) -> Self {
        let max = self.data.iter().copied().fold(0.0f32, f32::max);
        if max <= 0.0 {
            return self.clone();
        }
        Self {
            data: self.data.iter().map(|d| d / max).collect(),
            ..self.clone()
        }
    }
}

/// Renders haze onto a clean image: `I = J·t + A·(1 − t)`, clamped to [0,1].
pub fn synthesize_haze(clean: &ImageTensor, t: &TransmissionMap, light: &AtmosphericLight) -> Result<ImageTensor> {
    t.require_matches(clean)?;
    let a = light.per_channel(clean.channels())?;
    let c = clean.channels();
    let data = clean
        .data()
        .chunks(c)
        .zip(t.data())
        .flat_map(|(px, &tv)| {
            px.iter()
                .enumerate()
                .map(move |(ch, &j)| (j as f64 * tv as f64 + a[ch] as f64 * (1.0 - tv as f64)) as f32)
        })
        .collect();
    ImageTensor::from_vec_clamped(clean.height(), clean.width(), c, data)
}

/// `t = exp(−β·d)`.
pub fn transmission_from_depth(depth: &DepthMap, beta: f64) -> Result<TransmissionMap> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("scattering coefficient must be > 0, got {beta}")));
    }
    let data = depth
        .data()
        .iter()
        .map(|&d| ((-beta * d as f64).exp() as f32).max(f32::MIN_POSITIVE))
        .collect();
    TransmissionMap::new(depth.height(), depth.width(), data)
}

/// Inverts the scattering model: `J = (I − A) / max(t, 0.05) + A`, clamped to [0,1].
pub fn recover_clear(hazy: &ImageTensor, t: &TransmissionMap, light: &AtmosphericLight) -> Result<ImageTensor> {
    t.require_matches(hazy)?;
    let a = light.per_channel(hazy.channels())?;
    let c = hazy.channels();
    let data = hazy
        .data()
        .chunks(c)
        .zip(t.data())
        .flat_map(|(px, &tv)| {
            let tv = tv.max(TRANSMISSION_FLOOR) as f64;
            px.iter()
                .enumerate()
                .map(move |(ch, &i)| ((i as f64 - a[ch] as f64) / tv + a[ch] as f64) as f32)
        })
        .collect();
    ImageTensor::from_vec_clamped(hazy.height(), hazy.width(), c, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(v: f32) -> ImageTensor {
        ImageTensor::filled(2, 3, 3, v)
    }

    #[test]
    fn unit_transmission_leaves_image_unchanged() {
        let j = ImageTensor::new(1, 2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let t = TransmissionMap::constant(1, 2, 1.0).unwrap();
        let a = AtmosphericLight::new([0.8, 0.9, 1.0]).unwrap();
        assert_eq!(synthesize_haze(&j, &t, &a).unwrap(), j);
        assert_eq!(recover_clear(&j, &t, &a).unwrap(), j);
    }

    #[test]
    fn opaque_haze_yields_airlight() {
        // t = 0 is outside the TransmissionMap invariant, so build the limit by hand.
        let t = TransmissionMap {
            height: 2,
            width: 3,
            data: vec![0.0; 6],
        };
        let a = AtmosphericLight::new([0.7, 0.8, 0.9]).unwrap();
        let out = synthesize_haze(&img(0.3), &t, &a).unwrap();
        for px in out.data().chunks(3) {
            assert_eq!(px, &[0.7, 0.8, 0.9]);
        }
    }

    #[test]
    fn scalar_examples() {
        let t = TransmissionMap::constant(2, 3, 0.5).unwrap();
        let a = AtmosphericLight::gray(1.0).unwrap();
        let hazy = synthesize_haze(&img(0.5), &t, &a).unwrap();
        assert!(hazy.data().iter().all(|&v| (v - 0.75).abs() < 1e-7));
        let back = recover_clear(&img(0.75), &t, &a).unwrap();
        assert!(back.data().iter().all(|&v| (v - 0.5).abs() < 1e-7));

        let depth = DepthMap::new(1, 1, vec![1.0]).unwrap();
        let tm = transmission_from_depth(&depth, std::f64::consts::LN_2).unwrap();
        assert!((tm.data()[0] - 0.5).abs() < 1e-7);
        let depth = DepthMap::new(1, 1, vec![2.0]).unwrap();
        let tm = transmission_from_depth(&depth, 0.6).unwrap();
        assert!((tm.data()[0] - 0.301_194_2).abs() < 1e-6);
        let zero = DepthMap::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(transmission_from_depth(&zero, 1.3).unwrap().data().iter().all(|&t| t == 1.0));
    }

    #[test]
    fn errors() {
        let t = TransmissionMap::constant(3, 3, 0.5).unwrap();
        let a = AtmosphericLight::gray(1.0).unwrap();
        let err = synthesize_haze(&img(0.5), &t, &a).unwrap_err().to_string();
        assert!(err.contains("3×3") && err.contains("2×3"), "{err}");
        assert!(recover_clear(&img(0.5), &t, &a).is_err());
        let depth = DepthMap::new(1, 1, vec![1.0]).unwrap();
        assert!(transmission_from_depth(&depth, 0.0).is_err());
        assert!(transmission_from_depth(&depth, -1.0).is_err());
        assert!(DepthMap::new(1, 1, vec![-0.1]).is_err());
        let gray = ImageTensor::filled(1, 1, 1, 0.2);
        let t1 = TransmissionMap::constant(1, 1, 0.5).unwrap();
        assert!(synthesize_haze(&gray, &t1, &AtmosphericLight::new([0.7, 0.8, 0.9]).unwrap()).is_err());
        assert!(synthesize_haze(&gray, &t1, &AtmosphericLight::gray(0.8).unwrap()).is_ok());
    }

    #[test]
    fn transmission_decreases_with_beta() {
        let depth = DepthMap::new(1, 3, vec![0.1, 0.5, 1.0]).unwrap();
        let mut prev: Option<Vec<f32>> = None;
        for i in 1..=40 {
            let beta = 0.05 * i as f64;
            let t = transmission_from_depth(&depth, beta).unwrap().data().to_vec();
            if let Some(p) = prev {
                assert!(t.iter().zip(&p).all(|(a, b)| a < b), "beta {beta}");
            }
            prev = Some(t);
        }
    }

    proptest! {
        #[test]
        fn round_trip_recovers_clean_image(
            pixels in prop::collection::vec(0.0f32..=1.0, 4 * 4 * 3),
            ts in prop::collection::vec(0.2f32..=0.9, 16),
            a in prop::array::uniform3(0.7f32..=1.0),
        ) {
            let j = ImageTensor::new(4, 4, 3, pixels).unwrap();
            let t = TransmissionMap::new(4, 4, ts).unwrap();
            let a = AtmosphericLight::new(a).unwrap();
            let i = synthesize_haze(&j, &t, &a).unwrap();
            let back = recover_clear(&i, &t, &a).unwrap();
            for (x, y) in back.data().iter().zip(j.data()) {
                prop_assert!((x - y).abs() <= 1e-5);
            }
        }

        #[test]
        fn outputs_stay_in_unit_range(
            pixels in prop::collection::vec(0.0f32..=1.0, 9 * 3),
            ts in prop::collection::vec(0.001f32..=1.0, 9),
            a in prop::array::uniform3(0.0f32..=1.0),
        ) {
            let j = ImageTensor::new(3, 3, 3, pixels).unwrap();
            let t = TransmissionMap::new(3, 3, ts).unwrap();
            let a = AtmosphericLight::new(a).unwrap();
            let i = synthesize_haze(&j, &t, &a).unwrap();
            let r = recover_clear(&i, &t, &a).unwrap();
            prop_assert!(i.data().iter().chain(r.data()).all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
