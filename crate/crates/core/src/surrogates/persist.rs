//! Text serialization of fitted linear surrogates.

use serde::{Deserialize, Serialize};

use super::features::{FeatureDescriptor, ScalarFn};
use super::fit::{FitKind, LinearSurrogate};
use crate::error::Result;

#[derive(Serialize, Deserialize)]
struct Saved {
    fit: FitKind,
    beta: Vec<f64>,
    features: FeatureDescriptor,
}

impl LinearSurrogate {
    /// TOML document holding the feature descriptor and the coefficients.
    pub fn to_toml(&self) -> Result<String> {
        let saved = Saved {
            fit: self.fit_kind,
            beta: self.beta.iter().copied().collect(),
            features: self.features.descriptor(),
        };
        Ok(toml::to_string(&saved)?)
    }

    /// Inverse of [`LinearSurrogate::to_toml`]. Named stylized features are
    /// looked up with `resolve`.
    pub fn from_toml(text: &str, resolve: &dyn Fn(&str) -> Option<ScalarFn>) -> Result<Self> {
        let saved: Saved = toml::from_str(text)?;
        let features = saved.features.build(resolve)?;
        if features.len() != saved.beta.len() {
            return Err(crate::Error::Parse(format!(
                "{} coefficients for {} features",
                saved.beta.len(),
                features.len()
            )));
        }
        Ok(Self { features, beta: nalgebra::DVector::from_vec(saved.beta), fit_kind: saved.fit })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::sim::Dataset;
    use crate::surrogates::{augment_with_stylized, fit_rls, polynomial_features, rbf_features, RadialKind};

    #[test]
    fn save_load_preserves_predictions() {
        let pts: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64 / 8.0, (i * i) as f64 / 64.0]).collect();
        let ys: Vec<f64> = pts.iter().map(|x| (x[0] * 5.0).sin() + x[1]).collect();
        let ds = Dataset::from_points(&pts, &ys, 0.0).unwrap();
        let psi: ScalarFn = Arc::new(|x: &[f64]| x[0] * x[1]);
        let maps = vec![
            polynomial_features(2, 2).unwrap(),
            rbf_features(pts[..4].to_vec(), RadialKind::Gaussian { eta: 0.3 }).unwrap(),
            rbf_features(pts[..4].to_vec(), RadialKind::ThinPlate).unwrap(),
            augment_with_stylized(polynomial_features(2, 1).unwrap(), "xy", psi.clone()),
        ];
        let resolve = |name: &str| (name == "xy").then(|| psi.clone());
        for f in maps {
            let s = fit_rls(f, &ds, 1e-3).unwrap();
            let text = s.to_toml().unwrap();
            let back = LinearSurrogate::from_toml(&text, &resolve).unwrap();
            for x in &pts {
                assert_eq!(s.predict(x), back.predict(x));
            }
        }
    }
}
