//! Evaluation metrics: ROC AUC, accuracy, PSNR and SSIM.

mod auc;
mod image;

pub use auc::{accuracy, roc_auc};
pub use image::{psnr, ssim, SsimParams};

use serde::{Deserialize, Serialize};

/// One evaluation's outcome; fields are `None` where the task does not apply
/// (classification-only models report no PSNR/SSIM and vice versa).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: Option<f64>,
    pub accuracy: Option<f64>,
    /// `inf` marks exact reconstruction; serialized as the string `"inf"`.
    #[serde(with = "psnr_serde")]
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub localization_energy: Option<f64>,
    pub n_samples: usize,
}

impl MetricsReport {
    pub fn empty() -> Self {
        MetricsReport {
            auc: None,
            accuracy: None,
            psnr_db: None,
            ssim: None,
            localization_energy: None,
            n_samples: 0,
        }
    }
}

/// PSNR's infinite marker is not representable in JSON numbers; encode it as
/// the string "inf".
mod psnr_serde {
    use serde::de::Error as DeError;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_infinite() => s.serialize_str("inf"),
            Some(x) => s.serialize_f64(*x),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        let raw = Option::<serde_json::Value>::deserialize(d)?;
        match raw {
            None | Some(serde_json::Value::Null) => Ok(None),
            Some(serde_json::Value::String(s)) if s == "inf" => Ok(Some(f64::INFINITY)),
            Some(serde_json::Value::Number(n)) => {
                n.as_f64().map(Some).ok_or_else(|| D::Error::custom("bad psnr number"))
            }
            Some(other) => Err(D::Error::custom(format!("bad psnr value {other}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_inf_roundtrips_as_string() {
        let mut r = MetricsReport::empty();
        r.psnr_db = Some(f64::INFINITY);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"inf\""));
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.psnr_db, Some(f64::INFINITY));

        r.psnr_db = Some(20.0);
        let back: MetricsReport =
            serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back.psnr_db, Some(20.0));
    }
}
