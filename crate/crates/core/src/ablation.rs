//! Component ablation: train several variants with a shared seed and step
//! budget and compare their enhancement quality.

use std::fmt::Write as _;

use serde::Serialize;

use crate::dataset::TrainingPair;
use crate::error::Result;
use crate::losses::LossWeights;
use crate::siam::AttentionMode;
use crate::trainer::{evaluate, run, Pairing, RunOptions, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: TrainConfig,
}

/// The incremental ladder: scene critic only, then object critic, texture
/// critic, ranked window pairing and finally scaled attention.
pub fn ladder(base: &TrainConfig) -> Vec<Variant> {
    let steps: [(&str, [f64; 3], Pairing, AttentionMode); 5] = [
        ("M1", [1.0, 0.0, 0.0], Pairing::Fixed, AttentionMode::Naive),
        ("M2", [1.0, 1.0, 0.0], Pairing::Fixed, AttentionMode::Naive),
        ("M3", [1.0, 1.0, 1.0], Pairing::Fixed, AttentionMode::Naive),
        ("M4", [1.0, 1.0, 1.0], Pairing::Ranked, AttentionMode::Naive),
        ("M5", [1.0, 1.0, 1.0], Pairing::Ranked, AttentionMode::Scaled),
    ];
    steps
        .into_iter()
        .map(|(name, [s, o, t], pairing, attention)| {
            let mut config = base.clone();
            config.weights = LossWeights {
                scene: s * base.weights.scene,
                object: o * base.weights.object,
                texture: t * base.weights.texture,
            };
            config.pairing = pairing;
            config.attention = attention;
            Variant {
                name: name.to_string(),
                config,
            }
        })
        .collect()
}

/// Ladder entries selected by name, in ladder order.
pub fn select(base: &TrainConfig, names: &[String]) -> Result<Vec<Variant>> {
    let all = ladder(base);
    for n in names {
        if !all.iter().any(|v| v.name.eq_ignore_ascii_case(n)) {
            return Err(crate::Error::Config(format!("unknown ablation variant '{n}' (expected M1..M5)")));
        }
    }
    Ok(all
        .into_iter()
        .filter(|v| names.iter().any(|n| v.name.eq_ignore_ascii_case(n)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub ssim: Option<f64>,
    pub psnr: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AblationTable {
    pub baseline_ssim: f64,
    pub baseline_psnr: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Whether SSIM never decreases down the completed rows.
    pub fn is_monotone(&self) -> bool {
        let v: Vec<f64> = self.rows.iter().filter_map(|r| r.ssim).collect();
        v.windows(2).all(|w| w[1] >= w[0])
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<10}  {:>8}  {:>9}\n", "variant", "SSIM", "PSNR(dB)");
        let _ = writeln!(s, "{:<10}  {:>8.4}  {:>9.3}", "input", self.baseline_ssim, self.baseline_psnr);
        for r in &self.rows {
            match (&r.error, r.ssim, r.psnr) {
                (None, Some(ss), Some(p)) => {
                    let _ = writeln!(s, "{:<10}  {:>8.4}  {:>9.3}", r.name, ss, p);
                }
                (err, _, _) => {
                    let _ = writeln!(
                        s,
                        "{:<10}  {:>8}  {:>9}  failed: {}",
                        r.name,
                        "-",
                        "-",
                        err.as_deref().unwrap_or("unknown")
                    );
                }
            }
        }
        let _ = writeln!(s, "monotone SSIM: {}", if self.is_monotone() { "yes" } else { "no" });
        s
    }
}

/// Trains every variant on `train` and scores it on `eval`. A variant that
/// fails is kept as an annotated row.
pub fn run_ablation(variants: &[Variant], train: &[TrainingPair], eval: &[TrainingPair]) -> Result<AblationTable> {
    let base = crate::trainer::baseline(eval)?;
    let mut table = AblationTable {
        baseline_ssim: base.mean_ssim(),
        baseline_psnr: base.mean_psnr(),
        rows: Vec::new(),
    };
    for v in variants {
        let outcome = run(&v.config, train, None, RunOptions::default())
            .and_then(|o| evaluate(o.state.generator(), v.config.attention, eval));
        let row = match outcome {
            Ok(m) => AblationRow {
                name: v.name.clone(),
                ssim: Some(m.mean_ssim()),
                psnr: Some(m.mean_psnr()),
                error: None,
            },
            Err(e) => {
                log::warn!("variant {} failed: {e}", v.name);
                AblationRow {
                    name: v.name.clone(),
                    ssim: None,
                    psnr: None,
                    error: Some(e.to_string()),
                }
            }
        };
        table.rows.push(row);
    }
    Ok(table)
}
