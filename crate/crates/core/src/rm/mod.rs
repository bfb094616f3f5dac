//! Reward models over response embeddings.
//!
//! Three variants: a pairwise Bradley-Terry MLP (`bt-mlp`), a pointwise
//! classification MLP (`clf-mlp`) and pointwise gradient-boosted trees
//! (`clf-gbt`). Classification models score by the pre-sigmoid logit.

mod gbt;
mod mlp;
mod train;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotate::PreferenceRecord;
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::synth::SyntheticWorld;

pub use gbt::{logistic_loss, train_gbt, GbtEnsemble, GbtHyper, Node, Tree};
pub use mlp::{bt_pair_loss_grad, bt_prob, clf_point_loss_grad, ForwardCache, MlpParams};
pub use train::{train_mlp, Example, Objective, TrainHyper, TrainReport};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// One pointwise training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub embedding: Vec<f64>,
    pub label: u8,
}

/// Winner gets label 1 and loser label 0, in record order.
pub fn pairs_to_points(world: &SyntheticWorld, records: &[PreferenceRecord]) -> Result<Vec<Point>> {
    let mut out = Vec::with_capacity(2 * records.len());
    for r in records {
        let (w, l) = r.winner_loser();
        out.push(Point {
            embedding: world.item(w)?.embedding()?.to_vec(),
            label: 1,
        });
        out.push(Point {
            embedding: world.item(l)?.embedding()?.to_vec(),
            label: 0,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    BtMlp,
    ClfMlp,
    ClfGbt,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 3] = [
        ModelVariant::BtMlp,
        ModelVariant::ClfMlp,
        ModelVariant::ClfGbt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::BtMlp => "bt-mlp",
            ModelVariant::ClfMlp => "clf-mlp",
            ModelVariant::ClfGbt => "clf-gbt",
        }
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ModelParams {
    Mlp(MlpParams),
    Gbt(GbtEnsemble),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs: usize,
    pub best_epoch: usize,
    pub train_loss: f64,
    /// `None` when no validation split was carved.
    pub val_loss: Option<f64>,
    pub n_train: usize,
    pub n_val: usize,
    /// Training labels were all from one class.
    #[serde(default)]
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub variant: ModelVariant,
    pub params: ModelParams,
    pub meta: TrainMeta,
}

/// Hyper-parameters for every variant.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelHyper {
    pub mlp: TrainHyper,
    pub gbt: GbtHyper,
}

impl RewardModel {
    pub fn score(&self, z: &[f64]) -> Result<f64> {
        match &self.params {
            ModelParams::Mlp(p) => p.score(z),
            ModelParams::Gbt(g) => g.score(z),
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.params {
            ModelParams::Mlp(p) => p.input_dim(),
            ModelParams::Gbt(g) => g.dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.variant, &self.params) {
            (ModelVariant::BtMlp | ModelVariant::ClfMlp, ModelParams::Mlp(p)) => {
                MlpParams::from_flat(p.sizes().to_vec(), p.flat().to_vec()).map(|_| ())
            }
            (ModelVariant::ClfGbt, ModelParams::Gbt(g)) => g.validate(),
            (v, _) => Err(Error::Shape(format!(
                "{} model with mismatched parameter kind",
                v.name()
            ))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            format_version: u32,
            #[serde(flatten)]
            model: &'a RewardModel,
        }
        Ok(serde_json::to_string_pretty(&Doc {
            format_version: MODEL_FORMAT_VERSION,
            model: self,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::parse("model document", "missing format_version"))?;
        if found != MODEL_FORMAT_VERSION as u64 {
            return Err(Error::Version {
                found: found as u32,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let model: RewardModel = serde_json::from_value(value)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(self.to_json()?.as_bytes())
            .map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        std::io::Read::read_to_string(&mut BufReader::new(f), &mut text)
            .map_err(|e| Error::io(path, e))?;
        RewardModel::from_json(&text)
    }
}

/// Train one reward model on annotated records.
///
/// A validation split of the records (not of the derived points) is carved
/// from a seed-shuffled order, so both orientations of one comparison never
/// straddle the split.
pub fn train_reward_model(
    world: &SyntheticWorld,
    records: &[PreferenceRecord],
    variant: ModelVariant,
    hyper: &ModelHyper,
    rng: &mut SimRng,
) -> Result<RewardModel> {
    if records.is_empty() {
        return Err(Error::Empty("training records"));
    }
    if !world.has_embeddings() {
        return Err(Error::Mode {
            mode: world.config.mode.name(),
            what: "reward models need embeddings",
        });
    }
    let dim = world.config.dim;
    match variant {
        ModelVariant::ClfGbt => {
            let points = pairs_to_points(world, records)?;
            let (ens, losses) = train_gbt(&points, &hyper.gbt)?;
            Ok(RewardModel {
                variant,
                params: ModelParams::Gbt(ens),
                meta: TrainMeta {
                    epochs: hyper.gbt.n_trees,
                    best_epoch: hyper.gbt.n_trees,
                    train_loss: *losses.last().unwrap(),
                    val_loss: None,
                    n_train: points.len(),
                    n_val: 0,
                    degenerate: false,
                },
            })
        }
        ModelVariant::BtMlp | ModelVariant::ClfMlp => {
            let (train_idx, val_idx) =
                train::split_indices(records.len(), hyper.mlp.val_fraction, rng)?;
            let objective = if variant == ModelVariant::BtMlp {
                Objective::Bt
            } else {
                Objective::Clf
            };
            let build = |idx: &[usize]| -> Result<Vec<Example>> {
                let mut out = Vec::with_capacity(idx.len() * 2);
                for &i in idx {
                    let (w, l) = records[i].winner_loser();
                    let zw = world.item(w)?.embedding()?.to_vec();
                    let zl = world.item(l)?.embedding()?.to_vec();
                    match objective {
                        Objective::Bt => out.push(Example::Pair {
                            plus: zw,
                            minus: zl,
                        }),
                        Objective::Clf => {
                            out.push(Example::Point { z: zw, y: 1.0 });
                            out.push(Example::Point { z: zl, y: 0.0 });
                        }
                    }
                }
                Ok(out)
            };
            let train_set = build(&train_idx)?;
            let val_set = build(&val_idx)?;
            let (params, report) = train_mlp(&train_set, &val_set, dim, &hyper.mlp, rng)?;
            Ok(RewardModel {
                variant,
                params: ModelParams::Mlp(params),
                meta: TrainMeta {
                    epochs: report.epochs,
                    best_epoch: report.best_epoch,
                    train_loss: report.train_loss,
                    val_loss: report.val_loss,
                    n_train: train_set.len(),
                    n_val: val_set.len(),
                    degenerate: report.degenerate,
                },
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::{annotate_dataset, build_pairs, AnnotatorSpec, Label, PairingKind};
    use crate::rng::RngState;
    use crate::synth::{gen_world, ItemRef, WorldConfig};

    fn small_world() -> SyntheticWorld {
        let cfg = WorldConfig {
            dim: 4,
            n_train_prompts: 30,
            n_test_prompts: 2,
            k_per_prompt: 4,
            n_test_candidates: 8,
            ..WorldConfig::default()
        };
        gen_world(&cfg, &mut RngState::new(1).rng()).unwrap()
    }

    fn record(left: ItemRef, right: ItemRef, h: Label) -> PreferenceRecord {
        PreferenceRecord {
            left,
            right,
            h,
            pairing: PairingKind::SamePromptRandom,
            annotator: AnnotatorSpec::perfect(),
            tied: false,
        }
    }

    #[test]
    fn points_follow_the_label() {
        let w = small_world();
        let a = w.train[0].items[0].item_ref();
        let b = w.train[0].items[1].item_ref();
        let pts = pairs_to_points(&w, &[record(a, b, Label::Right)]).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].label, 1);
        assert_eq!(pts[0].embedding, w.item(b).unwrap().embedding);
        assert_eq!(pts[1].label, 0);

        let pairs = build_pairs(
            &w,
            PairingKind::SamePromptRandom,
            37,
            &mut RngState::new(2).rng(),
        )
        .unwrap();
        let ds = annotate_dataset(
            &w,
            &pairs,
            &AnnotatorSpec::random(),
            &mut RngState::new(3).rng(),
        )
        .unwrap();
        let pts = pairs_to_points(&w, &ds.records).unwrap();
        assert_eq!(pts.len(), 74);
        assert_eq!(pts.iter().map(|p| p.label as usize).sum::<usize>(), 37);
    }

    #[test]
    fn analytic_world_has_no_points() {
        let cfg = WorldConfig {
            mode: crate::synth::WorldMode::Analytic,
            n_train_prompts: 2,
            k_per_prompt: 2,
            ..WorldConfig::default()
        };
        let w = gen_world(&cfg, &mut RngState::new(1).rng()).unwrap();
        let a = w.train[0].items[0].item_ref();
        let b = w.train[0].items[1].item_ref();
        assert!(matches!(
            pairs_to_points(&w, &[record(a, b, Label::Left)]),
            Err(Error::Mode { .. })
        ));
    }

    #[test]
    fn models_round_trip_through_json() {
        let w = small_world();
        let pairs = build_pairs(
            &w,
            PairingKind::SamePromptRandom,
            300,
            &mut RngState::new(4).rng(),
        )
        .unwrap();
        let ds = annotate_dataset(
            &w,
            &pairs,
            &AnnotatorSpec::perfect(),
            &mut RngState::new(5).rng(),
        )
        .unwrap();
        let mut hyper = ModelHyper::default();
        hyper.mlp.max_epochs = 2;
        hyper.gbt.n_trees = 5;
        for v in ModelVariant::ALL {
            let m = train_reward_model(&w, &ds.records, v, &hyper, &mut RngState::new(6).rng())
                .unwrap();
            let text = m.to_json().unwrap();
            let back = RewardModel::from_json(&text).unwrap();
            assert_eq!(back, m);
            let z = &w.test[0].items[0].embedding;
            assert_eq!(
                back.score(z).unwrap().to_bits(),
                m.score(z).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn loader_rejects_bad_documents() {
        let m = RewardModel {
            variant: ModelVariant::BtMlp,
            params: ModelParams::Mlp(MlpParams::zeros(&[2, 1]).unwrap()),
            meta: TrainMeta::default(),
        };
        let text = m.to_json().unwrap();
        let v2 = text.replace("\"format_version\": 1", "\"format_version\": 2");
        assert!(matches!(
            RewardModel::from_json(&v2),
            Err(Error::Version { found: 2, .. })
        ));
        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["params"]["sizes"][0] = 3.into();
        let bad_shape = doc.to_string();
        assert!(RewardModel::from_json(&bad_shape).is_err());
        let wrong_kind = text.replace("\"bt-mlp\"", "\"clf-gbt\"");
        assert!(RewardModel::from_json(&wrong_kind).is_err());
    }
}
