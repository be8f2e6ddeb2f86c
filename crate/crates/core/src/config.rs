//! Model and training configuration, stored as a flat `key = value` file.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relation::{GnnVariant, RelationMatch};

pub const SEED_ENV: &str = "UNICE_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertionVariant {
    MatrixTree,
    NoLink,
    SpanMatch,
    FullLink,
    DotProduct,
}

impl InsertionVariant {
    pub const ALL: [InsertionVariant; 5] = [
        InsertionVariant::MatrixTree,
        InsertionVariant::NoLink,
        InsertionVariant::SpanMatch,
        InsertionVariant::FullLink,
        InsertionVariant::DotProduct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InsertionVariant::MatrixTree => "matrix_tree",
            InsertionVariant::NoLink => "no_link",
            InsertionVariant::SpanMatch => "span_match",
            InsertionVariant::FullLink => "full_link",
            InsertionVariant::DotProduct => "dot_product",
        }
    }
}

impl FromStr for InsertionVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown insertion variant '{s}'"))
    }
}

/// Ablation settings, named after the rows of the ablation tables.
pub const ABLATIONS: [&str; 12] = [
    "wo_si",
    "wo_kf",
    "wo_both",
    "wo_eci_to_ee",
    "wo_ee_to_eci",
    "wo_plm_to_kg",
    "wo_kg_to_plm",
    "wo_insertion",
    "variant_no_link",
    "variant_span_match",
    "variant_full_link",
    "variant_dot_product",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniceConfig {
    pub plain_layers: usize,
    pub joint_layers: usize,
    pub d_enc: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub d_gnn: usize,
    pub d_kg: usize,
    pub classifier_hidden: usize,
    pub dropout: f64,
    pub node_cap: usize,
    pub max_path_len: usize,
    pub negative_keep_rate: f64,
    pub lr_encoder: f64,
    pub lr_other: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub warmup_steps: usize,
    pub seed: u64,
    pub use_subtask_interaction: bool,
    pub use_knowledge_fusion: bool,
    pub eci_to_ee: bool,
    pub ee_to_eci: bool,
    pub plm_to_kg: bool,
    pub kg_to_plm: bool,
    pub insertion_variant: InsertionVariant,
    pub share_crf: bool,
    pub share_aggregators: bool,
    pub gnn_variant: GnnVariant,
    pub gold_event_warmup_epochs: usize,
    pub relation_match: RelationMatch,
    /// Dynamic weights below this value are zeroed (0 keeps the dense clique).
    pub dynamic_threshold: f64,
    /// Weight of a uniform head choice mixed into the insertion scores
    /// before the Matrix-Tree step (0 uses the raw scores).
    pub insertion_smoothing: f64,
}

impl Default for UniceConfig {
    fn default() -> Self {
        Self {
            plain_layers: 9,
            joint_layers: 3,
            d_enc: 768,
            heads: 12,
            d_ff: 3072,
            max_len: 256,
            d_gnn: 200,
            d_kg: 100,
            classifier_hidden: 200,
            dropout: 0.2,
            node_cap: crate::graph::DEFAULT_NODE_CAP,
            max_path_len: crate::graph::DEFAULT_MAX_PATH_LEN,
            negative_keep_rate: 0.6,
            lr_encoder: 1e-5,
            lr_other: 1e-4,
            weight_decay: 0.0,
            grad_clip: 0.0,
            batch_size: 20,
            max_epochs: 50,
            patience: 5,
            warmup_steps: 0,
            seed: 42,
            use_subtask_interaction: true,
            use_knowledge_fusion: true,
            eci_to_ee: true,
            ee_to_eci: true,
            plm_to_kg: true,
            kg_to_plm: true,
            insertion_variant: InsertionVariant::MatrixTree,
            share_crf: false,
            share_aggregators: false,
            gnn_variant: GnnVariant::Attention,
            gold_event_warmup_epochs: 0,
            relation_match: RelationMatch::Exact,
            dynamic_threshold: 0.0,
            insertion_smoothing: 1e-4,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid value '{value}' for key '{key}'"))),
    }
}

impl UniceConfig {
    /// Model of the tiny configuration used by the tests and the synthetic
    /// benchmarks.
    pub fn tiny() -> Self {
        Self {
            plain_layers: 2,
            joint_layers: 2,
            d_enc: 64,
            heads: 4,
            d_ff: 128,
            max_len: 64,
            d_gnn: 64,
            d_kg: 64,
            classifier_hidden: 64,
            dropout: 0.1,
            lr_encoder: 1e-3,
            lr_other: 1e-3,
            grad_clip: 5.0,
            batch_size: 8,
            max_epochs: 200,
            patience: 200,
            warmup_steps: 20,
            ..Self::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "plain_layers" | "N" => self.plain_layers = parse(key, v)?,
            "joint_layers" | "M" => self.joint_layers = parse(key, v)?,
            "d_enc" => self.d_enc = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "d_ff" => self.d_ff = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "d_gnn" => self.d_gnn = parse(key, v)?,
            "d_kg" => self.d_kg = parse(key, v)?,
            "classifier_hidden" => self.classifier_hidden = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "node_cap" => self.node_cap = parse(key, v)?,
            "max_path_len" => self.max_path_len = parse(key, v)?,
            "negative_keep_rate" => self.negative_keep_rate = parse(key, v)?,
            "lr_encoder" => self.lr_encoder = parse(key, v)?,
            "lr_other" => self.lr_other = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "grad_clip" => self.grad_clip = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "warmup_steps" => self.warmup_steps = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "use_subtask_interaction" => self.use_subtask_interaction = parse_bool(key, v)?,
            "use_knowledge_fusion" => self.use_knowledge_fusion = parse_bool(key, v)?,
            "eci_to_ee" => self.eci_to_ee = parse_bool(key, v)?,
            "ee_to_eci" => self.ee_to_eci = parse_bool(key, v)?,
            "plm_to_kg" => self.plm_to_kg = parse_bool(key, v)?,
            "kg_to_plm" => self.kg_to_plm = parse_bool(key, v)?,
            "insertion_variant" => self.insertion_variant = v.parse().map_err(Error::Config)?,
            "share_crf" => self.share_crf = parse_bool(key, v)?,
            "share_aggregators" => self.share_aggregators = parse_bool(key, v)?,
            "gnn_variant" => {
                self.gnn_variant = match v {
                    "attention" => GnnVariant::Attention,
                    "mean" => GnnVariant::Mean,
                    _ => return Err(Error::Config(format!("invalid value '{v}' for key '{key}'"))),
                }
            }
            "gold_event_warmup_epochs" => self.gold_event_warmup_epochs = parse(key, v)?,
            "relation_match" => {
                self.relation_match = match v {
                    "exact" => RelationMatch::Exact,
                    "overlap" => RelationMatch::Overlap,
                    _ => return Err(Error::Config(format!("invalid value '{v}' for key '{key}'"))),
                }
            }
            "dynamic_threshold" => self.dynamic_threshold = parse(key, v)?,
            "insertion_smoothing" => self.insertion_smoothing = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment; blank lines are ignored.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", lineno + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Applies the `UNICE_SEED` override if set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(s) = std::env::var(SEED_ENV) {
            self.seed = parse(SEED_ENV, s.trim())?;
        }
        Ok(self)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let b = |x: bool| if x { "true" } else { "false" };
        let gnn = match self.gnn_variant {
            GnnVariant::Attention => "attention",
            GnnVariant::Mean => "mean",
        };
        let rm = match self.relation_match {
            RelationMatch::Exact => "exact",
            RelationMatch::Overlap => "overlap",
        };
        let entries: Vec<(&str, String)> = vec![
            ("plain_layers", self.plain_layers.to_string()),
            ("joint_layers", self.joint_layers.to_string()),
            ("d_enc", self.d_enc.to_string()),
            ("heads", self.heads.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("max_len", self.max_len.to_string()),
            ("d_gnn", self.d_gnn.to_string()),
            ("d_kg", self.d_kg.to_string()),
            ("classifier_hidden", self.classifier_hidden.to_string()),
            ("dropout", format!("{:?}", self.dropout)),
            ("node_cap", self.node_cap.to_string()),
            ("max_path_len", self.max_path_len.to_string()),
            ("negative_keep_rate", format!("{:?}", self.negative_keep_rate)),
            ("lr_encoder", format!("{:?}", self.lr_encoder)),
            ("lr_other", format!("{:?}", self.lr_other)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("grad_clip", format!("{:?}", self.grad_clip)),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("seed", self.seed.to_string()),
            ("use_subtask_interaction", b(self.use_subtask_interaction).into()),
            ("use_knowledge_fusion", b(self.use_knowledge_fusion).into()),
            ("eci_to_ee", b(self.eci_to_ee).into()),
            ("ee_to_eci", b(self.ee_to_eci).into()),
            ("plm_to_kg", b(self.plm_to_kg).into()),
            ("kg_to_plm", b(self.kg_to_plm).into()),
            ("insertion_variant", self.insertion_variant.name().into()),
            ("share_crf", b(self.share_crf).into()),
            ("share_aggregators", b(self.share_aggregators).into()),
            ("gnn_variant", gnn.into()),
            ("gold_event_warmup_epochs", self.gold_event_warmup_epochs.to_string()),
            ("relation_match", rm.into()),
            ("dynamic_threshold", format!("{:?}", self.dynamic_threshold)),
            ("insertion_smoothing", format!("{:?}", self.insertion_smoothing)),
        ];
        for (k, v) in entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.joint_layers == 0 {
            return bad("joint_layers must be at least 1".into());
        }
        for (name, v) in [
            ("d_enc", self.d_enc),
            ("d_gnn", self.d_gnn),
            ("d_ff", self.d_ff),
            ("heads", self.heads),
            ("max_len", self.max_len),
            ("batch_size", self.batch_size),
            ("classifier_hidden", self.classifier_hidden),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !self.d_enc.is_multiple_of(self.heads) {
            return bad(format!("d_enc {} is not divisible by heads {}", self.d_enc, self.heads));
        }
        for (name, v) in [
            ("dropout", self.dropout),
            ("negative_keep_rate", self.negative_keep_rate),
            ("dynamic_threshold", self.dynamic_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.insertion_smoothing) {
            return bad(format!("insertion_smoothing must lie in [0, 1), got {}", self.insertion_smoothing));
        }
        if self.dropout >= 1.0 {
            return bad("dropout must be below 1".into());
        }
        for (name, v) in [
            ("lr_encoder", self.lr_encoder),
            ("lr_other", self.lr_other),
            ("weight_decay", self.weight_decay),
            ("grad_clip", self.grad_clip),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        Ok(())
    }

    /// Returns a copy with one named ablation applied.
    pub fn ablated(&self, setting: &str) -> Result<Self> {
        let mut c = self.clone();
        match setting {
            "full" => {}
            "wo_si" => c.use_subtask_interaction = false,
            "wo_kf" => c.use_knowledge_fusion = false,
            "wo_both" => {
                c.use_subtask_interaction = false;
                c.use_knowledge_fusion = false;
            }
            "wo_eci_to_ee" => c.eci_to_ee = false,
            "wo_ee_to_eci" => c.ee_to_eci = false,
            "wo_plm_to_kg" => c.plm_to_kg = false,
            "wo_kg_to_plm" => c.kg_to_plm = false,
            "wo_insertion" | "variant_no_link" => c.insertion_variant = InsertionVariant::NoLink,
            "variant_span_match" => c.insertion_variant = InsertionVariant::SpanMatch,
            "variant_full_link" => c.insertion_variant = InsertionVariant::FullLink,
            "variant_dot_product" => c.insertion_variant = InsertionVariant::DotProduct,
            other => {
                return Err(Error::Argument(format!(
                    "unknown ablation setting '{other}' (expected one of {})",
                    ABLATIONS.join(", ")
                )))
            }
        }
        Ok(c)
    }

    /// T-aggregator active (relation → event module).
    pub fn t_enabled(&self) -> bool {
        self.use_subtask_interaction && self.eci_to_ee
    }

    /// Relation module trained on predicted rather than gold events.
    pub fn stack_propagation(&self) -> bool {
        self.use_subtask_interaction && self.ee_to_eci
    }

    pub fn kg_to_plm_enabled(&self) -> bool {
        self.use_knowledge_fusion && self.kg_to_plm
    }

    pub fn plm_to_kg_enabled(&self) -> bool {
        self.use_knowledge_fusion && self.plm_to_kg
    }
}
