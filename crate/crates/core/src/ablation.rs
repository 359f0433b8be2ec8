//! Ablation drivers: loss-weight sweep, input-modality grid and single vs
//! dual head weighting, each trained and scored on fixed folds.

use std::fmt;
use std::str::FromStr;

use crate::config::{RunConfig, SeedStream};
use crate::data::{split_folds, GlaucomaSample, ModalityFlags, Vocabulary};
use crate::encoder::WeightMode;
use crate::error::{Error, Result};
use crate::label::LabelVocabulary;
use crate::metrics::{evaluate, MetricReport, TokenizedPair};
use crate::model::{Example, ReportModel};
use crate::train::{LossConfig, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Alpha,
    Modality,
    WeightMode,
}

impl Sweep {
    pub fn as_str(self) -> &'static str {
        match self {
            Sweep::Alpha => "alpha",
            Sweep::Modality => "modality",
            Sweep::WeightMode => "weight-mode",
        }
    }
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(Sweep::Alpha),
            "modality" => Ok(Sweep::Modality),
            "weight-mode" => Ok(Sweep::WeightMode),
            other => Err(Error::config(format!(
                "unknown sweep {other:?}; expected alpha, modality or weight-mode"
            ))),
        }
    }
}

/// Fold-averaged outcome of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub metrics: MetricReport,
    /// Effective per-head weights: `w_a`, times `w_dwa` in dual mode.
    pub head_weights: Vec<f64>,
}

/// Vocabulary over every report and description in `data`.
pub fn dataset_vocabulary(data: &[GlaucomaSample]) -> Vocabulary {
    Vocabulary::build(
        data.iter()
            .map(|s| s.report.as_str())
            .chain(data.iter().map(|s| s.neuroretinal_rim.as_str())),
    )
}

fn examples(model: &ReportModel, data: &[GlaucomaSample], idx: &[usize]) -> Result<Vec<Example>> {
    idx.iter().map(|&i| model.example(&data[i])).collect()
}

/// Train on the first `eval_folds` training splits and score beam-search
/// reports on the matching validation splits.
pub fn train_and_score(cfg: &RunConfig, data: &[GlaucomaSample], vocab: &Vocabulary) -> Result<PointResult> {
    let folds = split_folds(data.len(), cfg.data.folds, cfg.seed_for(SeedStream::Folds))?;
    let used = &folds[..cfg.data.eval_folds.min(folds.len())];
    let mut sum = [0.0; 6];
    let mut heads = vec![0.0; cfg.model.encoder.heads];
    for fold in used {
        let mut model = ReportModel::new(
            cfg.model.clone(),
            vocab.clone(),
            LabelVocabulary::default(),
            cfg.seed_for(SeedStream::Init),
        )?;
        let train = examples(&model, data, &fold.train)?;
        let mut trainer = Trainer::new(cfg.train_config(), &model)?;
        trainer.fit(&mut model, &train, |_, _| Ok(()))?;
        let val = examples(&model, data, &fold.validation)?;
        let outputs = model.generate_all(&val, cfg.decode.beam_width, cfg.decode.max_len, cfg.train.jobs)?;
        let pairs = fold
            .validation
            .iter()
            .zip(&outputs)
            .map(|(&i, out)| TokenizedPair::from_text(&model.vocab.decode(out), &[&data[i].report]))
            .collect::<Result<Vec<_>>>()?;
        for (acc, v) in sum.iter_mut().zip(evaluate(&pairs)?.values()) {
            *acc += v;
        }
        let w_a = model.head_weights();
        for (j, h) in heads.iter_mut().enumerate() {
            *h += match cfg.model.weight_mode {
                WeightMode::Single => w_a[j],
                WeightMode::Dual => w_a[j] * model.dual_state.w_dwa[j],
            };
        }
    }
    let k = used.len() as f64;
    let m = sum.map(|v| v / k);
    Ok(PointResult {
        metrics: MetricReport {
            b1: m[0],
            b2: m[1],
            b3: m[2],
            b4: m[3],
            rouge_l: m[4],
            cider: m[5],
        },
        head_weights: heads.into_iter().map(|h| h / k).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cols = self.header.len();
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        writeln!(f, "{}", self.title)?;
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        writeln!(f, "{}", line(&self.header))?;
        let rule: usize = widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
        writeln!(f, "{}", "-".repeat(rule))?;
        for row in &self.rows {
            writeln!(f, "{}", line(row))?;
        }
        Ok(())
    }
}

fn metric_header() -> Vec<String> {
    MetricReport::HEADER.iter().map(|s| s.to_string()).collect()
}

fn metric_cells(m: &MetricReport) -> Vec<String> {
    m.values().iter().map(|v| format!("{:.2}", v * 100.0)).collect()
}

fn mark(on: bool) -> String {
    if on { "✓" } else { "✗" }.to_string()
}

/// Run every point of `sweep`. `progress` receives one line per finished
/// point.
pub fn run_sweep<F>(cfg: &RunConfig, data: &[GlaucomaSample], sweep: Sweep, mut progress: F) -> Result<AblationTable>
where
    F: FnMut(&str),
{
    if data.is_empty() {
        return Err(Error::Validation("ablation needs a non-empty dataset".into()));
    }
    let vocab = dataset_vocabulary(data);
    let mut rows = Vec::new();
    let table = match sweep {
        Sweep::Alpha => {
            for alpha in 1..=10 {
                let mut c = cfg.clone();
                c.loss = LossConfig::for_sweep(cfg.loss.lambda, alpha as f64)?;
                let r = train_and_score(&c, data, &vocab)?;
                let mut row = vec![alpha.to_string()];
                row.extend(metric_cells(&r.metrics));
                progress(&format!("alpha {alpha}: {}", r.metrics.percent_row()));
                rows.push(row);
            }
            let mut header = vec!["α".to_string()];
            header.extend(metric_header());
            AblationTable {
                title: "Impact of the label-loss weight α (×100)".into(),
                header,
                rows,
            }
        }
        Sweep::Modality => {
            for flags in ModalityFlags::valid_combinations().into_iter().rev() {
                let mut c = cfg.clone();
                c.model.modality = flags;
                let r = train_and_score(&c, data, &vocab)?;
                let mut row = vec![mark(flags.image), mark(flags.corpus), mark(flags.factor)];
                row.extend(metric_cells(&r.metrics));
                progress(&format!("{:?}: {}", flags, r.metrics.percent_row()));
                rows.push(row);
            }
            let none = ModalityFlags {
                image: false,
                corpus: false,
                factor: false,
            };
            if none.check().is_ok() {
                return Err(Error::contract("all-off modality row was accepted"));
            }
            let mut row = vec![mark(false), mark(false), mark(false)];
            row.extend(std::iter::repeat_n("-".to_string(), 6));
            rows.push(row);
            let mut header = vec!["Image".to_string(), "Corpus".into(), "Factor".into()];
            header.extend(metric_header());
            AblationTable {
                title: "Impact of input modality (×100)".into(),
                header,
                rows,
            }
        }
        Sweep::WeightMode => {
            for mode in [WeightMode::Single, WeightMode::Dual] {
                let mut c = cfg.clone();
                c.model.weight_mode = mode;
                let r = train_and_score(&c, data, &vocab)?;
                let mut row = vec![mode.as_str().to_string()];
                row.extend(r.head_weights.iter().map(|w| format!("{w:.4}")));
                row.extend(metric_cells(&r.metrics));
                progress(&format!("{}: {}", mode.as_str(), r.metrics.percent_row()));
                rows.push(row);
            }
            let mut header = vec!["Weight".to_string()];
            header.extend((1..=cfg.model.encoder.heads).map(|j| format!("H{j}")));
            header.extend(metric_header());
            AblationTable {
                title: "Single vs dual head weighting: effective per-head weights and scores (×100)".into(),
                header,
                rows,
            }
        }
    };
    Ok(table)
}
