//! Full report model: encoder, parallel decoder and label head over one
//! parameter store.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::{mask_modalities, model_inputs, GlaucomaSample, MaskedInputs, ModalityFlags, Vocabulary, FACTOR_DIM};
use crate::decoder::{
    beam_search, greedy_decode, DecoderDims, DecoderState, DecoderTrace, ParallelDecoder, Prepared, StepModel, BOS, EOS,
};
use crate::encoder::dual_weight::update_head_weights;
use crate::encoder::{DualAttentionState, DualSource, Encoder, EncoderConfig, EncoderOutput, WeightMode};
use crate::error::{Error, Result};
use crate::label::{embed_report, embed_tokens, LabelHead, LabelVocabulary};
use crate::parallel::{par_map, resolve_jobs};
use crate::params::{Bound, ParamStore};
use crate::rng::SplitMix64;
use crate::train::{composite_loss_graph, cross_entropy, multilabel_softmargin, LossConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub embedding_dim: usize,
    /// Hidden size of the three decoder LSTMs.
    pub hidden: usize,
    pub label_hidden: usize,
    pub weight_mode: WeightMode,
    /// Inputs left switched on at training and inference time.
    pub modality: ModalityFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            embedding_dim: 64,
            hidden: 512,
            label_hidden: 64,
            weight_mode: WeightMode::Dual,
            modality: ModalityFlags::ALL,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.encoder.validate();
        for (name, v) in [
            ("embedding_dim", self.embedding_dim),
            ("hidden", self.hidden),
            ("label_hidden", self.label_hidden),
        ] {
            if v == 0 {
                errs.push(format!("{name} must be positive"));
            }
        }
        if let Err(e) = self.modality.check() {
            errs.push(e.message());
        }
        errs
    }
}

/// One record as model-ready ids and vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub image: Vec<f64>,
    pub corpus: Vec<usize>,
    pub factors: Vec<f64>,
    /// Report ids without BOS or EOS.
    pub tokens: Vec<usize>,
    pub labels: Vec<f64>,
}

impl Example {
    /// `[BOS] + tokens`
    pub fn decoder_inputs(&self) -> Vec<usize> {
        std::iter::once(BOS).chain(self.tokens.iter().copied()).collect()
    }

    /// `tokens + [EOS]`
    pub fn targets(&self) -> Vec<usize> {
        self.tokens.iter().copied().chain(std::iter::once(EOS)).collect()
    }
}

/// Graph handles from one teacher-forced pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub encoder: EncoderOutput,
    pub trace: DecoderTrace,
    pub label: Var,
    pub loss1: Var,
    pub loss2: Var,
    pub loss_t: Var,
    pub total: Var,
}

#[derive(Debug, Clone)]
pub struct ReportModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: ParallelDecoder,
    pub label: LabelHead,
    pub vocab: Vocabulary,
    pub labels: LabelVocabulary,
    /// Head weights used at inference; updated by training.
    pub dual_state: DualAttentionState,
}

impl ReportModel {
    pub fn new(config: ModelConfig, vocab: Vocabulary, labels: LabelVocabulary, seed: u64) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(Error::config(errs.join("; ")));
        }
        let mut rng = SplitMix64::new(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &config.encoder, &mut rng)?;
        let dims = DecoderDims {
            vocab_size: vocab.len(),
            embedding_dim: config.embedding_dim,
            hidden: config.hidden,
            feature_dim: config.encoder.feature_dim,
            factor_dim: FACTOR_DIM,
        };
        let decoder = ParallelDecoder::new(&mut store, dims, &mut rng)?;
        let label = LabelHead::new(&mut store, config.embedding_dim, config.label_hidden, labels.len(), &mut rng)?;
        let w_a = update_head_weights(store.get(encoder.head_logits).data())?;
        Ok(Self {
            config,
            store,
            encoder,
            decoder,
            label,
            vocab,
            labels,
            dual_state: DualAttentionState::cold_start(w_a),
        })
    }

    /// Current learnable head weights `softmax(logits) * N`.
    pub fn head_weights(&self) -> Vec<f64> {
        update_head_weights(self.store.get(self.encoder.head_logits).data()).expect("at least one head")
    }

    /// Training example: the report and the description must use only
    /// known words.
    pub fn example(&self, sample: &GlaucomaSample) -> Result<Example> {
        self.check_words("report", &sample.report)?;
        self.inference_example(sample)
    }

    /// Example with an empty target; only the description is checked.
    pub fn inference_example(&self, sample: &GlaucomaSample) -> Result<Example> {
        self.check_words("neuroretinal_rim", &sample.neuroretinal_rim)?;
        let raw = model_inputs(sample, self.config.encoder.image_side);
        let mut ex = self.example_from_inputs(sample, &mask_modalities(&raw, self.config.modality)?)?;
        if sample.report.trim().is_empty() {
            ex.tokens.clear();
        }
        Ok(ex)
    }

    fn check_words(&self, field: &str, text: &str) -> Result<()> {
        let unknown: Vec<String> = crate::metrics::tokenize(text)
            .into_iter()
            .filter(|t| self.vocab.id(t) == crate::decoder::UNK)
            .collect();
        if unknown.is_empty() {
            return Ok(());
        }
        Err(Error::Validation(format!(
            "{field} has words missing from the model vocabulary: {}",
            unknown.join(", ")
        )))
    }

    /// Example from already-built inputs; unknown words map to `<unk>`.
    pub fn example_from_inputs(&self, sample: &GlaucomaSample, inputs: &MaskedInputs) -> Result<Example> {
        let side = self.config.encoder.image_side;
        if inputs.image.len() != side * side {
            return Err(Error::contract(format!(
                "image has {} pixels, model expects {side}x{side}",
                inputs.image.len()
            )));
        }
        if sample.labels().len() != self.labels.len() {
            return Err(Error::contract(format!(
                "record has {} labels, model expects {}",
                sample.labels().len(),
                self.labels.len()
            )));
        }
        Ok(Example {
            image: inputs.image.clone(),
            corpus: inputs.corpus.iter().map(|t| self.vocab.id(t)).collect(),
            factors: inputs.factors.clone(),
            tokens: self.vocab.encode(&sample.report),
            labels: sample.labels(),
        })
    }

    pub fn dual_source(&self) -> DualSource<'_> {
        match self.config.weight_mode {
            WeightMode::Single => DualSource::Single,
            WeightMode::Dual => DualSource::Fixed(&self.dual_state.w_dwa),
        }
    }

    fn encode_and_prepare(
        &self,
        g: &mut Graph,
        p: &Bound,
        image: &[f64],
        corpus: &[usize],
        factors: &[f64],
        dual: DualSource<'_>,
    ) -> Result<(EncoderOutput, Prepared)> {
        let enc = self.encoder.encode(g, p, image, dual)?;
        let f = g.constant_row(factors.to_vec())?;
        let prep = self
            .decoder
            .prepare(g, p, enc.tokens, enc.weighted_attention, enc.class_feature, Some(f), corpus)?;
        Ok((enc, prep))
    }

    /// Teacher-forced pass with the composite loss.
    pub fn forward(&self, g: &mut Graph, p: &Bound, ex: &Example, dual: DualSource<'_>, loss: &LossConfig) -> Result<Forward> {
        let (encoder, prep) = self.encode_and_prepare(g, p, &ex.image, &ex.corpus, &ex.factors, dual)?;
        let trace = self.decoder.teacher_forced(g, p, &prep, &ex.decoder_inputs())?;
        let targets = ex.targets();
        let mask = vec![true; targets.len()];
        let loss1 = cross_entropy(g, trace.p1, &targets, &mask)?;
        let loss2 = cross_entropy(g, trace.p2, &targets, &mask)?;
        let rp = embed_report(g, trace.p2, p[self.decoder.embedding])?;
        let label = self.label.predict_labels(g, p, rp)?;
        let loss_t = multilabel_softmargin(g, label, &ex.labels)?;
        let total = composite_loss_graph(g, loss1, loss2, loss_t, loss)?;
        Ok(Forward {
            encoder,
            trace,
            label,
            loss1,
            loss2,
            loss_t,
            total,
        })
    }

    /// Beam search over the second head; width 1 is greedy decoding.
    pub fn generate(&self, ex: &Example, beam_width: usize, max_len: usize) -> Result<Vec<usize>> {
        let mut stepper = self.stepper(ex)?;
        if beam_width == 1 {
            return greedy_decode(&mut stepper, max_len);
        }
        Ok(beam_search(&mut stepper, beam_width, max_len)?.tokens)
    }

    pub fn generate_text(&self, ex: &Example, beam_width: usize, max_len: usize) -> Result<String> {
        Ok(self.vocab.decode(&self.generate(ex, beam_width, max_len)?))
    }

    pub fn stepper(&self, ex: &Example) -> Result<DecoderStepper<'_>> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false)?;
        let (_, prep) = self.encode_and_prepare(&mut g, &p, &ex.image, &ex.corpus, &ex.factors, self.dual_source())?;
        Ok(DecoderStepper {
            decoder: &self.decoder,
            g,
            p,
            prep,
        })
    }

    /// Label distribution read from concrete report tokens.
    pub fn predict_labels(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false)?;
        let rp = embed_tokens(&mut g, p[self.decoder.embedding], tokens)?;
        let l = self.label.predict_labels(&mut g, &p, rp)?;
        Ok(g.value(l).to_vec())
    }

    /// High risk when the label head gives `high_risk` more than the
    /// uniform share of mass.
    pub fn predict_high_risk(&self, tokens: &[usize]) -> Result<bool> {
        let idx = self
            .labels
            .index("high_risk")
            .ok_or_else(|| Error::contract("label vocabulary has no high_risk entry"))?;
        let dist = self.predict_labels(tokens)?;
        Ok(dist[idx] > 1.0 / dist.len() as f64)
    }

    /// Decode every example; output order matches input order.
    pub fn generate_all(&self, examples: &[Example], beam_width: usize, max_len: usize, jobs: usize) -> Result<Vec<Vec<usize>>> {
        par_map(examples, resolve_jobs(jobs), |ex| self.generate(ex, beam_width, max_len))
    }
}

/// Step-wise view of the decoder for one encoded input.
pub struct DecoderStepper<'a> {
    decoder: &'a ParallelDecoder,
    g: Graph,
    p: Bound,
    prep: Prepared,
}

impl StepModel for DecoderStepper<'_> {
    type State = DecoderState;

    fn vocab_size(&self) -> usize {
        self.decoder.dims.vocab_size
    }

    fn start(&mut self) -> Result<DecoderState> {
        Ok(DecoderState::default())
    }

    fn step(&mut self, state: &DecoderState, token: usize) -> Result<(Vec<f64>, DecoderState)> {
        let (out, next) = self.decoder.step(&mut self.g, &self.p, &self.prep, *state, token)?;
        Ok((self.g.value(out.p2).to_vec(), next))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tensor};
    use crate::data::{generate_dataset, reference_sample};

    pub(crate) fn toy_config() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                image_side: 16,
                patch_size: 8,
                d_model: 8,
                heads: 2,
                gpsa_blocks: 1,
                ffn_dim: 8,
                feature_dim: 8,
            },
            embedding_dim: 6,
            hidden: 6,
            label_hidden: 5,
            weight_mode: WeightMode::Dual,
            modality: ModalityFlags::ALL,
        }
    }

    pub(crate) fn toy_model(seed: u64) -> (ReportModel, Vec<Example>) {
        let data = generate_dataset(4, seed, 0.5);
        let vocab = Vocabulary::build(data.iter().map(|s| s.report.as_str()).chain(data.iter().map(|s| s.neuroretinal_rim.as_str())));
        let model = ReportModel::new(toy_config(), vocab, LabelVocabulary::default(), seed).unwrap();
        let examples = data.iter().map(|s| model.example(s).unwrap()).collect();
        (model, examples)
    }

    #[test]
    fn unknown_words_are_rejected() {
        let (model, _) = toy_model(12);
        let mut s = reference_sample();
        s.neuroretinal_rim = "the rim is zebra striped".into();
        match model.inference_example(&s) {
            Err(Error::Validation(m)) => assert!(m.contains("zebra") && m.contains("striped"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn masked_modalities_reach_the_example() {
        let (mut model, _) = toy_model(13);
        model.config.modality = ModalityFlags {
            image: false,
            corpus: true,
            factor: false,
        };
        let ex = model.example(&generate_dataset(1, 13, 1.0)[0]).unwrap();
        assert!(ex.image.iter().all(|&x| x == 0.0));
        assert!(ex.factors.iter().all(|&x| x == 0.0));
        assert!(!ex.corpus.is_empty());
    }

    #[test]
    fn forward_losses_are_finite_and_consistent() {
        let (model, examples) = toy_model(1);
        let mut g = Graph::new();
        let p = model.store.bind(&mut g, true).unwrap();
        let cfg = LossConfig::default();
        let f = model.forward(&mut g, &p, &examples[0], model.dual_source(), &cfg).unwrap();
        let (l1, l2, lt, t) = (g.scalar(f.loss1), g.scalar(f.loss2), g.scalar(f.loss_t), g.scalar(f.total));
        assert!(l1 > 0.0 && l2 > 0.0 && lt > 0.0);
        assert!((t - (l1 + 0.5 * l2 + 5.0 * lt)).abs() < 1e-12);
        let steps = examples[0].tokens.len() + 1;
        assert_eq!(g.shape(f.trace.p1), [steps, model.vocab.len()]);
    }

    #[test]
    fn label_loss_reaches_decoder_weights() {
        let (model, examples) = toy_model(2);
        let mut g = Graph::new();
        let p = model.store.bind(&mut g, true).unwrap();
        let f = model.forward(&mut g, &p, &examples[0], model.dual_source(), &LossConfig::default()).unwrap();
        let grads = g.backward(f.loss_t).unwrap();
        let g2 = grads.get(p[model.decoder.fc2]).expect("fc2 reached");
        assert!(g2.iter().map(|x| x * x).sum::<f64>() > 0.0);
    }

    #[test]
    fn generation_is_deterministic_and_width_one_is_greedy() {
        let (model, examples) = toy_model(3);
        let a = model.generate(&examples[1], 5, 12).unwrap();
        assert_eq!(a, model.generate(&examples[1], 5, 12).unwrap());
        let mut s = model.stepper(&examples[1]).unwrap();
        let greedy = greedy_decode(&mut s, 12).unwrap();
        let mut s = model.stepper(&examples[1]).unwrap();
        assert_eq!(beam_search(&mut s, 1, 12).unwrap().tokens, greedy);
        assert_eq!(model.generate(&examples[1], 1, 12).unwrap(), greedy);
    }

    /// Whole-model gradient check: encoder with in-graph dual weights,
    /// decoder, label head and composite loss.
    #[test]
    fn composite_gradcheck() {
        let (mut model, examples) = toy_model(4);
        *model.store.get_mut(model.encoder.head_logits) = Tensor::row(vec![0.5, -0.4]);
        let mut ex = examples[0].clone();
        ex.tokens.truncate(3);
        let params: Vec<Tensor> = model.store.iter().map(|(_, _, t)| t.clone()).collect();
        let err = grad_check(
            |g, vars| {
                let p = Bound::from_vars(vars.to_vec());
                Ok(model.forward(g, &p, &ex, DualSource::InGraph, &LossConfig::default())?.total)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
