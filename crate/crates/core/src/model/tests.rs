use super::*;
use crate::autograd::Grads;
use crate::tokenizer::UNK;

fn tokenizer() -> Tokenizer {
    let corpus = [
        "i need a hotel in the north",
        "what else",
        r#"{"transcript":"in the north","state":{"hotel":{"area":"north"}}}"#,
        "cheap\nok",
    ];
    Tokenizer::train(corpus.iter().copied(), 120)
}

fn tiny_config(frame_dim: usize) -> ModelConfig {
    let mut c = ModelConfig::desk(frame_dim);
    let dims = TransformerDims {
        n_layers: 1,
        hidden: 8,
        n_heads: 2,
        ffn_dim: 16,
        max_pos: 400,
    };
    c.speech_encoder.out_dim = 6;
    c.connector.in_dim = 6;
    c.connector.dims = dims;
    c.connector.out_dim = 8;
    c.lm.dims = TransformerDims { n_layers: 2, ..dims };
    c
}

fn tiny_model() -> ComposedModel {
    ComposedModel::new(tiny_config(4), tokenizer()).unwrap()
}

fn example(model: &ComposedModel, frames: usize) -> Example {
    let tok = &model.tokenizer;
    let mut rng = ChaCha8Rng::seed_from_u64(frames as u64);
    let mut target = tok.encode(r#"{"transcript":"in the north","state":{}}"#);
    target.push(EOS);
    Example {
        frames: Some(Arc::new(Tensor::randn(frames, 4, 1.0, &mut rng))),
        utterance: Some(tok.encode("in the north")),
        history: tok.encode("i need a hotel\nwhat else"),
        target,
    }
}

#[test]
fn connector_length_law() {
    let model = tiny_model();
    for t in 6..=2048usize {
        let mut tape = Tape::new(&model.store);
        let x = tape.constant(Tensor::zeros(t, 6));
        let y = model.connector.forward(&mut tape, x).unwrap();
        assert_eq!(tape.shape(y), (t / 3 / 2, 8), "T = {t}");
        assert_eq!(model.connector.output_len(t), t / 3 / 2);
    }
    for t in 0..6 {
        let mut tape = Tape::new(&model.store);
        let x = tape.constant(Tensor::zeros(t, 6));
        assert!(matches!(
            model.connector.forward(&mut tape, x),
            Err(ModelError::TooShort { frames, min: 6 }) if frames == t
        ));
    }
}

#[test]
fn speech_prefix_pads_to_keep_trailing_frames() {
    let model = tiny_model();
    let mut tape = Tape::new(&model.store);
    let p = model.speech_prefix(&mut tape, &Tensor::zeros(13, 4)).unwrap();
    assert_eq!(tape.shape(p).0, 3);
    let mut tape = Tape::new(&model.store);
    assert!(matches!(
        model.speech_prefix(&mut tape, &Tensor::zeros(12, 5)),
        Err(ModelError::FrameWidth { got: 5, expected: 4 })
    ));
}

#[test]
fn text_encoder_keeps_length_and_reads_every_token() {
    let model = tiny_model();
    let ids: Vec<usize> = (3..15).collect();
    let mut tape = Tape::new(&model.store);
    let y = model.text_prefix(&mut tape, &ids).unwrap();
    assert_eq!(tape.shape(y), (12, 8));
    let base = tape.value(y).clone();

    let mut changed = ids.clone();
    changed[7] = 20;
    let mut tape = Tape::new(&model.store);
    let y2 = model.text_prefix(&mut tape, &changed).unwrap();
    assert!(tape.value(y2).max_abs_diff(&base) > 0.0);

    let mut tape = Tape::new(&model.store);
    assert!(matches!(model.text_prefix(&mut tape, &[]), Err(ModelError::EmptyText)));
    let long = vec![UNK; 401];
    assert!(matches!(
        model.text_prefix(&mut tape, &long),
        Err(ModelError::TooLong { len: 401, max: 400 })
    ));
}

#[test]
fn compose_input_length_and_order() {
    let model = tiny_model();
    let hist = model.tokenizer.encode("i need a hotel\nwhat else");
    let cont = model.tokenizer.encode("{\"transcript\"");
    let mut tape = Tape::new(&model.store);
    let p = tape.constant(Tensor::zeros(5, 8));
    let x = model.compose_input(&mut tape, Some(p), &hist, &cont);
    assert_eq!(tape.shape(x).0, 5 + hist.len() + 1 + cont.len());
    let none = model.compose_input(&mut tape, None, &hist, &[]);
    assert_eq!(tape.shape(none).0, hist.len() + 1);

    // Swapping two history turns changes the loss.
    let mut ex = example(&model, 24);
    let a = model.loss_value(PrefixSource::Speech, &ex).unwrap();
    ex.history = model.tokenizer.encode("what else\ni need a hotel");
    let b = model.loss_value(PrefixSource::Speech, &ex).unwrap();
    assert_ne!(a, b);
}

#[test]
fn missing_modality_is_reported() {
    let model = tiny_model();
    let mut ex = example(&model, 12);
    ex.frames = None;
    assert!(matches!(
        model.loss_value(PrefixSource::Speech, &ex),
        Err(ModelError::MissingModality("speech"))
    ));
}

#[test]
fn adapters_are_neutral_at_init() {
    let mut model = tiny_model();
    let ex = example(&model, 30);
    let before: Vec<Tensor> = [PrefixSource::Speech, PrefixSource::Text]
        .iter()
        .map(|&s| {
            let mut tape = Tape::new(&model.store);
            let f = model.forward(&mut tape, s, &ex).unwrap();
            tape.value(f.logits).clone()
        })
        .collect();
    let added = model.inject_adapters(AdapterConfig::default(), 9).unwrap();
    // Rank 32 on q, k, v, o of two 8-wide layers: 2 * 4 * (8*32 + 32*8).
    assert_eq!(added, 2 * 4 * 2 * 32 * 8);
    for (s, b) in [PrefixSource::Speech, PrefixSource::Text].iter().zip(&before) {
        let mut tape = Tape::new(&model.store);
        let f = model.forward(&mut tape, *s, &ex).unwrap();
        assert_eq!(tape.value(f.logits).max_abs_diff(b), 0.0);
    }
}

#[test]
fn unknown_adapter_target_is_rejected() {
    let mut model = tiny_model();
    let cfg = AdapterConfig {
        targets: vec!["q".into(), "gate".into()],
        ..AdapterConfig::default()
    };
    assert!(matches!(model.inject_adapters(cfg, 0), Err(ModelError::Config(_))));
}

#[test]
fn uniform_logits_give_log_vocab_loss() {
    let mut model = tiny_model();
    let id = model.store.find("lm.embedding").unwrap();
    let (r, c) = model.store.value(id).shape();
    *model.store.value_mut(id) = Tensor::zeros(r, c);
    let ex = example(&model, 18);
    let loss = model.loss_value(PrefixSource::Speech, &ex).unwrap();
    let v = model.tokenizer.vocab_size() as f64;
    assert!((loss - v.ln()).abs() < 1e-12);
}

fn grads_for(model: &ComposedModel, source: PrefixSource, ex: &Example) -> Grads {
    let mut tape = Tape::new(&model.store);
    let l = model.forward_loss(&mut tape, source, ex).unwrap();
    tape.backward(l)
}

#[test]
fn speech_loss_leaves_text_encoder_without_gradient() {
    let mut model = tiny_model();
    model.inject_adapters(AdapterConfig::default(), 1).unwrap();
    model.set_mask(TrainMask::DST);
    let ex = example(&model, 36);
    let g = grads_for(&model, PrefixSource::Speech, &ex);
    assert_eq!(g.component_sq_norm(&model.store, Component::TextEncoder), 0.0);
    assert!(g.component_sq_norm(&model.store, Component::Connector) > 0.0);
    assert_eq!(g.component_sq_norm(&model.store, Component::LanguageModel), 0.0);
    assert_eq!(g.component_sq_norm(&model.store, Component::SpeechEncoder), 0.0);
    let gt = grads_for(&model, PrefixSource::Text, &ex);
    assert!(gt.component_sq_norm(&model.store, Component::TextEncoder) > 0.0);
}

/// Central differences on single coordinates of connector and adapter weights.
#[test]
fn finite_differences_on_connector_and_adapter() {
    let mut model = tiny_model();
    model.inject_adapters(AdapterConfig { rank: 4, alpha: 4.0, ..AdapterConfig::default() }, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // Give the zero-initialised B factors a value so A receives gradient too.
    let b_ids: Vec<ParamId> = model
        .store
        .iter()
        .filter(|(_, p)| p.name.ends_with("lora_b"))
        .map(|(id, _)| id)
        .collect();
    for id in b_ids {
        let (r, c) = model.store.value(id).shape();
        *model.store.value_mut(id) = Tensor::randn(r, c, 0.3, &mut rng);
    }
    model.set_mask(TrainMask::DST);
    let ex = example(&model, 30);
    let g = grads_for(&model, PrefixSource::Speech, &ex);
    let ids: Vec<ParamId> = model
        .store
        .iter()
        .filter(|(_, p)| matches!(p.component, Component::Connector | Component::Adapter))
        .map(|(id, _)| id)
        .collect();
    let mut checked = 0;
    for (n, &id) in ids.iter().enumerate() {
        let len = model.store.value(id).len();
        let k = rng.gen_range(0..len);
        let analytic = g.get(id).map_or(0.0, |t| t.data()[k]);
        let h = 1e-5;
        let orig = model.store.value(id).data()[k];
        model.store.value_mut(id).data_mut()[k] = orig + h;
        let lp = model.loss_value(PrefixSource::Speech, &ex).unwrap();
        model.store.value_mut(id).data_mut()[k] = orig - h;
        let lm = model.loss_value(PrefixSource::Speech, &ex).unwrap();
        model.store.value_mut(id).data_mut()[k] = orig;
        let numeric = (lp - lm) / (2.0 * h);
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        assert!(
            (analytic - numeric).abs() / denom < 1e-4,
            "{}: analytic {analytic} numeric {numeric} (param {n})",
            model.store.param(id).name
        );
        checked += 1;
    }
    assert!(checked > 20);
}

#[test]
fn dropping_text_encoder_keeps_speech_path() {
    let mut model = tiny_model();
    let ex = example(&model, 24);
    let (p, h) = model.prefix_tensor(PrefixSource::Speech, &ex).unwrap();
    let before = model.generate(p.as_ref(), &h, 12, true).unwrap();
    let loss = model.loss_value(PrefixSource::Speech, &ex).unwrap();
    model.drop_text_encoder();
    assert_eq!(model.store.count(Component::TextEncoder), 0);
    assert_eq!(model.loss_value(PrefixSource::Speech, &ex).unwrap().to_bits(), loss.to_bits());
    assert_eq!(model.generate(p.as_ref(), &h, 12, true).unwrap(), before);
    assert!(matches!(
        model.loss_value(PrefixSource::Text, &ex),
        Err(ModelError::NoTextEncoder)
    ));
}

#[test]
fn text_embedding_can_start_from_the_lm() {
    let mut model = tiny_model();
    let ex = example(&model, 24);
    let speech = model.loss_value(PrefixSource::Speech, &ex).unwrap();
    let text = model.loss_value(PrefixSource::Text, &ex).unwrap();
    model.init_text_embedding_from_lm().unwrap();
    let lm = model.store.value(model.store.find("lm.embedding").unwrap()).clone();
    assert_eq!(model.store.value(model.store.find("text.embedding").unwrap()), &lm);
    assert_eq!(model.loss_value(PrefixSource::Speech, &ex).unwrap().to_bits(), speech.to_bits());
    assert_ne!(model.loss_value(PrefixSource::Text, &ex).unwrap(), text);

    let mut narrow = tiny_config(4);
    narrow.connector.dims.hidden = 4;
    let mut model = ComposedModel::new(narrow, tokenizer()).unwrap();
    assert!(matches!(model.init_text_embedding_from_lm(), Err(ModelError::Config(_))));
    model.drop_text_encoder();
    assert!(matches!(model.init_text_embedding_from_lm(), Err(ModelError::NoTextEncoder)));
}

#[test]
fn fingerprints_track_component_changes() {
    let mut model = tiny_model();
    let lm = model.base_lm_fingerprint();
    let conn = model.fingerprint(Component::Connector);
    let id = model.store.find("connector.proj.bias").unwrap();
    model.store.value_mut(id).data_mut()[0] += 1.0;
    assert_eq!(model.base_lm_fingerprint(), lm);
    assert_ne!(model.fingerprint(Component::Connector), conn);
    model.inject_adapters(AdapterConfig::default(), 0).unwrap();
    assert_eq!(model.base_lm_fingerprint(), lm);
}

#[test]
fn json_closure_detection() {
    assert!(!json_object_closed(r#"{"a":"}"#));
    assert!(json_object_closed(r#"{"a":"}"}"#));
    assert!(json_object_closed(r#"{"a":{"b":"c"}} trailing"#));
    assert!(!json_object_closed(r#"{"a":{"b":"c"}"#));
    assert!(!json_object_closed("no braces"));
}

#[test]
fn serde_round_trip_restores_behaviour() {
    let model = tiny_model();
    let ex = example(&model, 18);
    let json = serde_json::to_string(&model).unwrap();
    let mut back: ComposedModel = serde_json::from_str(&json).unwrap();
    back.restore();
    assert_eq!(
        back.loss_value(PrefixSource::Speech, &ex).unwrap().to_bits(),
        model.loss_value(PrefixSource::Speech, &ex).unwrap().to_bits()
    );
}

#[test]
fn joint_step_is_identical_in_both_exec_modes() {
    use crate::par::ExecMode;
    use crate::train::joint_step;
    let mut model = tiny_model();
    model.inject_adapters(AdapterConfig::default(), 2).unwrap();
    model.set_mask(TrainMask::DST);
    let speech: Vec<Example> = [24, 30, 36, 42].iter().map(|&f| example(&model, f)).collect();
    let text: Vec<Example> = [18, 24, 30].iter().map(|&f| example(&model, f)).collect();
    let s: Vec<&Example> = speech.iter().collect();
    let t: Vec<&Example> = text.iter().collect();
    let (ls, gs) = joint_step(&model, &s, &t, 0.5, true, ExecMode::Sequential, true).unwrap();
    let (lp, gp) = joint_step(&model, &s, &t, 0.5, true, ExecMode::Parallel, true).unwrap();
    assert_eq!(ls.total.to_bits(), lp.total.to_bits());
    assert_eq!(ls.speech.to_bits(), lp.speech.to_bits());
    let (gs, gp) = (gs.unwrap(), gp.unwrap());
    let a: Vec<_> = gs.iter().collect();
    let b: Vec<_> = gp.iter().collect();
    assert_eq!(a.len(), b.len());
    assert!(!a.is_empty());
    for ((ia, ta), (ib, tb)) in a.iter().zip(&b) {
        assert_eq!(ia, ib);
        assert!(ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
