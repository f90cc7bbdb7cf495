//! Intervention pipeline contracts on a real decoder: hook locality, the
//! blend identity, calibration behavior across steps, probe purity, and the
//! mode algebra.

mod common;

use common::*;
use latentcal::crc::{
    calibrate_state, make_negatives, probe_directions, CalibConfig, ProbePosition,
};
use latentcal::decoder::{
    forward_layer_states, forward_to_layer, greedy_decode, DecodeState, HookSet, LayerProbe,
};
use latentcal::harness::{
    assemble_pipeline, build_encoder, build_model, build_task, pipeline_decode, run_experiment,
    Mode, RunConfig,
};
use latentcal::numeric::Rng;
use latentcal::svc::{blend, build_bank, register_svc, visual_context};
use latentcal::vision::{augment, AugmentConfig};

fn small_calib() -> CalibConfig {
    CalibConfig {
        l_c: 2,
        seed: 5,
        ..CalibConfig::default()
    }
}

fn bank_for_fixture() -> latentcal::svc::SynergyBank {
    let scene = fixture_scene();
    let aug = augment(&scene, &AugmentConfig::default(), &mut Rng::from_seed(6));
    let encoder = small_encoder();
    build_bank(
        &encoder.encode(&scene).unwrap(),
        &encoder.encode(&aug).unwrap(),
    )
    .unwrap()
}

#[test]
fn bank_matches_golden() {
    let bank = bank_for_fixture();
    check_golden("synergy_bank.json", bank.tokens(), matrices_close);
}

#[test]
fn svc_zero_strength_is_bitwise_vanilla() {
    let model = small_model();
    let mut hooks = HookSet::new();
    register_svc(
        &mut hooks,
        &CalibConfig {
            lambda_s: 0.0,
            ..small_calib()
        },
        bank_for_fixture(),
    )
    .unwrap();
    assert!(hooks.is_empty());
    let hooked = greedy_decode(&model, &fixture_vision(), &fixture_query(), &hooks, 8).unwrap();
    let vanilla =
        greedy_decode(&model, &fixture_vision(), &fixture_query(), &HookSet::new(), 8).unwrap();
    assert_eq!(hooked, vanilla);
}

#[test]
fn svc_touches_only_its_layer_and_blends_exactly() {
    let model = small_model();
    let calib = small_calib();
    let mut hooks = HookSet::new();
    register_svc(&mut hooks, &calib, bank_for_fixture()).unwrap();

    let vision = fixture_vision();
    let query = fixture_query();
    let vanilla_states =
        forward_layer_states(&model, &vision, &query, 4, &HookSet::new()).unwrap();
    let hooked_states = forward_layer_states(&model, &vision, &query, 4, &hooks).unwrap();

    // Layers below the intervention layer are untouched bitwise.
    for l in 0..calib.l_c - 1 {
        assert_eq!(vanilla_states[l], hooked_states[l], "layer {} changed", l + 1);
    }

    // At the intervention layer the output is exactly the interpolation of
    // the vanilla output with the attention context over the bank, queried
    // by the (identical) previous layer output.
    let bank = bank_for_fixture();
    let query_states = &vanilla_states[calib.l_c - 2];
    let context = visual_context(query_states, &bank).unwrap();
    let expected = blend(&vanilla_states[calib.l_c - 1], &context, calib.lambda_s).unwrap();
    assert_eq!(hooked_states[calib.l_c - 1], expected);

    // The hooked output differs from vanilla by exactly lambda * (C - H).
    let delta = hooked_states[calib.l_c - 1]
        .sub(&vanilla_states[calib.l_c - 1])
        .unwrap();
    let oracle = context
        .sub(&vanilla_states[calib.l_c - 1])
        .unwrap()
        .scale(calib.lambda_s);
    assert!(delta.max_abs_diff(&oracle).unwrap() < 1e-12);
}

#[test]
fn svc_prefill_flag_defers_first_step() {
    let model = small_model();
    let calib = CalibConfig {
        svc_prefill: false,
        ..small_calib()
    };
    let mut hooks = HookSet::new();
    register_svc(&mut hooks, &calib, bank_for_fixture()).unwrap();
    // With the prefill blend disabled, step 0 states equal vanilla.
    let vanilla = forward_to_layer(&model, &fixture_vision(), &fixture_query(), 4, &HookSet::new())
        .unwrap();
    let hooked =
        forward_to_layer(&model, &fixture_vision(), &fixture_query(), 4, &hooks).unwrap();
    assert_eq!(vanilla, hooked);

    // But generation steps feel the blend: after one advance, the hidden
    // state at the intervention layer diverges from vanilla.
    let first_token = {
        let mut state = DecodeState::new(&model, &fixture_vision(), &fixture_query()).unwrap();
        state.prefill(&model, &HookSet::new()).unwrap();
        latentcal::decoder::argmax_token(&state.current_logits(&model).unwrap())
    };
    let last_row = |hook_set: &HookSet| {
        let mut state = DecodeState::new(&model, &fixture_vision(), &fixture_query()).unwrap();
        state.prefill(&model, hook_set).unwrap();
        state.advance(&model, first_token, hook_set).unwrap();
        let seq = state.hidden_sequence(calib.l_c);
        seq.row_vec(seq.rows() - 1)
    };
    let diff = last_row(&hooks)
        .max_abs_diff(&last_row(&HookSet::new()))
        .unwrap();
    assert!(diff > 1e-9, "step-1 state should feel the blend, diff {diff}");
}

#[test]
fn svc_blend_input_variant_registers_one_layer_down() {
    let model = small_model();
    let calib = CalibConfig {
        svc_blend_input: true,
        ..small_calib()
    };
    let mut hooks = HookSet::new();
    register_svc(&mut hooks, &calib, bank_for_fixture()).unwrap();
    assert_eq!(hooks.hooks_at(calib.l_c - 1).count(), 1);
    assert_eq!(hooks.hooks_at(calib.l_c).count(), 0);

    // The layer's own attention now consumes the blended input, so the
    // intervention-layer output differs from the post-layer variant.
    let mut post_hooks = HookSet::new();
    register_svc(
        &mut post_hooks,
        &CalibConfig {
            svc_blend_input: false,
            ..calib.clone()
        },
        bank_for_fixture(),
    )
    .unwrap();
    let pre = forward_to_layer(&model, &fixture_vision(), &fixture_query(), calib.l_c, &hooks)
        .unwrap();
    let post =
        forward_to_layer(&model, &fixture_vision(), &fixture_query(), calib.l_c, &post_hooks)
            .unwrap();
    assert!(pre.max_abs_diff(&post).unwrap() > 1e-9);

    // Blending into the input of layer 1 has no layer below it.
    let too_low = CalibConfig {
        l_c: 1,
        svc_blend_input: true,
        ..small_calib()
    };
    let mut set = HookSet::new();
    assert!(register_svc(&mut set, &too_low, bank_for_fixture()).is_err());
}

#[test]
fn crc_sign_flag_changes_the_decode_direction() {
    let model = small_model();
    let vision = fixture_vision();
    let query = fixture_query();
    let calib = CalibConfig {
        lambda_c: 0.4,
        ..small_calib()
    };
    let negs = make_negatives(&vision, calib.k, calib.n_h, &mut Rng::from_seed(9)).unwrap();
    let cache = probe_directions(
        &model,
        &vision,
        &query,
        &negs,
        calib.l_c,
        ProbePosition::FinalPosition,
    )
    .unwrap();
    let build = |flip: bool| {
        let mut hooks = HookSet::new();
        latentcal::crc::register_crc(
            &mut hooks,
            &cache,
            &CalibConfig {
                crc_flip_sign: flip,
                ..calib.clone()
            },
        )
        .unwrap();
        hooks
    };
    let first_token = greedy_decode(&model, &vision, &query, &HookSet::new(), 1).unwrap()[0];
    let state_for = |hooks: &HookSet| {
        let mut state = DecodeState::new(&model, &vision, &query).unwrap();
        state.prefill(&model, hooks).unwrap();
        state.advance(&model, first_token, hooks).unwrap();
        let seq = state.hidden_sequence(calib.l_c);
        seq.row_vec(seq.rows() - 1)
    };
    let plus = state_for(&build(false));
    let minus = state_for(&build(true));
    assert!(plus.max_abs_diff(&minus).unwrap() > 1e-9);
}

#[test]
fn crc_zero_strength_is_bitwise_vanilla() {
    let model = small_model();
    let vision = fixture_vision();
    let query = fixture_query();
    let calib = CalibConfig {
        lambda_c: 0.0,
        ..small_calib()
    };
    let negs = make_negatives(&vision, calib.k, calib.n_h, &mut Rng::from_seed(9)).unwrap();
    let cache = probe_directions(
        &model,
        &vision,
        &query,
        &negs,
        calib.l_c,
        ProbePosition::FinalPosition,
    )
    .unwrap();
    let mut hooks = HookSet::new();
    latentcal::crc::register_crc(&mut hooks, &cache, &calib).unwrap();
    assert!(hooks.is_empty());
}

#[test]
fn crc_skips_the_probe_step_and_preserves_norms() {
    let model = small_model();
    let vision = fixture_vision();
    let query = fixture_query();
    let calib = small_calib();
    let negs = make_negatives(&vision, calib.k, calib.n_h, &mut Rng::from_seed(9)).unwrap();
    let cache = probe_directions(
        &model,
        &vision,
        &query,
        &negs,
        calib.l_c,
        ProbePosition::FinalPosition,
    )
    .unwrap();
    let mut hooks = HookSet::new();
    latentcal::crc::register_crc(&mut hooks, &cache, &calib).unwrap();

    // Step 0: no calibration happens.
    let vanilla = forward_to_layer(&model, &vision, &query, 4, &HookSet::new()).unwrap();
    let hooked = forward_to_layer(&model, &vision, &query, 4, &hooks).unwrap();
    assert_eq!(vanilla, hooked);

    // Steps t > 0: at every hooked layer the calibrated last-position state
    // keeps the norm it had entering the calibration. The reference stream
    // calibrates the layers below `layer` only and replays the same tokens,
    // so its layer output is the pre-calibration state.
    let tokens = {
        let mut state = DecodeState::new(&model, &vision, &query).unwrap();
        state.prefill(&model, &hooks).unwrap();
        let mut tokens = Vec::new();
        for _ in 0..3 {
            let logits = state.current_logits(&model).unwrap();
            let token = latentcal::decoder::argmax_token(&logits);
            tokens.push(token);
            state.advance(&model, token, &hooks).unwrap();
        }
        tokens
    };
    let hooks_up_to = |l_c: usize| -> HookSet {
        let mut set = HookSet::new();
        if l_c > 0 {
            let cache = probe_directions(
                &model,
                &vision,
                &query,
                &negs,
                l_c,
                ProbePosition::FinalPosition,
            )
            .unwrap();
            let config = CalibConfig {
                l_c,
                ..calib.clone()
            };
            latentcal::crc::register_crc(&mut set, &cache, &config).unwrap();
        }
        set
    };
    for layer in 1..=calib.l_c {
        let below = hooks_up_to(layer - 1);
        let through = hooks_up_to(layer);

        let mut pre = DecodeState::new(&model, &vision, &query).unwrap();
        pre.prefill(&model, &below).unwrap();
        let mut post = DecodeState::new(&model, &vision, &query).unwrap();
        post.prefill(&model, &through).unwrap();
        for (t, &token) in tokens.iter().enumerate() {
            pre.advance(&model, token, &below).unwrap();
            post.advance(&model, token, &through).unwrap();
            let h_pre = pre.hidden_sequence(layer);
            let h_post = post.hidden_sequence(layer);
            let pre_norm = h_pre.row_vec(h_pre.rows() - 1).norm();
            let post_norm = h_post.row_vec(h_post.rows() - 1).norm();
            assert!(
                (pre_norm - post_norm).abs() < 1e-9,
                "t={} layer {layer}: {pre_norm} vs {post_norm}",
                t + 1
            );
        }
    }
}

#[test]
fn crc_direction_sign_flag_flips_the_nudge() {
    let h = latentcal::numeric::Vec1D::new(vec![1.0, 0.4, -0.2]);
    let v = latentcal::numeric::Vec1D::new(vec![0.1, -0.9, 0.5]);
    let plus = calibrate_state(&h, &v, 0.2).unwrap();
    let minus = calibrate_state(&h, &v.scale(-1.0), 0.2).unwrap();
    assert!(plus.max_abs_diff(&minus).unwrap() > 1e-6);
    // Both stay on the original norm shell.
    assert!((plus.norm() - h.norm()).abs() < 1e-9);
    assert!((minus.norm() - h.norm()).abs() < 1e-9);
}

#[test]
fn probe_cache_is_independent_of_strength_parameters() {
    let model = small_model();
    let vision = fixture_vision();
    let query = fixture_query();
    let negs = make_negatives(&vision, 3, 5, &mut Rng::from_seed(2)).unwrap();
    let cache = probe_directions(
        &model,
        &vision,
        &query,
        &negs,
        2,
        ProbePosition::FinalPosition,
    )
    .unwrap();
    // The probe never sees hooks or strengths; recomputing after decodes
    // with aggressive strengths yields the identical cache.
    let mut hooks = HookSet::new();
    register_svc(
        &mut hooks,
        &CalibConfig {
            lambda_s: 1.0,
            ..small_calib()
        },
        bank_for_fixture(),
    )
    .unwrap();
    let _ = greedy_decode(&model, &vision, &query, &hooks, 4).unwrap();
    let again = probe_directions(
        &model,
        &vision,
        &query,
        &negs,
        2,
        ProbePosition::FinalPosition,
    )
    .unwrap();
    assert_eq!(cache, again);
}

#[test]
fn probe_query_mean_position_is_supported() {
    let model = small_model();
    let vision = fixture_vision();
    let query = fixture_query();
    let negs = make_negatives(&vision, 2, 5, &mut Rng::from_seed(2)).unwrap();
    let final_pos = probe_directions(
        &model,
        &vision,
        &query,
        &negs,
        2,
        ProbePosition::FinalPosition,
    )
    .unwrap();
    let query_mean =
        probe_directions(&model, &vision, &query, &negs, 2, ProbePosition::QueryMean).unwrap();
    assert_ne!(final_pos, query_mean);

    // The query-mean view matches the hand-computed mean over query rows.
    let states = model.probe_layer_query_mean(&vision, &query, 2).unwrap();
    let full = forward_layer_states(&model, &vision, &query, 2, &HookSet::new()).unwrap();
    for (l, state) in states.iter().enumerate() {
        let lo = vision.len();
        let rows: Vec<latentcal::numeric::Vec1D> =
            (lo..lo + query.len()).map(|r| full[l].row_vec(r)).collect();
        let mean = latentcal::numeric::mean_rows(&rows).unwrap();
        assert!(state.max_abs_diff(&mean).unwrap() < 1e-12);
    }
}

// Mode algebra over full pipelines: zeroing one module's strength collapses
// unified onto the other module, token for token.
#[test]
fn mode_algebra_token_equality() {
    let task = build_task(12, 2, 11).unwrap();
    let config = RunConfig::default();
    let model = build_model(&config).unwrap();
    let encoder = build_encoder(&config);

    for (question_index, question) in task.questions.iter().take(4).enumerate() {
        let scene = latentcal::vision::generate_scene(&task.scene_specs[question.scene_index])
            .unwrap();
        let query = latentcal::harness::question_tokens(question.object_id);
        let vision = encoder.encode(&scene).unwrap();
        let seed = question_index as u64;

        let decode = |mode: Mode, calib: &CalibConfig| {
            let pipeline = assemble_pipeline(
                mode,
                &model,
                &encoder,
                &scene,
                &query,
                calib,
                config.contrast_weight,
                seed,
            )
            .unwrap();
            pipeline_decode(&model, &vision, &query, &pipeline, 6).unwrap()
        };

        let base = config.calib.clone();
        let no_svc = CalibConfig {
            lambda_s: 0.0,
            ..base.clone()
        };
        let no_crc = CalibConfig {
            lambda_c: 0.0,
            ..base.clone()
        };
        let inert = CalibConfig {
            lambda_s: 0.0,
            lambda_c: 0.0,
            ..base.clone()
        };

        assert_eq!(decode(Mode::Unified, &no_svc), decode(Mode::Crc, &base));
        assert_eq!(decode(Mode::Unified, &no_crc), decode(Mode::Svc, &base));
        assert_eq!(decode(Mode::Unified, &inert), decode(Mode::Vanilla, &base));
        assert_eq!(decode(Mode::Vanilla, &base), {
            greedy_decode(&model, &vision, &query, &HookSet::new(), 6).unwrap()
        });
    }
}

#[test]
fn naive_combo_changes_logits_not_hidden_states() {
    let config = RunConfig::default();
    let model = build_model(&config).unwrap();
    let encoder = build_encoder(&config);
    let scene = fixture_scene();
    let query = fixture_query();

    let combo = assemble_pipeline(
        Mode::NaiveCombo,
        &model,
        &encoder,
        &scene,
        &query,
        &config.calib,
        1.0,
        3,
    )
    .unwrap();
    let unified = assemble_pipeline(
        Mode::Unified,
        &model,
        &encoder,
        &scene,
        &query,
        &config.calib,
        1.0,
        3,
    )
    .unwrap();
    assert!(combo.intervenes_on_logits());
    assert!(!unified.intervenes_on_logits());
    // The combo registers no calibration hooks; its hidden-state side is
    // exactly the injection hook.
    assert!(combo.cache.is_none());
    assert_eq!(combo.hooks.len(), 1);
}

#[test]
#[allow(clippy::field_reassign_with_default)]
fn experiment_is_reproducible_from_fingerprint_inputs() {
    let task = build_task(12, 2, 13).unwrap();
    let mut config = RunConfig::default();
    config.mode = Mode::Unified;
    config.seed = 404;
    config.calib.seed = 404;
    let a = run_experiment(&config, &task).unwrap();
    let b = run_experiment(&config, &task).unwrap();
    assert_eq!(a.config_fingerprint, b.config_fingerprint);
    assert_eq!(a.split_metrics, b.split_metrics);
    assert_eq!(a.overall, b.overall);
    assert_eq!(a.hallucination_proxy_rate, b.hallucination_proxy_rate);
}
