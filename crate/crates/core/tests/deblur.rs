use evseg_core::affine::FlowField;
use evseg_core::event::SensorGeometry;
use evseg_core::fit::{fit, FitConfig};
use evseg_core::objective::flow_contrast;
use evseg_core::sim::{presets, render_events};

fn scene(flow: (f64, f64), seed: u64) -> (evseg_core::event::NormalizedEvents, SensorGeometry) {
    let g = SensorGeometry::new(128, 128).unwrap();
    let (events, _) = render_events(&presets::global_translation(g, flow, seed)).unwrap();
    (events.normalize_timestamps().unwrap(), g)
}

#[test]
fn true_flow_beats_zero_and_negated_flow() {
    let (u, v) = (6.0, -2.0);
    let (events, g) = scene((u, v), 3);
    let total = |f: FlowField| {
        let (fw, bw) = flow_contrast(&events, &f).unwrap();
        fw + bw
    };
    let truth = total(FlowField::constant(g, u, v));
    assert!(truth < total(FlowField::zeros(g)));
    assert!(truth < total(FlowField::constant(g, -u, -v)));
    let (fw, bw) = flow_contrast(&events, &FlowField::zeros(g)).unwrap();
    assert!((fw - bw).abs() <= 1e-12);
}

#[test]
fn global_fit_reaches_true_flow_contrast() {
    for (flow, seed) in [((6.0, 0.0), 0), ((-7.0, 2.0), 1)] {
        let (events, g) = scene(flow, seed);
        let mut cfg = FitConfig { iterations: 200, ..Default::default() };
        cfg.objective.lambda = 0.0;
        let (raw, _) = render_events(&presets::global_translation(g, flow, seed)).unwrap();
        let r = fit(&raw, &cfg).unwrap();
        let (fw, bw) = flow_contrast(&events, &r.flow).unwrap();
        let (tf, tb) = flow_contrast(&events, &FlowField::constant(g, flow.0, flow.1)).unwrap();
        let ratio = (fw + bw) / (tf + tb);
        assert!(ratio <= 1.1, "{flow:?}: fitted/true contrast {ratio}");
    }
}
