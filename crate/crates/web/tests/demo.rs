use tfus_core::acoustic::AcousticConstants;
use tfus_core::phantom::ShellPhantomSpec;
use tfus_web::{curves, project, property_curves, Demo, Layer, Scene};

fn uniform_scene() -> Scene {
    Scene::new(&ShellPhantomSpec::uniform(8.0, 3.0, 1500.0), 61, 0.5, 10.0).unwrap()
}

#[test]
fn slices_are_square_rgba() {
    let s = uniform_scene();
    for layer in [Layer::Hu, Layer::SoundSpeed, Layer::Density, Layer::Absorption] {
        let (w, h, px) = s.slice_rgba(layer, 2, 30).unwrap();
        assert_eq!((w, h, px.len()), (61, 61, 61 * 61 * 4));
        assert!(px.chunks(4).all(|p| p[3] == 255));
        // Water at the centre is dark on every property map.
        let c = 4 * (30 * 61 + 30);
        if layer != Layer::Hu {
            assert_eq!(&px[c..c + 3], &[0, 0, 0], "{layer:?}");
        }
    }
    assert!(s.slice_rgba(Layer::Hu, 0, 61).is_err());
    assert!(s.slice_rgba(Layer::Hu, 3, 0).is_err());
}

#[test]
fn hu_slice_uses_fixed_window() {
    let s = uniform_scene();
    let (_, _, px) = s.slice_rgba(Layer::Hu, 2, 30).unwrap();
    let at = |i: usize| px[4 * (30 * 61 + i)];
    // Water 0 HU over [-1000, 2000]; bone 1500 HU.
    assert_eq!(at(30), 85);
    assert_eq!(at(30 + 14), 213);
}

#[test]
fn element_map_on_uniform_shell() {
    let m = uniform_scene().plan(0.0, 0.0).unwrap();
    assert_eq!(m.nae, 990);
    assert!((m.sdr - 1.0).abs() < 1e-6);
    assert_eq!((m.xy.len(), m.active.len(), m.angle.len()), (1980, 990, 990));
    assert!(m.active.iter().all(|&a| a == 1));
    assert!(m.xy.iter().all(|v| v.abs() <= 1.0 + 1e-6));
}

#[test]
fn projection_is_radial_in_polar_angle() {
    assert_eq!(project(0), [0.0, 0.0]);
    let r = |i: usize| project(i)[0].hypot(project(i)[1]);
    assert!((1..1000).all(|i| r(i) > r(i - 1) - 1e-12));
    assert!(r(1023) <= 1.0 + 1e-9);
}

#[test]
fn tilt_bound_is_enforced() {
    let s = uniform_scene();
    assert!(s.plan(10.0, -10.0).is_ok());
    assert!(s.plan(10.5, 0.0).is_err());
}

#[test]
fn curves_match_property_mapping() {
    let k = AcousticConstants::default();
    let rows = property_curves(&k, -1000.0, 2000.0, 4, 650e3);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0][..4], [-1000.0, 1480.0, 1000.0, 0.0]);
    assert_eq!(rows[2][..4], [1000.0, 3100.0, 2100.0, 8.1]);
    assert_eq!(rows[3][1], 3100.0);
    let want = 8.1 * 0.65f64.powf(1.1);
    assert!((rows[2][4] - want).abs() < 1e-12);

    let flat = curves(0.0, 1000.0, 3, 650e3);
    assert_eq!(flat.len(), 15);
    assert_eq!(flat[5], 500.0);
    assert_eq!(flat[6], 1480.0 + 0.5 * 1620.0);
}

#[test]
fn demo_wrapper_without_error_paths() {
    let d = Demo::new(8.0, 5.0, 1.0, 1800.0, 750.0, 41, 0.5, 10.0).unwrap_or_else(|_| panic!("demo"));
    assert_eq!(d.size(), 41);
    let p = d.plan(0.0, 0.0).unwrap_or_else(|_| panic!("plan"));
    assert!(p.nae() > 900 && p.sdr() < 1.0 && p.sdr() > 0.3);
    assert_eq!(p.active().len(), 990);
}
