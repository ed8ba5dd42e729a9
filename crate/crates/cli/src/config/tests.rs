use super::*;

fn resolve(text: &str, mode: Mode) -> Result<RunConfig> {
    RunConfig::parse(text)?.resolve(mode, &Overrides::default())
}

#[test]
fn scale_range_is_read_from_the_dist2d_table() {
    let cfg = resolve(
        "[dist2d]\nscale = [0.9, 1.4]\ncanvas = [40, 40]\n",
        Mode::Gradcheck,
    )
    .unwrap();
    let d = cfg.dist2d.to_config((28, 28)).unwrap();
    assert_eq!((d.scale.min, d.scale.max), (0.9, 1.4));
    assert_eq!(d.canvas, (40, 40));
}

#[test]
fn reversed_range_is_rejected() {
    let err = resolve("[dist2d]\nrotation_deg = [30.0, -30.0]\n", Mode::Gradcheck).unwrap_err();
    assert!(format!("{err:#}").contains("rotation_deg"), "{err:#}");
}

#[test]
fn unknown_key_suggests_the_closest_name() {
    let err = RunConfig::parse("[dist2d]\nscal = [0.9, 1.4]\n").unwrap_err();
    let msg = err.to_string();
    assert!(
        msg.contains("`scal`") && msg.contains("did you mean `scale`"),
        "{msg}"
    );
    assert!(msg.contains("line 2"), "{msg}");
    let err = RunConfig::parse("sed = 3\n").unwrap_err();
    assert!(err.to_string().contains("did you mean `seed`"), "{err}");
}

#[test]
fn unrelated_unknown_key_lists_the_choices() {
    let err = RunConfig::parse("[attack]\nzzzz = 1\n").unwrap_err();
    assert!(err.to_string().contains("expected one of"), "{err}");
}

#[test]
fn flags_override_the_file() {
    let cfg = RunConfig::parse("seed = 4\n[attack]\nsteps = 10\nlambda = 0.5\n")
        .unwrap()
        .resolve(
            Mode::Gradcheck,
            &Overrides {
                seed: Some(9),
                steps: Some(3),
                ..Overrides::default()
            },
        )
        .unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.attack.steps, 3);
    assert_eq!(cfg.attack.lambda, 0.5);
}

#[test]
fn mode_defaults_follow_the_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.eotm");
    std::fs::write(&model, b"").unwrap();
    let text = format!("model = {:?}\n", model.display().to_string());
    let three = resolve(&text, Mode::Attack3d).unwrap();
    assert_eq!(three.attack.learning_rate, Some(1e-1));
    assert_eq!(three.attack.holdout_samples, Some(100));
    let two = RunConfig::parse(&text)
        .unwrap()
        .resolve(Mode::Attack2d, &Overrides::default());
    // The IDX test split is required when no image is given.
    assert!(format!("{:#}", two.unwrap_err()).contains("data.test_images"));
}

#[test]
fn missing_and_nonexistent_paths_are_reported() {
    let err = resolve("", Mode::Attack2d).unwrap_err();
    assert!(err.to_string().contains("`model`"), "{err}");
    let err = resolve("model = \"/nonexistent/model.eotm\"\n", Mode::Attack3d).unwrap_err();
    assert!(err.to_string().contains("does not exist"), "{err}");
}

#[test]
fn conflicting_mode_is_rejected() {
    let err = resolve("mode = \"train\"\n", Mode::Gradcheck).unwrap_err();
    assert!(err.to_string().contains("train"), "{err}");
}

#[test]
fn resolved_config_round_trips() {
    let cfg = resolve(
        "seed = 7\n[dist2d]\ntranslation = [-4.0, 4.0]\ncanvas = [40, 40]\n[physical]\n",
        Mode::Gradcheck,
    );
    let physical = cfg.unwrap().physical.unwrap().to_config().unwrap();
    assert_eq!(physical, PhysicalConfig::standard());
    let text = "seed = 7\n[dist2d]\ntranslation = [-4.0, 4.0]\ncanvas = [40, 40]\n[pose3d]\nrotation = [1.0, 0.0, 0.0, 0.0]\n";
    let cfg = resolve(text, Mode::Gradcheck).unwrap();
    let echoed = cfg.to_toml().unwrap();
    let again = resolve(&echoed, Mode::Gradcheck).unwrap();
    assert_eq!(again, cfg);
    assert_eq!(again.mode, Some(Mode::Gradcheck));
    let d = again.dist2d.to_config((28, 28)).unwrap();
    assert_eq!(
        d.translation,
        Translation::Pixels {
            x: Interval::new(-4.0, 4.0),
            y: Interval::new(-4.0, 4.0)
        }
    );
    assert_eq!(
        again.pose3d.to_config().unwrap().rotation,
        RotationRange::Fixed([1.0, 0.0, 0.0, 0.0])
    );
}

#[test]
fn bad_named_values_are_rejected() {
    assert!(resolve("[dist2d]\ntranslation = \"anywhere\"\n", Mode::Gradcheck).is_err());
    assert!(resolve("[pose3d]\nrotation = \"some\"\n", Mode::Gradcheck).is_err());
    assert!(resolve(
        "[train]\nlayers = [\"conv5x8\", \"bogus\"]\n",
        Mode::Gradcheck
    )
    .is_err());
    assert!(resolve("[attack]\nbatch_size = 0\n", Mode::Gradcheck).is_err());
}

#[test]
fn object_classes_must_be_colour_shapes() {
    let model = tempfile::NamedTempFile::new().unwrap();
    let text = format!(
        "model = {:?}\n[data]\ndataset = \"color_shapes\"\nobjects = [0, 3]\n",
        model.path()
    );
    let err = resolve(&text, Mode::Attack3d).unwrap_err();
    assert!(err.to_string().contains("class 3"), "{err}");
}
