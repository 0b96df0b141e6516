//! MRHLP_SEED environment override, isolated in its own test binary so the
//! variable cannot leak into other CLI tests.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mrhlp"))
}

#[test]
fn env_seed_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("in.csv");
    let spec = mrhlp::demo_spec(200, 3).unwrap();
    let (series, _) = mrhlp::simulate(&spec).unwrap();
    mrhlp::io::write_csv(
        std::fs::File::create(&data).unwrap(),
        &series,
        &mrhlp::io::default_channel_names(3),
        None,
    )
    .unwrap();

    let fit = |tag: &str, seed_flag: &str, env_seed: Option<&str>| -> Vec<u8> {
        let model = dir.path().join(format!("{tag}.json"));
        let mut cmd = bin();
        cmd.args(["fit", "--k", "3", "--p", "0", "--restarts", "2"])
            .args(["--seed", seed_flag])
            .arg(data.to_str().unwrap())
            .args(["-o", model.to_str().unwrap()])
            .current_dir(dir.path());
        match env_seed {
            Some(value) => cmd.env("MRHLP_SEED", value),
            None => cmd.env_remove("MRHLP_SEED"),
        };
        let out = cmd.output().unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        std::fs::read(&model).unwrap()
    };

    let with_flag_7 = fit("flag7", "7", None);
    let with_env_7 = fit("env7", "999", Some("7"));
    let with_flag_999 = fit("flag999", "999", None);
    assert_eq!(with_flag_7, with_env_7, "env seed must shadow the flag");
    assert_ne!(with_env_7, with_flag_999, "different seeds must differ");

    // A malformed value is rejected with a data-error exit.
    let mut cmd = bin();
    cmd.args(["fit", "--k", "3", "--p", "0"])
        .arg(data.to_str().unwrap())
        .args(["-o", dir.path().join("x.json").to_str().unwrap()])
        .current_dir(dir.path())
        .env("MRHLP_SEED", "not-a-number");
    let out = cmd.output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
