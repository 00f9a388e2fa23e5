use musechat::datasim::{build_dataset, DataConfig};
use musechat::encoders::EncoderConfig;
use musechat_cli::config::RunConfig;
use musechat_cli::session::{scripted_sessions, Session};
use musechat_cli::train::train_model;

#[test]
fn prompts_naming_missing_tags_improve_the_rank() {
    let cfg = RunConfig::default();
    let ds = build_dataset(&DataConfig::default(), &EncoderConfig::default(), cfg.seed).unwrap();
    let model = train_model(&cfg, &ds, None, None, |_, _| Ok(())).unwrap().model;
    let stats = scripted_sessions(&model, &ds, 100, 100, 7).unwrap();
    println!(
        "scripted sessions: {} improved of {} ({} draws skipped)",
        stats.improved, stats.sessions, stats.skipped
    );
    assert_eq!(stats.sessions, 100);
    assert!(stats.rate() >= 0.7, "{stats:?}");

    // A scripted two-prompt session replays identically.
    let video = &ds.split.test[0].video_id;
    let replay = || {
        let mut s = Session::open(&model, &ds, video, None, 100, 7).unwrap();
        s.first_turn().unwrap();
        s.refine("more piano , less rock").unwrap();
        s.refine("").unwrap();
        s.turns().to_vec()
    };
    let a = replay();
    assert_eq!(a, replay());
    assert!(a[2].low_information && !a[1].low_information);
    assert_eq!(a[2].candidate.as_deref(), Some(a[1].top()));
}
