use std::sync::OnceLock;
use std::time::Duration;

use nalgebra::Vector3;
use siteslam::cloudops::ate_rmse;
use siteslam::frontend::{extract_features, DetectorParams, FrameFeatures, KeyframeNode};
use siteslam::geom::{CameraIntrinsics, SE3Pose};
use siteslam::pipeline::{SlamConfig, SlamState};
use siteslam::posegraph::EdgeKind;
use siteslam::session::server::localize_reply;
use siteslam::session::wire::{error_code, frame_bytes, kind, Message};
use siteslam::session::{
    load_map, localize, merge_sessions, save_map, start_server, track_client, LocalizeParams, MapArchive, MapClient,
    MapSnapshot, MergeParams, ServerParams, SessionError, TrackParams,
};
use siteslam::simworld::{
    flight_preset, nadir_rotation, render_flight, render_frame, scene_preset, FlightPlan, FrameRecord, NoiseModel,
    Terrain,
};

fn qvga() -> CameraIntrinsics {
    CameraIntrinsics::vga().scaled(320, 240)
}

fn terrain() -> &'static Terrain {
    static T: OnceLock<Terrain> = OnceLock::new();
    T.get_or_init(|| Terrain::new(&scene_preset("trench").unwrap()).unwrap())
}

struct Fixture {
    a: Vec<FrameRecord>,
    b: Vec<FrameRecord>,
    map: MapArchive,
    /// Keyframes of flight B mapped on their own.
    b_keyframes: Vec<KeyframeNode>,
    /// map-from-world.
    world_to_map: SE3Pose<f64>,
}

fn second_flight() -> FlightPlan {
    FlightPlan::new(vec![Vector3::new(-3.5, -0.5, 4.0), Vector3::new(3.5, -0.5, 4.0)])
}

fn map_session(frames: &[FrameRecord]) -> SlamState {
    let mut s = SlamState::new(SlamConfig::default(), qvga()).unwrap();
    for f in frames {
        s.step(f).unwrap();
    }
    s.finish().unwrap();
    s
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let noise = NoiseModel::default();
        let a = render_flight(terrain(), &qvga(), &flight_preset("strip", 4.0).unwrap(), &noise, 11, 0.0).unwrap();
        let b = render_flight(terrain(), &qvga(), &second_flight(), &noise, 12, 1000.0).unwrap();
        let map = map_session(&a).archive("first").unwrap();
        let b_keyframes = map_session(&b).keyframes().unwrap();
        let world_to_map = a[0].gt_pose.unwrap().inverse();
        Fixture {
            a,
            b,
            map,
            b_keyframes,
            world_to_map,
        }
    })
}

fn features_of(f: &FrameRecord) -> FrameFeatures {
    extract_features(&f.rgb.to_gray(), &f.depth, &qvga(), &DetectorParams::default())
}

fn frame_at(x: f64, y: f64, yaw: f64, seed: u64) -> FrameRecord {
    let pose = SE3Pose::new(nadir_rotation(yaw, 0.0), Vector3::new(x, y, 4.0));
    render_frame(terrain(), &qvga(), &pose, &NoiseModel::default(), seed, 0.0).unwrap()
}

fn ground_truth_in_map(frames: &[FrameRecord]) -> Vec<(f64, SE3Pose<f64>)> {
    let m = fixture().world_to_map;
    frames.iter().map(|f| (f.timestamp, m * f.gt_pose.unwrap())).collect()
}

#[test]
fn archive_roundtrip_is_exact() {
    let map = &fixture().map;
    assert!(map.keyframes.len() >= 20, "{}", map.keyframes.len());
    let bytes = save_map(map);
    let back = load_map(&bytes).unwrap();
    assert_eq!(&back, map);
    assert_eq!(save_map(&back), bytes);
}

#[test]
fn keyframes_localize_onto_themselves() {
    let map = &fixture().map;
    for kf in map.keyframes.iter().step_by(4) {
        let loc = localize(&kf.features, map, &LocalizeParams::default()).expect("own features localize");
        assert_eq!(loc.keyframe_id, kf.id);
        assert!(loc.pose.max_abs_diff(&map.pose_of(kf)) < 1e-9);
    }
}

#[test]
fn offset_query_localizes_near_its_true_pose() {
    let fx = fixture();
    let truth = fx.a[120].gt_pose.unwrap();
    let moved = SE3Pose::new(truth.rotation, truth.translation + Vector3::new(0.2, 0.0, 0.0));
    let frame = render_frame(terrain(), &qvga(), &moved, &NoiseModel::default(), 99, 0.0).unwrap();
    let loc = localize(&features_of(&frame), &fx.map, &LocalizeParams::default()).expect("localized");
    let expected = fx.world_to_map * moved;
    let err = (loc.pose.translation - expected.translation).norm();
    assert!(err < 0.05, "{err}");
    assert!(loc.confidence > 0.0 && loc.confidence <= 1.0);
}

#[test]
fn unmapped_area_does_not_localize() {
    let fx = fixture();
    for (i, x) in [-3.0, 0.0, 3.0].into_iter().enumerate() {
        let frame = frame_at(x, 6.0, 0.0, i as u64);
        assert!(localize(&features_of(&frame), &fx.map, &LocalizeParams::default()).is_none());
    }
}

#[test]
fn merge_adds_inter_session_edges_and_conserves_nodes() {
    let fx = fixture();
    let (merged, report) = merge_sessions(&fx.map, &fx.b_keyframes, "second", &MergeParams::default()).unwrap();
    assert_eq!(report.session, 1);
    assert!(report.inter_session_edges >= 1);
    assert_eq!(report.added_keyframes, fx.b_keyframes.len());
    assert_eq!(merged.graph.count_edges(EdgeKind::InterSession), report.inter_session_edges);
    assert_eq!(merged.graph.nodes.len(), fx.map.graph.nodes.len() + fx.b_keyframes.len());
    assert_eq!(merged.keyframes.len(), merged.graph.nodes.len());
    assert_eq!(merged.sessions.len(), 2);

    let mut est: Vec<_> = merged.sessions.values().flat_map(|s| s.trajectory.clone()).collect();
    est.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut gt = ground_truth_in_map(&fx.a);
    gt.extend(ground_truth_in_map(&fx.b));
    let ate = ate_rmse(&est, &gt, 1e-6).unwrap();
    assert!(ate <= 0.10, "{ate}");

    // The merged map survives a save/load cycle.
    assert_eq!(load_map(&save_map(&merged)).unwrap(), merged);
}

#[test]
fn merge_of_an_unrelated_session_fails() {
    let fx = fixture();
    let far: Vec<FrameRecord> = (0..40)
        .map(|i| frame_at(-3.0 + i as f64 * 0.033, 6.0, 0.0, 500 + i))
        .collect();
    let kfs = map_session(&far).keyframes().unwrap();
    let r = merge_sessions(&fx.map, &kfs, "far", &MergeParams::default());
    assert!(matches!(r, Err(SessionError::NeverLocalized)));
}

#[test]
fn wire_localize_matches_in_process_on_fifty_queries() {
    let fx = fixture();
    let server = start_server(Some(fx.map.clone()), "127.0.0.1:0", ServerParams::default()).unwrap();
    let snap = MapSnapshot::new(fx.map.clone());
    let params = ServerParams::default().localize;
    let mut client = MapClient::connect(server.local_addr()).unwrap();
    let mut queries: Vec<FrameRecord> = fx.b.iter().step_by(7).take(30).cloned().collect();
    queries.extend((0..20).map(|i| frame_at(-4.0 + 0.4 * i as f64, 6.0, 0.3 * i as f64, 700 + i)));
    assert_eq!(queries.len(), 50);
    let (mut hits, mut misses) = (0, 0);
    for q in &queries {
        let feats = features_of(q);
        let remote = client.localize_raw(&feats).unwrap();
        match (localize_reply(&snap, &feats, &params), remote) {
            (Message::Localized { pose, confidence }, Some((rp, rc))) => {
                hits += 1;
                for (x, y) in pose.iter().zip(&rp) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
                assert_eq!(confidence.to_bits(), rc.to_bits());
            }
            (Message::NotLocalized, None) => misses += 1,
            (local, remote) => panic!("in-process {local:?} over the wire {remote:?}"),
        }
    }
    assert!(hits >= 1 && misses >= 1, "{hits} {misses}");
    server.shutdown();
}

#[test]
fn malformed_frames_get_error_one_and_keep_the_connection() {
    let fx = fixture();
    let server = start_server(Some(fx.map.clone()), "127.0.0.1:0", ServerParams::default()).unwrap();
    let mut client = MapClient::connect(server.local_addr()).unwrap();
    let broken = [
        frame_bytes(200, &[1, 2, 3]),
        frame_bytes(kind::LOCALIZE, &[0xff; 5]),
        frame_bytes(kind::HELLO, &[]),
        frame_bytes(kind::EXTEND, &[9, 9]),
    ];
    for bytes in &broken {
        client.send_raw(bytes).unwrap();
        match client.receive().unwrap() {
            Message::Error { code, .. } => assert_eq!(code, error_code::MALFORMED),
            other => panic!("{other:?}"),
        }
    }
    let feats = &fx.map.keyframes[0].features;
    assert!(client.localize(feats).unwrap().is_some());
    let mut remote = client.get_map().unwrap();
    remote.keyframes.iter_mut().for_each(|k| k.weight = 0);
    assert_eq!(remote.keyframes.len(), fx.map.keyframes.len());
    server.shutdown();
}

#[test]
fn server_without_a_map_reports_unavailable() {
    let server = start_server(None, "127.0.0.1:0", ServerParams::default()).unwrap();
    let mut client = MapClient::connect(server.local_addr()).unwrap();
    match client.localize(&FrameFeatures::default()) {
        Err(SessionError::Remote { code, .. }) => assert_eq!(code, error_code::MAP_UNAVAILABLE),
        other => panic!("{other:?}"),
    }
    server.shutdown();
}

#[test]
fn tracked_agent_lands_in_map_coordinates_and_extends_the_map() {
    let fx = fixture();
    let params = ServerParams {
        extend_interval: Duration::from_secs(3600),
        ..ServerParams::default()
    };
    let server = start_server(Some(fx.map.clone()), "127.0.0.1:0", params).unwrap();
    let track = TrackParams {
        extend: true,
        ..TrackParams::default()
    };
    let frames = fx.b.iter().cloned().map(Ok);
    let session = track_client(server.local_addr(), frames, &qvga(), "agent", &track).unwrap();
    assert!(session.localized);
    assert!(session.localize_successes >= 1);
    assert_eq!(session.trajectory.len(), fx.b.len());
    let ate = ate_rmse(&session.trajectory, &ground_truth_in_map(&fx.b), 1e-6).unwrap();
    assert!(ate <= 0.10, "{ate}");

    assert!(session.extended >= 1);
    server.flush_extensions();
    let snap = server.snapshot().unwrap();
    assert_eq!(snap.map.keyframes.len(), fx.map.keyframes.len() + session.extended);
    assert!(snap.map.graph.count_edges(EdgeKind::InterSession) >= 1);
    server.shutdown();
}
