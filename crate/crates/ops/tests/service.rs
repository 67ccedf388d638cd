use std::fs;
use std::io::Write;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use chrono::{Duration as Span, TimeZone, Utc};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ronda_core::scenario::{inspection_round, site_map};
use ronda_core::{
    ActionRegistration, ActionSpec, Command, Core, CoreConfig, CoreHandle, Endpoint, ErrorCode, EventBus, EventKind,
    InterventionCategory, InterventionRecord, LocalTime, MapEdit, Mission, MissionOutcome, MissionRecord, NodeKind,
    NullStore, Persisted, RecordEntry, Recurrence, Schedule, SimClock, SimRobot, Store, Task, TaskStatus, Trigger,
};
use ronda_ops::{Client, Config, DirStore, OpsError, Server, ServerMessage, Service, World, PROTOCOL_VERSION};
use serde_json::{json, Value};

const WAIT: Duration = Duration::from_secs(20);

fn config(dir: &std::path::Path) -> Config {
    Config {
        listen: "127.0.0.1:0".into(),
        data_dir: dir.to_path_buf(),
        time_scale: 20.0,
        ..Config::default()
    }
}

fn site() -> World {
    World {
        map: Some(site_map()),
        ..World::default()
    }
}

fn stop(service: Service) {
    let _ = service.handle.request(Command::Shutdown);
    service.wait();
}

fn ok(reply: ronda_core::Reply) -> Value {
    reply.unwrap_or_else(|e| panic!("unexpected error {e}"))
}

#[test]
fn entities_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let service = Service::start(&cfg, &site(), Some(1)).unwrap();
    let mut c = Client::connect(service.addr).unwrap();
    ok(c.request(Command::SaveMission {
        mission: inspection_round("round", false, true),
    })
    .unwrap());
    let schedule = Schedule::new(
        "weekdays",
        "round",
        Recurrence::DailyAt {
            times: vec![LocalTime::hm(11, 0), LocalTime::hm(15, 0)],
            weekdays_only: true,
        },
    );
    ok(c.request(Command::SaveSchedule { schedule: schedule.clone() }).unwrap());
    let registration = ActionRegistration::new(
        "gas_reading",
        vec![],
        Endpoint::Remote {
            address: "127.0.0.1:9".into(),
        },
    );
    ok(c.request(Command::RegisterAction { registration }).unwrap());
    let record = InterventionRecord {
        timestamp: Utc.with_ymd_and_hms(2024, 5, 1, 10, 0, 0).unwrap(),
        category: InterventionCategory::Serious,
        description: "stuck on a cable".into(),
        operator: "kim".into(),
    };
    ok(c.request(Command::LogIntervention { record: record.clone() }).unwrap());
    let version = site_map().version;
    ok(c.request(Command::ApplyMapEdit {
        edit: MapEdit::RenameNode {
            id: "ip1".into(),
            name: "boiler room".into(),
        },
        expected_version: version,
    })
    .unwrap());
    let before = ok(c.request(Command::GetMap).unwrap());
    c.close();
    stop(service);

    // a fresh world map must not replace the stored one
    let service = Service::start(&cfg, &site(), Some(1)).unwrap();
    let mut c = Client::connect(service.addr).unwrap();
    let missions = ok(c.request(Command::ListMissions).unwrap());
    assert_eq!(missions[0]["id"], "round");
    let mission: Mission = serde_json::from_value(ok(c.request(Command::LoadMission { mission_id: "round".into() }).unwrap())).unwrap();
    assert_eq!(mission, inspection_round("round", false, true));
    let schedules = ok(c.request(Command::ListSchedules).unwrap());
    assert_eq!(serde_json::from_value::<Schedule>(schedules[0]["schedule"].clone()).unwrap(), schedule);
    let actions = ok(c.request(Command::ListActions).unwrap()).to_string();
    assert!(actions.contains("gas_reading"), "{actions}");
    let logged = ok(c.request(Command::ListInterventions { limit: None }).unwrap());
    assert_eq!(serde_json::from_value::<Vec<InterventionRecord>>(logged).unwrap(), vec![record]);
    let after = ok(c.request(Command::GetMap).unwrap());
    assert_eq!(after, before);
    assert_eq!(after["version"], version + 1);
    c.close();
    stop(service);
}

#[test]
fn corrupt_file_stops_start_up_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let service = Service::start(&cfg, &site(), None).unwrap();
    ok(service.handle.request(Command::SaveMission {
        mission: inspection_round("round", false, true),
    }));
    stop(service);
    let bad = dir.path().join("schedules").join("nightly.json");
    fs::write(&bad, "{\"id\": \"nightly\", \"mission\": ").unwrap();
    match Service::start(&cfg, &site(), None) {
        Err(OpsError::Load(e)) => {
            assert_eq!(e.path, bad);
            assert!(e.to_string().contains("nightly.json"), "{e}");
            assert!(!e.reason.is_empty());
        }
        Err(other) => panic!("wrong error {other}"),
        Ok(_) => panic!("started with a corrupt schedule"),
    }
    // a file whose name does not match the id it holds is also refused
    fs::remove_file(&bad).unwrap();
    let round = fs::read_to_string(dir.path().join("missions").join("round.json")).unwrap();
    fs::write(dir.path().join("missions").join("other.json"), round).unwrap();
    assert!(matches!(Service::start(&cfg, &site(), None), Err(OpsError::Load(_))));
}

fn fake_record(run_id: u64, started: ronda_core::Timestamp, rng: &mut impl Rng) -> MissionRecord {
    let mission = Mission::new(
        &format!("m{}", run_id % 7),
        "m",
        (0..rng.gen_range(0..4)).map(|i| Task::new(&format!("n{i}"), ActionSpec::new("noop"))).collect(),
    );
    MissionRecord::start(run_id, &mission, Trigger::Operator, started)
}

#[test]
fn thousand_records_come_back_in_time_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let mut store = DirStore::open(dir.path()).unwrap();
    let mut expected = Vec::new();
    for run_id in 1..=1000u64 {
        let started = t0 + Span::seconds(rng.gen_range(0..10_000_000));
        let mut record = fake_record(run_id, started, &mut rng);
        let opened = record.clone();
        for t in &mut record.tasks {
            t.status = TaskStatus::Succeeded;
        }
        record.outcome = Some(MissionOutcome::Completed);
        record.ended = Some(started + Span::minutes(10));
        expected.push((opened, record));
    }
    // appended in run order, which is not start-time order
    for (opened, finished) in &expected {
        store.append_record(&RecordEntry::Started { record: opened.clone() }).unwrap();
        store.append_record(&RecordEntry::Finished { record: finished.clone() }).unwrap();
    }
    let mut expected: Vec<MissionRecord> = expected.into_iter().map(|(_, f)| f).collect();
    // oracle: a plain stable sort on (start, run id)
    expected.sort_by(|a, b| a.started.cmp(&b.started).then(a.run_id.cmp(&b.run_id)));
    let got = DirStore::open(dir.path()).unwrap().load_all(Utc::now()).unwrap().records;
    assert_eq!(got.len(), 1000);
    assert_eq!(got, expected);

    // and through the service
    let service = Service::start(&config(dir.path()), &site(), None).unwrap();
    let listed: Vec<MissionRecord> = serde_json::from_value(ok(service.handle.request(Command::ListRecords { limit: None }))).unwrap();
    assert_eq!(listed, expected);
    stop(service);
}

#[test]
fn unfinished_run_is_closed_as_preempted_once() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let mut store = DirStore::open(dir.path()).unwrap();
    let mut record = fake_record(1, t0, &mut rng);
    record.tasks.push(ronda_core::TaskRecord {
        node: "n9".into(),
        label: "last".into(),
        action: "noop".into(),
        status: TaskStatus::Navigating,
        detail: None,
        result: None,
    });
    store.append_record(&RecordEntry::Started { record }).unwrap();
    let log = dir.path().join("records").join("records.jsonl");
    let prefix = fs::read(&log).unwrap();
    // torn second line from a crash mid-append
    let mut f = fs::OpenOptions::new().append(true).open(&log).unwrap();
    f.write_all(b"{\"phase\":\"finished\",\"rec").unwrap();
    drop(f);
    let now = t0 + Span::hours(1);
    let got = DirStore::open(dir.path()).unwrap().load_all(now).unwrap().records;
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].outcome, Some(MissionOutcome::Preempted));
    assert_eq!(got[0].ended, Some(now));
    assert!(got[0].tasks.iter().all(|t| t.status.is_terminal()));
    let bytes = fs::read(&log).unwrap();
    assert!(bytes.starts_with(&prefix));
    // loading again adds nothing
    let again = DirStore::open(dir.path()).unwrap().load_all(now + Span::hours(1)).unwrap().records;
    assert_eq!(again, got);
    assert_eq!(fs::read(&log).unwrap(), bytes);
}

/// A core on a paced clock behind a server, with the bus in the caller's
/// hands so events can be injected.
fn bare_server(bus: EventBus) -> (std::net::SocketAddr, CoreHandle, thread::JoinHandle<()>) {
    let start = Utc.with_ymd_and_hms(2024, 5, 1, 8, 0, 0).unwrap();
    let clock = SimClock::paced(start, 1.0);
    let robot = SimRobot::at(clock.clone(), Vector3::zeros());
    let persisted = Persisted {
        map: Some(site_map()),
        ..Persisted::default()
    };
    let (mut core, handle) =
        Core::new(robot, Arc::new(clock), CoreConfig::default(), Box::new(NullStore), bus, persisted).unwrap();
    let core = thread::spawn(move || core.run());
    let server = Server::bind("127.0.0.1:0", handle.clone()).unwrap();
    let addr = server.local_addr().unwrap();
    server.spawn();
    (addr, handle, core)
}

fn alert(i: usize) -> EventKind {
    EventKind::Alert {
        source: "test".into(),
        message: format!("injected {i}"),
    }
}

#[test]
fn subscribe_from_zero_replays_then_tails() {
    let bus = EventBus::default();
    for i in 1..=5 {
        bus.publish(Utc::now(), alert(i));
    }
    let (addr, handle, core) = bare_server(bus.clone());
    let mut c = Client::connect(addr).unwrap();
    let ack = c.subscribe(0).unwrap();
    assert!(!ack.gap);
    assert!(ack.last_seq >= 5);
    let mut seen = Vec::new();
    for _ in 0..ack.last_seq {
        seen.push(c.next_event(WAIT).unwrap());
    }
    assert_eq!(seen.iter().map(|e| e.seq).collect::<Vec<_>>(), (1..=ack.last_seq).collect::<Vec<_>>());
    for (i, e) in seen.iter().take(5).enumerate() {
        assert_eq!(e.kind, alert(i + 1));
    }
    // live tail continues the numbering with no gap
    ok(c.request(Command::SaveMission {
        mission: Mission::new("empty", "empty", vec![]),
    })
    .unwrap());
    let mut next = ack.last_seq + 1;
    loop {
        let e = c.next_event(WAIT).unwrap();
        assert_eq!(e.seq, next);
        next += 1;
        if matches!(e.kind, EventKind::StoreChanged { .. }) {
            break;
        }
    }
    // resuming from the middle
    let mut d = Client::connect(addr).unwrap();
    d.subscribe(3).unwrap();
    assert_eq!(d.next_event(WAIT).unwrap().seq, 4);
    c.close();
    d.close();
    let _ = handle.request(Command::Shutdown);
    core.join().unwrap();
}

#[test]
fn second_edit_on_the_same_version_conflicts() {
    let (addr, handle, core) = bare_server(EventBus::default());
    let mut a = Client::connect(addr).unwrap();
    let mut b = Client::connect(addr).unwrap();
    let va = ok(a.request(Command::GetMap).unwrap())["version"].as_u64().unwrap();
    let vb = ok(b.request(Command::GetMap).unwrap())["version"].as_u64().unwrap();
    assert_eq!(va, vb);
    let edit = |x: f64| MapEdit::MoveNode {
        id: "ip2".into(),
        position: Vector3::new(x, 1.0, 0.0),
    };
    ok(a.request(Command::ApplyMapEdit {
        edit: edit(3.0),
        expected_version: va,
    })
    .unwrap());
    let e = b
        .request(Command::ApplyMapEdit {
            edit: edit(4.0),
            expected_version: vb,
        })
        .unwrap()
        .unwrap_err();
    assert_eq!(e.code, ErrorCode::Conflict);
    // refresh and retry succeeds
    let v = ok(b.request(Command::GetMap).unwrap())["version"].as_u64().unwrap();
    assert_eq!(v, va + 1);
    ok(b.request(Command::ApplyMapEdit {
        edit: edit(4.0),
        expected_version: v,
    })
    .unwrap());
    a.close();
    b.close();
    let _ = handle.request(Command::Shutdown);
    core.join().unwrap();
}

#[test]
fn errors_carry_the_request_id() {
    let (addr, handle, core) = bare_server(EventBus::default());
    let mut c = Client::connect(addr).unwrap();
    let id = c
        .send(Command::ExecuteMission {
            mission_id: "nope".into(),
            reorder: false,
        })
        .unwrap();
    match c.next_message(WAIT).unwrap() {
        ServerMessage::Response { id: got, error: Some(e), .. } => {
            assert_eq!(got, Some(id));
            assert_eq!(e.code, ErrorCode::NotFound);
        }
        other => panic!("{other:?}"),
    }
    let cases = [
        (json!({"v": 1, "id": id, "op": "command", "command": {"kind": "status"}}), Some(id), "already used"),
        (json!({"v": 9, "id": 500, "op": "unsubscribe"}), Some(500), "version"),
        (json!({"v": 1, "id": 501, "op": "command", "command": {"kind": "warp"}}), Some(501), "malformed"),
        (json!({"v": 1, "op": "unsubscribe"}), None, "request id"),
    ];
    for (frame, want_id, text) in cases {
        c.send_raw(&frame).unwrap();
        match c.next_message(WAIT).unwrap() {
            ServerMessage::Response { v, id, error: Some(e), .. } => {
                assert_eq!(v, PROTOCOL_VERSION);
                assert_eq!(id, want_id);
                assert_eq!(e.code, ErrorCode::Invalid);
                assert!(e.message.contains(text), "{}", e.message);
            }
            other => panic!("{other:?}"),
        }
    }
    // the connection is still usable afterwards
    assert!(c.request(Command::Status).unwrap().is_ok());
    c.close();
    let _ = handle.request(Command::Shutdown);
    core.join().unwrap();
}

#[test]
fn slow_subscriber_gets_an_overflow_notice() {
    let bus = EventBus::default();
    let (addr, handle, core) = bare_server(bus.clone());
    let mut c = Client::connect(addr).unwrap();
    c.subscribe(bus.last_seq()).unwrap();
    // the client reads nothing while far more events arrive than the
    // buffers and socket can hold
    let payload = "x".repeat(2000);
    for _ in 0..40_000 {
        bus.publish(
            Utc::now(),
            EventKind::Alert {
                source: "flood".into(),
                message: payload.clone(),
            },
        );
    }
    let mut events = 0;
    let notice = loop {
        match c.next_message(WAIT) {
            Ok(ServerMessage::Event { .. }) => events += 1,
            Ok(ServerMessage::Overflow { message, .. }) => break message,
            Ok(other) => panic!("{other:?}"),
            Err(e) => panic!("no overflow notice after {events} events: {e}"),
        }
    };
    assert!(notice.contains("resume"), "{notice}");
    assert!(events < 40_000);
    // then the server hangs up
    assert!(c.next_message(WAIT).is_err());
    // the core itself was never blocked
    assert!(handle.request(Command::Status).is_ok());
    let _ = handle.request(Command::Shutdown);
    core.join().unwrap();
}

#[test]
fn many_clients_all_land_in_one_order() {
    let (addr, handle, core) = bare_server(EventBus::default());
    let workers: Vec<_> = (0..8)
        .map(|w| {
            thread::spawn(move || {
                let mut c = Client::connect(addr).unwrap();
                for i in 0..20 {
                    let id = format!("c{w}-{i}");
                    let reply = c
                        .request(Command::SaveMission {
                            mission: Mission::new(&id, &id, vec![]),
                        })
                        .unwrap();
                    assert!(reply.is_ok());
                }
                c.close();
            })
        })
        .collect();
    for w in workers {
        w.join().unwrap();
    }
    let all = handle.request(Command::ListMissions).unwrap();
    assert_eq!(all.as_array().unwrap().len(), 160);
    let changes = handle
        .events()
        .since(0)
        .into_iter()
        .filter(|e| matches!(e.kind, EventKind::StoreChanged { .. }))
        .count();
    assert_eq!(changes, 160);
    let _ = handle.request(Command::Shutdown);
    core.join().unwrap();
}

#[test]
fn world_map_seeds_an_empty_store() {
    let dir = tempfile::tempdir().unwrap();
    let service = Service::start(&config(dir.path()), &site(), None).unwrap();
    let map = ok(service.handle.request(Command::GetMap));
    assert!(map["nodes"].as_array().unwrap().iter().any(|n| n["kind"] == json!(NodeKind::Dock)));
    stop(service);
    assert!(dir.path().join("maps").join("map.json").is_file());
}
