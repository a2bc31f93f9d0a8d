use dbpl_core::domain::{ScenarioConfig, VehicleClass, Movement, Lane};
use dbpl_core::simulator::World;

fn main() {
    let cfg = ScenarioConfig::parse_str("duration=1800\nmpr=0.4\nseed=1\nstrategy=dbpl").unwrap();
    let mut world = World::new(cfg.clone());
    while world.t < cfg.duration {
        world.step().unwrap();
    }
    // where are unfinished buses?
    let snap = world.snapshot();
    println!("bus lane at end ({} vehicles):", snap.bus.len());
    for v in &snap.bus {
        println!("  id={} class={:?} mv={:?} x={:.1} v={:.1} dwell={:?}", v.id, v.class, v.movement, v.x, v.v, v.dwell);
    }
    println!("general lane at end: {} vehicles", snap.general.len());
    let m = world.metrics();
    let mut cab_entries: Vec<_> = m.vehicles.values().filter(|r| r.class == VehicleClass::Cab).collect();
    cab_entries.sort_by(|a, b| a.scheduled_entry.partial_cmp(&b.scheduled_entry).unwrap());
    println!("buses: {} spawned", cab_entries.len());
    for r in cab_entries.iter().take(30) {
        println!("  bus {} sched={:.0} entered={:.0} exit={:?} travel={:?}",
            r.id, r.scheduled_entry, r.entered_at, r.exit.map(|e| e.round()), r.travel_time().map(|t| t.round()));
    }
    let _ = (Movement::Through, Lane::Bus);
}
