// Each example is compiled in as a module so its output can be checked.

#[allow(dead_code)]
#[path = "../examples/annotations.rs"]
mod annotations;
#[allow(dead_code)]
#[path = "../examples/assignment.rs"]
mod assignment;
#[allow(dead_code)]
#[path = "../examples/evaluation.rs"]
mod evaluation;
#[allow(dead_code)]
#[path = "../examples/fusion.rs"]
mod fusion;
#[allow(dead_code)]
#[path = "../examples/motion_maps.rs"]
mod motion_maps;
#[allow(dead_code)]
#[path = "../examples/tracking.rs"]
mod tracking;

#[test]
fn annotations_example() {
    let out = annotations::run_example().unwrap();
    assert!(out.starts_with("1,1,57,86,28,32,1,1,1\n"));
    assert!(out.contains("density 4.00"));
    assert!(out.contains("20 boxes over 5 frames"));
}

#[test]
fn assignment_example() {
    let out = assignment::run_example().unwrap();
    assert!(out.contains("total 4"));
    assert!(out.contains("unmatched tracks [1]"));
}

#[test]
fn evaluation_example() {
    let out = evaluation::run_example().unwrap();
    assert!(out.contains("MOTA 0.6667"));
    assert!(out.contains("AP50 0.8317"));
}

#[test]
fn fusion_example() {
    let out = fusion::run_example().unwrap();
    assert!(out.contains("mask fusion is identity: true"));
    assert!(out.contains("keeps static path: true"));
}

#[test]
fn motion_maps_example() {
    let out = motion_maps::run_example().unwrap();
    assert!(out.contains("flow (+2, 0) on 384/384"));
    assert!(out.contains("density mass 2.000"));
}

#[test]
fn tracking_example() {
    let out = tracking::run_example().unwrap();
    let switches = |mode: &str| -> u32 {
        let line = out.lines().find(|l| l.starts_with(mode)).unwrap();
        line.split_whitespace().nth(2).unwrap().parse().unwrap()
    };
    assert!(switches("byte") < switches("sort"));
}
