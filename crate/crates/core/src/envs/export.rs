use std::fmt::Write;

/// One row of a trajectory trace. TurtleBot fills pose and velocity
/// commands; Kuka fills the tip position into `x`, `y`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryRow {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub heading: Option<f64>,
    pub v_d: Option<f64>,
    pub phi_d: Option<f64>,
    pub distance: f64,
    pub bearing: Option<f64>,
    pub reward: f64,
    pub breakdown: Vec<(&'static str, f64)>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// CSV with a header derived from the first row's breakdown names.
pub fn trajectory_csv(rows: &[TrajectoryRow], turtlebot: bool) -> String {
    let mut s = String::new();
    let names: Vec<&str> = rows
        .first()
        .map(|r| r.breakdown.iter().map(|(n, _)| *n).collect())
        .unwrap_or_default();
    if turtlebot {
        s.push_str("t,x,y,heading,v_d,phi_d,d_t,beta_t,reward");
    } else {
        s.push_str("t,p_x,p_y,d_t,reward");
    }
    for n in &names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for r in rows {
        if turtlebot {
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.t,
                r.x,
                r.y,
                opt(r.heading),
                opt(r.v_d),
                opt(r.phi_d),
                r.distance,
                opt(r.bearing),
                r.reward
            );
        } else {
            let _ = write!(s, "{},{},{},{},{}", r.t, r.x, r.y, r.distance, r.reward);
        }
        for (_, v) in &r.breakdown {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}
