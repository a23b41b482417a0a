//! g2o-style line format.
//!
//! ```text
//! VERTEX_SE2 <id> <x> <y> <theta>
//! VERTEX_LABEL <id> <RACKSPACE|CORRIDOR|INTERSECTION>
//! EDGE_SE2 <i> <j> <dx> <dy> <dtheta> <I11> <I12> <I13> <I22> <I23> <I33> [KIND=<ODOM|LOOP|MANHATTAN>]
//! ```
//!
//! `#` starts a comment. Floats are written with Rust's shortest round-trip
//! representation, so save followed by load is lossless.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::Matrix3;

use super::{ConstraintKind, PGEdge, Pose2D, PoseGraph, TopoLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GraphFormat {
    /// Labels and `KIND=` tags included.
    #[default]
    Tagged,
    /// Only `VERTEX_SE2` and untagged `EDGE_SE2` records, for standard g2o tools.
    PlainG2o,
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Parse {
        line,
        message: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {what} from `{tok}`"),
    })
}

struct PendingEdge {
    line: usize,
    edge: PGEdge,
}

/// Parses a graph. Vertex ids must form the contiguous range `0..n`.
pub fn read_graph<R: BufRead>(reader: R) -> Result<PoseGraph> {
    let mut vertices: BTreeMap<usize, (usize, Pose2D)> = BTreeMap::new();
    let mut labels: BTreeMap<usize, (usize, TopoLabel)> = BTreeMap::new();
    let mut edges = Vec::new();

    for (idx, raw) in reader.lines().enumerate() {
        let line = idx + 1;
        let raw = raw?;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut toks = content.split_whitespace();
        let tag = toks.next().unwrap_or_default();
        match tag {
            "VERTEX_SE2" => {
                let id: usize = parse_num(toks.next(), line, "vertex id")?;
                let x = parse_num(toks.next(), line, "x")?;
                let y = parse_num(toks.next(), line, "y")?;
                let theta = parse_num(toks.next(), line, "theta")?;
                expect_end(toks.next(), line)?;
                if vertices.insert(id, (line, Pose2D::new(x, y, theta))).is_some() {
                    return Err(Error::DuplicateVertex { line, id });
                }
            }
            "VERTEX_LABEL" => {
                let id: usize = parse_num(toks.next(), line, "vertex id")?;
                let label: TopoLabel = toks
                    .next()
                    .ok_or_else(|| Error::Parse {
                        line,
                        message: "missing label".into(),
                    })?
                    .parse()
                    .map_err(|message| Error::Parse { line, message })?;
                expect_end(toks.next(), line)?;
                if labels.insert(id, (line, label)).is_some() {
                    return Err(Error::Parse {
                        line,
                        message: format!("duplicate label for vertex {id}"),
                    });
                }
            }
            "EDGE_SE2" => {
                let from: usize = parse_num(toks.next(), line, "source id")?;
                let to: usize = parse_num(toks.next(), line, "target id")?;
                let dx = parse_num(toks.next(), line, "dx")?;
                let dy = parse_num(toks.next(), line, "dy")?;
                let dtheta = parse_num(toks.next(), line, "dtheta")?;
                let mut upper = [0.0f64; 6];
                for (k, v) in upper.iter_mut().enumerate() {
                    *v = parse_num(toks.next(), line, &format!("information entry {}", k + 1))?;
                }
                let kind = match toks.next() {
                    Some(tok) => {
                        let value = tok.strip_prefix("KIND=").ok_or_else(|| Error::Parse {
                            line,
                            message: format!("unexpected token `{tok}`"),
                        })?;
                        ConstraintKind::from_tag(value).ok_or_else(|| Error::Parse {
                            line,
                            message: format!("unknown edge kind `{value}`"),
                        })?
                    }
                    // Untagged files: consecutive ids are odometry.
                    None if to == from + 1 => ConstraintKind::Odometry,
                    None => ConstraintKind::LoopClosure,
                };
                expect_end(toks.next(), line)?;
                let [i11, i12, i13, i22, i23, i33] = upper;
                let information =
                    Matrix3::new(i11, i12, i13, i12, i22, i23, i13, i23, i33);
                let mut edge = PGEdge::new(from, to, Pose2D::new(dx, dy, dtheta), kind);
                edge.information = information;
                edges.push(PendingEdge { line, edge });
            }
            other => {
                return Err(Error::UnknownRecord {
                    line,
                    tag: other.to_string(),
                })
            }
        }
    }

    let mut graph = PoseGraph::new();
    for (expected, (&id, &(line, pose))) in vertices.iter().enumerate() {
        if id != expected {
            return Err(Error::Parse {
                line,
                message: format!("vertex ids must be contiguous from 0; missing id {expected}"),
            });
        }
        graph.add_node(pose, None);
    }
    for (&id, &(line, label)) in &labels {
        if id >= graph.len() {
            return Err(Error::Parse {
                line,
                message: format!("label for missing vertex {id}"),
            });
        }
        graph.set_label(id, Some(label));
    }
    for PendingEdge { line, edge } in edges {
        if edge.from >= graph.len() || edge.to >= graph.len() {
            return Err(Error::DanglingEdge {
                line,
                from: edge.from,
                to: edge.to,
            });
        }
        graph.add_edge(edge).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
    }
    Ok(graph)
}

fn expect_end(tok: Option<&str>, line: usize) -> Result<()> {
    match tok {
        None => Ok(()),
        Some(t) => Err(Error::Parse {
            line,
            message: format!("trailing token `{t}`"),
        }),
    }
}

pub fn write_graph<W: Write>(graph: &PoseGraph, format: GraphFormat, mut out: W) -> Result<()> {
    for (id, node) in graph.nodes().iter().enumerate() {
        let p = node.pose;
        writeln!(out, "VERTEX_SE2 {id} {} {} {}", p.x, p.y, p.theta)?;
    }
    if format == GraphFormat::Tagged {
        for (id, node) in graph.nodes().iter().enumerate() {
            if let Some(label) = node.label {
                writeln!(out, "VERTEX_LABEL {id} {label}")?;
            }
        }
    }
    for e in graph.edges() {
        let m = e.measurement;
        let i = &e.information;
        write!(
            out,
            "EDGE_SE2 {} {} {} {} {} {} {} {} {} {} {}",
            e.from,
            e.to,
            m.x,
            m.y,
            m.theta,
            i[(0, 0)],
            i[(0, 1)],
            i[(0, 2)],
            i[(1, 1)],
            i[(1, 2)],
            i[(2, 2)]
        )?;
        if format == GraphFormat::Tagged {
            write!(out, " KIND={}", e.kind.tag())?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<PoseGraph> {
        read_graph(text.as_bytes())
    }

    fn to_text(g: &PoseGraph, format: GraphFormat) -> String {
        let mut buf = Vec::new();
        write_graph(g, format, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn two_node_graph() {
        let g = parse(
            "VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 1 0 0\n\
             EDGE_SE2 0 1 1 0 0 50 0 0 50 0 100 KIND=ODOM\n",
        )
        .unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.edges()[0].kind, ConstraintKind::Odometry);
        assert_eq!(g.pose(1).x, 1.0);
    }

    #[test]
    fn comments_and_labels() {
        let g = parse(
            "# header\nVERTEX_SE2 0 0 0 0 # origin\nVERTEX_LABEL 0 corridor\n\n",
        )
        .unwrap();
        assert_eq!(g.label(0), Some(TopoLabel::Corridor));
    }

    #[test]
    fn dangling_edge_is_rejected_with_line() {
        let err = parse(
            "VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 0 0 0\nVERTEX_SE2 2 0 0 0\n\
             EDGE_SE2 0 5 1 0 0 20 0 0 20 0 50\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::DanglingEdge { line: 4, .. }), "{err}");
    }

    #[test]
    fn duplicate_vertex() {
        let err = parse("VERTEX_SE2 0 0 0 0\nVERTEX_SE2 0 1 0 0\n").unwrap_err();
        assert!(matches!(err, Error::DuplicateVertex { line: 2, id: 0 }));
    }

    #[test]
    fn unknown_record() {
        let err = parse("VERTEX_SE2 0 0 0 0\nVERTEX_XY 1 0 0\n").unwrap_err();
        assert!(matches!(err, Error::UnknownRecord { line: 2, .. }));
    }

    #[test]
    fn malformed_number_reports_line() {
        let err = parse("VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 abc 0 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse("VERTEX_SE2 0 0 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn plain_export_drops_kind_and_labels() {
        let mut g = PoseGraph::new();
        g.add_node(Pose2D::IDENTITY, Some(TopoLabel::Rackspace));
        g.add_node(Pose2D::new(1.0, 0.0, 0.0), Some(TopoLabel::Rackspace));
        g.add_edge(PGEdge::odometry(0, Pose2D::new(1.0, 0.0, 0.0))).unwrap();
        let text = to_text(&g, GraphFormat::PlainG2o);
        assert!(!text.contains("KIND="));
        assert!(!text.contains("VERTEX_LABEL"));
        let back = parse(&text).unwrap();
        assert_eq!(back.edges()[0].kind, ConstraintKind::Odometry);
    }

    fn graph_strategy() -> impl Strategy<Value = PoseGraph> {
        let pose = (-1e3..1e3f64, -1e3..1e3f64, -3.2..3.2f64);
        (prop::collection::vec(pose.clone(), 2..30), prop::collection::vec((0usize..1000, 0usize..1000, pose, 1e-3..1e3f64), 0..10))
            .prop_map(|(poses, extra)| {
                let mut g = PoseGraph::new();
                for (k, (x, y, t)) in poses.iter().enumerate() {
                    let label = TopoLabel::ALL.get(k % 4).copied();
                    g.add_node(Pose2D::new(*x, *y, *t), label);
                }
                for k in 0..g.len() - 1 {
                    let m = g.pose(k).between(g.pose(k + 1));
                    g.add_edge(PGEdge::odometry(k, m)).unwrap();
                }
                for (a, b, (x, y, t), w) in extra {
                    let (a, b) = (a % g.len(), b % g.len());
                    if a == b {
                        continue;
                    }
                    let mut e = PGEdge::new(a, b, Pose2D::new(x, y, t), ConstraintKind::Manhattan);
                    e.information[(0, 0)] = w;
                    e.information[(0, 1)] = 0.1;
                    e.information[(1, 0)] = 0.1;
                    g.add_edge(e).unwrap();
                }
                g
            })
    }

    proptest! {
        #[test]
        fn save_load_round_trip(g in graph_strategy()) {
            let text = to_text(&g, GraphFormat::Tagged);
            let back = parse(&text).unwrap();
            prop_assert_eq!(back.len(), g.len());
            for (a, b) in back.nodes().iter().zip(g.nodes()) {
                prop_assert!((a.pose.x - b.pose.x).abs() < 1e-9);
                prop_assert!((a.pose.y - b.pose.y).abs() < 1e-9);
                prop_assert!((a.pose.theta - b.pose.theta).abs() < 1e-9);
                prop_assert_eq!(a.label, b.label);
            }
            prop_assert_eq!(back.edges().len(), g.edges().len());
            for (a, b) in back.edges().iter().zip(g.edges()) {
                prop_assert_eq!((a.from, a.to, a.kind), (b.from, b.to, b.kind));
                prop_assert!((a.information - b.information).abs().max() < 1e-9);
                prop_assert!((a.measurement.x - b.measurement.x).abs() < 1e-9);
            }
            // text -> graph -> text is stable
            prop_assert_eq!(to_text(&back, GraphFormat::Tagged), text);
        }
    }
}
